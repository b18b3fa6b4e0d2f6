"""Domain types shared by every analysis stage.

Coordinates are road-aligned: x lateral (m, increasing toward the shoulder),
y longitudinal (m, increasing with travel direction). All types are immutable
after construction.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

# Sample times are matched with this absolute tolerance everywhere.
TIME_ATOL = 1e-6

# Model-facing lattice: 2.5 Hz histories and predictions.
MODEL_DT = 0.4
MODEL_STEPS = 12
HISTORY_SAMPLES = 8

# Lane id sentinel for states with no usable lane assignment.
UNKNOWN_LANE = -1


class BBError(Exception):
    """Base class for toolkit errors."""


class DataError(BBError):
    """Malformed or inconsistent input data."""


class ConfigError(BBError):
    """Invalid configuration value."""


class StoppedVehicleError(BBError):
    """Raised when a kinematic condition is undefined because a vehicle is
    (nearly) stopped. Callers exclude the event rather than crash."""


class VehicleClass(enum.IntEnum):
    # Codes follow the NGSIM v_Class convention.
    MOTORCYCLE = 1
    AUTO = 2
    TRUCK = 3


class LaneRole(str, enum.Enum):
    MAINLINE = "mainline"
    OUTERMOST_MAINLINE = "outermost_mainline"
    AUXILIARY = "auxiliary"
    ONRAMP = "onramp"
    OFFRAMP = "offramp"


MERGE_SOURCE_ROLES = (LaneRole.ONRAMP, LaneRole.AUXILIARY)


@dataclass(frozen=True)
class VehicleState:
    """One observed sample of one vehicle."""

    t: float
    x: float
    y: float
    lane_id: int = UNKNOWN_LANE
    gx: float = math.nan
    gy: float = math.nan


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype).copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class VehicleTrack:
    """A vehicle's trajectory at uniform sample spacing.

    Backed by parallel arrays; ``states`` materializes VehicleState views on
    demand. ``gx``/``gy`` hold NaN when no global frame is available.
    """

    vehicle_id: int
    vclass: VehicleClass
    length: float
    width: float
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    lane_ids: np.ndarray
    gx: np.ndarray | None = None
    gy: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.t)
        object.__setattr__(self, "t", _frozen_array(self.t, np.float64))
        object.__setattr__(self, "x", _frozen_array(self.x, np.float64))
        object.__setattr__(self, "y", _frozen_array(self.y, np.float64))
        object.__setattr__(self, "lane_ids", _frozen_array(self.lane_ids, np.int64))
        for name in ("gx", "gy"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _frozen_array(val, np.float64))
        for name in ("x", "y", "lane_ids", "gx", "gy"):
            val = getattr(self, name)
            if val is not None and len(val) != n:
                raise DataError(
                    f"vehicle {self.vehicle_id}: field {name} has {len(val)} "
                    f"samples, expected {n}"
                )

    def __len__(self) -> int:
        return int(self.t.size)

    @property
    def t0(self) -> float:
        return float(self.t[0])

    @property
    def t1(self) -> float:
        return float(self.t[-1])

    @property
    def dt(self) -> float:
        if len(self) < 2:
            raise DataError(f"vehicle {self.vehicle_id}: single-sample track has no dt")
        return float((self.t[-1] - self.t[0]) / (len(self) - 1))

    def index_at(self, t: float) -> int | None:
        """Index of the sample at time t (within TIME_ATOL), or None."""
        i = int(np.searchsorted(self.t, t - TIME_ATOL))
        if i < self.t.size and abs(float(self.t[i]) - t) <= TIME_ATOL:
            return i
        return None

    def covers(self, t: float) -> bool:
        return self.index_at(t) is not None

    def state(self, i: int) -> VehicleState:
        gx = float(self.gx[i]) if self.gx is not None else math.nan
        gy = float(self.gy[i]) if self.gy is not None else math.nan
        return VehicleState(
            t=float(self.t[i]), x=float(self.x[i]), y=float(self.y[i]),
            lane_id=int(self.lane_ids[i]), gx=gx, gy=gy,
        )

    @property
    def states(self) -> tuple[VehicleState, ...]:
        return tuple(self.state(i) for i in range(len(self)))

    @property
    def has_global(self) -> bool:
        return self.gx is not None and self.gy is not None

    @classmethod
    def from_states(cls, vehicle_id, vclass, length, width, states) -> "VehicleTrack":
        states = list(states)
        has_g = any(not math.isnan(s.gx) for s in states)
        return cls(
            vehicle_id=vehicle_id, vclass=vclass, length=length, width=width,
            t=[s.t for s in states], x=[s.x for s in states], y=[s.y for s in states],
            lane_ids=[s.lane_id for s in states],
            gx=[s.gx for s in states] if has_g else None,
            gy=[s.gy for s in states] if has_g else None,
        )


@dataclass(frozen=True)
class SiteProfile:
    """Static description of one recording site.

    ``lane_boundaries`` are the lateral lane edges in meters, strictly
    increasing; interval i (between boundaries i and i+1) belongs to
    ``lane_ids[i]``. ``lane_order`` lists the mainline lanes from innermost
    (nominal fastest, nearest the median) to outermost. ``raw_unit`` describes
    the source CSV, not these fields, which are always meters.
    """

    site_id: str
    raw_unit: str
    lane_boundaries: np.ndarray
    lane_ids: tuple[int, ...]
    lane_roles: dict[int, LaneRole]
    lane_order: tuple[int, ...]
    merge_zone: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "lane_boundaries", _frozen_array(self.lane_boundaries, np.float64)
        )
        object.__setattr__(self, "lane_ids", tuple(int(v) for v in self.lane_ids))
        object.__setattr__(self, "lane_order", tuple(int(v) for v in self.lane_order))
        object.__setattr__(self, "lane_roles", dict(self.lane_roles))
        b = self.lane_boundaries
        if self.raw_unit not in ("feet", "meters"):
            raise ConfigError(f"raw_unit must be feet or meters, got {self.raw_unit!r}")
        if b.size != len(self.lane_ids) + 1:
            raise ConfigError(
                f"{b.size} lane boundaries for {len(self.lane_ids)} lanes; "
                "need lanes + 1"
            )
        if not np.all(np.diff(b) > 0):
            raise ConfigError("lane_boundaries must be strictly increasing")
        missing = [i for i in self.lane_ids if i not in self.lane_roles]
        if missing:
            raise ConfigError(f"lanes without a role: {missing}")
        for lane in self.lane_order:
            role = self.lane_roles.get(lane)
            if role not in (LaneRole.MAINLINE, LaneRole.OUTERMOST_MAINLINE):
                raise ConfigError(f"lane_order entry {lane} is not a mainline lane")
        outer = [i for i, r in self.lane_roles.items()
                 if r is LaneRole.OUTERMOST_MAINLINE]
        if len(outer) != 1:
            raise ConfigError("exactly one lane must have role outermost_mainline")
        if self.lane_order and self.lane_order[-1] != outer[0]:
            raise ConfigError("lane_order must end at the outermost mainline lane")
        if self.merge_zone is not None:
            y0, y1 = self.merge_zone
            if not y0 < y1:
                raise ConfigError("merge_zone must be an increasing interval")
            object.__setattr__(self, "merge_zone", (float(y0), float(y1)))

    @property
    def outermost_lane(self) -> int:
        return self.lane_order[-1]

    def role(self, lane_id: int) -> LaneRole | None:
        return self.lane_roles.get(int(lane_id))

    def is_mainline(self, lane_id: int) -> bool:
        return self.role(lane_id) in (LaneRole.MAINLINE, LaneRole.OUTERMOST_MAINLINE)

    def lane_at_x(self, x: float) -> int:
        """Lane id for a lateral position; UNKNOWN_LANE outside the roadway.

        A position exactly on an interior boundary goes to the lower-indexed
        interval.
        """
        b = self.lane_boundaries
        if x < b[0] or x > b[-1]:
            return UNKNOWN_LANE
        if x == b[0]:
            return self.lane_ids[0]
        i = int(np.searchsorted(b, x, side="left")) - 1
        return self.lane_ids[i]

    def rank(self, lane_id: int) -> int | None:
        """Physical position of a lane, 0 = nearest the median."""
        try:
            return self.lane_ids.index(int(lane_id))
        except ValueError:
            return None

    def is_toward_median(self, from_lane: int, to_lane: int) -> bool:
        rf, rt = self.rank(from_lane), self.rank(to_lane)
        return rf is not None and rt is not None and rt < rf

    def is_faster_lane_change(self, from_lane: int, to_lane: int) -> bool:
        """Mainline-to-mainline move into a nominally faster lane."""
        order = self.lane_order
        if from_lane not in order or to_lane not in order:
            return False
        return order.index(to_lane) < order.index(from_lane)


@dataclass(frozen=True)
class Dataset:
    """One recording: a site plus its vehicle tracks at a common rate."""

    site: SiteProfile
    tracks: dict[int, VehicleTrack]
    sample_hz: float

    def __post_init__(self):
        object.__setattr__(self, "tracks", dict(self.tracks))
        if self.sample_hz <= 0:
            raise ConfigError("sample_hz must be positive")

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_hz

    def ordered_tracks(self) -> list[VehicleTrack]:
        return [self.tracks[k] for k in sorted(self.tracks)]

    @property
    def n_samples(self) -> int:
        return sum(len(tr) for tr in self.tracks.values())

    def time_span(self) -> tuple[float, float]:
        if not self.tracks:
            raise DataError("empty dataset has no time span")
        return (min(tr.t0 for tr in self.tracks.values()),
                max(tr.t1 for tr in self.tracks.values()))


@dataclass(frozen=True)
class PredictionMode:
    """One weighted future: a probability and MODEL_STEPS points after the
    anchor at MODEL_DT spacing, columns (x, y)."""

    probability: float
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).copy()
        if pts.shape != (MODEL_STEPS, 2):
            raise DataError(
                f"horizon mismatch: mode has {pts.shape[0]} points, "
                f"expected {MODEL_STEPS}"
            )
        if not np.all(np.isfinite(pts)):
            raise DataError("non-finite prediction point")
        if not math.isfinite(self.probability) or self.probability < 0:
            raise DataError(f"invalid mode probability {self.probability}")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class PredictionInstance:
    """All modes predicted for one vehicle from one anchor sample."""

    vehicle_id: int
    anchor_t: float
    modes: tuple[PredictionMode, ...]
    request_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        if not self.modes:
            raise DataError(
                f"no modes for vehicle {self.vehicle_id} at t={self.anchor_t}"
            )
        total = sum(m.probability for m in self.modes)
        if total <= 0:
            raise DataError(
                f"mode probabilities sum to {total} for vehicle "
                f"{self.vehicle_id} at t={self.anchor_t}"
            )
        if abs(total - 1.0) > 1e-9:
            object.__setattr__(
                self,
                "modes",
                tuple(
                    PredictionMode(m.probability / total, m.points)
                    for m in self.modes
                ),
            )

    @property
    def key(self) -> tuple[int, float]:
        return (self.vehicle_id, round(self.anchor_t, 6))


@dataclass(frozen=True)
class PredictionSet:
    """A parsed prediction file: one source, one coordinate frame."""

    source: str
    frame: str
    instances: tuple[PredictionInstance, ...]
    config_digest: str = ""

    def __post_init__(self):
        if self.frame not in ("local", "global"):
            raise DataError(f"unknown coordinate frame {self.frame!r}")
        object.__setattr__(self, "instances", tuple(self.instances))
        index = {}
        for inst in self.instances:
            if inst.key in index:
                raise DataError(
                    f"duplicate prediction for vehicle {inst.key[0]} "
                    f"at t={inst.key[1]}"
                )
            index[inst.key] = inst
        object.__setattr__(self, "_index", index)

    def get(self, vehicle_id: int, anchor_t: float) -> PredictionInstance | None:
        return self._index.get((vehicle_id, round(anchor_t, 6)))

    def __len__(self) -> int:
        return len(self.instances)


def most_likely_mode(instance: PredictionInstance) -> PredictionMode:
    """The highest-probability mode; ties go to the lowest mode index."""
    probs = np.array([m.probability for m in instance.modes])
    return instance.modes[int(np.argmax(probs))]


_DEFAULT_TTC_EDGES = (-math.inf, -10.0, -5.0, -2.0, 0.0, 1.0, 2.0, 3.0, 5.0,
                      10.0, math.inf)


@dataclass(frozen=True)
class AnalysisConfig:
    """Every tunable the behavioral analysis depends on.

    Defaults are the reference configuration; reports echo the full config and
    its digest so results are attributable.
    """

    lookbacks: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0, 5.0)
    conflict_threshold: float = 1.0
    safety_margin: float = 0.3
    lc_dwell: float = 0.8
    neighbor_radius: float = 50.0
    lead_bin_width: float = 1.0
    lead_bin_range: tuple[float, float] = (-6.0, 6.0)
    ttc_bin_edges: tuple[float, ...] = _DEFAULT_TTC_EDGES
    min_count: int = 5
    anchor_cadence: float = 1.0
    horizon: float = 5.0
    speed_eps: float = 0.1
    ttc_speed_eps: float = 0.01
    crossing_cap: float = 30.0
    rmse_horizons: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0, 5.0)

    def __post_init__(self):
        object.__setattr__(self, "lookbacks", tuple(float(v) for v in self.lookbacks))
        object.__setattr__(self, "ttc_bin_edges",
                           tuple(float(v) for v in self.ttc_bin_edges))
        object.__setattr__(self, "rmse_horizons",
                           tuple(float(v) for v in self.rmse_horizons))
        object.__setattr__(self, "lead_bin_range",
                           tuple(float(v) for v in self.lead_bin_range))
        for name in ("conflict_threshold", "safety_margin", "lc_dwell",
                     "neighbor_radius", "lead_bin_width", "anchor_cadence",
                     "horizon", "speed_eps", "ttc_speed_eps", "crossing_cap"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.min_count < 1:
            raise ConfigError("min_count must be >= 1")
        if not self.lookbacks:
            raise ConfigError("lookbacks must be non-empty")
        if any(tau <= 0 for tau in self.lookbacks):
            raise ConfigError("lookbacks must be positive")
        if max(self.lookbacks) > self.horizon + TIME_ATOL:
            raise ConfigError("lookbacks must not exceed the prediction horizon")
        edges = self.ttc_bin_edges
        if len(edges) < 3 or any(a >= b for a, b in zip(edges, edges[1:])):
            raise ConfigError("ttc_bin_edges must be strictly increasing, >= 3 edges")
        lo, hi = self.lead_bin_range
        if lo >= hi:
            raise ConfigError("lead_bin_range must be increasing")

    def lead_bin_edges(self) -> np.ndarray:
        lo, hi = self.lead_bin_range
        n = int(round((hi - lo) / self.lead_bin_width))
        return lo + self.lead_bin_width * np.arange(n + 1)

    def to_dict(self) -> dict:
        return {
            "lookbacks": list(self.lookbacks),
            "conflict_threshold": self.conflict_threshold,
            "safety_margin": self.safety_margin,
            "lc_dwell": self.lc_dwell,
            "neighbor_radius": self.neighbor_radius,
            "lead_bin_width": self.lead_bin_width,
            "lead_bin_range": list(self.lead_bin_range),
            "ttc_bin_edges": [repr(v) for v in self.ttc_bin_edges],
            "min_count": self.min_count,
            "anchor_cadence": self.anchor_cadence,
            "horizon": self.horizon,
            "speed_eps": self.speed_eps,
            "ttc_speed_eps": self.ttc_speed_eps,
            "crossing_cap": self.crossing_cap,
            "rmse_horizons": list(self.rmse_horizons),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisConfig":
        kwargs = dict(d)
        if "ttc_bin_edges" in kwargs:
            kwargs["ttc_bin_edges"] = tuple(
                float(v) for v in kwargs["ttc_bin_edges"]
            )
        for key in ("lookbacks", "lead_bin_range", "rmse_horizons"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        known = set(cls.__dataclass_fields__)
        unknown = set(kwargs) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**kwargs)

    def digest(self) -> str:
        return digest_payload(self.to_dict())


def digest_payload(payload) -> str:
    """Stable short digest of a JSON-serializable payload."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def validate_track(track: VehicleTrack, site: SiteProfile) -> list[str]:
    """Structural checks; returns a list of violation messages (empty = ok)."""
    out = []
    vid = track.vehicle_id
    if len(track) == 0:
        return [f"vehicle {vid}: empty track"]
    if track.length <= 0 or track.width <= 0:
        out.append(f"vehicle {vid}: nonpositive dimensions "
                   f"{track.length}x{track.width}")
    t = track.t
    if np.any(~np.isfinite(t)):
        out.append(f"vehicle {vid}: non-finite time")
    elif len(track) >= 2:
        dts = np.diff(t)
        if np.any(dts <= 0):
            out.append(f"vehicle {vid}: non-monotone time")
        else:
            dt0 = float(np.median(dts))
            worst = float(np.max(np.abs(dts - dt0)))
            if worst > TIME_ATOL:
                out.append(f"vehicle {vid}: non-uniform dt "
                           f"(max deviation {worst:.2e} s)")
    for name in ("x", "y"):
        if np.any(~np.isfinite(getattr(track, name))):
            out.append(f"vehicle {vid}: non-finite {name}")
    known = set(site.lane_ids) | {UNKNOWN_LANE}
    bad = sorted(set(int(v) for v in track.lane_ids) - known)
    if bad:
        out.append(f"vehicle {vid}: unknown lane ids {bad}")
    return out
