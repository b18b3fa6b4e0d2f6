"""Seeded synthetic scenarios with known behavioral ground truth.

The generators are the oracle for the analysis pipeline: every behavioral
quantity the pipeline measures is planted here with a known value. Motion is
kinematically consistent (positions are integrals of piecewise-constant
speeds) so the finite-difference speed estimator is exercised honestly, and
every event gets its own random stream keyed by (seed, event index) so
generation order cannot change the output.

Merge scenario layout, per event (one 40 s time block each, 5 Hz):

- the merger runs up the on-ramp at constant speed and enters the outermost
  mainline lane exactly at t_m, crossing the merge point at that sample;
- the interacting mainline vehicle approaches at constant speed placed so
  its projected arrival leads the merger's by the drawn lead time T at every
  anchor in the approach, then changes speed once, 4.6 s before t_m, so that
  it actually crosses the merge point a random 0.3-2.5 s before or after the
  merger according to the sampled pass-first outcome;
- when a courtesy lane change is sampled, the mainline vehicle moves one
  lane toward the median 0.6 s before t_m, which is inside the decision
  window of every look-back.

Because both approach speeds are constant, the measured lead time at the
5 s look-back equals the drawn T exactly; shorter look-backs see the
post-adjustment motion instead.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields

import numpy as np

from .core import (
    ConfigError,
    Dataset,
    LaneRole,
    PredictionInstance,
    PredictionMode,
    SiteProfile,
    VehicleClass,
    VehicleTrack,
    MODEL_DT,
    MODEL_STEPS,
)
from .ingest import _read_kv

SYNTH_HZ = 5.0
SYNTH_DT = 1.0 / SYNTH_HZ

MERGE_POINT_Y = 200.0

SYNTH_MAGIC = "bb-synth v1"


def synth_site(lane_width: float = 3.6) -> SiteProfile:
    """Straight 3-lane mainline plus an on-ramp joining the outermost lane."""
    w = float(lane_width)
    return SiteProfile(
        site_id="synth",
        raw_unit="meters",
        lane_boundaries=np.arange(5) * w,
        lane_ids=(1, 2, 3, 4),
        lane_roles={1: LaneRole.MAINLINE, 2: LaneRole.MAINLINE,
                    3: LaneRole.OUTERMOST_MAINLINE, 4: LaneRole.ONRAMP},
        lane_order=(1, 2, 3),
    )


@dataclass(frozen=True)
class SynthParams:
    n_events: int = 200
    pass_first_logistic_scale: float = 1.0
    courtesy_p_conflict: float = 0.6
    courtesy_p_noconflict: float = 0.05
    lc_ttc_threshold: float = 3.0
    speed_range: tuple[float, float] = (8.0, 15.0)
    lane_width: float = 3.6
    noise_sigma_lateral: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_events < 1:
            raise ConfigError("n_events must be positive")
        for name in ("courtesy_p_conflict", "courtesy_p_noconflict"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be a probability in [0, 1], "
                                  f"got {p}")
        if self.pass_first_logistic_scale < 0:
            raise ConfigError("pass_first_logistic_scale must be >= 0")
        if self.lc_ttc_threshold < 0:
            raise ConfigError("lc_ttc_threshold must be >= 0")
        lo, hi = self.speed_range
        if not (0 < lo < hi):
            raise ConfigError("speed_range must be increasing and positive")
        if self.lane_width <= 0:
            raise ConfigError("lane_width must be positive")
        if self.noise_sigma_lateral < 0:
            raise ConfigError("noise_sigma_lateral must be >= 0")
        object.__setattr__(self, "speed_range",
                           (float(lo), float(hi)))

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            d[f.name] = list(v) if isinstance(v, tuple) else v
        return d


def write_synth_params(params: SynthParams, path: str) -> None:
    lines = [SYNTH_MAGIC]
    for key, val in params.to_dict().items():
        if isinstance(val, list):
            lines.append(f"{key} = " + ",".join(repr(float(v)) for v in val))
        else:
            lines.append(f"{key} = {val}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_synth_params(path: str) -> SynthParams:
    kv = _read_kv(path, SYNTH_MAGIC)
    d: dict = {}
    for key, val in kv.items():
        if key == "speed_range":
            d[key] = tuple(float(v) for v in val.split(","))
        elif key in ("n_events", "seed"):
            d[key] = int(val)
        else:
            d[key] = float(val)
    try:
        return SynthParams(**d)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class MergeLabel:
    event_id: str
    merger_id: int
    highway_id: int
    true_lead: float
    true_outcome: str          # merger_first | highway_first
    true_conflict: bool        # |true_lead| <= 1 s
    courtesy: bool


@dataclass(frozen=True)
class HighwayLabel:
    pair_id: str
    ego_id: int
    lead_id: int
    anchor_t: float
    true_ttc: float            # +inf when speeds are matched
    lane_change: bool


def _logistic(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _lane_x(site: SiteProfile, lane: int) -> float:
    i = site.lane_ids.index(lane)
    b = site.lane_boundaries
    return float((b[i] + b[i + 1]) / 2.0)


def _track(site, vid, t, x, y, lanes, vclass=VehicleClass.AUTO):
    return VehicleTrack(vehicle_id=vid, vclass=vclass, length=4.5, width=1.8,
                        t=t, x=x, y=y, lane_ids=lanes)


# merge-scenario timing, in samples at 5 Hz relative to the block start
_APPROACH_S = 25.0             # block start to t_m
_TAIL_S = 8.0                  # recording continues past t_m
_BLOCK_S = 40.0
_K_MERGE = int(round(_APPROACH_S / SYNTH_DT))          # merger enters lane 3
_K_ADJUST = _K_MERGE - 23      # highway speed change, 4.6 s before t_m
# Courtesy changes happen 0.2 s before t_m: late enough that every look-back
# window (anchored at t_m - tau on the 0.4 s lattice) still has two
# from-lane samples to establish the dwell, early enough to precede the
# merge itself.
_K_COURTESY = _K_MERGE - 1


def generate_merge_dataset(params: SynthParams
                           ) -> tuple[Dataset, list[MergeLabel]]:
    site = synth_site(params.lane_width)
    c3, c4 = _lane_x(site, 3), _lane_x(site, 4)
    c2 = _lane_x(site, 2)
    n = int(round((_APPROACH_S + _TAIL_S) / SYNTH_DT)) + 1
    k = np.arange(n)
    tracks: dict[int, VehicleTrack] = {}
    labels: list[MergeLabel] = []
    for i in range(params.n_events):
        rng = np.random.default_rng([params.seed, i])
        lead = float(rng.uniform(-4.0, 4.0))
        v_m = float(rng.uniform(*params.speed_range))
        v_h = float(rng.uniform(*params.speed_range))
        scale = params.pass_first_logistic_scale
        p_first = _logistic(lead / scale) if scale > 0 else float(lead > 0)
        merger_first = bool(rng.random() < p_first)
        conflict = abs(lead) <= 1.0
        p_c = (params.courtesy_p_conflict if conflict
               else params.courtesy_p_noconflict)
        courtesy = bool(rng.random() < p_c)
        # actual crossing separation; sign realizes the sampled outcome
        offset = float(rng.uniform(0.3, 2.5))

        t0 = _BLOCK_S * i
        t = t0 + SYNTH_DT * k
        t_m = t0 + _APPROACH_S

        merger_id, highway_id = 10 * i + 1, 10 * i + 2
        y_m = MERGE_POINT_Y + v_m * (t - t_m)
        lanes_m = np.where(k < _K_MERGE, 4, 3).astype(np.int64)
        x_m = np.where(k < _K_MERGE, c4, c3) \
            + rng.normal(0.0, params.noise_sigma_lateral, n)
        tracks[merger_id] = _track(site, merger_id, t, x_m, y_m, lanes_m)

        # constant-speed approach keeps the projected lead equal to `lead`
        # at every anchor before the adjustment
        t_r = t0 + _K_ADJUST * SYNTH_DT
        t_star = t_m + (offset if merger_first else -offset)
        y_r = MERGE_POINT_Y - v_h * (lead + (t_m - t_r))
        v2 = v_h * (lead + (t_m - t_r)) / (t_star - t_r)
        y_h = np.where(k <= _K_ADJUST,
                       MERGE_POINT_Y - v_h * (t_m + lead - t),
                       y_r + v2 * (t - t_r))
        if courtesy:
            lanes_h = np.where(k < _K_COURTESY, 3, 2).astype(np.int64)
            x_h = np.where(k < _K_COURTESY, c3, c2)
        else:
            lanes_h = np.full(n, 3, dtype=np.int64)
            x_h = np.full(n, c3)
        x_h = x_h + rng.normal(0.0, params.noise_sigma_lateral, n)
        tracks[highway_id] = _track(site, highway_id, t, x_h, y_h, lanes_h)

        labels.append(MergeLabel(
            event_id=f"m{merger_id}", merger_id=merger_id,
            highway_id=highway_id, true_lead=lead,
            true_outcome="merger_first" if merger_first else "highway_first",
            true_conflict=conflict, courtesy=courtesy,
        ))
    return Dataset(site=site, tracks=tracks, sample_hz=SYNTH_HZ), labels


# TTC bin coverage for the highway scenario: one representative interval per
# default bin, cycled round-robin; None means matched speeds (TTC = +inf)
_TTC_TARGETS: tuple[tuple[float, float] | None, ...] = (
    (-14.0, -11.0), (-9.0, -6.0), (-4.5, -2.5), (-1.8, -0.2),
    (0.1, 0.9), (1.1, 1.9), (2.1, 2.9), (3.2, 4.8), (5.5, 9.5),
    (11.0, 14.0), None,
)

_HW_BLOCK_S = 20.0
_HW_ANCHOR_S = 2.8             # exactly the 8-sample history
_HW_HORIZON_S = MODEL_DT * MODEL_STEPS


def generate_highway_dataset(params: SynthParams
                             ) -> tuple[Dataset, list[HighwayLabel]]:
    """Isolated (ego, lead) car-following pairs, one decision anchor each.

    The ego changes into the faster neighboring lane at the anchor iff its
    time-to-collision there lies strictly inside (0, lc_ttc_threshold). Ego
    tracks span exactly history + horizon around the anchor so the 1 s
    anchor cadence yields a single fully-covered anchor per pair.
    """
    site = synth_site(params.lane_width)
    c1, c2 = _lane_x(site, 1), _lane_x(site, 2)
    n = int(round((_HW_ANCHOR_S + _HW_HORIZON_S) / SYNTH_DT)) + 1
    k = np.arange(n)
    k_anchor = int(round(_HW_ANCHOR_S / SYNTH_DT))
    # two window samples in the old lane before the move, so the dwell
    # filter keeps the from-lane run
    k_lc = k_anchor + int(round(0.8 / SYNTH_DT))
    tracks: dict[int, VehicleTrack] = {}
    labels: list[HighwayLabel] = []
    for i in range(params.n_events):
        rng = np.random.default_rng([params.seed, i, 2])
        target = _TTC_TARGETS[i % len(_TTC_TARGETS)]
        v_e = float(rng.uniform(10.0, 15.0))
        if target is None:
            ttc = math.inf
            dv = 0.0
            gap = float(rng.uniform(20.0, 40.0))
        else:
            ttc = float(rng.uniform(*target))
            dv = float(rng.uniform(1.0, 3.0)) * (1.0 if ttc > 0 else -1.0)
            gap = ttc * dv
        v_f = v_e - dv

        t0 = _HW_BLOCK_S * i
        t = t0 + SYNTH_DT * k
        anchor_t = t0 + _HW_ANCHOR_S
        ego_id, lead_id = 10 * i + 1, 10 * i + 2

        y_e = v_e * (t - anchor_t)
        y_f = gap + v_f * (t - anchor_t)
        change = 0.0 < ttc < params.lc_ttc_threshold
        if change:
            lanes_e = np.where(k < k_lc, 2, 1).astype(np.int64)
            x_e = np.where(k < k_lc, c2, c1)
        else:
            lanes_e = np.full(n, 2, dtype=np.int64)
            x_e = np.full(n, c2)
        x_e = x_e + rng.normal(0.0, params.noise_sigma_lateral, n)
        x_f = c2 + rng.normal(0.0, params.noise_sigma_lateral, n)
        tracks[ego_id] = _track(site, ego_id, t, x_e, y_e, lanes_e)
        tracks[lead_id] = _track(site, lead_id, t, x_f, y_f,
                                 np.full(n, 2, dtype=np.int64))
        labels.append(HighwayLabel(
            pair_id=f"h{ego_id}", ego_id=ego_id, lead_id=lead_id,
            anchor_t=float(t[k_anchor]), true_ttc=ttc,
            lane_change=bool(change),
        ))
    return Dataset(site=site, tracks=tracks, sample_hz=SYNTH_HZ), labels


def generate_lane_keeping_tracks(n_tracks: int, sigma: float, seed: int,
                                 duration_s: float = 10.0,
                                 lane: int = 2) -> list[VehicleTrack]:
    """Straight tracks with lateral sensor noise and no lane change."""
    site = synth_site()
    cx = _lane_x(site, lane)
    n = int(round(duration_s / SYNTH_DT)) + 1
    t = SYNTH_DT * np.arange(n)
    out = []
    for i in range(n_tracks):
        rng = np.random.default_rng([seed, i, 3])
        v = float(rng.uniform(8.0, 15.0))
        x = cx + rng.normal(0.0, sigma, n)
        out.append(_track(site, i + 1, t, x, v * t,
                          np.full(n, lane, dtype=np.int64)))
    return out


def generate_lane_change_tracks(n_tracks: int, sigma: float, seed: int,
                                duration_s: float = 12.0,
                                from_lane: int = 2, to_lane: int = 3
                                ) -> tuple[list[VehicleTrack], list[float]]:
    """Tracks with one injected lane change; returns (tracks, change times).

    The lateral move is a linear ramp over 0.8 s centered in the track.
    """
    site = synth_site()
    x0, x1 = _lane_x(site, from_lane), _lane_x(site, to_lane)
    n = int(round(duration_s / SYNTH_DT)) + 1
    t = SYNTH_DT * np.arange(n)
    t_mid = duration_s / 2.0
    ramp = np.clip((t - (t_mid - 0.4)) / 0.8, 0.0, 1.0)
    base = x0 + (x1 - x0) * ramp
    boundary = float(site.lane_boundaries[
        min(site.lane_ids.index(from_lane), site.lane_ids.index(to_lane)) + 1])
    # truth: first sample geometrically past the boundary
    crossed = np.flatnonzero(base >= boundary if x1 > x0 else base <= boundary)
    t_true = float(t[crossed[0]])
    out = []
    for i in range(n_tracks):
        rng = np.random.default_rng([seed, i, 4])
        v = float(rng.uniform(8.0, 15.0))
        x = base + rng.normal(0.0, sigma, n)
        lanes = np.where(ramp < 0.5, from_lane, to_lane).astype(np.int64)
        out.append(_track(site, i + 1, t, x, v * t, lanes))
    return out, [t_true] * n_tracks


def constant_velocity_predict(history: np.ndarray, vehicle_id: int = 0,
                              request_id: str | None = None
                              ) -> PredictionInstance:
    """Single-mode baseline: extrapolate the last two history samples.

    ``history`` is an (n, 3) array of t, x, y rows ending at the anchor.
    """
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 2 or history.shape[1] != 3:
        raise ConfigError("history must be an (n, 3) array of t, x, y")
    if history.shape[0] < 2:
        raise ConfigError(
            "constant-velocity baseline needs at least 2 history samples")
    t1, x1, y1 = history[-1]
    t0, x0, y0 = history[-2]
    vx = (x1 - x0) / (t1 - t0)
    vy = (y1 - y0) / (t1 - t0)
    steps = MODEL_DT * np.arange(1, MODEL_STEPS + 1)
    points = np.column_stack([x1 + vx * steps, y1 + vy * steps])
    return PredictionInstance(
        vehicle_id=vehicle_id, anchor_t=float(t1),
        modes=(PredictionMode(probability=1.0, points=points),),
        request_id=request_id,
    )


def predict_requests_cv(requests) -> list[PredictionInstance]:
    return [constant_velocity_predict(r.ego_history, r.ego_id, r.request_id)
            for r in requests]


def ground_truth_predict(dataset, vehicle_id: int, anchor_t: float,
                         request_id: str | None = None
                         ) -> PredictionInstance | None:
    """Oracle "model" that copies the future onto the prediction lattice.

    Returns None when the track lacks full 12-step coverage past the
    anchor, mimicking a model that cannot answer the request.
    """
    track = dataset.tracks[vehicle_id]
    i0 = track.index_at(anchor_t)
    if i0 is None:
        return None
    stride = max(1, int(round(MODEL_DT * dataset.sample_hz)))
    idx = i0 + stride * np.arange(1, MODEL_STEPS + 1)
    if idx[-1] > len(track) - 1:
        return None
    points = np.column_stack([track.x[idx], track.y[idx]])
    return PredictionInstance(
        vehicle_id=vehicle_id, anchor_t=float(anchor_t),
        modes=(PredictionMode(probability=1.0, points=points),),
        request_id=request_id,
    )


def write_merge_labels(labels: list[MergeLabel], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["event_id", "merger_id", "highway_id", "true_lead",
                    "true_outcome", "true_conflict", "courtesy"])
        for lb in labels:
            w.writerow([lb.event_id, lb.merger_id, lb.highway_id,
                        repr(lb.true_lead), lb.true_outcome,
                        int(lb.true_conflict), int(lb.courtesy)])


def write_highway_labels(labels: list[HighwayLabel], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair_id", "ego_id", "lead_id", "anchor_t", "true_ttc",
                    "lane_change"])
        for lb in labels:
            w.writerow([lb.pair_id, lb.ego_id, lb.lead_id, repr(lb.anchor_t),
                        repr(lb.true_ttc), int(lb.lane_change)])
