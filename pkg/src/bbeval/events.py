"""Merge events, lane changes, interacting-vehicle selection, pass order.

Everything here is applied identically to naturalistic and predicted
trajectories: conditions are read off the full-rate naturalistic tracks,
while outcomes are evaluated on windowed trajectories at the model lattice
(anchor + MODEL_DT steps) regardless of source, so that a model echoing the
ground truth reproduces the naturalistic result bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    MODEL_DT,
    MODEL_STEPS,
    HISTORY_SAMPLES,
    TIME_ATOL,
    UNKNOWN_LANE,
    AnalysisConfig,
    DataError,
    Dataset,
    LaneRole,
    MERGE_SOURCE_ROLES,
    SiteProfile,
    StoppedVehicleError,
    VehicleState,
    VehicleTrack,
)
from .kinematics import lead_time, snapshot_at

TOWARD_MEDIAN = "toward_median"
TOWARD_SHOULDER = "toward_shoulder"

MERGER_FIRST = "merger_first"
HIGHWAY_FIRST = "highway_first"
UNDETERMINED = "undetermined"

# per-(event, tau) exclusion reason codes
EXCL_NO_ANCHOR = "no_anchor_sample"
EXCL_MERGER_HISTORY = "insufficient_history_merger"
EXCL_HIGHWAY_HISTORY = "insufficient_history_highway"
EXCL_NO_HIGHWAY = "no_highway_vehicle"
EXCL_STOPPED = "stopped_vehicle"
EXCL_NOT_UPSTREAM = "not_upstream"


def assign_lane(state: VehicleState, site: SiteProfile) -> int:
    """Recorded lane id when present, else geometric assignment from x."""
    if state.lane_id != UNKNOWN_LANE:
        return state.lane_id
    return site.lane_at_x(state.x)


def lanes_from_x(xs: np.ndarray, site: SiteProfile) -> np.ndarray:
    """Vectorized geometric lane assignment for label-free trajectories."""
    xs = np.asarray(xs, dtype=np.float64)
    b = site.lane_boundaries
    idx = np.searchsorted(b, xs, side="left") - 1
    idx[xs == b[0]] = 0
    lanes = np.full(xs.shape, UNKNOWN_LANE, dtype=np.int64)
    inside = (idx >= 0) & (idx < len(site.lane_ids)) & (xs >= b[0]) & (xs <= b[-1])
    lane_ids = np.asarray(site.lane_ids, dtype=np.int64)
    lanes[inside] = lane_ids[idx[inside]]
    return lanes


def resolved_lanes(track: VehicleTrack, site: SiteProfile) -> np.ndarray:
    """Per-sample lanes: recorded where known, geometric where UNKNOWN."""
    lanes = track.lane_ids.copy()
    missing = lanes == UNKNOWN_LANE
    if missing.any():
        lanes[missing] = lanes_from_x(track.x[missing], site)
    return lanes


@dataclass(frozen=True)
class LaneChange:
    vehicle_id: int
    t_lc: float
    from_lane: int
    to_lane: int
    direction: str

    def __post_init__(self):
        if self.from_lane == self.to_lane:
            raise DataError("lane change with from_lane == to_lane")


def _runs(values: np.ndarray):
    """(start, stop, value) for each maximal constant run; stop exclusive."""
    if values.size == 0:
        return []
    breaks = np.flatnonzero(values[1:] != values[:-1]) + 1
    starts = np.concatenate(([0], breaks))
    stops = np.concatenate((breaks, [values.size]))
    return [(int(a), int(b), int(values[a])) for a, b in zip(starts, stops)]


def detect_lane_changes(times: np.ndarray, lanes: np.ndarray,
                        site: SiteProfile, lc_dwell: float, dt: float,
                        vehicle_id: int = 0) -> list[LaneChange]:
    """Dwell-filtered lane changes over a lane sequence.

    A run is sustained when it spans >= lc_dwell (run length * dt) or reaches
    the final sample, so changes near the end of a short predicted trajectory
    still count. UNKNOWN samples are ignored entirely. t_lc is the first
    sample in the new lane.
    """
    times = np.asarray(times, dtype=np.float64)
    lanes = np.asarray(lanes, dtype=np.int64)
    valid = lanes != UNKNOWN_LANE
    times, lanes = times[valid], lanes[valid]
    if lanes.size < 2:
        return []
    min_len = max(1, int(math.ceil(lc_dwell / dt - 1e-9)))
    out: list[LaneChange] = []
    current: int | None = None
    for start, stop, lane in _runs(lanes):
        sustained = (stop - start) >= min_len or stop == lanes.size
        if not sustained:
            continue
        if current is not None and lane != current:
            direction = (TOWARD_MEDIAN if site.is_toward_median(current, lane)
                         else TOWARD_SHOULDER)
            out.append(LaneChange(vehicle_id=vehicle_id,
                                  t_lc=float(times[start]),
                                  from_lane=current, to_lane=lane,
                                  direction=direction))
        current = lane
    return out


def track_lane_changes(track: VehicleTrack, site: SiteProfile,
                       config: AnalysisConfig) -> list[LaneChange]:
    lanes = resolved_lanes(track, site)
    return detect_lane_changes(track.t, lanes, site, config.lc_dwell,
                               track.dt, vehicle_id=track.vehicle_id)


# ---------------------------------------------------------------------------
# windowed trajectories (shared outcome representation for all sources)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    """Positions on the model lattice starting at the anchor sample."""

    vehicle_id: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return int(self.t.size)

    def clipped(self, end_t: float) -> "Trajectory":
        keep = self.t <= end_t + TIME_ATOL
        return Trajectory(self.vehicle_id, self.t[keep], self.x[keep],
                          self.y[keep])

    def lane_changes(self, site: SiteProfile, config: AnalysisConfig
                     ) -> list[LaneChange]:
        # geometric assignment only: predictions carry no labels and the
        # naturalistic side must go through the identical path
        lanes = lanes_from_x(self.x, site)
        return detect_lane_changes(self.t, lanes, site, config.lc_dwell,
                                   MODEL_DT, vehicle_id=self.vehicle_id)


def model_stride(dt: float) -> int:
    """Samples per model-lattice step; errors when the rates are
    incommensurate."""
    stride = MODEL_DT / dt
    if abs(stride - round(stride)) > 1e-6 or round(stride) < 1:
        raise DataError(
            f"dataset rate {1.0 / dt:g} Hz does not contain the "
            f"{1.0 / MODEL_DT:g} Hz model lattice"
        )
    return int(round(stride))


def naturalistic_window(track: VehicleTrack, anchor_t: float,
                        steps: int = MODEL_STEPS) -> Trajectory | None:
    """Ground truth subsampled onto the model lattice from the anchor.

    Includes the anchor sample; stops early where the track ends.
    """
    i0 = track.index_at(anchor_t)
    if i0 is None or len(track) < 2:
        return None
    stride = model_stride(track.dt)
    last = min(len(track) - 1, i0 + stride * steps)
    idx = np.arange(i0, last + 1, stride)
    return Trajectory(track.vehicle_id, track.t[idx].copy(),
                      track.x[idx].copy(), track.y[idx].copy())


def prediction_window(vehicle_id: int, anchor_t: float,
                      anchor_xy: tuple[float, float],
                      points: np.ndarray) -> Trajectory:
    """Model output as a Trajectory: the anchor state plus the predicted
    points."""
    t = anchor_t + MODEL_DT * np.arange(points.shape[0] + 1)
    x = np.concatenate(([anchor_xy[0]], points[:, 0]))
    y = np.concatenate(([anchor_xy[1]], points[:, 1]))
    return Trajectory(vehicle_id, t, x, y)


def history_ok(track: VehicleTrack, anchor_t: float) -> bool:
    """Whether the 8-sample 2.5 Hz history ending at the anchor exists."""
    i0 = track.index_at(anchor_t)
    if i0 is None:
        return False
    try:
        stride = model_stride(track.dt)
    except DataError:
        return False
    return i0 - stride * (HISTORY_SAMPLES - 1) >= 0


def history_samples(track: VehicleTrack, anchor_t: float) -> np.ndarray:
    """Indices of the 2.5 Hz history (oldest first, anchor last)."""
    i0 = track.index_at(anchor_t)
    stride = model_stride(track.dt)
    idx = np.arange(i0 - stride * (HISTORY_SAMPLES - 1), i0 + 1, stride)
    if idx[0] < 0:
        raise DataError(
            f"vehicle {track.vehicle_id}: insufficient history at t={anchor_t}"
        )
    return idx


# ---------------------------------------------------------------------------
# per-frame occupancy index
# ---------------------------------------------------------------------------

class FrameIndex:
    """Who is where at each grid time, with resolved lanes.

    Built once per dataset; requires all tracks to share one time lattice
    (true for the supported sources, where times come off a common clock).
    """

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        dt = dataset.dt
        if not dataset.tracks:
            raise DataError("cannot index an empty dataset")
        self.t_origin = min(tr.t0 for tr in dataset.tracks.values())
        self.lanes: dict[int, np.ndarray] = {}
        keys_parts, ids_parts, x_parts, y_parts, lane_parts = [], [], [], [], []
        for tr in dataset.ordered_tracks():
            rel = (tr.t - self.t_origin) / dt
            keys = np.rint(rel).astype(np.int64)
            if np.max(np.abs(rel - keys)) > 1e-3:
                raise DataError(
                    f"vehicle {tr.vehicle_id} is not on the shared time "
                    "lattice"
                )
            lanes = resolved_lanes(tr, dataset.site)
            self.lanes[tr.vehicle_id] = lanes
            keys_parts.append(keys)
            ids_parts.append(np.full(len(tr), tr.vehicle_id, dtype=np.int64))
            x_parts.append(tr.x)
            y_parts.append(tr.y)
            lane_parts.append(lanes)
        keys = np.concatenate(keys_parts)
        ids = np.concatenate(ids_parts)
        order = np.lexsort((ids, keys))
        self._ids = ids[order]
        self._x = np.concatenate(x_parts)[order]
        self._y = np.concatenate(y_parts)[order]
        self._lane = np.concatenate(lane_parts)[order]
        keys = keys[order]
        uniq, starts = np.unique(keys, return_index=True)
        stops = np.append(starts[1:], keys.size)
        self._slices = {int(k): (int(a), int(b))
                        for k, a, b in zip(uniq, starts, stops)}

    def key_of(self, t: float) -> int:
        return int(round((t - self.t_origin) / self.dataset.dt))

    def at(self, t: float):
        """(vehicle_ids, x, y, lane) arrays for everyone present at time t."""
        span = self._slices.get(self.key_of(t))
        if span is None:
            empty_f = np.empty(0)
            return (np.empty(0, dtype=np.int64), empty_f, empty_f,
                    np.empty(0, dtype=np.int64))
        a, b = span
        return (self._ids[a:b], self._x[a:b], self._y[a:b], self._lane[a:b])


# ---------------------------------------------------------------------------
# merge events
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TauRecord:
    """Conditions for one look-back of one merge event.

    ``t_l`` is exactly t_m - tau; ``anchor_t`` is the dataset sample used as
    the prediction anchor (equal to t_l whenever t_l is on the grid).
    ``excluded`` carries a reason code when the conditions could not be
    resolved.
    """

    tau: float
    t_l: float
    anchor_t: float
    highway_id: int | None
    lead: float
    conflict: bool | None
    excluded: str | None

    @property
    def ok(self) -> bool:
        return self.excluded is None


@dataclass(frozen=True)
class MergeEvent:
    event_id: str
    merger_id: int
    from_lane: int
    t_m: float
    merge_point_y: float
    records: tuple[TauRecord, ...]

    def record(self, tau: float) -> TauRecord | None:
        for rec in self.records:
            if abs(rec.tau - tau) <= TIME_ATOL:
                return rec
        return None


def classify_conflict(lead: float, threshold: float) -> bool:
    """Space-sharing conflict: projected arrivals within the threshold,
    boundary inclusive."""
    if not math.isfinite(lead):
        raise DataError(f"lead time must be finite, got {lead}")
    return abs(lead) <= threshold


def select_interacting_highway_vehicle(dataset: Dataset, merger_id: int,
                                       merge_point_y: float, anchor_t: float,
                                       radius: float,
                                       index: FrameIndex | None = None
                                       ) -> int | None:
    """Nearest outermost-lane vehicle still upstream of the merge point."""
    if index is None:
        index = FrameIndex(dataset)
    ids, _, y, lane = index.at(anchor_t)
    d = merge_point_y - y
    cand = (ids != merger_id) & (lane == dataset.site.outermost_lane) & \
        (d >= 0) & (d <= radius)
    if not cand.any():
        return None
    ids, d = ids[cand], d[cand]
    order = np.lexsort((ids, d))  # min distance, ties to lower id
    return int(ids[order[0]])


def _snap_anchor(track: VehicleTrack, t_l: float, dt: float) -> float | None:
    """Nearest sample time to t_l (ties earlier); None when off by > dt/2."""
    i = int(np.searchsorted(track.t, t_l))
    best_t, best_err = None, math.inf
    for j in (i - 1, i):
        if 0 <= j < len(track):
            err = abs(float(track.t[j]) - t_l)
            if err < best_err - TIME_ATOL:
                best_t, best_err = float(track.t[j]), err
    if best_t is None or best_err > dt / 2 + TIME_ATOL:
        return None
    return best_t


def _resolve_tau(dataset: Dataset, index: FrameIndex, merger: VehicleTrack,
                 merge_point_y: float, t_m: float, tau: float,
                 config: AnalysisConfig) -> TauRecord:
    t_l = t_m - tau
    nan = math.nan

    def excluded(reason, anchor=nan, highway=None):
        return TauRecord(tau=tau, t_l=t_l, anchor_t=anchor, highway_id=highway,
                         lead=nan, conflict=None, excluded=reason)

    anchor_t = _snap_anchor(merger, t_l, dataset.dt)
    if anchor_t is None:
        return excluded(EXCL_NO_ANCHOR)
    if not history_ok(merger, anchor_t):
        return excluded(EXCL_MERGER_HISTORY, anchor=anchor_t)
    highway_id = select_interacting_highway_vehicle(
        dataset, merger.vehicle_id, merge_point_y, anchor_t,
        config.neighbor_radius, index,
    )
    if highway_id is None:
        return excluded(EXCL_NO_HIGHWAY, anchor=anchor_t)
    highway = dataset.tracks[highway_id]
    if not history_ok(highway, anchor_t):
        return excluded(EXCL_HIGHWAY_HISTORY, anchor=anchor_t,
                        highway=highway_id)
    try:
        t_lead = lead_time(
            snapshot_at(merger, anchor_t, ref_y=merge_point_y),
            snapshot_at(highway, anchor_t, ref_y=merge_point_y),
            speed_eps=config.speed_eps,
        )
    except StoppedVehicleError:
        return excluded(EXCL_STOPPED, anchor=anchor_t, highway=highway_id)
    except DataError:
        return excluded(EXCL_NOT_UPSTREAM, anchor=anchor_t, highway=highway_id)
    return TauRecord(
        tau=tau, t_l=t_l, anchor_t=anchor_t, highway_id=highway_id,
        lead=t_lead, conflict=classify_conflict(t_lead, config.conflict_threshold),
        excluded=None,
    )


def extract_merge_events(dataset: Dataset, config: AnalysisConfig,
                         index: FrameIndex | None = None) -> list[MergeEvent]:
    """One event per vehicle whose sustained lane-role sequence goes
    onramp/auxiliary -> outermost mainline; per-tau conditions resolved."""
    site = dataset.site
    if not any(r is LaneRole.ONRAMP for r in site.lane_roles.values()):
        raise DataError(f"site {site.site_id} has no onramp lane")
    if index is None:
        index = FrameIndex(dataset)
    min_len_cache: dict[float, int] = {}
    events: list[MergeEvent] = []
    for track in dataset.ordered_tracks():
        if len(track) < 2:
            continue
        dt = track.dt
        if dt not in min_len_cache:
            min_len_cache[dt] = max(1, int(math.ceil(config.lc_dwell / dt - 1e-9)))
        min_len = min_len_cache[dt]
        lanes = index.lanes[track.vehicle_id]
        sustained = []
        for start, stop, lane in _runs(lanes):
            if lane == UNKNOWN_LANE:
                continue
            if (stop - start) >= min_len or stop == lanes.size:
                sustained.append((start, lane))
        hit = None
        for (s0, lane0), (s1, lane1) in zip(sustained, sustained[1:]):
            if (site.role(lane0) in MERGE_SOURCE_ROLES
                    and site.role(lane1) is LaneRole.OUTERMOST_MAINLINE):
                hit = (s1, lane0)
                break
        if hit is None:
            continue
        start_idx, from_lane = hit
        t_m = float(track.t[start_idx])
        merge_point_y = float(track.y[start_idx])
        if site.merge_zone is not None:
            y0, y1 = site.merge_zone
            if not (y0 <= merge_point_y <= y1):
                continue
        records = tuple(
            _resolve_tau(dataset, index, track, merge_point_y, t_m, tau, config)
            for tau in config.lookbacks
        )
        events.append(MergeEvent(
            event_id=f"m{track.vehicle_id}", merger_id=track.vehicle_id,
            from_lane=from_lane, t_m=t_m, merge_point_y=merge_point_y,
            records=records,
        ))
    return events


# ---------------------------------------------------------------------------
# pass order
# ---------------------------------------------------------------------------

def first_crossing_time(t: np.ndarray, y: np.ndarray, threshold: float,
                        cap: float) -> float | None:
    """First time y reaches the threshold, interpolated between samples;
    constant-speed extrapolation past the end up to +cap seconds."""
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.size == 0:
        return None
    if y[0] >= threshold:
        return float(t[0])
    above = np.flatnonzero(y >= threshold)
    if above.size:
        i = int(above[0])
        y0, y1 = float(y[i - 1]), float(y[i])
        if y1 == y0:
            return float(t[i])
        return float(t[i - 1]) + (threshold - y0) * \
            (float(t[i]) - float(t[i - 1])) / (y1 - y0)
    if y.size < 2:
        return None
    v = (float(y[-1]) - float(y[-2])) / (float(t[-1]) - float(t[-2]))
    if v <= 0.0:
        return None
    t_cross = float(t[-1]) + (threshold - float(y[-1])) / v
    if t_cross > float(t[-1]) + cap:
        return None
    return t_cross


def determine_pass_order(merger_traj: Trajectory, highway_traj: Trajectory,
                         merge_point_y: float, cap: float) -> str:
    """Who reaches the merge point first; undetermined when neither ever
    does (or they tie exactly)."""
    tc_m = first_crossing_time(merger_traj.t, merger_traj.y, merge_point_y, cap)
    tc_h = first_crossing_time(highway_traj.t, highway_traj.y, merge_point_y,
                               cap)
    if tc_m is None and tc_h is None:
        return UNDETERMINED
    if tc_h is None:
        return MERGER_FIRST
    if tc_m is None:
        return HIGHWAY_FIRST
    if tc_m < tc_h:
        return MERGER_FIRST
    if tc_h < tc_m:
        return HIGHWAY_FIRST
    return UNDETERMINED
