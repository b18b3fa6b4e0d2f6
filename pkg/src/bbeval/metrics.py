"""The behavioral analyses, applied uniformly to every trajectory source.

The cardinal rule: conditions (projected lead time, time-to-collision) are
always measured on the full-rate naturalistic history at the anchor;
sources differ only in the outcome trajectories. A TrajectorySource hides
whether those outcomes come from ground truth subsampled onto the model
lattice or from a model's predicted points, so running a metric with the
model replaced by a ground-truth copy reproduces the naturalistic result
bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    MODEL_DT,
    MODEL_STEPS,
    AnalysisConfig,
    DataError,
    Dataset,
    PredictionSet,
    most_likely_mode,
)
from .events import (
    MERGER_FIRST,
    HIGHWAY_FIRST,
    TOWARD_MEDIAN,
    TOWARD_SHOULDER,
    UNDETERMINED,
    FrameIndex,
    MergeEvent,
    Trajectory,
    determine_pass_order,
    extract_merge_events,
    model_stride,
    naturalistic_window,
    prediction_window,
)
from .kinematics import snapshot_at, time_to_collision
from .safety import FrameReport, coordinate_frame_report, count_unsafe
from .stats import BinnedCurve, Table2x2, bin_probability, fisher_exact_two_sided, r_squared

SOURCE_NATURALISTIC = "naturalistic"


def model_tag(name: str) -> str:
    return f"model:{name}"


def fit_similarity(src: np.ndarray, dst: np.ndarray):
    """Least-squares similarity transform (scale, rotation, translation)
    mapping src points onto dst points; returns a callable on (n, 2)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape[0] < 2:
        raise DataError("similarity fit needs at least 2 points")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    sc, dc = src - mu_s, dst - mu_d
    cov = dc.T @ sc / src.shape[0]
    u, d, vt = np.linalg.svd(cov)
    sign = np.sign(np.linalg.det(u @ vt)) or 1.0
    flip = np.diag([1.0, sign])
    rot = u @ flip @ vt
    var_s = float((sc ** 2).sum() / src.shape[0])
    if var_s == 0.0:
        raise DataError("similarity fit on coincident points")
    scale = float(np.trace(np.diag(d) @ flip)) / var_s
    shift = mu_d - scale * (rot @ mu_s)

    def apply(points: np.ndarray) -> np.ndarray:
        return scale * (np.asarray(points, dtype=np.float64) @ rot.T) + shift

    return apply


class TrajectorySource:
    """Windowed outcome trajectories for one source tag."""

    def __init__(self, dataset: Dataset, pred_set: PredictionSet | None = None):
        self.dataset = dataset
        self.pred_set = pred_set
        if pred_set is None:
            self.tag = SOURCE_NATURALISTIC
            self.pred_frame = None
        else:
            self.tag = model_tag(pred_set.source)
            if pred_set.frame not in ("local", "global"):
                raise DataError(f"unknown prediction frame {pred_set.frame!r}")
            self.pred_frame = pred_set.frame

    @property
    def is_naturalistic(self) -> bool:
        return self.pred_set is None

    def has(self, vehicle_id: int, anchor_t: float) -> bool:
        track = self.dataset.tracks.get(vehicle_id)
        if track is None or track.index_at(anchor_t) is None:
            return False
        if self.pred_set is None:
            return True
        if self.pred_set.get(vehicle_id, anchor_t) is None:
            return False
        return not (self.pred_frame == "global" and not track.has_global)

    def _anchor_state(self, track, anchor_t, use_global: bool):
        i0 = track.index_at(anchor_t)
        if i0 is None:
            return None
        if use_global:
            if not track.has_global:
                return None
            return float(track.gx[i0]), float(track.gy[i0])
        return float(track.x[i0]), float(track.y[i0])

    def _fit_to_local(self, track, anchor_t):
        i0 = track.index_at(anchor_t)
        stride = model_stride(track.dt)
        lo = max(0, i0 - (8 - 1) * stride)
        hi = min(len(track), i0 + MODEL_STEPS * stride + 1)
        idx = np.arange(lo, hi)
        return fit_similarity(
            np.column_stack([track.gx[idx], track.gy[idx]]),
            np.column_stack([track.x[idx], track.y[idx]]),
        )

    def local(self, vehicle_id: int, anchor_t: float) -> Trajectory | None:
        """Outcome trajectory in the local road frame."""
        track = self.dataset.tracks.get(vehicle_id)
        if track is None:
            return None
        if self.pred_set is None:
            return naturalistic_window(track, anchor_t)
        inst = self.pred_set.get(vehicle_id, anchor_t)
        if inst is None:
            return None
        points = most_likely_mode(inst).points
        anchor_xy = self._anchor_state(track, anchor_t, use_global=False)
        if anchor_xy is None:
            return None
        if self.pred_frame == "global":
            if not track.has_global:
                return None
            points = self._fit_to_local(track, anchor_t)(points)
        return prediction_window(vehicle_id, float(anchor_t), anchor_xy,
                                 points)

    def global_(self, vehicle_id: int, anchor_t: float) -> Trajectory | None:
        """Outcome trajectory in the global frame, when representable."""
        track = self.dataset.tracks.get(vehicle_id)
        if track is None or not track.has_global:
            return None
        if self.pred_set is None:
            i0 = track.index_at(anchor_t)
            if i0 is None or len(track) < 2:
                return None
            stride = model_stride(track.dt)
            last = min(len(track) - 1, i0 + stride * MODEL_STEPS)
            idx = np.arange(i0, last + 1, stride)
            return Trajectory(vehicle_id, track.t[idx].copy(),
                              track.gx[idx].copy(), track.gy[idx].copy())
        if self.pred_frame != "global":
            return None
        inst = self.pred_set.get(vehicle_id, anchor_t)
        if inst is None:
            return None
        anchor_xy = self._anchor_state(track, anchor_t, use_global=True)
        if anchor_xy is None:
            return None
        return prediction_window(vehicle_id, float(anchor_t), anchor_xy,
                                 most_likely_mode(inst).points)


# ---------------------------------------------------------------------------
# merge-scenario outcomes
# ---------------------------------------------------------------------------

MISSING = "missing_trajectory"


@dataclass(frozen=True)
class MergeOutcome:
    pass_order: str | None
    courtesy: bool | None
    shoulder_exit: bool | None
    missing: bool = False


def resolve_merge_outcomes(events: list[MergeEvent],
                           source: TrajectorySource,
                           config: AnalysisConfig
                           ) -> dict[tuple[str, float], MergeOutcome]:
    """Outcome of every resolvable (event, lookback) for one source."""
    out: dict[tuple[str, float], MergeOutcome] = {}
    site = source.dataset.site
    for ev in events:
        for rec in ev.records:
            if not rec.ok:
                continue
            key = (ev.event_id, rec.tau)
            m_traj = source.local(ev.merger_id, rec.anchor_t)
            h_traj = source.local(rec.highway_id, rec.anchor_t)
            if m_traj is None or h_traj is None:
                out[key] = MergeOutcome(None, None, None, missing=True)
                continue
            order = determine_pass_order(m_traj, h_traj, ev.merge_point_y,
                                         config.crossing_cap)
            changes = h_traj.clipped(ev.t_m).lane_changes(site, config)
            courtesy = any(c.direction == TOWARD_MEDIAN for c in changes)
            shoulder = any(c.direction == TOWARD_SHOULDER for c in changes)
            out[key] = MergeOutcome(order, courtesy, shoulder)
    return out


@dataclass
class PassFirstResult:
    curve: BinnedCurve
    n_used: int
    n_undetermined: int
    n_missing: int


def pass_first_curve(events: list[MergeEvent], tau: float,
                     outcomes: dict[tuple[str, float], MergeOutcome],
                     config: AnalysisConfig) -> PassFirstResult:
    """P(merger passes first | projected lead time bin) for one source."""
    values, successes = [], []
    n_und = n_missing = 0
    for ev in events:
        rec = ev.record(tau)
        if rec is None or not rec.ok:
            continue
        oc = outcomes.get((ev.event_id, rec.tau))
        if oc is None or oc.missing:
            n_missing += 1
            continue
        if oc.pass_order == UNDETERMINED:
            n_und += 1
            continue
        values.append(rec.lead)
        successes.append(oc.pass_order == MERGER_FIRST)
    if not values:
        raise DataError(f"zero resolvable events at lookback {tau:g}")
    curve = bin_probability(np.asarray(values), np.asarray(successes, bool),
                            config.lead_bin_edges(), config.min_count)
    return PassFirstResult(curve=curve, n_used=len(values),
                           n_undetermined=n_und, n_missing=n_missing)


@dataclass
class CourtesyResult:
    table: Table2x2
    p_value: float
    n_shoulder_exits: int
    n_missing: int


def courtesy_lc_table(events: list[MergeEvent], tau: float,
                      outcomes: dict[tuple[str, float], MergeOutcome]
                      ) -> CourtesyResult:
    """Conflict-vs-courtesy 2x2 with its two-sided exact test."""
    a = b = c = d = 0
    n_shoulder = n_missing = 0
    for ev in events:
        rec = ev.record(tau)
        if rec is None or not rec.ok:
            continue
        oc = outcomes.get((ev.event_id, rec.tau))
        if oc is None or oc.missing:
            n_missing += 1
            continue
        if oc.shoulder_exit:
            n_shoulder += 1
        if rec.conflict:
            a, b = (a + 1, b) if oc.courtesy else (a, b + 1)
        else:
            c, d = (c + 1, d) if oc.courtesy else (c, d + 1)
    table = Table2x2(a=a, b=b, c=c, d=d)
    return CourtesyResult(table=table, p_value=fisher_exact_two_sided(table),
                          n_shoulder_exits=n_shoulder, n_missing=n_missing)


# ---------------------------------------------------------------------------
# highway faster-lane changes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HighwayAnchor:
    vehicle_id: int
    anchor_t: float
    lead_id: int
    ttc: float


def merge_participant_ids(events: list[MergeEvent]) -> set[int]:
    out: set[int] = set()
    for ev in events:
        out.add(ev.merger_id)
        for rec in ev.records:
            if rec.highway_id is not None:
                out.add(rec.highway_id)
    return out


def enumerate_highway_anchors(dataset: Dataset, config: AnalysisConfig,
                              exclude_ids: set[int] | None = None,
                              index: FrameIndex | None = None
                              ) -> tuple[list[HighwayAnchor], dict]:
    """Decision anchors at the configured cadence for mainline vehicles.

    An anchor needs the 8-sample history, full 12-step ground-truth
    coverage, and a same-lane lead vehicle within neighbor_radius ahead at
    the anchor; skip totals are returned alongside.
    """
    if index is None:
        index = FrameIndex(dataset)
    exclude_ids = exclude_ids or set()
    site = dataset.site
    skips = {"no_lead": 0, "excluded_vehicle": 0, "off_mainline": 0,
             "bad_condition": 0}
    anchors: list[HighwayAnchor] = []
    for track in dataset.ordered_tracks():
        if len(track) < 2:
            continue
        if track.vehicle_id in exclude_ids:
            skips["excluded_vehicle"] += 1
            continue
        stride = model_stride(track.dt)
        step = max(1, int(round(config.anchor_cadence / track.dt)))
        lanes = index.lanes[track.vehicle_id]
        first = (8 - 1) * stride
        last = len(track) - 1 - MODEL_STEPS * stride
        for i0 in range(first, last + 1, step):
            lane = int(lanes[i0])
            if not site.is_mainline(lane):
                skips["off_mainline"] += 1
                continue
            t_a = float(track.t[i0])
            ids, _, ys, frame_lanes = index.at(t_a)
            ego_y = float(track.y[i0])
            gap = ys - ego_y
            cand = (ids != track.vehicle_id) & (frame_lanes == lane) & \
                (gap > 0) & (gap <= config.neighbor_radius)
            if not cand.any():
                skips["no_lead"] += 1
                continue
            sel = np.lexsort((ids[cand], gap[cand]))[0]
            lead_id = int(ids[cand][sel])
            try:
                ttc = time_to_collision(
                    snapshot_at(track, t_a),
                    snapshot_at(dataset.tracks[lead_id], t_a),
                    speed_eps=config.ttc_speed_eps,
                )
            except DataError:
                skips["bad_condition"] += 1
                continue
            anchors.append(HighwayAnchor(vehicle_id=track.vehicle_id,
                                         anchor_t=t_a, lead_id=lead_id,
                                         ttc=ttc))
    return anchors, skips


@dataclass
class HighwayLcResult:
    curve: BinnedCurve
    n_anchors: int
    n_changes: int
    n_missing: int


def highway_lc_curve(anchors: list[HighwayAnchor], tau: float,
                     source: TrajectorySource,
                     config: AnalysisConfig) -> HighwayLcResult:
    """P(lane change into a faster lane within (anchor, anchor+tau] | TTC)."""
    site = source.dataset.site
    values, successes = [], []
    n_missing = 0
    for a in anchors:
        traj = source.local(a.vehicle_id, a.anchor_t)
        if traj is None:
            n_missing += 1
            continue
        window = traj.clipped(a.anchor_t + tau)
        changes = window.lane_changes(site, config)
        hit = any(site.is_faster_lane_change(c.from_lane, c.to_lane)
                  for c in changes)
        values.append(a.ttc)
        successes.append(hit)
    if not values:
        raise DataError(f"zero resolvable highway anchors at lookahead {tau:g}")
    curve = bin_probability(np.asarray(values), np.asarray(successes, bool),
                            np.asarray(config.ttc_bin_edges), config.min_count)
    return HighwayLcResult(curve=curve, n_anchors=len(values),
                           n_changes=int(np.sum(successes)),
                           n_missing=n_missing)


# ---------------------------------------------------------------------------
# displacement error
# ---------------------------------------------------------------------------

def step_for_horizon(horizon_s: float) -> int:
    """Nearest model-lattice step for a horizon, ties toward the anchor."""
    k = math.ceil(horizon_s / MODEL_DT - 0.5)
    return min(MODEL_STEPS, max(1, k))


def rmse_by_horizon(pred_set: PredictionSet, dataset: Dataset,
                    horizons=(1.0, 2.0, 3.0, 4.0, 5.0)
                    ) -> tuple[dict[float, float], int]:
    """Root-mean-square displacement of the most likely mode per horizon.

    Instances without full 12-step ground truth are excluded (the exclusion
    depends only on the dataset, so it is identical for every model).
    Returns (per-horizon rmse, number of instances used).
    """
    errors: dict[float, list] = {float(h): [] for h in horizons}
    n_used = 0
    for inst in pred_set.instances:
        track = dataset.tracks.get(inst.vehicle_id)
        if track is None or len(track) < 2:
            continue
        i0 = track.index_at(inst.anchor_t)
        if i0 is None:
            continue
        stride = model_stride(track.dt)
        if i0 + MODEL_STEPS * stride > len(track) - 1:
            continue
        points = most_likely_mode(inst).points
        n_used += 1
        for h in errors:
            k = step_for_horizon(h)
            j = i0 + k * stride
            dx = points[k - 1, 0] - float(track.x[j])
            dy = points[k - 1, 1] - float(track.y[j])
            errors[h].append(dx * dx + dy * dy)
    if n_used == 0:
        raise DataError("empty instance set for displacement error")
    return ({h: float(np.sqrt(np.mean(v))) for h, v in errors.items()},
            n_used)


# ---------------------------------------------------------------------------
# whole-report assembly
# ---------------------------------------------------------------------------

@dataclass
class SourceMetrics:
    tag: str
    pass_first: dict[float, PassFirstResult] = field(default_factory=dict)
    courtesy: dict[float, CourtesyResult] = field(default_factory=dict)
    highway_lc: dict[float, HighwayLcResult] = field(default_factory=dict)
    rmse: dict[float, float] | None = None
    rmse_n: int = 0
    safety: FrameReport | None = None


@dataclass
class BehaviorReport:
    site: str
    config: AnalysisConfig
    n_events: int
    n_highway_anchors: int
    sources: dict[str, SourceMetrics]
    r2: dict[str, dict[str, float]]
    notes: list[str] = field(default_factory=list)

    @property
    def naturalistic(self) -> SourceMetrics:
        return self.sources[SOURCE_NATURALISTIC]


def compare_sources(report: BehaviorReport,
                    strict: bool = True) -> dict[str, dict[str, float]]:
    """R-squared of every model curve against its naturalistic twin.

    With strict=False a curve pair that cannot be compared (too few shared
    bins, flat reference) yields NaN instead of raising.
    """
    nat = report.sources.get(SOURCE_NATURALISTIC)
    if nat is None:
        raise DataError("report has no naturalistic source")
    out: dict[str, dict[str, float]] = {}
    for tag, sm in report.sources.items():
        if tag == SOURCE_NATURALISTIC:
            continue
        entry: dict[str, float] = {}
        pairs = [(f"pass_first_tau{tau:g}", nat.pass_first[tau], res)
                 for tau, res in sm.pass_first.items()
                 if tau in nat.pass_first]
        pairs += [(f"highway_lc_tau{tau:g}", nat.highway_lc[tau], res)
                  for tau, res in sm.highway_lc.items()
                  if tau in nat.highway_lc]
        for key, ref, res in pairs:
            try:
                entry[key] = r_squared(ref.curve, res.curve)
            except DataError:
                if strict:
                    raise
                entry[key] = float("nan")
        out[tag] = entry
    return out


def _merge_filter(events: list[MergeEvent], sources: list[TrajectorySource]
                  ) -> tuple[list[MergeEvent], dict[str, int]]:
    """Drop (event, lookback) records some source cannot answer, so every
    source sees the identical condition set."""
    missing: dict[str, int] = {s.tag: 0 for s in sources}
    out = []
    for ev in events:
        kept = []
        for rec in ev.records:
            if not rec.ok:
                kept.append(rec)
                continue
            bad = False
            for s in sources:
                if not (s.has(ev.merger_id, rec.anchor_t)
                        and s.has(rec.highway_id, rec.anchor_t)):
                    missing[s.tag] += 1
                    bad = True
            if bad:
                kept.append(replace(rec, excluded=MISSING))
            else:
                kept.append(rec)
        out.append(replace(ev, records=tuple(kept)))
    return out, missing


def evaluate_behavior(dataset: Dataset, pred_sets: list[PredictionSet],
                      config: AnalysisConfig,
                      index: FrameIndex | None = None) -> BehaviorReport:
    """Full behavioral comparison: naturalistic plus every model source."""
    if index is None:
        index = FrameIndex(dataset)
    sources = [TrajectorySource(dataset)] + \
        [TrajectorySource(dataset, ps) for ps in pred_sets]
    tags = [s.tag for s in sources]
    if len(set(tags)) != len(tags):
        raise DataError("duplicate model source names")
    notes: list[str] = []

    try:
        events = extract_merge_events(dataset, config, index=index)
    except DataError as exc:
        events = []
        notes.append(f"merge extraction skipped: {exc}")
    events, merge_missing = _merge_filter(events, sources)
    for tag, n in merge_missing.items():
        if n:
            notes.append(f"{tag}: {n} merge records dropped for all sources "
                         "(missing trajectory)")

    exclude = merge_participant_ids(events)
    anchors, skips = enumerate_highway_anchors(dataset, config,
                                               exclude_ids=exclude,
                                               index=index)
    usable = []
    for a in anchors:
        if all(s.has(a.vehicle_id, a.anchor_t) for s in sources):
            usable.append(a)
    if len(usable) != len(anchors):
        notes.append(f"{len(anchors) - len(usable)} highway anchors dropped "
                     "for all sources (missing trajectory)")
    anchors = usable

    report = BehaviorReport(site=dataset.site.site_id, config=config,
                            n_events=len(events),
                            n_highway_anchors=len(anchors), sources={},
                            r2={}, notes=notes)

    safety_anchors: dict[tuple[int, float], None] = {}
    for ev in events:
        for rec in ev.records:
            if rec.ok:
                safety_anchors.setdefault((ev.merger_id, rec.anchor_t))
                safety_anchors.setdefault((rec.highway_id, rec.anchor_t))
    for a in anchors:
        safety_anchors.setdefault((a.vehicle_id, a.anchor_t))
    anchor_list = sorted(safety_anchors)

    for s in sources:
        sm = SourceMetrics(tag=s.tag)
        outcomes = resolve_merge_outcomes(events, s, config)
        for tau in config.lookbacks:
            try:
                sm.pass_first[tau] = pass_first_curve(events, tau, outcomes,
                                                      config)
            except DataError as exc:
                notes.append(f"{s.tag}: pass_first tau={tau:g}: {exc}")
            sm.courtesy[tau] = courtesy_lc_table(events, tau, outcomes)
            if anchors:
                sm.highway_lc[tau] = highway_lc_curve(anchors, tau, s, config)
        if s.pred_set is not None:
            try:
                sm.rmse, sm.rmse_n = rmse_by_horizon(
                    s.pred_set, dataset, config.rmse_horizons)
            except DataError as exc:
                notes.append(f"{s.tag}: rmse: {exc}")
        local_stats = count_unsafe(dataset, anchor_list, s.tag, s.local,
                                   config, frame="local", index=index)
        global_capable = (
            any(tr.has_global for tr in dataset.tracks.values())
            if s.pred_set is None else s.pred_frame == "global")
        global_stats = None
        if global_capable:
            global_stats = count_unsafe(dataset, anchor_list, s.tag,
                                        s.global_, config, frame="global",
                                        lane_fn=s.local, index=index)
        sm.safety = coordinate_frame_report(local_stats, global_stats)
        report.sources[s.tag] = sm

    report.r2 = compare_sources(report, strict=False)
    return report
