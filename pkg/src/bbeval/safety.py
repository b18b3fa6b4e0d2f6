"""Collision-aversion counting with inflated axis-aligned bounding boxes.

An interaction is one (prediction instance, neighbor) pair. The ego follows
the source under evaluation (prediction or ground truth); every neighbor
follows ground truth. The pair is unsafe when the two inflated boxes overlap
at any shared lattice timestamp in (anchor, anchor + horizon]. Results are
stratified by whether the source's ego trajectory contains a lane change
over the horizon.

Boxes are axis-aligned in the road frame: length along y, width along x.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    MODEL_DT,
    AnalysisConfig,
    DataError,
    Dataset,
)
from .events import FrameIndex, Trajectory
from .kernels import pair_any_overlap_kernel

STATUS_CHANGED = "changed"
STATUS_NOT_CHANGED = "not_changed"


@dataclass(frozen=True)
class SafetyBox:
    cx: float
    cy: float
    half_length: float          # along y, vehicle length/2 + margin
    half_width: float           # along x, vehicle width/2 + margin
    margin: float

    def __post_init__(self):
        if not (self.half_length > self.margin >= 0):
            raise DataError("half_length must exceed the margin")
        if not (self.half_width > self.margin >= 0):
            raise DataError("half_width must exceed the margin")

    @classmethod
    def for_vehicle(cls, cx, cy, length, width, margin) -> "SafetyBox":
        return cls(cx=float(cx), cy=float(cy),
                   half_length=length / 2.0 + margin,
                   half_width=width / 2.0 + margin, margin=float(margin))


def boxes_overlap(a: SafetyBox, b: SafetyBox) -> bool:
    """Axis-aligned interval overlap on both axes; touching counts."""
    return (abs(a.cx - b.cx) <= a.half_width + b.half_width
            and abs(a.cy - b.cy) <= a.half_length + b.half_length)


@dataclass
class StratumCounts:
    interactions: int = 0
    unsafe: int = 0

    @property
    def pct(self) -> float:
        if self.interactions == 0:
            return 0.0
        return 100.0 * self.unsafe / self.interactions

    @property
    def undefined(self) -> bool:
        return self.interactions == 0


@dataclass
class SafetyStats:
    source: str
    frame: str
    strata: dict[str, StratumCounts] = field(default_factory=lambda: {
        STATUS_CHANGED: StratumCounts(),
        STATUS_NOT_CHANGED: StratumCounts(),
    })
    n_instances: int = 0
    n_skipped: int = 0

    @property
    def total(self) -> StratumCounts:
        out = StratumCounts()
        for s in self.strata.values():
            out.interactions += s.interactions
            out.unsafe += s.unsafe
        return out

    def as_rows(self, site: str) -> list[dict]:
        rows = []
        for status in (STATUS_CHANGED, STATUS_NOT_CHANGED):
            s = self.strata[status]
            rows.append({
                "site": site, "source": self.source, "frame": self.frame,
                "lane_change_status": status,
                "interactions": s.interactions, "unsafe": s.unsafe,
                "pct": s.pct, "zero_denominator": s.undefined,
            })
        return rows


def _neighbor_ids_at(index: FrameIndex, dataset: Dataset, ego_id: int,
                     anchor_t: float, radius: float) -> np.ndarray:
    """Neighbor set frozen at the anchor: within radius of the ego's
    ground-truth position."""
    ids, x, y, _ = index.at(anchor_t)
    tr = dataset.tracks[ego_id]
    i0 = tr.index_at(anchor_t)
    d = np.hypot(x - float(tr.x[i0]), y - float(tr.y[i0]))
    keep = (ids != ego_id) & (d <= radius)
    return ids[keep]


def count_unsafe(dataset: Dataset, anchors: list[tuple[int, float]],
                 source: str, traj_fn, config: AnalysisConfig,
                 frame: str = "local", lane_fn=None,
                 index: FrameIndex | None = None) -> SafetyStats:
    """Unsafe-interaction counts for one source over the given anchors.

    ``traj_fn(vehicle_id, anchor_t)`` yields the ego trajectory in the
    requested frame (None skips the instance). ``lane_fn`` yields the
    local-frame trajectory used for lane-change stratification; it defaults
    to ``traj_fn``, which is only correct for the local frame.
    """
    if index is None:
        index = FrameIndex(dataset)
    if lane_fn is None:
        lane_fn = traj_fn
    stats = SafetyStats(source=source, frame=frame)
    margin = config.safety_margin
    use_global = frame == "global"

    ex_parts, ey_parts, nx_parts, ny_parts = [], [], [], []
    half_x, half_y, pair_status = [], [], []
    lengths = []

    for ego_id, anchor_t in anchors:
        ego_traj = traj_fn(ego_id, anchor_t)
        if ego_traj is None or len(ego_traj) < 2:
            stats.n_skipped += 1
            continue
        lane_traj = lane_fn(ego_id, anchor_t)
        if lane_traj is None:
            stats.n_skipped += 1
            continue
        stats.n_instances += 1
        changes = lane_traj.lane_changes(dataset.site, config)
        status = STATUS_CHANGED if changes else STATUS_NOT_CHANGED
        ego_tr = dataset.tracks[ego_id]
        # overlap is evaluated strictly after the anchor
        et = ego_traj.t[1:]
        ex, ey = ego_traj.x[1:], ego_traj.y[1:]
        for nid in _neighbor_ids_at(index, dataset, ego_id, anchor_t,
                                    config.neighbor_radius):
            ntr = dataset.tracks[nid]
            if use_global and not ntr.has_global:
                continue
            stride = max(1, int(round(MODEL_DT * dataset.sample_hz)))
            j0 = ntr.index_at(anchor_t)
            shared_e, shared_nx, shared_ny = [], [], []
            if j0 is not None:
                ks = np.arange(1, et.size + 1)
                idx = j0 + ks * stride
                ok = idx < len(ntr)
                idx = idx[ok]
                sel = np.flatnonzero(ok)
                nxa = ntr.gx[idx] if use_global else ntr.x[idx]
                nya = ntr.gy[idx] if use_global else ntr.y[idx]
                shared_e = sel
                shared_nx, shared_ny = nxa, nya
            n_shared = len(shared_e)
            pair_status.append(status)
            lengths.append(n_shared)
            half_x.append(ego_tr.width / 2.0 + ntr.width / 2.0 + 2 * margin)
            half_y.append(ego_tr.length / 2.0 + ntr.length / 2.0 + 2 * margin)
            if n_shared:
                ex_parts.append(ex[shared_e])
                ey_parts.append(ey[shared_e])
                nx_parts.append(np.asarray(shared_nx, dtype=np.float64))
                ny_parts.append(np.asarray(shared_ny, dtype=np.float64))

    if not lengths:
        return stats
    offsets = np.concatenate(([0], np.cumsum(lengths))).astype(np.int64)
    flat = lambda parts: (np.concatenate(parts) if parts
                          else np.empty(0, dtype=np.float64))
    unsafe = pair_any_overlap_kernel(
        flat(ex_parts), flat(ey_parts), flat(nx_parts), flat(ny_parts),
        np.asarray(half_x), np.asarray(half_y), offsets,
    )
    for status, flag in zip(pair_status, unsafe):
        s = stats.strata[status]
        s.interactions += 1
        if flag:
            s.unsafe += 1
    return stats


@dataclass
class FrameReport:
    """Side-by-side safety statistics per coordinate frame."""

    local: SafetyStats | None
    global_: SafetyStats | None

    @property
    def frames(self) -> list[str]:
        out = []
        if self.local is not None:
            out.append("local")
        if self.global_ is not None:
            out.append("global")
        return out

    def as_rows(self, site: str) -> list[dict]:
        rows = []
        if self.local is not None:
            rows.extend(self.local.as_rows(site))
        if self.global_ is not None:
            rows.extend(self.global_.as_rows(site))
        return rows


def coordinate_frame_report(stats_local: SafetyStats | None,
                            stats_global: SafetyStats | None) -> FrameReport:
    if stats_local is None and stats_global is None:
        raise DataError("no safety statistics in either frame")
    return FrameReport(local=stats_local, global_=stats_global)
