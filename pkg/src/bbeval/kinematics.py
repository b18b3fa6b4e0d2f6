"""Speed estimation and the two interaction conditions (lead time, TTC).

Speeds come from positions by central difference, never from recorded speed
columns: predicted trajectories have no speed column, and using one source
for both sides keeps naturalistic and model conditions comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DataError, StoppedVehicleError, VehicleTrack


@dataclass(frozen=True)
class KinematicSnapshot:
    """One vehicle's longitudinal state at one instant.

    ``d`` is the remaining distance to a reference line (m, >= 0 while
    upstream); NaN when no reference applies.
    """

    t: float
    y: float
    v: float
    d: float = math.nan


def speed_series(y: np.ndarray, dt: float) -> np.ndarray:
    """Central-difference speeds, one-sided at the endpoints."""
    y = np.asarray(y, dtype=np.float64)
    if y.size < 2:
        raise DataError("insufficient samples for speed estimation")
    if dt <= 0:
        raise DataError(f"nonpositive dt {dt}")
    v = np.empty_like(y)
    v[1:-1] = (y[2:] - y[:-2]) / (2.0 * dt)
    v[0] = (y[1] - y[0]) / dt
    v[-1] = (y[-1] - y[-2]) / dt
    return v


def estimate_speed(track: VehicleTrack, t: float) -> float:
    """Longitudinal speed at sample time t (central difference)."""
    if len(track) < 2:
        raise DataError(
            f"vehicle {track.vehicle_id}: insufficient samples for speed"
        )
    i = track.index_at(t)
    if i is None:
        raise DataError(
            f"vehicle {track.vehicle_id}: t={t} is not a sample time"
        )
    y = track.y
    dt = track.dt
    if i == 0:
        return float((y[1] - y[0]) / dt)
    if i == len(track) - 1:
        return float((y[-1] - y[-2]) / dt)
    return float((y[i + 1] - y[i - 1]) / (2.0 * dt))


def snapshot_at(track: VehicleTrack, t: float, ref_y: float | None = None
                ) -> KinematicSnapshot:
    """Snapshot of a track at sample time t, optionally against a reference
    line at longitudinal position ref_y."""
    i = track.index_at(t)
    if i is None:
        raise DataError(
            f"vehicle {track.vehicle_id}: t={t} is not a sample time"
        )
    y = float(track.y[i])
    d = math.nan if ref_y is None else float(ref_y) - y
    return KinematicSnapshot(t=t, y=y, v=estimate_speed(track, t), d=d)


def lead_time(merger: KinematicSnapshot, highway: KinematicSnapshot,
              speed_eps: float = 0.1) -> float:
    """Projected arrival-time difference at the shared reference line.

    Positive when the merger is projected to arrive first. Requires both
    vehicles moving (v > speed_eps) and upstream of the reference (d >= 0);
    a near-stopped vehicle raises StoppedVehicleError so callers can exclude
    the event instead of dividing by ~0.
    """
    for snap, who in ((merger, "merger"), (highway, "highway")):
        if math.isnan(snap.d) or snap.d < 0:
            raise DataError(f"{who} is not upstream of the reference "
                            f"(d={snap.d})")
        if snap.v <= speed_eps:
            raise StoppedVehicleError(f"stopped vehicle: {who} v={snap.v:.3f}")
    return highway.d / highway.v - merger.d / merger.v


def time_to_collision(ego: KinematicSnapshot, lead: KinematicSnapshot,
                      speed_eps: float = 0.01) -> float:
    """Center-gap closing time (d_lead - d_ego) / (v_ego - v_lead).

    Negative when the gap is opening; +inf when speeds match within
    speed_eps. The lead must be strictly ahead.
    """
    gap = lead.y - ego.y
    if gap <= 0:
        raise DataError(f"not a lead vehicle (gap {gap:.3f} m)")
    closing = ego.v - lead.v
    if abs(closing) < speed_eps:
        return math.inf
    return gap / closing
