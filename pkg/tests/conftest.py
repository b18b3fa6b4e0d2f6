"""Shared builders for a small synthetic site and tracks."""

import numpy as np
import pytest

from bbeval.core import (
    UNKNOWN_LANE,
    Dataset,
    LaneRole,
    SiteProfile,
    VehicleClass,
    VehicleTrack,
)

LANE_WIDTH = 3.6


def make_site(merge_zone=None):
    """Three mainline lanes (1 innermost .. 3 outermost) plus onramp lane 4."""
    return SiteProfile(
        site_id="testsite",
        raw_unit="meters",
        lane_boundaries=[0.0, 3.6, 7.2, 10.8, 14.4],
        lane_ids=(1, 2, 3, 4),
        lane_roles={
            1: LaneRole.MAINLINE,
            2: LaneRole.MAINLINE,
            3: LaneRole.OUTERMOST_MAINLINE,
            4: LaneRole.ONRAMP,
        },
        lane_order=(1, 2, 3),
        merge_zone=merge_zone,
    )


def lane_center(lane: int) -> float:
    return LANE_WIDTH * (lane - 1) + LANE_WIDTH / 2


def make_track(vid, *, t0=0.0, dt=0.1, n=50, y0=0.0, v=10.0, lane=3,
               x=None, y=None, lanes=None, record_lanes=True,
               length=4.5, width=1.8):
    """Straight-line track; pass explicit x/y/lanes arrays to override."""
    if y is None:
        y = y0 + v * dt * np.arange(n)
    y = np.asarray(y, dtype=float)
    n = len(y)
    t = t0 + dt * np.arange(n)
    if lanes is not None:
        lanes = np.asarray(lanes, dtype=int)
    if x is None:
        src = lanes if lanes is not None else np.full(n, lane)
        x = np.array([lane_center(l) if l != UNKNOWN_LANE else lane_center(lane)
                      for l in src])
    if record_lanes:
        lane_ids = lanes if lanes is not None else np.full(n, lane, dtype=int)
    else:
        lane_ids = np.full(n, UNKNOWN_LANE, dtype=int)
    return VehicleTrack(
        vehicle_id=vid, vclass=VehicleClass.AUTO, length=length, width=width,
        t=t, x=np.asarray(x, dtype=float), y=y, lane_ids=lane_ids,
    )


def make_dataset(tracks, hz=10.0, merge_zone=None, site=None):
    if site is None:
        site = make_site(merge_zone)
    return Dataset(site=site, tracks={tr.vehicle_id: tr for tr in tracks},
                   sample_hz=hz)


@pytest.fixture
def site():
    return make_site()
