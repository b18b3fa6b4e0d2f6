"""Behavioral metrics against the seeded generators' planted truth.

The generators know every outcome in advance, so these tests check that the
full pipeline (event extraction, windowing, outcome resolution, binning)
recovers exactly what was planted, and that a ground-truth-copy "model"
is indistinguishable from the naturalistic source.
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from bbeval.core import (
    AnalysisConfig,
    DataError,
    PredictionInstance,
    PredictionMode,
    PredictionSet,
)
from bbeval.events import extract_merge_events, naturalistic_window
from bbeval.metrics import (
    SOURCE_NATURALISTIC,
    TrajectorySource,
    compare_sources,
    courtesy_lc_table,
    enumerate_highway_anchors,
    evaluate_behavior,
    highway_lc_curve,
    merge_participant_ids,
    pass_first_curve,
    resolve_merge_outcomes,
    rmse_by_horizon,
    step_for_horizon,
)
from bbeval.stats import bin_probability
from bbeval.synth import (
    SynthParams,
    generate_highway_dataset,
    generate_merge_dataset,
    ground_truth_predict,
)

from conftest import make_dataset, make_track

WIDE = AnalysisConfig(neighbor_radius=250.0)
CFG = AnalysisConfig()


@pytest.fixture(scope="module")
def merge_world():
    ds, labels = generate_merge_dataset(SynthParams(n_events=60, seed=3))
    events = extract_merge_events(ds, WIDE)
    return ds, labels, events


@pytest.fixture(scope="module")
def highway_world():
    ds, labels = generate_highway_dataset(SynthParams(n_events=66, seed=5))
    return ds, labels


def gt_pred_set(ds, keys, source="gtcopy"):
    insts = []
    for vid, anchor in sorted(set(keys)):
        inst = ground_truth_predict(ds, vid, anchor)
        if inst is not None:
            insts.append(inst)
    return PredictionSet(source=source, frame="local", instances=insts)


def merge_keys(events):
    keys = []
    for ev in events:
        for rec in ev.records:
            if rec.ok:
                keys.append((ev.merger_id, rec.anchor_t))
                keys.append((rec.highway_id, rec.anchor_t))
    return keys


# ---------------------------------------------------------------------------
# trajectory sources
# ---------------------------------------------------------------------------

def test_naturalistic_local_is_the_subsampled_window(merge_world):
    ds, _, events = merge_world
    src = TrajectorySource(ds)
    ev = events[0]
    rec = ev.record(5.0)
    traj = src.local(ev.merger_id, rec.anchor_t)
    want = naturalistic_window(ds.tracks[ev.merger_id], rec.anchor_t)
    assert np.array_equal(traj.t, want.t)
    assert np.array_equal(traj.x, want.x)
    assert np.array_equal(traj.y, want.y)


def test_gt_copy_windows_are_bit_identical(merge_world):
    ds, _, events = merge_world
    preds = gt_pred_set(ds, merge_keys(events))
    nat = TrajectorySource(ds)
    model = TrajectorySource(ds, preds)
    checked = 0
    for inst in preds.instances:
        a = nat.local(inst.vehicle_id, inst.anchor_t)
        b = model.local(inst.vehicle_id, inst.anchor_t)
        if a is None or len(a) != len(b):
            continue        # ground truth ran out; model windows are full
        # positions are copied floats; times come from the same lattice but
        # different arithmetic (track grid vs anchor + k*dt)
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.y, b.y)
        np.testing.assert_allclose(a.t, b.t, rtol=0, atol=1e-9)
        checked += 1
    assert checked > 100


def test_source_availability(merge_world):
    ds, _, events = merge_world
    ev = events[0]
    rec = ev.record(5.0)
    preds = gt_pred_set(ds, [(ev.merger_id, rec.anchor_t)])
    model = TrajectorySource(ds, preds)
    assert model.has(ev.merger_id, rec.anchor_t)
    assert not model.has(ev.merger_id, rec.anchor_t + 0.4)
    assert not model.has(999999, rec.anchor_t)
    nat = TrajectorySource(ds)
    assert nat.has(ev.merger_id, rec.anchor_t)
    assert not nat.has(ev.merger_id, 1e9)


def test_global_frame_predictions_map_back_to_local():
    track = make_track(1, lane=2, y0=0.0, v=12.0, n=100)
    track = replace(track, gx=track.x + 500.0, gy=track.y - 300.0)
    ds = make_dataset([track])
    anchor = 2.0
    base = ground_truth_predict(ds, 1, anchor)
    global_pts = base.modes[0].points + np.array([500.0, -300.0])
    inst = PredictionInstance(
        vehicle_id=1, anchor_t=anchor,
        modes=(PredictionMode(probability=1.0, points=global_pts),),
    )
    preds = PredictionSet(source="g", frame="global", instances=[inst])
    src = TrajectorySource(ds, preds)
    local = src.local(1, anchor)
    want = naturalistic_window(track, anchor)
    np.testing.assert_allclose(local.x, want.x, atol=1e-9)
    np.testing.assert_allclose(local.y, want.y, atol=1e-9)
    glob = src.global_(1, anchor)
    np.testing.assert_allclose(glob.x[1:], global_pts[:, 0], atol=1e-12)
    np.testing.assert_allclose(glob.y[1:], global_pts[:, 1], atol=1e-12)


def test_local_predictions_have_no_global_form(merge_world):
    ds, _, events = merge_world
    ev = events[0]
    rec = ev.record(5.0)
    preds = gt_pred_set(ds, [(ev.merger_id, rec.anchor_t)])
    model = TrajectorySource(ds, preds)
    assert model.global_(ev.merger_id, rec.anchor_t) is None


# ---------------------------------------------------------------------------
# merge outcomes
# ---------------------------------------------------------------------------

def test_outcomes_match_planted_labels(merge_world):
    ds, labels, events = merge_world
    by_id = {lb.event_id: lb for lb in labels}
    outcomes = resolve_merge_outcomes(events, TrajectorySource(ds), WIDE)
    n = 0
    for ev in events:
        lb = by_id[ev.event_id]
        for rec in ev.records:
            if not rec.ok:
                continue
            oc = outcomes[(ev.event_id, rec.tau)]
            assert oc.pass_order == lb.true_outcome, ev.event_id
            assert oc.courtesy == lb.courtesy, ev.event_id
            n += 1
    assert n > 200


def test_pass_first_bookkeeping(merge_world):
    ds, _, events = merge_world
    outcomes = resolve_merge_outcomes(events, TrajectorySource(ds), WIDE)
    res = pass_first_curve(events, 5.0, outcomes, WIDE)
    n_ok = sum(1 for ev in events
               if ev.record(5.0) is not None and ev.record(5.0).ok)
    assert res.n_used + res.n_undetermined + res.n_missing == n_ok
    assert res.n_missing == 0
    assert int(res.curve.counts.sum()) + res.curve.n_dropped == res.n_used


def test_pass_first_with_no_events_raises():
    with pytest.raises(DataError):
        pass_first_curve([], 5.0, {}, CFG)


def test_courtesy_table_matches_labels(merge_world):
    ds, labels, events = merge_world
    by_id = {lb.event_id: lb for lb in labels}
    outcomes = resolve_merge_outcomes(events, TrajectorySource(ds), WIDE)
    res = courtesy_lc_table(events, 5.0, outcomes)
    want = [0, 0, 0, 0]
    for ev in events:
        rec = ev.record(5.0)
        if rec is None or not rec.ok:
            continue
        lb = by_id[ev.event_id]
        idx = (0 if lb.courtesy else 1) if rec.conflict else \
            (2 if lb.courtesy else 3)
        want[idx] += 1
    assert [res.table.a, res.table.b, res.table.c, res.table.d] == want
    assert 0.0 <= res.p_value <= 1.0
    assert res.n_shoulder_exits == 0


def test_gt_copy_merge_curves_identical(merge_world):
    ds, _, events = merge_world
    preds = gt_pred_set(ds, merge_keys(events))
    nat = TrajectorySource(ds)
    model = TrajectorySource(ds, preds)
    report = evaluate_behavior(ds, [preds], WIDE)
    nat_m = report.sources[SOURCE_NATURALISTIC]
    mod_m = report.sources["model:gtcopy"]
    for tau in WIDE.lookbacks:
        a, b = nat_m.pass_first[tau], mod_m.pass_first[tau]
        assert np.array_equal(a.curve.counts, b.curve.counts)
        assert np.array_equal(a.curve.values, b.curve.values,
                              equal_nan=True)
        assert a.n_undetermined == b.n_undetermined
        ta, tb = nat_m.courtesy[tau].table, mod_m.courtesy[tau].table
        assert (ta.a, ta.b, ta.c, ta.d) == (tb.a, tb.b, tb.c, tb.d)
    for key, val in report.r2["model:gtcopy"].items():
        assert val == 1.0, key


# ---------------------------------------------------------------------------
# highway anchors and lane-change curve
# ---------------------------------------------------------------------------

def test_highway_anchors_match_labels(highway_world):
    ds, labels = highway_world
    anchors, skips = enumerate_highway_anchors(ds, CFG)
    by_key = {(a.vehicle_id, a.anchor_t): a for a in anchors}
    assert len(by_key) == len(anchors)
    for lb in labels:
        a = by_key[(lb.ego_id, lb.anchor_t)]
        assert a.lead_id == lb.lead_id
        if math.isinf(lb.true_ttc):
            assert math.isinf(a.ttc)
        else:
            assert a.ttc == pytest.approx(lb.true_ttc, rel=1e-9)
    # every enumerated anchor is a labelled ego decision point
    assert len(anchors) == len(labels)
    assert skips["excluded_vehicle"] == 0


def test_highway_anchor_exclusion(highway_world):
    ds, labels = highway_world
    drop = {labels[0].ego_id}
    anchors, skips = enumerate_highway_anchors(ds, CFG, exclude_ids=drop)
    assert skips["excluded_vehicle"] == 1
    assert len(anchors) == len(labels) - 1


def test_highway_curve_recovers_planted_rule(highway_world):
    ds, labels = highway_world
    anchors, _ = enumerate_highway_anchors(ds, CFG)
    res = highway_lc_curve(anchors, 5.0, TrajectorySource(ds), CFG)
    want = bin_probability(
        np.array([lb.true_ttc for lb in labels]),
        np.array([lb.lane_change for lb in labels], dtype=bool),
        np.asarray(CFG.ttc_bin_edges), CFG.min_count,
    )
    assert np.array_equal(res.curve.counts, want.counts)
    assert np.array_equal(res.curve.values, want.values, equal_nan=True)
    assert res.n_changes == sum(lb.lane_change for lb in labels)
    # the planted rule: change iff TTC strictly inside (0, 3)
    for k in range(len(res.curve.values)):
        if res.curve.mask[k]:
            continue
        lo, hi = res.curve.edges[k], res.curve.edges[k + 1]
        inside = lo >= 0.0 and hi <= 3.0
        assert res.curve.values[k] == (1.0 if inside else 0.0)


def test_highway_curve_short_lookahead_still_sees_changes(highway_world):
    ds, _ = highway_world
    anchors, _ = enumerate_highway_anchors(ds, CFG)
    res1 = highway_lc_curve(anchors, 1.0, TrajectorySource(ds), CFG)
    res5 = highway_lc_curve(anchors, 5.0, TrajectorySource(ds), CFG)
    assert res1.n_changes == res5.n_changes


def test_gt_copy_highway_curve_identical(highway_world):
    ds, labels = highway_world
    anchors, _ = enumerate_highway_anchors(ds, CFG)
    preds = gt_pred_set(ds, [(a.vehicle_id, a.anchor_t) for a in anchors])
    report = evaluate_behavior(ds, [preds], CFG)
    assert report.n_highway_anchors == len(labels)
    nat_m = report.sources[SOURCE_NATURALISTIC]
    mod_m = report.sources["model:gtcopy"]
    for tau in CFG.lookbacks:
        a, b = nat_m.highway_lc[tau], mod_m.highway_lc[tau]
        assert np.array_equal(a.curve.counts, b.curve.counts)
        assert np.array_equal(a.curve.values, b.curve.values,
                              equal_nan=True)
    for key, val in report.r2["model:gtcopy"].items():
        assert val == 1.0, key


# ---------------------------------------------------------------------------
# displacement error
# ---------------------------------------------------------------------------

def test_step_for_horizon_literals():
    assert [step_for_horizon(h) for h in (1.0, 2.0, 3.0, 4.0, 5.0)] == \
        [2, 5, 7, 10, 12]
    assert step_for_horizon(0.1) == 1
    assert step_for_horizon(99.0) == 12
    # midway between steps 1 and 2 resolves toward the anchor
    assert step_for_horizon(0.6) == 1


def test_rmse_zero_for_gt_copy(merge_world):
    ds, _, events = merge_world
    preds = gt_pred_set(ds, merge_keys(events))
    rmse, n_used = rmse_by_horizon(preds, ds)
    assert n_used > 0
    assert all(v == 0.0 for v in rmse.values())


def test_rmse_uniform_offset_is_exact(merge_world):
    ds, _, events = merge_world
    shifted = []
    for inst in gt_pred_set(ds, merge_keys(events)).instances:
        pts = inst.modes[0].points + np.array([1.0, 0.0])
        shifted.append(replace(
            inst, modes=(PredictionMode(probability=1.0, points=pts),)))
    preds = PredictionSet(source="off", frame="local", instances=shifted)
    rmse, _ = rmse_by_horizon(preds, ds)
    for v in rmse.values():
        assert v == pytest.approx(1.0, abs=1e-9)


def test_rmse_uses_most_likely_mode():
    track = make_track(1, lane=2, y0=0.0, v=10.0, n=100)
    ds = make_dataset([track])
    good = ground_truth_predict(ds, 1, 2.0).modes[0].points
    inst = PredictionInstance(
        vehicle_id=1, anchor_t=2.0,
        modes=(PredictionMode(probability=0.3, points=good),
               PredictionMode(probability=0.7, points=good + 2.0)),
    )
    preds = PredictionSet(source="mm", frame="local", instances=[inst])
    rmse, n = rmse_by_horizon(preds, ds)
    assert n == 1
    for v in rmse.values():
        assert v == pytest.approx(math.sqrt(8.0), rel=1e-12)


def test_rmse_excludes_instances_without_full_future():
    track = make_track(1, lane=2, y0=0.0, v=10.0, n=100)  # 9.9 s of track
    ds = make_dataset([track])
    ok = ground_truth_predict(ds, 1, 2.0)
    points = ok.modes[0].points
    late = PredictionInstance(
        vehicle_id=1, anchor_t=8.0,
        modes=(PredictionMode(probability=1.0, points=points),),
    )
    preds = PredictionSet(source="cv", frame="local", instances=[ok, late])
    _, n_used = rmse_by_horizon(preds, ds)
    assert n_used == 1
    only_late = PredictionSet(source="cv", frame="local", instances=[late])
    with pytest.raises(DataError):
        rmse_by_horizon(only_late, ds)


# ---------------------------------------------------------------------------
# whole-report assembly
# ---------------------------------------------------------------------------

def test_merge_participants_are_excluded_from_highway_scan(merge_world):
    ds, _, events = merge_world
    ids = merge_participant_ids(events)
    assert ids
    report = evaluate_behavior(ds, [], WIDE)
    assert report.n_highway_anchors == 0


def test_safety_identical_for_gt_copy(merge_world):
    ds, _, events = merge_world
    preds = gt_pred_set(ds, merge_keys(events))
    report = evaluate_behavior(ds, [preds], WIDE)
    nat = report.sources[SOURCE_NATURALISTIC].safety.local
    mod = report.sources["model:gtcopy"].safety.local
    assert nat.total.interactions > 0
    for status, s in nat.strata.items():
        m = mod.strata[status]
        assert (s.interactions, s.unsafe) == (m.interactions, m.unsafe)


def test_evaluate_is_deterministic(highway_world):
    ds, _ = highway_world
    anchors, _ = enumerate_highway_anchors(ds, CFG)
    preds = gt_pred_set(ds, [(a.vehicle_id, a.anchor_t) for a in anchors])

    def signature(report):
        sig = []
        for tag in sorted(report.sources):
            sm = report.sources[tag]
            for tau in sorted(sm.highway_lc):
                c = sm.highway_lc[tau].curve
                sig.append((tag, tau, c.counts.tolist(),
                            np.nan_to_num(c.values).tolist()))
        return sig

    a = signature(evaluate_behavior(ds, [preds], CFG))
    b = signature(evaluate_behavior(ds, [preds], CFG))
    assert a == b


def test_duplicate_source_names_rejected(highway_world):
    ds, _ = highway_world
    anchors, _ = enumerate_highway_anchors(ds, CFG)
    preds = gt_pred_set(ds, [(a.vehicle_id, a.anchor_t) for a in anchors])
    with pytest.raises(DataError):
        evaluate_behavior(ds, [preds, preds], CFG)


def test_compare_sources_requires_naturalistic():
    from bbeval.metrics import BehaviorReport
    rep = BehaviorReport(site="s", config=CFG, n_events=0,
                         n_highway_anchors=0, sources={}, r2={})
    with pytest.raises(DataError):
        compare_sources(rep)
