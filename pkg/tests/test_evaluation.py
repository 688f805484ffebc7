import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgfloc.description import SgfInstance, build_descriptor, make_points
from sgfloc.errors import NoOverlap
from sgfloc.evaluation import (
    COUNTER_COLUMNS,
    AteReport,
    SequenceCounters,
    align_trajectory,
    associate,
    ate,
    count_sequence_metrics,
    umeyama_2d,
    write_counters_csv,
)
from sgfloc.geometry import Se2
from sgfloc.loop_closure import LoopConstraint
from sgfloc.sim import Annotations, Visit


def traj(xy, t=None, yaw=None):
    xy = np.asarray(xy, float)
    n = len(xy)
    t = np.arange(n) * 0.1 if t is None else np.asarray(t, float)
    yaw = np.zeros(n) if yaw is None else yaw
    return np.column_stack([t, xy, yaw])


def wiggle(n=50, seed=0):
    rng = np.random.default_rng(seed)
    s = np.linspace(0, 6, n)
    return np.column_stack([s + 0.1 * rng.normal(size=n), np.sin(s) + 0.1 * rng.normal(size=n)])


def test_identical_trajectories():
    g = traj(wiggle())
    r = ate(g, g)
    assert r.rmse == pytest.approx(0.0, abs=1e-12) and r.max == pytest.approx(0.0, abs=1e-12)
    assert r.n == 50


def test_three_four_five_offset():
    g = traj(wiggle())
    e = g.copy()
    e[:, 1:3] += [3.0, 4.0]
    assert ate(e, g).rmse == pytest.approx(0.0, abs=1e-9)
    r = ate(e, g, align=False)
    assert (r.rmse, r.mean, r.median, r.max) == pytest.approx((5.0, 5.0, 5.0, 5.0))


def test_unaligned_statistics_match_direct_computation():
    rng = np.random.default_rng(4)
    g = traj(wiggle())
    e = g.copy()
    e[:, 1:3] += rng.normal(0, 0.05, (50, 2))
    d = np.linalg.norm(e[:, 1:3] - g[:, 1:3], axis=1)
    r = ate(e, g, align=False)
    assert abs(r.rmse - np.sqrt(np.mean(d**2))) <= 1e-12
    assert abs(r.mean - d.mean()) <= 1e-12 and abs(r.median - np.median(d)) <= 1e-12
    assert abs(r.max - d.max()) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(st.floats(-np.pi, np.pi), st.floats(-50, 50), st.floats(-50, 50))
def test_ate_invariant_to_rigid_motion_of_estimate(yaw, tx, ty):
    rng = np.random.default_rng(7)
    g = traj(wiggle())
    e = g.copy()
    e[:, 1:3] += rng.normal(0, 0.05, (50, 2))
    moved = e.copy()
    moved[:, 1:3] = Se2(tx, ty, yaw).apply(e[:, 1:3])
    assert abs(ate(moved, g).rmse - ate(e, g).rmse) <= 1e-9


def test_umeyama_recovers_similarity():
    src = wiggle()
    T = Se2(1.0, -2.0, 0.8)
    dst = 1.7 * (src @ T.rotation.T) + T.t
    got, s = umeyama_2d(src, dst, with_scale=True)
    assert s == pytest.approx(1.7)
    assert np.allclose(got.as_array(), T.as_array())


def test_umeyama_never_reflects():
    src = wiggle()
    dst = src * [1, -1]
    got, _ = umeyama_2d(src, dst)
    assert np.allclose(got.rotation.T @ got.rotation, np.eye(2))
    assert np.linalg.det(got.rotation) == pytest.approx(1.0)


def test_align_trajectory_maps_into_gt_frame():
    g = traj(wiggle(), yaw=np.linspace(0, 1, 50))
    g7 = np.column_stack([g[:, :3], np.zeros((50, 3)), g[:, 3]])
    e7 = g7.copy()
    T = Se2(2.0, 1.0, 0.5)
    e7[:, [1, 2, 6]] = np.array([(T @ Se2(*r)).as_array() for r in g7[:, [1, 2, 6]]])
    out = align_trajectory(e7, g7)
    assert np.allclose(out[:, [1, 2]], g7[:, [1, 2]], atol=1e-9)
    assert np.allclose(np.sin(out[:, 6] - g7[:, 6]), 0.0, atol=1e-9)


def test_association_by_timestamp():
    t_gt = np.arange(10) * 0.1
    ie, ig = associate(t_gt[::2] + 0.01, t_gt)
    assert np.array_equal(ig, np.arange(0, 10, 2)) and np.array_equal(ie, np.arange(5))
    # Half a period off: outside the default window.
    with pytest.raises(NoOverlap):
        associate(t_gt + 0.06, t_gt, max_dt=0.02)


def test_no_overlap():
    with pytest.raises(NoOverlap):
        ate(traj(wiggle(), t=np.arange(50) + 100.0), traj(wiggle()))
    with pytest.raises(NoOverlap):
        associate(np.zeros(0), np.arange(3.0))


def test_bad_shapes():
    with pytest.raises(ValueError):
        ate(np.zeros((5, 3)), np.zeros((5, 3)))


def test_report_dict():
    r = AteReport(0.1, 0.1, 0.1, 0.2, Se2(1, 2, 0.5), 1.0, 3)
    d = r.to_dict()
    assert d["alignment"] == [1.0, 2.0, 0.5] and d["n"] == 3
    with pytest.raises(ValueError):
        AteReport(-1.0, 0, 0, 0, Se2())


# Counters ----------------------------------------------------------------------------

@pytest.mark.parametrize("kw", [
    dict(pairs_found=2, pairs_total=1),
    dict(closed=1, pairs_found=0, pairs_total=1),
    dict(rev_found=1, rev_total=0),
    dict(rev_total=2, pairs_total=1, pairs_found=0),
    dict(detected=-1),
])
def test_counter_validation(kw):
    with pytest.raises(ValueError):
        SequenceCounters(**kw)


def _instance(iid, center, frame, group):
    rng = np.random.default_rng(iid)
    pts = np.asarray(center) + rng.uniform(-0.5, 0.5, (200, 2))
    sp = make_points(pts, anchor=frame, voxel=None)
    return SgfInstance(iid, sp, build_descriptor(sp), frame=frame, group_id=group)


def _toy_annotations():
    marks = [{"id": 0, "name": "arrow", "x": 5.0, "y": 0.0, "yaw": 0.0, "symmetric": False},
             {"id": 1, "name": "l_shape", "x": 20.0, "y": 0.0, "yaw": 0.0, "symmetric": False}]
    visits = [Visit(0, 0, 20, list(range(5, 15)), 0.0, True),
              Visit(0, 100, 120, list(range(105, 115)), np.pi, True),
              Visit(1, 200, 220, list(range(205, 215)), 0.0, True)]
    return Annotations(marks, visits, np.zeros((300, 3)))


def test_counting_a_reverse_closure():
    ann = _toy_annotations()
    inst = [_instance(0, (5, 0), 10, 0), _instance(1, (5, 0), 110, 0), _instance(2, (20, 0), 210, 1)]
    good = LoopConstraint(10, 110, Se2(), np.eye(3), 0.01, 0, 45, instance_i=0, instance_j=1)
    bad = LoopConstraint(10, 210, Se2(), np.eye(3), 0.01, 0, 0, instance_i=0, instance_j=2)
    c = count_sequence_metrics(inst, None, [good, bad], ann)
    assert c == SequenceCounters(detected=3, expected=3, pairs_found=1, pairs_total=1, rev_found=1,
                                 rev_total=1, closed=1, rev_closed=1, false_constraints=1)


def test_unmatched_group_is_not_found():
    ann = _toy_annotations()
    inst = [_instance(0, (5, 0), 10, 0), _instance(1, (5, 0), 110, 3)]
    c = count_sequence_metrics(inst, None, [], ann)
    assert (c.detected, c.pairs_total, c.pairs_found, c.closed) == (2, 1, 0, 0)


def test_counters_csv(tmp_path):
    p = tmp_path / "c.csv"
    write_counters_csv(p, [("a", SequenceCounters(3, 4, 1, 2, 0, 1, 1, 0, 0))])
    rows = list(csv.reader(p.open()))
    assert rows[0] == COUNTER_COLUMNS
    assert rows[1] == ["a", "3", "4", "1", "2", "0", "1", "1", "0", "0"]
