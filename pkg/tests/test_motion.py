import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenetext.labelmap import LabelMap
from scenetext.motion import (NOISE, TRAJECTORY_COLUMNS, MotionConfig, Trajectory, conflict_points,
                              dbscan, dbscan_labels, frame_centers, kinematics, track, ttc,
                              write_trajectory_csv)

from oracles import naive_dbscan, naive_kinematics, same_partition

points = st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30)), min_size=0, max_size=60)


@settings(max_examples=80, deadline=None)
@given(points, st.floats(0.5, 5.0), st.integers(1, 6))
def test_dbscan_matches_naive(pts, eps, min_pts):
    arr = np.array(pts, dtype=float).reshape(-1, 2)
    assert same_partition(dbscan_labels(arr, eps, min_pts), naive_dbscan(arr, eps, min_pts))


def _core_partition(pts, labels, eps, min_pts):
    d = np.hypot(*(pts[:, None, :] - pts[None, :, :]).transpose(2, 0, 1))
    core = (d <= eps).sum(axis=1) >= min_pts
    return {frozenset(np.flatnonzero((labels == c) & core).tolist()) for c in set(labels[core].tolist())}, core


@settings(max_examples=40, deadline=None)
@given(points, st.floats(0.5, 5.0), st.integers(1, 6), st.randoms())
def test_dbscan_core_partition_order_invariant(pts, eps, min_pts, rnd):
    arr = np.array(pts, dtype=float).reshape(-1, 2)
    perm = list(range(len(arr)))
    rnd.shuffle(perm)
    a = dbscan_labels(arr, eps, min_pts)
    b_perm = dbscan_labels(arr[perm], eps, min_pts)
    b = np.empty_like(b_perm)
    b[perm] = b_perm
    pa, core = _core_partition(arr, a, eps, min_pts)
    pb, _ = _core_partition(arr, b, eps, min_pts)
    assert pa == pb
    # noise is order independent; border points may switch between clusters
    assert np.array_equal(a == NOISE, b == NOISE)


def test_dbscan_two_blobs_and_noise():
    blob = [(x, y) for x in range(3) for y in range(3)]
    pts = blob + [(x + 20, y) for x, y in blob] + [(50, 50)]
    clusters, noise = dbscan(pts, 1.5, 4)
    assert len(clusters) == 2
    assert noise.tolist() == [18]
    assert clusters[0].center == (1.0, 1.0) and clusters[1].center == (21.0, 1.0)


def test_dbscan_errors_and_empty():
    with pytest.raises(ValueError):
        dbscan_labels([(0, 0)], 0.0, 1)
    with pytest.raises(ValueError):
        dbscan_labels([(0, 0)], 1.0, 0)
    assert dbscan_labels(np.zeros((0, 2)), 1.0, 1).tolist() == []


def test_conflict_points_and_centers():
    cells = np.zeros((20, 30), dtype=int)
    cells[2:6, 3:9] = 7
    cells[10:14, 20:24] = 4
    m = LabelMap(cells)
    pts = conflict_points(m, [7])
    assert len(pts) == 24 and pts[0].tolist() == [3.0, 2.0]
    centers = frame_centers(m, [7, 4], MotionConfig(eps=1.5, min_pts=4))
    assert centers == [(5.5, 3.5), (21.5, 11.5)]
    assert frame_centers(LabelMap(np.zeros((3, 3), dtype=int)), [7], MotionConfig()) == []


def test_eps_default_is_diagonal_fraction():
    assert MotionConfig().eps_for(300, 400) == pytest.approx(10.0)
    assert MotionConfig(eps=3.0).eps_for(300, 400) == 3.0


@given(st.lists(st.integers(-50, 50), min_size=2, max_size=20), st.sampled_from([5.0, 10.0, 25.0]))
def test_kinematics_against_oracle(xs, fps):
    ys = [float(v) for v in xs]
    tr = Trajectory.from_points(list(zip(map(float, xs), ys)), fps)
    states = kinematics(tr, ego_line=1000.0)
    v, a = naive_kinematics([float(x) for x in xs], fps)
    for s, vi, ai in zip(states, v, a):
        assert s.vx == vi and s.vy == vi
        assert s.ax == ai and s.ay == ai


def test_kinematics_gap_breaks_differences():
    tr = Trajectory(10.0, [0, 1, 3, 4], [0.0, 1.0, 3.0, 4.0], [0.0, 0.0, 0.0, 0.0])
    st_ = kinematics(tr, 100.0)
    assert st_[1].vx == 10.0 and st_[2].vx is None and st_[3].vx == 10.0
    assert all(s.ax is None for s in st_)


def test_ttc_rules():
    assert ttc(20.0, 20.0) == 1.0
    assert ttc(20.0, 0.0) == math.inf
    assert ttc(20.0, -3.0) == math.inf
    assert ttc(20.0, None) == math.inf
    with pytest.raises(ValueError):
        ttc(-1.0, 1.0)


def test_receding_object_not_severe():
    tr = Trajectory.from_points([(0.0, 50.0), (0.0, 40.0)], 10.0)
    s = kinematics(tr, 60.0)[1]
    assert s.ttc == math.inf and not s.severe()


def test_track_two_objects_and_birth():
    frames = [
        [(0.0, 0.0), (100.0, 0.0)],
        [(102.0, 1.0), (2.0, 1.0)],
        [(4.0, 2.0)],
        [(6.0, 3.0), (60.0, 60.0)],
    ]
    trs = track(frames, 10.0, max_jump=10.0)
    assert [t.track_id for t in trs] == [0, 1, 2]
    assert trs[0].xs == [0.0, 2.0, 4.0, 6.0]
    assert trs[1].frames == [0, 1]
    assert trs[2].frames == [3]


def test_track_ends_on_miss():
    trs = track([[(0.0, 0.0)], [], [(1.0, 0.0)]], 10.0, 5.0)
    assert len(trs) == 2 and trs[1].frames == [2]


def test_trajectory_csv():
    buf = io.StringIO()
    tr = Trajectory.from_points([(0.0, 0.0), (1.0, 2.0)], 10.0)
    write_trajectory_csv(buf, [tr], ego_line=22.0)
    lines = buf.getvalue().splitlines()
    assert lines[0] == ",".join(TRAJECTORY_COLUMNS)
    assert lines[1] == "0,0,0.0,0.0,,,,,inf"
    assert lines[2] == "1,0,1.0,2.0,10.0,20.0,,,1.0"


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(10.0, [0, 0], [0.0, 1.0], [0.0, 1.0])
    with pytest.raises(ValueError):
        kinematics(Trajectory.from_points([(0.0, 0.0)], 10.0), 10.0)
