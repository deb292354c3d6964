"""Conflict-object localization and kinematics in image space.

Pixels of the conflict classes are clustered with DBSCAN, cluster centers are
linked frame to frame by greedy nearest-neighbour association, and each track
gets finite-difference velocity / acceleration and a time to collision.

Coordinates are pixels with the origin top-left, x to the right and y down.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .labelmap import LabelMap

NOISE = -1
SEVERE_TTC = 1.0  # seconds


@dataclass(frozen=True)
class MotionConfig:
    eps: float | None = None  # None -> eps_fraction of the image diagonal
    eps_fraction: float = 0.02
    min_pts: int = 8
    fps: float = 10.0
    max_jump: float = 40.0
    ego_line: float | None = None  # row of the ego vehicle; None -> image height
    severe_ttc: float = SEVERE_TTC

    def eps_for(self, width: int, height: int) -> float:
        return self.eps if self.eps is not None else self.eps_fraction * math.hypot(width, height)


@dataclass(frozen=True, eq=False)
class Cluster:
    members: np.ndarray  # indices into the clustered point array
    center: tuple[float, float]


def dbscan_labels(points, eps: float, min_pts: int) -> np.ndarray:
    """Cluster id per point (0, 1, ... in discovery order) or ``NOISE``.

    Points are visited in input order and neighbour lists are sorted, so the
    labelling is deterministic.  A point is core when its closed
    ``eps``-neighbourhood, itself included, holds at least ``min_pts`` points.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    neigh = [np.sort(np.asarray(nb, dtype=np.int64)) for nb in cKDTree(pts).query_ball_point(pts, eps)]
    core = np.array([len(nb) >= min_pts for nb in neigh])
    visited = np.zeros(n, dtype=bool)
    cluster = 0
    for i in range(n):
        if visited[i] or not core[i]:
            continue
        visited[i] = True
        labels[i] = cluster
        frontier = [i]
        while frontier:
            nxt = []
            for p in frontier:
                for q in neigh[p]:
                    if labels[q] == NOISE:
                        labels[q] = cluster
                    if core[q] and not visited[q]:
                        visited[q] = True
                        nxt.append(q)
            frontier = nxt
        cluster += 1
    return labels


def dbscan(points, eps: float, min_pts: int) -> tuple[list[Cluster], np.ndarray]:
    """Clusters plus the indices of noise points."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    labels = dbscan_labels(pts, eps, min_pts)
    clusters = []
    for c in range(labels.max() + 1 if len(labels) else 0):
        idx = np.flatnonzero(labels == c)
        cx, cy = pts[idx].mean(axis=0)
        clusters.append(Cluster(idx, (float(cx), float(cy))))
    return clusters, np.flatnonzero(labels == NOISE)


def conflict_points(m: LabelMap, classes: Iterable[int]) -> np.ndarray:
    """``(n, 2)`` array of ``(x, y)`` for every pixel of the given classes, row-major."""
    ys, xs = np.nonzero(np.isin(m.cells, list(classes)))
    return np.column_stack([xs, ys]).astype(np.float64)


def frame_centers(m: LabelMap, classes: Iterable[int], cfg: MotionConfig) -> list[tuple[float, float]]:
    pts = conflict_points(m, classes)
    if len(pts) == 0:
        return []
    clusters, _ = dbscan(pts, cfg.eps_for(m.width, m.height), cfg.min_pts)
    return [c.center for c in clusters]


@dataclass
class Trajectory:
    fps: float
    frames: list[int] = field(default_factory=list)
    xs: list[float] = field(default_factory=list)
    ys: list[float] = field(default_factory=list)
    track_id: int = 0

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if any(b <= a for a, b in zip(self.frames, self.frames[1:])):
            raise ValueError("trajectory frames must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self.frames, dtype=np.float64) / self.fps

    def points(self) -> np.ndarray:
        return np.column_stack([self.xs, self.ys]) if self.frames else np.zeros((0, 2))

    @classmethod
    def from_points(cls, points, fps: float, start_frame: int = 0, track_id: int = 0) -> "Trajectory":
        """Consecutive-frame trajectory; rows containing ``nan`` are missing samples."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        return cls(fps, list(range(start_frame, start_frame + len(pts))),
                   pts[:, 0].tolist(), pts[:, 1].tolist(), track_id)


def track(frames: Sequence[Sequence[tuple[float, float]]], fps: float, max_jump: float) -> list[Trajectory]:
    """Greedy nearest-neighbour association of per-frame centers.

    Candidate (track, center) pairs within ``max_jump`` are accepted shortest
    first; a track that receives no center in a frame ends there, and every
    unclaimed center starts a new track.  Track ids follow creation order.
    """
    if fps <= 0:
        raise ValueError("fps must be positive")
    done: list[Trajectory] = []
    active: list[Trajectory] = []
    next_id = 0
    for f, centers in enumerate(frames):
        centers = [(float(x), float(y)) for x, y in centers]
        pairs = []
        for ti, tr in enumerate(active):
            for ci, (x, y) in enumerate(centers):
                d = math.hypot(x - tr.xs[-1], y - tr.ys[-1])
                if d <= max_jump:
                    pairs.append((d, tr.track_id, ti, ci))
        pairs.sort()
        used_t, used_c = set(), set()
        for _, _, ti, ci in pairs:
            if ti in used_t or ci in used_c:
                continue
            used_t.add(ti)
            used_c.add(ci)
            tr = active[ti]
            tr.frames.append(f)
            tr.xs.append(centers[ci][0])
            tr.ys.append(centers[ci][1])
        still = []
        for ti, tr in enumerate(active):
            (still if ti in used_t else done).append(tr)
        for ci, (x, y) in enumerate(centers):
            if ci not in used_c:
                still.append(Trajectory(fps, [f], [x], [y], next_id))
                next_id += 1
        active = still
    return sorted(done + active, key=lambda t: t.track_id)


@dataclass(frozen=True)
class KinematicState:
    """Image-space motion at one sample; ``None`` where a difference is undefined."""

    vx: float | None
    vy: float | None
    ax: float | None
    ay: float | None
    ttc: float  # seconds, math.inf when not closing

    def severe(self, threshold: float = SEVERE_TTC) -> bool:
        return bool(self.ttc <= threshold)


def ttc(distance: float, closing_speed: float | None) -> float:
    """Distance over closing speed; infinite when stationary, receding or unknown."""
    if distance < 0:
        raise ValueError("distance to the ego line must be nonnegative")
    if closing_speed is None or not closing_speed > 0:
        return math.inf
    return distance / closing_speed


def _defined(v: float) -> float | None:
    return None if math.isnan(v) else float(v)


def kinematics(tr: Trajectory, ego_line: float) -> list[KinematicState]:
    """Backward-difference velocity and central-difference acceleration per sample.

    ``v[i] = fps * (p[i] - p[i-1])`` and ``a[i] = fps^2 * (p[i+1] + p[i-1] - 2 p[i])``.
    TTC uses the remaining distance ``ego_line - y`` and the downward speed.
    """
    if len(tr) < 2:
        raise ValueError("kinematics need at least two samples")
    fps = tr.fps
    fr = np.asarray(tr.frames)
    x = np.asarray(tr.xs, dtype=np.float64)
    y = np.asarray(tr.ys, dtype=np.float64)
    n = len(x)
    vx = np.full(n, np.nan)
    vy = np.full(n, np.nan)
    ax = np.full(n, np.nan)
    ay = np.full(n, np.nan)
    # differences only across adjacent frames
    adj = fr[1:] - fr[:-1] == 1
    vx[1:] = np.where(adj, fps * (x[1:] - x[:-1]), np.nan)
    vy[1:] = np.where(adj, fps * (y[1:] - y[:-1]), np.nan)
    if n >= 3:
        adj2 = adj[1:] & adj[:-1]
        ax[1:-1] = np.where(adj2, fps**2 * (x[2:] + x[:-2] - 2 * x[1:-1]), np.nan)
        ay[1:-1] = np.where(adj2, fps**2 * (y[2:] + y[:-2] - 2 * y[1:-1]), np.nan)
    out = []
    for i in range(n):
        v = _defined(vy[i])
        dist = max(ego_line - y[i], 0.0) if not math.isnan(y[i]) else 0.0
        t = ttc(dist, v) if not math.isnan(y[i]) else math.inf
        out.append(KinematicState(_defined(vx[i]), v, _defined(ax[i]), _defined(ay[i]), t))
    return out


TRAJECTORY_COLUMNS = ("frame_index", "track_id", "x", "y", "v_x", "v_y", "a_x", "a_y", "ttc")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return repr(float(v)) if isinstance(v, float) else str(v)


def trajectory_rows(tracks: Sequence[Trajectory], ego_line: float) -> list[list]:
    rows = []
    for tr in tracks:
        states = kinematics(tr, ego_line) if len(tr) >= 2 else [KinematicState(None, None, None, None, math.inf)]
        for f, x, y, s in zip(tr.frames, tr.xs, tr.ys, states):
            rows.append([f, tr.track_id, x, y, s.vx, s.vy, s.ax, s.ay, s.ttc])
    rows.sort(key=lambda r: (r[0], r[1]))
    return rows


def write_trajectory_csv(fh, tracks: Sequence[Trajectory], ego_line: float) -> None:
    wr = csv.writer(fh, lineterminator="\n")
    wr.writerow(TRAJECTORY_COLUMNS)
    for r in trajectory_rows(tracks, ego_line):
        wr.writerow([_cell(v) for v in r])
