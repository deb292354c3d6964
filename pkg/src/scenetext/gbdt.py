"""Regularized second-order gradient tree boosting for multi-class labels.

Each boosting round fits one regression tree per class to the softmax
gradient ``g = p - y`` and hessian ``h = p (1 - p)``.  A node's optimal weight
is ``-G / (H + lambda)`` and a split is taken only when

    0.5 * [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)] - gamma > 0

which is the loss reduction under the tree penalty ``gamma*T + lambda/2*|w|^2``.
Splits are found by exact greedy enumeration over sorted feature values; a row
goes left when ``x[feature] <= threshold``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MODEL_VERSION = 1


@dataclass
class TrainConfig:
    rounds: int = 50
    max_depth: int = 4
    gamma: float = 0.0
    lam: float = 1.0
    learning_rate: float = 0.3
    min_child_weight: float = 1e-3
    seed: int = 0  # exact greedy training is deterministic; kept for pipeline configs

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.gamma < 0 or self.lam < 0:
            raise ValueError("gamma and lambda must be nonnegative")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.min_child_weight < 0:
            raise ValueError("min_child_weight must be nonnegative")


def leaf_weight(G: float, H: float, lam: float) -> float:
    denom = H + lam
    return 0.0 if denom == 0 else -G / denom


def split_gain(GL: float, HL: float, GR: float, HR: float, lam: float, gamma: float) -> float:
    def score(G, H):
        return G * G / (H + lam) if H + lam > 0 else 0.0

    return 0.5 * (score(GL, HL) + score(GR, HR) - score(GL + GR, HL + HR)) - gamma


@dataclass(eq=False)
class RegressionTree:
    """Flat binary tree; node 0 is the root, ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            active = f >= 0
            if not active.any():
                return node
            r = rows[active]
            n = node[active]
            go_left = X[r, f[active]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_records(self) -> list[dict]:
        out = []
        for i in range(self.n_nodes):
            if self.feature[i] < 0:
                out.append({"id": i, "leaf": float(self.value[i])})
            else:
                out.append({
                    "id": i,
                    "feature": int(self.feature[i]),
                    "threshold": float(self.threshold[i]),
                    "left": int(self.left[i]),
                    "right": int(self.right[i]),
                    "gain": float(self.gain[i]),
                })
        return out

    @classmethod
    def from_records(cls, records: Sequence[dict], n_features: int) -> "RegressionTree":
        n = len(records)
        if n == 0:
            raise ValueError("malformed tree: no nodes")
        feature = np.full(n, -1, dtype=np.int64)
        threshold = np.zeros(n)
        left = np.full(n, -1, dtype=np.int64)
        right = np.full(n, -1, dtype=np.int64)
        value = np.zeros(n)
        gain = np.zeros(n)
        parents = np.zeros(n, dtype=np.int64)
        for pos, rec in enumerate(records):
            if not isinstance(rec, dict) or rec.get("id") != pos:
                raise ValueError(f"malformed tree: node at position {pos} has id {rec.get('id') if isinstance(rec, dict) else rec!r}")
            if "leaf" in rec:
                value[pos] = float(rec["leaf"])
                continue
            try:
                f, t, lo, hi = int(rec["feature"]), float(rec["threshold"]), int(rec["left"]), int(rec["right"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"malformed tree node {pos}: {exc}") from exc
            if not 0 <= f < n_features:
                raise ValueError(f"malformed tree node {pos}: feature {f} out of range")
            # children after their parent rules out cycles
            for child in (lo, hi):
                if not pos < child < n:
                    raise ValueError(f"malformed tree node {pos}: bad child {child}")
                parents[child] += 1
            feature[pos], threshold[pos], left[pos], right[pos] = f, t, lo, hi
            gain[pos] = float(rec.get("gain", 0.0))
        if parents[0] != 0 or np.any(parents[1:] != 1):
            raise ValueError("malformed tree: every non-root node needs exactly one parent")
        return cls(feature, threshold, left, right, value, gain)


class _Presorted:
    """Column-wise sort of the training matrix, shared by every tree of a fit."""

    def __init__(self, X: np.ndarray):
        self.X = X
        self.order = np.argsort(X, axis=0, kind="stable")
        self.values = np.take_along_axis(X, self.order, axis=0)
        # a split may follow position i only where the next sorted value differs
        run_end = np.zeros_like(self.values, dtype=bool)
        run_end[:-1] = self.values[1:] != self.values[:-1]
        self.run_end = run_end


def build_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray, cfg: TrainConfig,
               presorted: _Presorted | None = None) -> RegressionTree:
    """Grow one tree on per-row gradient ``g`` and hessian ``h``.

    Leaf values are already scaled by the learning rate.
    """
    ps = presorted if presorted is not None else _Presorted(X)
    n, p = X.shape
    lam, gamma, mcw = cfg.lam, cfg.gamma, cfg.min_child_weight
    g_sorted = g[ps.order]
    h_sorted = h[ps.order]

    feature, threshold, left, right, value, gain = [], [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        gain.append(0.0)
        return len(feature) - 1

    root = new_node()
    queue = [(root, np.ones(n, dtype=bool), 0)]
    while queue:
        node, mask, depth = queue.pop(0)
        G = float(g[mask].sum())
        H = float(h[mask].sum())
        count = int(mask.sum())
        best = None
        if depth < cfg.max_depth and count >= 2:
            w = mask[ps.order]
            GL = np.cumsum(np.where(w, g_sorted, 0.0), axis=0)
            HL = np.cumsum(np.where(w, h_sorted, 0.0), axis=0)
            CL = np.cumsum(w, axis=0)
            GR = G - GL
            HR = H - HL
            valid = ps.run_end & (CL >= 1) & (CL < count) & (HL >= mcw) & (HR >= mcw)
            if valid.any():
                with np.errstate(divide="ignore", invalid="ignore"):
                    parent = G * G / (H + lam) if H + lam > 0 else 0.0
                    gains = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent) - gamma
                gains = np.where(valid & np.isfinite(gains), gains, -np.inf)
                # feature-major flattening: ties go to the lower feature, then lower threshold
                flat = int(np.argmax(gains.T))
                j, i = divmod(flat, n)
                if gains[i, j] > 0:
                    best = (j, float(ps.values[i, j]), float(gains[i, j]))
        if best is None:
            value[node] = cfg.learning_rate * leaf_weight(G, H, lam)
            continue
        j, thr, gn = best
        feature[node], threshold[node], gain[node] = j, thr, gn
        go_left = X[:, j] <= thr
        lo, hi = new_node(), new_node()
        left[node], right[node] = lo, hi
        queue.append((lo, mask & go_left, depth + 1))
        queue.append((hi, mask & ~go_left, depth + 1))

    return RegressionTree(
        np.array(feature, dtype=np.int64), np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
        np.array(value, dtype=np.float64), np.array(gain, dtype=np.float64),
    )


def softmax(margins: np.ndarray) -> np.ndarray:
    m = np.asarray(margins, dtype=np.float64)
    z = m - m.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_loss(proba: np.ndarray, y: np.ndarray) -> float:
    q = np.clip(proba[np.arange(len(y)), y], 1e-15, 1.0)
    return float(-np.mean(np.log(q)))


@dataclass(eq=False)
class BoostedEnsemble:
    classes: list[str]
    feature_names: list[str]
    base_score: np.ndarray
    trees: list[list[RegressionTree]] = field(default_factory=list)  # [round][class]
    learning_rate: float = 0.3
    gamma: float = 0.0
    lam: float = 1.0
    train_loss: list[float] = field(default_factory=list)  # not serialized

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def rounds(self) -> int:
        return len(self.trees)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X2 = X[None, :] if single else X
        if X2.ndim != 2 or X2.shape[1] != self.n_features:
            raise ValueError(f"feature width {X2.shape[-1]} does not match model width {self.n_features}")
        return X2

    def predict_margin(self, X) -> np.ndarray:
        single = np.ndim(X) == 1
        X2 = self._check(X)
        out = np.tile(self.base_score, (X2.shape[0], 1))
        for round_trees in self.trees:
            for c, tree in enumerate(round_trees):
                out[:, c] += tree.predict(X2)
        return out[0] if single else out

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.predict_margin(X))

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_margin(X), axis=-1)

    def gain_by_feature(self) -> np.ndarray:
        total = np.zeros(self.n_features)
        for round_trees in self.trees:
            for tree in round_trees:
                internal = tree.feature >= 0
                np.add.at(total, tree.feature[internal], tree.gain[internal])
        return total

    def to_json(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "classes": list(self.classes),
            "feature_names": list(self.feature_names),
            "learning_rate": self.learning_rate,
            "gamma": self.gamma,
            "lambda": self.lam,
            "base_score": [float(v) for v in self.base_score],
            "trees": [t.to_records() for round_trees in self.trees for t in round_trees],
        }

    @classmethod
    def from_json(cls, data: dict) -> "BoostedEnsemble":
        if not isinstance(data, dict):
            raise ValueError("model JSON must be an object")
        version = data.get("version")
        if version != MODEL_VERSION:
            raise ValueError(f"unsupported model version {version!r} (expected {MODEL_VERSION})")
        try:
            classes = [str(c) for c in data["classes"]]
            names = [str(f) for f in data["feature_names"]]
            base = np.array([float(v) for v in data["base_score"]])
            flat = data["trees"]
            lr, gamma, lam = float(data["learning_rate"]), float(data["gamma"]), float(data["lambda"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed model: {exc}") from exc
        C = len(classes)
        if C < 2 or len(base) != C:
            raise ValueError("malformed model: base_score must have one entry per class")
        if len(flat) % C:
            raise ValueError("malformed model: tree count is not a multiple of the class count")
        trees = [RegressionTree.from_records(r, len(names)) for r in flat]
        rounds = [trees[i : i + C] for i in range(0, len(trees), C)]
        return cls(classes, names, base, rounds, lr, gamma, lam)


def train(data, cfg: TrainConfig | None = None) -> BoostedEnsemble:
    """Fit on a labeled dataset (anything with ``X``, ``y``, ``classes``, ``feature_names``)."""
    return fit(data.X, data.y, data.classes, data.feature_names, cfg or TrainConfig())


def fit(X, y, classes: Sequence[str], feature_names: Sequence[str], cfg: TrainConfig) -> BoostedEnsemble:
    """Fit a softmax ensemble; ``y`` holds integer codes into ``classes``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[1] == 0:
        raise ValueError("training needs a non-empty feature set")
    if X.shape[0] < 2 or X.shape[0] != len(y):
        raise ValueError("training needs at least two rows with one label each")
    if not np.all(np.isfinite(X)):
        raise ValueError("training features must be finite")
    C = len(classes)
    if len(feature_names) != X.shape[1]:
        raise ValueError("feature_names length does not match feature width")
    if y.min() < 0 or y.max() >= C:
        raise ValueError("label codes out of range")
    counts = np.bincount(y, minlength=C)
    if np.count_nonzero(counts) < 2:
        raise ValueError("training needs at least two distinct labels")
    if np.any(counts == 0):
        missing = [classes[i] for i in np.flatnonzero(counts == 0)]
        raise ValueError(f"no training rows for class(es) {missing}")

    base = np.log(counts / counts.sum())
    model = BoostedEnsemble(list(classes), list(feature_names), base, [],
                            cfg.learning_rate, cfg.gamma, cfg.lam)
    ps = _Presorted(X)
    Y = np.eye(C)[y]
    F = np.tile(base, (X.shape[0], 1))
    model.train_loss.append(log_loss(softmax(F), y))
    for _ in range(cfg.rounds):
        P = softmax(F)
        round_trees = []
        for c in range(C):
            g = P[:, c] - Y[:, c]
            h = P[:, c] * (1.0 - P[:, c])
            tree = build_tree(X, g, h, cfg, ps)
            round_trees.append(tree)
        for c, tree in enumerate(round_trees):
            F[:, c] += tree.predict(X)
        model.trees.append(round_trees)
        model.train_loss.append(log_loss(softmax(F), y))
    return model


def save_model(model: BoostedEnsemble, path) -> None:
    Path(path).write_text(json.dumps(model.to_json(), indent=1) + "\n")


def load_model(path) -> BoostedEnsemble:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    return BoostedEnsemble.from_json(data)


def empty_ensemble(classes: Sequence[str], feature_names: Sequence[str], base_score) -> BoostedEnsemble:
    return BoostedEnsemble(list(classes), list(feature_names), np.asarray(base_score, dtype=np.float64))

