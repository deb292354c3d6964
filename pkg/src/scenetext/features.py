"""Per-class feature vectors, labeled datasets and feature selection."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .gbdt import BoostedEnsemble, TrainConfig, fit
from .labelmap import ClassTaxonomy, LabelMap
from .metrics import accuracy, confusion_from_labels

ABSENT = -1.0
FIELDS_PER_CLASS = ("presence", "pixsum", "cx", "cy")


@dataclass(frozen=True, eq=False)
class FeatureVector:
    presence: np.ndarray  # (k,) 0/1
    pixel_sum: np.ndarray  # (k,)
    centroid: np.ndarray  # (k, 2) x, y; (-1, -1) when absent

    @property
    def k(self) -> int:
        return len(self.presence)

    def as_array(self) -> np.ndarray:
        """Interleaved ``presence_c, pixsum_c, cx_c, cy_c`` for ascending class id."""
        cols = np.column_stack([self.presence, self.pixel_sum, self.centroid[:, 0], self.centroid[:, 1]])
        return cols.astype(np.float64).ravel()

    @classmethod
    def from_array(cls, row) -> "FeatureVector":
        a = np.asarray(row, dtype=np.float64).reshape(-1, 4)
        return cls(a[:, 0].astype(np.int64), a[:, 1].astype(np.int64), a[:, 2:4].copy())

    def total_pixels(self) -> int:
        return int(self.pixel_sum.sum())

    def __eq__(self, other):
        return isinstance(other, FeatureVector) and np.array_equal(self.as_array(), other.as_array())


def feature_names(k: int) -> list[str]:
    return [f"{f}_{c}" for c in range(k) for f in FIELDS_PER_CLASS]


def extract_features(m: LabelMap, tax: ClassTaxonomy) -> FeatureVector:
    m.validate(tax)
    k = len(tax)
    h, w = m.cells.shape
    ids = m.cells.ravel()
    ys, xs = np.divmod(np.arange(h * w), w)
    counts = np.bincount(ids, minlength=k)
    sx = np.bincount(ids, weights=xs, minlength=k)
    sy = np.bincount(ids, weights=ys, minlength=k)
    present = counts > 0
    safe = np.where(present, counts, 1)
    centroid = np.where(present[:, None], np.column_stack([sx / safe, sy / safe]), ABSENT)
    return FeatureVector(present.astype(np.int64), counts.astype(np.int64), centroid)


@dataclass(eq=False)
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray  # integer codes into classes
    classes: list[str]
    feature_names: list[str]
    row_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] != len(self.y):
            raise ValueError("rows and labels must have the same length")
        if self.X.shape[1] != len(self.feature_names):
            raise ValueError("feature_names do not match the feature width")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= len(self.classes)):
            raise ValueError("label codes out of range")
        if not self.row_ids:
            self.row_ids = [str(i) for i in range(len(self.y))]

    def __len__(self) -> int:
        return len(self.y)

    @property
    def labels(self) -> list[str]:
        return [self.classes[i] for i in self.y]

    def subset(self, rows=None, cols=None) -> "LabeledDataset":
        rows = np.arange(len(self)) if rows is None else np.asarray(rows)
        cols = np.arange(self.X.shape[1]) if cols is None else np.asarray(cols)
        return LabeledDataset(self.X[np.ix_(rows, cols)], self.y[rows], list(self.classes),
                              [self.feature_names[c] for c in cols], [self.row_ids[r] for r in rows])

    @classmethod
    def from_labels(cls, X, labels: Sequence[str], names: Sequence[str],
                    classes: Sequence[str] | None = None, row_ids=None) -> "LabeledDataset":
        classes = list(classes) if classes is not None else sorted(set(labels))
        index = {c: i for i, c in enumerate(classes)}
        try:
            y = [index[lab] for lab in labels]
        except KeyError as exc:
            raise ValueError(f"label {exc.args[0]!r} not among classes {classes}") from exc
        return cls(np.asarray(X, dtype=np.float64).reshape(len(y), -1), y, classes, list(names),
                   list(row_ids) if row_ids is not None else [])


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def write_feature_csv(path, X, names: Sequence[str], labels: Sequence[str] | None = None,
                      row_ids: Sequence[str] | None = None) -> None:
    X = np.asarray(X, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["frame_id", *names] + (["label"] if labels is not None else []))
        for i, row in enumerate(X):
            rid = row_ids[i] if row_ids is not None else str(i)
            wr.writerow([rid, *(_fmt(v) for v in row)] + ([labels[i]] if labels is not None else []))


def read_feature_csv(path, classes: Sequence[str] | None = None) -> LabeledDataset:
    """Load a labeled feature matrix; ``classes`` fixes the label order."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty feature CSV")
    header, body = rows[0], rows[1:]
    if not header or header[-1] != "label":
        raise ValueError(f"{path}: feature CSV has no 'label' column")
    has_id = header[0] == "frame_id"
    names = header[1 if has_id else 0 : -1]
    X, labels, ids = [], [], []
    for n, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise ValueError(f"{path}:{n}: expected {len(header)} fields, got {len(r)}")
        try:
            X.append([float(v) for v in r[1 if has_id else 0 : -1]])
        except ValueError as exc:
            raise ValueError(f"{path}:{n}: {exc}") from exc
        labels.append(r[-1])
        ids.append(r[0] if has_id else str(n - 2))
    if classes is None:
        from .scenario import ScenarioLabel

        scen = [s.name for s in ScenarioLabel]
        classes = scen if set(labels) <= set(scen) else sorted(set(labels))
    return LabeledDataset.from_labels(np.array(X).reshape(len(labels), len(names)), labels, names,
                                      classes, ids)


def feature_importance(model: BoostedEnsemble) -> list[tuple[str, float]]:
    """Gain share per feature, summed over every split of every tree, descending."""
    gains = model.gain_by_feature()
    total = gains.sum()
    if model.rounds == 0 or total <= 0:
        raise ValueError("model has no splits; importance is undefined")
    share = gains / total
    order = sorted(range(len(share)), key=lambda i: (-share[i], i))
    return [(model.feature_names[i], float(share[i])) for i in order]


def stratified_folds(y: np.ndarray, folds: int, seed: int) -> list[np.ndarray]:
    """Test-row indices per fold, every class spread round-robin after a seeded shuffle."""
    y = np.asarray(y)
    if folds < 2:
        raise ValueError("need at least two folds")
    rng = np.random.default_rng(seed)
    buckets: list[list[int]] = [[] for _ in range(folds)]
    offset = 0
    for c in np.unique(y):
        rows = np.flatnonzero(y == c)
        if len(rows) < folds:
            raise ValueError(f"class {c} has {len(rows)} rows, fewer than {folds} folds")
        rows = rng.permutation(rows)
        for i, r in enumerate(rows):
            buckets[(i + offset) % folds].append(int(r))
        offset += len(rows)
    return [np.array(sorted(b), dtype=np.int64) for b in buckets]


def out_of_fold_predictions(data: LabeledDataset, folds: int, cfg: TrainConfig, seed: int = 0) -> np.ndarray:
    pred = np.full(len(data), -1, dtype=np.int64)
    all_rows = np.arange(len(data))
    for test in stratified_folds(data.y, folds, seed):
        train_rows = np.setdiff1d(all_rows, test)
        if len(np.unique(data.y[train_rows])) < len(data.classes):
            raise ValueError("degenerate fold: a training fold is missing a class")
        model = fit(data.X[train_rows], data.y[train_rows], data.classes, data.feature_names, cfg)
        pred[test] = model.predict(data.X[test])
    return pred


def cv_accuracy(data: LabeledDataset, folds: int, cfg: TrainConfig, seed: int = 0) -> float:
    """Mean per-fold accuracy."""
    scores = []
    all_rows = np.arange(len(data))
    for test in stratified_folds(data.y, folds, seed):
        train_rows = np.setdiff1d(all_rows, test)
        model = fit(data.X[train_rows], data.y[train_rows], data.classes, data.feature_names, cfg)
        cm = confusion_from_labels(model.predict(data.X[test]), data.y[test], len(data.classes))
        scores.append(accuracy(cm))
    return float(np.mean(scores))


@dataclass
class FeatureSelection:
    selected: list[str]
    cv_score_per_step: list[tuple[int, float]]

    def to_json(self) -> dict:
        return {"selected": list(self.selected),
                "cv_score_per_step": [{"size": s, "score": v} for s, v in self.cv_score_per_step]}


def rfe_select(data: LabeledDataset, folds: int = 5, target_size: int = 4,
               cfg: TrainConfig | None = None, seed: int = 0) -> FeatureSelection:
    """Recursive feature elimination scored by stratified k-fold accuracy.

    At every width the model is refit on all rows and the feature with the
    smallest gain share is dropped (ties drop the right-most column).
    """
    cfg = cfg or TrainConfig()
    width = data.X.shape[1]
    if not 1 <= target_size <= width:
        raise ValueError(f"target_size must lie in [1, {width}]")
    keep = list(range(width))
    trace = []
    while True:
        sub = data.subset(cols=keep)
        trace.append((len(keep), cv_accuracy(sub, folds, cfg, seed)))
        if len(keep) == target_size:
            break
        model = fit(sub.X, sub.y, sub.classes, sub.feature_names, cfg)
        gains = model.gain_by_feature()
        drop = min(range(len(keep)), key=lambda i: (gains[i], -i))
        keep.pop(drop)
    return FeatureSelection([data.feature_names[c] for c in keep], trace)
