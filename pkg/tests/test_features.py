import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scenetext.features import (FeatureVector, LabeledDataset, cv_accuracy, extract_features,
                                feature_importance, feature_names, read_feature_csv, rfe_select,
                                stratified_folds, write_feature_csv)
from scenetext.gbdt import TrainConfig, empty_ensemble, fit
from scenetext.labelmap import LabelMap, default_taxonomy

TAX = default_taxonomy()
cell_maps = arrays(np.int64, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.integers(0, 22))


@given(cell_maps)
def test_features_against_pixel_loop(cells):
    fv = extract_features(LabelMap(cells), TAX)
    h, w = cells.shape
    for c in range(23):
        pix = [(x, y) for y in range(h) for x in range(w) if cells[y, x] == c]
        assert fv.pixel_sum[c] == len(pix)
        assert fv.presence[c] == (1 if pix else 0)
        if pix:
            assert fv.centroid[c, 0] == pytest.approx(sum(p[0] for p in pix) / len(pix))
            assert fv.centroid[c, 1] == pytest.approx(sum(p[1] for p in pix) / len(pix))
        else:
            assert fv.centroid[c].tolist() == [-1.0, -1.0]
    assert fv.total_pixels() == h * w


@given(cell_maps)
def test_feature_vector_array_round_trip(cells):
    fv = extract_features(LabelMap(cells), TAX)
    arr = fv.as_array()
    assert len(arr) == 4 * 23
    assert FeatureVector.from_array(arr) == fv


def test_feature_names_layout():
    names = feature_names(2)
    assert names == ["presence_0", "pixsum_0", "cx_0", "cy_0", "presence_1", "pixsum_1", "cx_1", "cy_1"]


def test_extract_rejects_unknown_class():
    with pytest.raises(ValueError):
        extract_features(LabelMap(np.array([[30]])), TAX)


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    X = np.column_stack([rng.integers(0, 5, 12), rng.normal(size=12)])
    labels = ["CutIn", "FreeDriving", "Following", "EmergencyAvoidance"] * 3
    write_feature_csv(tmp_path / "f.csv", X, ["a", "b"], labels, [f"r{i}" for i in range(12)])
    data = read_feature_csv(tmp_path / "f.csv")
    assert np.array_equal(data.X, X)
    assert data.labels == labels
    assert data.classes == ["FreeDriving", "Following", "CutIn", "EmergencyAvoidance"]
    assert data.row_ids[3] == "r3"


def test_csv_non_scenario_labels_sorted(tmp_path):
    write_feature_csv(tmp_path / "f.csv", np.zeros((3, 1)), ["a"], ["z", "b", "z"])
    assert read_feature_csv(tmp_path / "f.csv").classes == ["b", "z"]


@pytest.mark.parametrize("text", ["", "frame_id,a\n0,1\n", "frame_id,a,label\n0,1\n", "frame_id,a,label\n0,x,A\n"])
def test_csv_errors(tmp_path, text):
    p = tmp_path / "f.csv"
    p.write_text(text)
    with pytest.raises(ValueError):
        read_feature_csv(p)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=12, max_size=80), st.integers(2, 3), st.integers(0, 99))
def test_stratified_folds_partition(labels, folds, seed):
    y = np.array(labels)
    if any(np.sum(y == c) < folds for c in np.unique(y)):
        with pytest.raises(ValueError):
            stratified_folds(y, folds, seed)
        return
    parts = stratified_folds(y, folds, seed)
    assert sorted(np.concatenate(parts).tolist()) == list(range(len(y)))
    for c in np.unique(y):
        sizes = [int(np.sum(y[p] == c)) for p in parts]
        assert max(sizes) - min(sizes) <= 1
    assert [p.tolist() for p in parts] == [p.tolist() for p in stratified_folds(y, folds, seed)]


def test_feature_importance_ranks_informative_feature():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(120, 3))
    y = (X[:, 1] > 0).astype(int)
    model = fit(X, y, ["n", "p"], ["a", "b", "c"], TrainConfig(rounds=5, max_depth=2))
    imp = feature_importance(model)
    assert imp[0][0] == "b"
    assert sum(v for _, v in imp) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        feature_importance(empty_ensemble(["n", "p"], ["a"], [0.0, 0.0]))


def test_rfe_trace_and_target():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(80, 5))
    y = (X[:, 4] > 0).astype(int)
    data = LabeledDataset(X, y, ["n", "p"], [f"f{i}" for i in range(5)])
    sel = rfe_select(data, folds=4, target_size=1, cfg=TrainConfig(rounds=3, max_depth=2))
    assert sel.selected == ["f4"]
    assert [s for s, _ in sel.cv_score_per_step] == [5, 4, 3, 2, 1]
    assert sel.cv_score_per_step[-1][1] == cv_accuracy(data.subset(cols=[4]), 4, TrainConfig(rounds=3, max_depth=2))
    with pytest.raises(ValueError):
        rfe_select(data, target_size=6)
    assert sel.to_json()["cv_score_per_step"][0]["size"] == 5


def test_dataset_validation():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 1)), [0], ["a"], ["x"])
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((1, 1)), [3], ["a"], ["x"])
    with pytest.raises(ValueError):
        LabeledDataset.from_labels(np.zeros((1, 1)), ["q"], ["x"], ["a"])
