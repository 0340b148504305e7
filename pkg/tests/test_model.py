import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from porecrit.descriptors import FEATURE_ORDER, FeatureMatrix
from porecrit.errors import ArityError, InvalidData, TooFewSamples
from porecrit.model import (
    GbtHyperparams, LabeledDataset, ModelArtifact, SyntheticLabelParams, evaluate, fit_tree,
    labels_from_csv, labels_to_csv, predict, regression_metrics, split_dataset, split_indices,
    synth_labels, train_gbt,
)

from oracles import ensemble_walk, tree_walk


def fm(rows, names=FEATURE_ORDER):
    rows = np.asarray(rows, dtype=np.float64)
    return FeatureMatrix(np.arange(1, len(rows) + 1), rows, tuple(names))


def random_dataset(n=120, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 5))
    y = 1 - X[:, 4] + 0.3 * X[:, 0] + noise * rng.normal(size=n)
    return LabeledDataset(fm(X), y)


# ---------------------------------------------------------------- labels

def test_synth_labels_endpoints_noise_free():
    X = np.zeros((3, 5))
    X[:, 0] = [1, 5, 9]
    X[:, 4] = [0.0, 0.5, 1.0]
    y = synth_labels(fm(X), SyntheticLabelParams(size_weight=0.05, noise_sigma=0.0))
    assert y.tolist() == [1.0, 0.5 + 0.025, 0.05]


def test_synth_labels_seeded_and_clamped():
    X = np.random.default_rng(2).random((200, 5))
    a = synth_labels(fm(X), SyntheticLabelParams(noise_sigma=0.3, seed=3))
    b = synth_labels(fm(X), SyntheticLabelParams(noise_sigma=0.3, seed=3))
    assert np.array_equal(a, b) and a.min() >= 0 and a.max() <= 1


def test_synth_labels_track_surface_distance_on_reference_run(reference_run):
    feats = FeatureMatrix.from_csv((reference_run / "features.csv").read_text())
    labels = labels_from_csv((reference_run / "labels.csv").read_text(), feats.pore_ids)
    assert np.corrcoef(feats.column("surface_distance"), labels)[0, 1] <= -0.95


def test_labels_csv_round_trip_and_errors():
    ids = [4, 9, 2]
    text = labels_to_csv(ids, [0.1, 0.2, 0.3])
    assert labels_from_csv(text, [2, 4]).tolist() == [0.3, 0.1]
    with pytest.raises(InvalidData):
        labels_from_csv(text, [5])
    with pytest.raises(InvalidData):
        labels_from_csv(text + "4,0.5\n", ids)


def test_dataset_rejects_nonfinite_labels():
    with pytest.raises(InvalidData):
        LabeledDataset(fm(np.zeros((2, 5))), [0.0, float("nan")])


# ---------------------------------------------------------------- split

def test_split_ten_rows():
    train, test = split_indices(10, 0.8, seed=0)
    assert len(train) == 8 and len(test) == 2
    assert sorted(train.tolist() + test.tolist()) == list(range(10))


def test_split_ceil_rounding():
    train, test = split_indices(5, 0.5, seed=1)
    assert len(train) == 3 and len(test) == 2


def test_split_deterministic():
    a = split_indices(100, 0.8, seed=42)
    b = split_indices(100, 0.8, seed=42)
    c = split_indices(100, 0.8, seed=43)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], c[0])


def test_split_too_few():
    with pytest.raises(TooFewSamples):
        split_indices(1)


def test_split_dataset_keeps_rows_together():
    ds = random_dataset(20)
    tr, te = split_dataset(ds, 0.8, seed=0)
    for part in (tr, te):
        for pid, row, lab in zip(part.features.pore_ids, part.features.rows, part.labels):
            k = int(pid) - 1
            assert np.array_equal(row, ds.features.rows[k]) and lab == ds.labels[k]


# ---------------------------------------------------------------- training

def test_constant_labels_predict_constant():
    ds = LabeledDataset(fm(np.random.default_rng(0).random((30, 5))), np.full(30, 0.37))
    model = train_gbt(ds, GbtHyperparams(n_trees=20))
    X = np.random.default_rng(1).random((50, 5)) * 10
    assert np.all(model.predict_batch(X) == 0.37)


def test_step_function_recovered():
    X = np.zeros((100, 5))
    X[:, 4] = np.linspace(0, 1, 100)
    y = np.where(X[:, 4] <= 0.5, 1.0, 0.0)
    model = train_gbt(LabeledDataset(fm(X), y), GbtHyperparams(n_trees=100, min_samples_leaf=1))
    assert np.max(np.abs(model.predict_batch(X) - y)) <= 0.05


def test_training_loss_monotone():
    model = train_gbt(random_dataset(150, noise=0.05), GbtHyperparams(n_trees=60))
    loss = model.training_metadata["train_loss"]
    assert len(loss) == 61
    assert all(b <= a + 1e-15 for a, b in zip(loss, loss[1:]))


def test_tree_depth_and_leaf_size_limits():
    model = train_gbt(random_dataset(80), GbtHyperparams(n_trees=10, max_depth=2, min_samples_leaf=7))
    X = random_dataset(80).features.rows
    for tree in model.trees:
        assert tree.depth() <= 2
        _, counts = np.unique(tree.apply(X), return_counts=True)
        assert counts.min() >= 7


def test_predict_matches_naive_tree_walk():
    model = train_gbt(random_dataset(100, noise=0.1), GbtHyperparams(n_trees=25))
    d = model.to_dict()
    X = np.random.default_rng(9).random((40, 5)) * 1.4 - 0.2
    naive = [ensemble_walk(d, row) for row in X.tolist()]
    assert np.allclose(model.predict_batch(X), naive, rtol=0, atol=1e-12)
    assert predict(model, X[0]) == pytest.approx(naive[0], abs=1e-12)


def test_single_tree_walk_matches_apply():
    X = np.random.default_rng(3).random((60, 5))
    r = np.sin(6 * X[:, 1])
    tree = fit_tree(X, r - r.mean(), 3, 2)
    d = tree.to_dict()
    assert np.array_equal(tree.predict(X), [tree_walk(d, row) for row in X.tolist()])


def test_duplicate_columns_split_on_lowest_index():
    X = np.random.default_rng(0).random((40, 5))
    X[:, 3] = X[:, 1]
    X[:, 0] = X[:, 2] = X[:, 4] = 0.5
    r = np.where(X[:, 1] > 0.5, 1.0, -1.0)
    tree = fit_tree(X, r, 1, 1)
    assert tree.feature[0] == 1


def test_training_is_deterministic_to_the_byte():
    ds = random_dataset(90, noise=0.1)
    a = train_gbt(ds, GbtHyperparams(n_trees=30)).to_json()
    b = train_gbt(ds, GbtHyperparams(n_trees=30)).to_json()
    assert a == b


def test_save_load_bit_exact(tmp_path):
    model = train_gbt(random_dataset(90, noise=0.1), GbtHyperparams(n_trees=30))
    model.save(tmp_path / "m.json")
    back = ModelArtifact.load(tmp_path / "m.json")
    X = np.random.default_rng(5).random((200, 5))
    assert np.array_equal(back.predict_batch(X), model.predict_batch(X))
    assert back.to_json() == model.to_json()
    assert json.loads((tmp_path / "m.json").read_text())["format"] == "porecrit-gbt"


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_prediction_constant_within_leaf_cell(seed):
    rng = np.random.default_rng(seed)
    model = train_gbt(random_dataset(50, seed=seed, noise=0.1), GbtHyperparams(n_trees=8))
    x = rng.random(5)
    cells = [t.apply(x[None, :])[0] for t in model.trees]
    # nudge one coordinate by a tiny amount; if every tree lands in the same leaf, prediction is unchanged
    y = x.copy()
    y[rng.integers(5)] += 1e-9
    if [t.apply(y[None, :])[0] for t in model.trees] == cells:
        assert predict(model, x) == predict(model, y)


def test_arity_and_nonfinite_rejected():
    model = train_gbt(random_dataset(30), GbtHyperparams(n_trees=3))
    with pytest.raises(ArityError):
        predict(model, [0.1, 0.2])
    with pytest.raises(ArityError):
        model.predict_batch(np.zeros((3, 4)))
    with pytest.raises(InvalidData):
        predict(model, [0.1, 0.2, math.nan, 0.3, 0.4])


def test_nonfinite_training_features_rejected():
    X = np.zeros((10, 5))
    X[3, 2] = math.inf
    with pytest.raises(InvalidData):
        train_gbt(LabeledDataset(fm(X), np.zeros(10)))


# ---------------------------------------------------------------- metrics

def test_metrics_hand_example():
    m = regression_metrics([0.0, 1.0, 2.0], [0.0, 1.0, 1.0])
    assert m.rmse == pytest.approx(math.sqrt(1 / 3))
    assert m.r_squared == pytest.approx(0.5)


def test_mean_prediction_scores_zero():
    y = np.array([0.1, 0.4, 0.7, 0.2])
    assert regression_metrics(y, np.full(4, y.mean())).r_squared == pytest.approx(0.0, abs=1e-12)


def test_constant_target_flags_undefined_r2():
    m = regression_metrics([0.3, 0.3], [0.3, 0.5])
    assert m.r_squared_undefined and math.isnan(m.r_squared)
    assert m.rmse == pytest.approx(math.sqrt(0.02))


def test_evaluate_on_held_out_set():
    tr, te = split_dataset(random_dataset(200, noise=0.02), 0.8, seed=0)
    metrics = evaluate(train_gbt(tr), te)
    assert metrics.r_squared > 0.9 and not metrics.r_squared_undefined
