"""Criticality regression: label synthesis, data split, gradient-boosted trees, metrics.

The regressor is squared-error gradient boosting over exact-greedy CART trees.
Split search scans midpoints between consecutive distinct sorted values of
every feature and keeps the split with the smallest summed child SSE; ties go
to the lowest feature index, then the lowest threshold. A sample goes left
when ``x[feature] <= threshold``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .descriptors import FEATURE_ORDER, FeatureMatrix
from .errors import ArityError, FormatError, InvalidData, TooFewSamples

MODEL_FORMAT = "porecrit-gbt"


# --------------------------------------------------------------------------
# datasets and labels
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LabeledDataset:
    features: FeatureMatrix
    labels: np.ndarray
    label_source: str = "synthetic"

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if len(labels) != len(self.features):
            raise InvalidData(f"{len(labels)} labels for {len(self.features)} feature rows")
        if not np.all(np.isfinite(labels)):
            raise InvalidData("labels must be finite")
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index, dtype=np.int64)
        return LabeledDataset(self.features.subset(index), self.labels[index], self.label_source)


@dataclass(frozen=True)
class SyntheticLabelParams:
    size_weight: float = 0.05
    noise_sigma: float = 0.02
    seed: int = 7

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def synth_labels(features: FeatureMatrix, params: SyntheticLabelParams = SyntheticLabelParams()) -> np.ndarray:
    """Criticality that falls linearly with surface distance plus a small size term.

    ``clamp((1 - surface_distance) + size_weight * sizenorm + N(0, noise_sigma^2), 0, 1)``
    with ``sizenorm`` the min-max normalized pore size (0 when all sizes agree).
    """
    if len(features) == 0:
        raise InvalidData("cannot synthesize labels for an empty feature matrix")
    size = features.column("size")
    span = size.max() - size.min()
    sizenorm = (size - size.min()) / span if span > 0 else np.zeros_like(size)
    rng = np.random.default_rng(params.seed)
    noise = rng.normal(0.0, params.noise_sigma, size=len(size)) if params.noise_sigma > 0 else 0.0
    raw = (1.0 - features.column("surface_distance")) + params.size_weight * sizenorm + noise
    return np.clip(raw, 0.0, 1.0)


def labels_to_csv(pore_ids, labels) -> str:
    lines = ["pore_id,criticality"]
    lines += [f"{int(p)},{float(v)!r}" for p, v in zip(pore_ids, labels)]
    return "\n".join(lines) + "\n"


def labels_from_csv(text: str, pore_ids) -> np.ndarray:
    """Labels aligned with ``pore_ids``; every id must be present exactly once."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["pore_id", "criticality"]:
        raise FormatError(f"unexpected label CSV header {header}")
    table: dict[int, float] = {}
    for rec in reader:
        if not rec:
            continue
        pid = int(rec[0])
        if pid in table:
            raise InvalidData(f"duplicate label for pore {pid}")
        table[pid] = float(rec[1])
    missing = [int(p) for p in pore_ids if int(p) not in table]
    if missing:
        raise InvalidData(f"no label for pores {missing[:10]}")
    return np.array([table[int(p)] for p in pore_ids], dtype=np.float64)


def split_indices(n: int, train_fraction: float = 0.8, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    if n < 2:
        raise TooFewSamples(f"need at least 2 rows to split, got {n}")
    if not 0.0 < train_fraction <= 1.0:
        raise ValueError("train_fraction must lie in (0, 1]")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = math.ceil(train_fraction * n)
    return perm[:n_train], perm[n_train:]


def split_dataset(dataset: LabeledDataset, train_fraction: float = 0.8, seed: int = 0):
    train_idx, test_idx = split_indices(len(dataset), train_fraction, seed)
    return dataset.subset(train_idx), dataset.subset(test_idx)


# --------------------------------------------------------------------------
# trees
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GbtHyperparams:
    n_trees: int = 200
    max_depth: int = 3
    learning_rate: float = 0.1
    min_samples_leaf: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")


@dataclass
class RegressionTree:
    """Flattened binary tree; node 0 is the root and ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        def walk(node: int) -> int:
            if self.feature[node] < 0:
                return 0
            return 1 + max(walk(self.left[node]), walk(self.right[node]))
        return walk(0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf node index reached by every row of ``X``."""
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            active = f >= 0
            if not active.any():
                return node
            r, n = rows[active], node[active]
            go_left = X[r, f[active]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=np.float64),
        )

    @classmethod
    def leaf(cls, value: float) -> "RegressionTree":
        return cls(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([float(value)]))


def best_split(X: np.ndarray, r: np.ndarray, min_samples_leaf: int):
    """Exact greedy split of residuals ``r``: ``(feature, threshold, child_sse, parent_sse)`` or None."""
    n = len(r)
    if n < 2 * min_samples_leaf:
        return None
    rc = r - r.mean()
    parent_sse = float(np.dot(rc, rc))
    best = None
    k = np.arange(1, n)  # left child = first k sorted rows
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs, rs = X[order, f], rc[order]
        cs = np.cumsum(rs)
        cs2 = np.cumsum(rs * rs)
        valid = (xs[:-1] < xs[1:]) & (k >= min_samples_leaf) & (n - k >= min_samples_leaf)
        if not valid.any():
            continue
        kk = k[valid]
        sl, sl2 = cs[kk - 1], cs2[kk - 1]
        sr, sr2 = cs[-1] - sl, cs2[-1] - sl2
        sse = (sl2 - sl * sl / kk) + (sr2 - sr * sr / (n - kk))
        pos = int(np.argmin(sse))  # first minimum = lowest threshold
        if best is None or sse[pos] < best[2]:
            i = kk[pos]
            best = (f, 0.5 * (xs[i - 1] + xs[i]), float(sse[pos]), parent_sse)
    return best


def fit_tree(X: np.ndarray, r: np.ndarray, max_depth: int, min_samples_leaf: int) -> RegressionTree:
    feature, threshold, left, right, value = [], [], [], [], []
    energy = float(np.dot(r, r))

    def grow(idx: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(r[idx].mean()))
        if depth >= max_depth:
            return node
        split = best_split(X[idx], r[idx], min_samples_leaf)
        if split is None:
            return node
        f, thr, child_sse, parent_sse = split
        gain = parent_sse - child_sse
        # relative floor rejects splits that only shuffle round-off
        if not gain > 1e-12 * max(parent_sse, energy):
            return node
        go_left = X[idx, f] <= thr
        feature[node] = f
        threshold[node] = float(thr)
        value[node] = 0.0
        left[node] = grow(idx[go_left], depth + 1)
        right[node] = grow(idx[~go_left], depth + 1)
        return node

    grow(np.arange(len(r)), 0)
    return RegressionTree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.float64),
    )


# --------------------------------------------------------------------------
# ensemble
# --------------------------------------------------------------------------

@dataclass
class ModelArtifact:
    base_prediction: float
    trees: list[RegressionTree]
    learning_rate: float
    feature_order: tuple[str, ...] = FEATURE_ORDER
    hyperparams: GbtHyperparams = field(default_factory=GbtHyperparams)
    training_metadata: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.feature_order)

    def predict_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ArityError(f"expected rows of {self.n_features} features, got shape {X.shape}")
        total = np.zeros(len(X))
        for tree in self.trees:
            total += tree.predict(X)
        return self.base_prediction + self.learning_rate * total

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": 1,
            "feature_order": list(self.feature_order),
            "base_prediction": self.base_prediction,
            "learning_rate": self.learning_rate,
            "hyperparams": asdict(self.hyperparams),
            "training_metadata": self.training_metadata,
            "trees": [t.to_dict() for t in self.trees],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ModelArtifact":
        if d.get("format") != MODEL_FORMAT:
            raise FormatError(f"not a {MODEL_FORMAT} document")
        return cls(
            base_prediction=float(d["base_prediction"]),
            trees=[RegressionTree.from_dict(t) for t in d["trees"]],
            learning_rate=float(d["learning_rate"]),
            feature_order=tuple(d["feature_order"]),
            hyperparams=GbtHyperparams(**d["hyperparams"]),
            training_metadata=d.get("training_metadata", {}),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ModelArtifact":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: malformed model document ({exc})") from exc


def add_ensembles(a: ModelArtifact, b: ModelArtifact) -> ModelArtifact:
    """Ensemble whose prediction is ``a(x) + b(x)``; both must share learning rate and features."""
    if a.learning_rate != b.learning_rate or tuple(a.feature_order) != tuple(b.feature_order):
        raise ValueError("ensembles must share learning_rate and feature_order")
    return ModelArtifact(
        base_prediction=a.base_prediction + b.base_prediction,
        trees=list(a.trees) + list(b.trees),
        learning_rate=a.learning_rate,
        feature_order=a.feature_order,
        hyperparams=a.hyperparams,
    )


def predict(model: ModelArtifact, feature_row) -> float:
    row = np.asarray(feature_row, dtype=np.float64)
    if row.ndim != 1 or len(row) != model.n_features:
        raise ArityError(f"expected {model.n_features} features, got {row.shape}")
    if not np.all(np.isfinite(row)):
        raise InvalidData("feature row must be finite")
    return float(model.predict_batch(row[None, :])[0])


def train_gbt(train_set: LabeledDataset, hyperparams: GbtHyperparams = GbtHyperparams()) -> ModelArtifact:
    X = train_set.features.rows
    y = train_set.labels
    if len(y) == 0:
        raise InvalidData("empty training set")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InvalidData("training features and labels must be finite")

    # mean of a constant vector can be off by an ulp; keep constant labels exact
    base = float(y[0]) if np.all(y == y[0]) else float(y.mean())
    residual = y - base
    losses = [float(np.mean(residual * residual))]
    trees = []
    for _ in range(hyperparams.n_trees):
        tree = fit_tree(X, residual, hyperparams.max_depth, hyperparams.min_samples_leaf)
        residual = residual - hyperparams.learning_rate * tree.predict(X)
        losses.append(float(np.mean(residual * residual)))
        trees.append(tree)
    return ModelArtifact(
        base_prediction=base,
        trees=trees,
        learning_rate=hyperparams.learning_rate,
        feature_order=tuple(train_set.features.feature_order),
        hyperparams=hyperparams,
        training_metadata={"seed": hyperparams.seed, "n_train": int(len(y)), "train_loss": losses},
    )


@dataclass(frozen=True)
class Metrics:
    rmse: float
    r_squared: float
    r_squared_undefined: bool = False


def evaluate(model: ModelArtifact, test_set: LabeledDataset) -> Metrics:
    if len(test_set) == 0:
        raise InvalidData("empty test set")
    return regression_metrics(test_set.labels, model.predict_batch(test_set.features.rows))


def regression_metrics(y_true, y_pred) -> Metrics:
    y = np.asarray(y_true, dtype=np.float64)
    yhat = np.asarray(y_pred, dtype=np.float64)
    resid = y - yhat
    sse = float(np.dot(resid, resid))
    rmse = math.sqrt(sse / len(y))
    centered = y - y.mean()
    sst = float(np.dot(centered, centered))
    if sst == 0.0:
        return Metrics(rmse, float("nan"), True)
    return Metrics(rmse, 1.0 - sse / sst)
