"""Exact interventional Shapley attributions by full coalition enumeration.

For a sample ``x`` and background rows ``B`` the coalition value is

    v(S) = mean_b f(x_S, b_{not S})

i.e. features in ``S`` come from the sample and the rest from each
background row. Shapley values follow from the classic weighted sum over all
``2**M`` coalitions, so ``phi_0 + sum(phi) == f(x)`` up to round-off.

Tree ensembles take an exact shortcut: a leaf is reached by a hybrid row iff
every feature's box test passes, and the background part of that test does
not depend on the sample, so it is averaged once per (leaf, coalition).
Any other model (anything with ``predict_batch`` and ``feature_order``) is
evaluated on the literal hybrid rows.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import EnumerationLimit, NoBackground, UnknownFeature
from .model import ModelArtifact

MAX_FEATURES = 20


@dataclass(frozen=True)
class AttributionSet:
    phi: np.ndarray  # (n_samples, M)
    base_value: float
    feature_order: tuple[str, ...]
    background_size: int
    predictions: np.ndarray  # (n_samples,)

    def to_csv(self, pore_ids) -> str:
        buf = io.StringIO()
        buf.write(",".join(["pore_id"] + [f"phi_{f}" for f in self.feature_order]
                           + ["base_value", "prediction"]) + "\n")
        for pid, row, pred in zip(pore_ids, self.phi, self.predictions):
            vals = [repr(float(v)) for v in row] + [repr(float(self.base_value)), repr(float(pred))]
            buf.write(",".join([str(int(pid))] + vals) + "\n")
        return buf.getvalue()


@dataclass(frozen=True)
class ImportanceReport:
    feature_order: tuple[str, ...]
    mean_abs_phi: np.ndarray
    ranking: tuple[str, ...]
    dominance_factor: float
    residual_eps: float

    def importance_of(self, feature: str) -> float:
        return float(self.mean_abs_phi[self.feature_order.index(feature)])

    def to_csv(self) -> str:
        lines = ["rank,feature,mean_abs_phi"]
        for r, name in enumerate(self.ranking, start=1):
            lines.append(f"{r},{name},{self.importance_of(name)!r}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class AffineModel:
    """``f(x) = w . x + b``; exists so the closed-form attribution can be checked."""

    weights: np.ndarray
    bias: float = 0.0
    feature_order: tuple[str, ...] | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "weights", w)
        if self.feature_order is None:
            object.__setattr__(self, "feature_order", tuple(f"x{i}" for i in range(len(w))))

    def predict_batch(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weights + self.bias

    def closed_form_phi(self, sample_rows, background_rows) -> np.ndarray:
        bg_mean = np.asarray(background_rows, dtype=np.float64).mean(axis=0)
        return self.weights * (np.asarray(sample_rows, dtype=np.float64) - bg_mean)


def _masks(m: int) -> np.ndarray:
    """(2**m, m) boolean membership table; row ``s`` encodes coalition bitmask ``s``."""
    s = np.arange(2 ** m)[:, None]
    return ((s >> np.arange(m)) & 1).astype(bool)


def shapley_weights(m: int) -> np.ndarray:
    """``|S|! (m - |S| - 1)! / m!`` indexed by coalition size ``|S|`` (0..m-1)."""
    return np.array([math.factorial(s) * math.factorial(m - s - 1) / math.factorial(m)
                     for s in range(m)])


def coalition_values_brute(model, sample_rows: np.ndarray, background_rows: np.ndarray) -> np.ndarray:
    """``v[n, S]`` from literal hybrid rows; works for any ``predict_batch`` model."""
    n, m = sample_rows.shape
    masks = _masks(m)
    out = np.empty((n, len(masks)))
    for k, x in enumerate(sample_rows):
        hybrid = np.where(masks[:, None, :], x[None, None, :], background_rows[None, :, :])
        preds = np.asarray(model.predict_batch(hybrid.reshape(-1, m))).reshape(len(masks), -1)
        out[k] = preds.mean(axis=1)
    return out


def _leaf_boxes(model: ModelArtifact):
    """Every leaf of every tree as an axis box ``lo < x <= hi`` plus its value."""
    m = model.n_features
    lows, highs, values = [], [], []
    for tree in model.trees:
        stack = [(0, np.full(m, -np.inf), np.full(m, np.inf))]
        while stack:
            node, lo, hi = stack.pop()
            f = tree.feature[node]
            if f < 0:
                lows.append(lo)
                highs.append(hi)
                values.append(tree.value[node])
                continue
            t = tree.threshold[node]
            left_hi = hi.copy()
            left_hi[f] = min(hi[f], t)
            right_lo = lo.copy()
            right_lo[f] = max(lo[f], t)
            stack.append((tree.right[node], right_lo, hi))
            stack.append((tree.left[node], lo, left_hi))
    return np.array(lows).reshape(-1, m), np.array(highs).reshape(-1, m), np.array(values)


def coalition_values_tree(model: ModelArtifact, sample_rows: np.ndarray, background_rows: np.ndarray) -> np.ndarray:
    """``v[n, S]`` for a tree ensemble without materialising hybrid rows."""
    n, m = sample_rows.shape
    masks = _masks(m)
    lo, hi, val = _leaf_boxes(model)
    # (leaves, rows, features) box membership
    bg_in = (background_rows[None, :, :] > lo[:, None, :]) & (background_rows[None, :, :] <= hi[:, None, :])
    x_in = (sample_rows[None, :, :] > lo[:, None, :]) & (sample_rows[None, :, :] <= hi[:, None, :])
    out = np.empty((n, len(masks)))
    for s, mask in enumerate(masks):
        # background supplies the features outside S, the sample those inside
        bg_frac = np.all(bg_in[:, :, ~mask], axis=2).mean(axis=1)
        x_hit = np.all(x_in[:, :, mask], axis=2)  # (leaves, n)
        out[:, s] = model.base_prediction + model.learning_rate * ((val * bg_frac) @ x_hit)
    return out


def shapley_from_values(v: np.ndarray, m: int) -> np.ndarray:
    """Per-feature Shapley values from coalition values ``v[n, bitmask]``."""
    masks = _masks(m)
    sizes = masks.sum(axis=1)
    w = shapley_weights(m)
    phi = np.zeros((v.shape[0], m))
    for i in range(m):
        bit = 1 << i
        without = np.flatnonzero(~masks[:, i])
        phi[:, i] = ((v[:, without | bit] - v[:, without]) * w[sizes[without]]).sum(axis=1)
    return phi


def exact_shapley(model, sample_rows, background_rows, method: str = "auto") -> AttributionSet:
    """Exact Shapley values of ``model`` at each sample row against ``background_rows``.

    ``method`` is ``"auto"`` (tree shortcut for :class:`ModelArtifact`, literal
    hybrids otherwise) or ``"brute_force"``.
    """
    X = np.atleast_2d(np.asarray(sample_rows, dtype=np.float64))
    B = np.atleast_2d(np.asarray(background_rows, dtype=np.float64))
    m = len(model.feature_order)
    if m > MAX_FEATURES:
        raise EnumerationLimit(f"{m} features exceeds the {MAX_FEATURES}-feature enumeration limit")
    if B.size == 0 or len(B) == 0:
        raise NoBackground("background set is empty")
    if X.shape[1] != m or B.shape[1] != m:
        raise ValueError(f"rows must have {m} features")

    if method == "auto" and isinstance(model, ModelArtifact):
        v = coalition_values_tree(model, X, B)
    elif method in ("auto", "brute_force"):
        v = coalition_values_brute(model, X, B)
    else:
        raise ValueError(f"unknown method {method!r}")

    phi = shapley_from_values(v, m)
    base_value = float(np.asarray(model.predict_batch(B)).mean())
    predictions = np.asarray(model.predict_batch(X), dtype=np.float64)
    gap = np.abs(base_value + phi.sum(axis=1) - predictions)
    if np.any(gap > 1e-9 * np.maximum(1.0, np.abs(predictions))):
        raise ArithmeticError(f"efficiency violated by {gap.max():.3g}")
    return AttributionSet(phi=phi, base_value=base_value, feature_order=tuple(model.feature_order),
                          background_size=len(B), predictions=predictions)


def select_background(rows, cap: int = 200, seed: int = 0) -> np.ndarray:
    """At most ``cap`` rows, seeded subsample without replacement, original order kept."""
    rows = np.asarray(rows, dtype=np.float64)
    if len(rows) <= cap:
        return rows.copy()
    pick = np.sort(np.random.default_rng(seed).choice(len(rows), size=cap, replace=False))
    return rows[pick]


def mean_abs_importance(attributions: AttributionSet) -> ImportanceReport:
    phi = attributions.phi
    names = tuple(attributions.feature_order)
    mean_abs = np.abs(phi).mean(axis=0)
    # stable sort on the negated value keeps feature_order among ties
    order = np.argsort(-mean_abs, kind="stable")
    ranking = tuple(names[i] for i in order)
    top = mean_abs[order[0]]
    second = mean_abs[order[1]] if len(order) > 1 else 0.0
    if top == 0:
        dominance = 1.0
    elif second == 0:
        dominance = math.inf
    else:
        dominance = float(top / second)
    rest = np.delete(phi, order[0], axis=1)
    residual_eps = float(np.abs(rest.sum(axis=1)).mean())
    return ImportanceReport(names, mean_abs, ranking, dominance, residual_eps)


def column_percentiles(values) -> np.ndarray:
    """Average-rank percentile in [0, 1] per entry; ties share a rank, constants map to 0.5."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) <= 1:
        return np.full(len(v), 0.5)
    return (rankdata(v, method="average") - 1.0) / (len(v) - 1.0)


@dataclass(frozen=True)
class BeeswarmRecord:
    feature: str
    phi: float
    value: float
    percentile: float


@dataclass(frozen=True)
class DependenceRecord:
    feature_value: float
    prediction: float
    phi: float


def beeswarm_data(attributions: AttributionSet, features) -> list[BeeswarmRecord]:
    """One record per (sample, feature), feature-major, colour scalar = within-column percentile."""
    rows = np.asarray(getattr(features, "rows", features), dtype=np.float64)
    if rows.shape != attributions.phi.shape:
        raise ValueError(f"feature rows {rows.shape} do not match attributions {attributions.phi.shape}")
    records = []
    for j, name in enumerate(attributions.feature_order):
        pct = column_percentiles(rows[:, j])
        for s in range(len(rows)):
            records.append(BeeswarmRecord(name, float(attributions.phi[s, j]), float(rows[s, j]), float(pct[s])))
    return records


def dependence_data(feature_name: str, attributions: AttributionSet, features, predictions=None) -> list[DependenceRecord]:
    if feature_name not in attributions.feature_order:
        raise UnknownFeature(f"unknown feature {feature_name!r}")
    j = attributions.feature_order.index(feature_name)
    rows = np.asarray(getattr(features, "rows", features), dtype=np.float64)
    preds = attributions.predictions if predictions is None else np.asarray(predictions, dtype=np.float64)
    return [DependenceRecord(float(rows[s, j]), float(preds[s]), float(attributions.phi[s, j]))
            for s in range(len(rows))]


def beeswarm_to_csv(records: list[BeeswarmRecord]) -> str:
    lines = ["feature,phi,value,percentile"]
    lines += [f"{r.feature},{r.phi!r},{r.value!r},{r.percentile!r}" for r in records]
    return "\n".join(lines) + "\n"


def dependence_to_csv(records: list[DependenceRecord]) -> str:
    lines = ["feature_value,prediction,phi"]
    lines += [f"{r.feature_value!r},{r.prediction!r},{r.phi!r}" for r in records]
    return "\n".join(lines) + "\n"
