"""Shapley attribution for tree ensembles and per-target feature selection.

The attribution semantics are interventional: the value of a coalition S is
the model's expected prediction when the features in S are taken from the
explained row and the rest are marginalized over a background dataset.

Two routes compute the same quantity. ``brute_force_shapley`` enumerates all
2^d coalitions and applies the Shapley formula directly; it is the ground
truth and refuses d > 16. ``shap_values`` computes the identical game
exactly but in polynomial time per (leaf, background row): a leaf's path
constraints split its features into A (satisfied by the row, not the
background) and B (satisfied by the background, not the row), the leaf is
dead if any feature fails both, and the Shapley value of the resulting
unanimity-style game has a closed form that depends only on |A| and |B|.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources as importlib_resources
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset, FeatureSchema
from .errors import DataError, FitError, SchemaError
from .gbtree import Ensemble, TreeNodes

BRUTE_FORCE_MAX_FEATURES = 16


@dataclass(frozen=True)
class Attribution:
    """Per-feature Shapley contributions for one prediction."""

    base_value: float
    contributions: dict[str, float]
    prediction: float

    @property
    def total(self) -> float:
        return self.base_value + sum(self.contributions.values())

    def to_dict(self) -> dict:
        return {
            "base_value": self.base_value,
            "contributions": dict(self.contributions),
            "prediction": self.prediction,
        }


def _as_matrix(background: Dataset | np.ndarray, features: Sequence[str]) -> np.ndarray:
    if isinstance(background, Dataset):
        return background.matrix(features)
    mat = np.asarray(background, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[1] != len(features):
        raise DataError(
            f"background matrix must be (n, {len(features)}), got shape {mat.shape}"
        )
    return mat


def _row_vector(row: Mapping[str, float] | np.ndarray, features: Sequence[str]) -> np.ndarray:
    if isinstance(row, Mapping):
        missing = [f for f in features if f not in row]
        if missing:
            raise SchemaError(f"missing feature {missing[0]!r} in explanation input")
        return np.asarray([float(row[f]) for f in features])
    vec = np.asarray(row, dtype=np.float64).ravel()
    if vec.shape[0] != len(features):
        raise DataError(f"row has {vec.shape[0]} values, model expects {len(features)}")
    return vec


class TreeShapExplainer:
    """Reusable exact interventional explainer for one ensemble.

    Path extraction and the background pass/fail table are computed once at
    construction, so explaining many rows against a fixed background only
    pays the per-row work.
    """

    def __init__(self, model: Ensemble, background: Dataset | np.ndarray):
        self.model = model
        self.features = model.features
        self.background = _as_matrix(background, self.features)
        if self.background.shape[0] == 0:
            raise DataError("background must contain at least one row")
        d = len(self.features)
        self._coef_plus, self._coef_minus = _shapley_coefficients(d)
        self._trees = [_TreePaths(t, self.background) for t in model.trees]
        self.base_value = float(model.predict_matrix(self.background).mean())

    def attribute(self, row: Mapping[str, float] | np.ndarray) -> Attribution:
        x = _row_vector(row, self.features)
        d = len(self.features)
        phi = np.zeros(d)
        n_bg = self.background.shape[0]
        for paths in self._trees:
            if paths.n_constraints == 0:
                continue  # single-leaf tree contributes only to the base value
            phi += paths.accumulate(x, self._coef_plus, self._coef_minus) / n_bg
        prediction = float(self.model.predict_matrix(x[None, :])[0])
        contributions = {f: float(v) for f, v in zip(self.features, phi)}
        return Attribution(
            base_value=self.base_value,
            contributions=contributions,
            prediction=prediction,
        )


class _TreePaths:
    """CSR layout of one tree's leaves as per-feature interval constraints."""

    def __init__(self, tree: TreeNodes, background: np.ndarray):
        leaf_weights: list[float] = []
        cons_feature: list[int] = []
        cons_lo: list[float] = []
        cons_hi: list[float] = []
        leaf_ptr: list[int] = [0]

        def walk(node: int, bounds: dict[int, tuple[float, float]]):
            f = int(tree.feature[node])
            if f < 0:
                leaf_weights.append(float(tree.weight[node]))
                for feat, (lo, hi) in bounds.items():
                    cons_feature.append(feat)
                    cons_lo.append(lo)
                    cons_hi.append(hi)
                leaf_ptr.append(len(cons_feature))
                return
            thr = float(tree.threshold[node])
            lo, hi = bounds.get(f, (-math.inf, math.inf))
            left_bounds = dict(bounds)
            left_bounds[f] = (lo, min(hi, thr))
            walk(int(tree.left[node]), left_bounds)
            right_bounds = dict(bounds)
            right_bounds[f] = (max(lo, thr), hi)
            walk(int(tree.right[node]), right_bounds)

        walk(0, {})
        self.weight = np.asarray(leaf_weights)
        self.feature = np.asarray(cons_feature, dtype=np.intp)
        self.lo = np.asarray(cons_lo)
        self.hi = np.asarray(cons_hi)
        self.ptr = np.asarray(leaf_ptr, dtype=np.intp)
        self.n_constraints = self.feature.shape[0]
        if self.n_constraints:
            bg_vals = background[:, self.feature]  # (n_bg, C)
            self.z_pass = ((bg_vals >= self.lo) & (bg_vals < self.hi)).T  # (C, n_bg)
            self.leaf_of = np.repeat(
                np.arange(self.weight.shape[0]), np.diff(self.ptr)
            )

    def accumulate(self, x: np.ndarray, coef_plus: np.ndarray, coef_minus: np.ndarray) -> np.ndarray:
        xv = x[self.feature]
        x_pass = (xv >= self.lo) & (xv < self.hi)  # (C,)
        a_mask = x_pass[:, None] & ~self.z_pass  # (C, n_bg)
        b_mask = ~x_pass[:, None] & self.z_pass
        dead = ~x_pass[:, None] & ~self.z_pass

        starts = self.ptr[:-1]
        a_cnt = np.add.reduceat(a_mask, starts, axis=0)  # (L, n_bg)
        b_cnt = np.add.reduceat(b_mask, starts, axis=0)
        alive = ~np.add.reduceat(dead, starts, axis=0).astype(bool)

        plus = coef_plus[a_cnt, b_cnt]
        minus = coef_minus[a_cnt, b_cnt]
        scale = self.weight[:, None] * alive  # (L, n_bg)
        per_constraint = (
            a_mask * (plus * scale)[self.leaf_of]
            - b_mask * (minus * scale)[self.leaf_of]
        ).sum(axis=1)

        d = coef_plus.shape[0] - 1
        phi = np.zeros(d)
        np.add.at(phi, self.feature, per_constraint)
        return phi


def _shapley_coefficients(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form Shapley weights of the game u(S) = [A subset of S, B disjoint S].

    For |A| = a >= 1, |B| = b, free players f = d - a - b:
        plus[a, b]  = sum_t C(f, t) (a-1+t)! (d-a-t)! / d!   (phi of i in A)
        minus[a, b] = sum_t C(f, t) (a+t)! (d-a-t-1)! / d!   (-phi of i in B)
    """
    fact = [math.factorial(k) for k in range(d + 1)]
    plus = np.zeros((d + 1, d + 1))
    minus = np.zeros((d + 1, d + 1))
    for a in range(d + 1):
        for b in range(d + 1 - a):
            free = d - a - b
            if a >= 1:
                s = 0.0
                for t in range(free + 1):
                    s += math.comb(free, t) * fact[a - 1 + t] * fact[d - a - t] / fact[d]
                plus[a, b] = s
            if b >= 1:
                s = 0.0
                for t in range(free + 1):
                    s += math.comb(free, t) * fact[a + t] * fact[d - a - t - 1] / fact[d]
                minus[a, b] = s
    return plus, minus


def shap_values(
    model: Ensemble,
    row: Mapping[str, float] | np.ndarray,
    background: Dataset | np.ndarray,
) -> Attribution:
    """Exact interventional Shapley attribution of one prediction."""
    return TreeShapExplainer(model, background).attribute(row)


def brute_force_shapley(
    model: Ensemble,
    row: Mapping[str, float] | np.ndarray,
    background: Dataset | np.ndarray,
) -> Attribution:
    """Ground-truth Shapley values by full coalition enumeration.

    Cost grows as 2^d background-sized predictions; refuses more than
    16 features.
    """
    features = model.features
    d = len(features)
    if d > BRUTE_FORCE_MAX_FEATURES:
        raise FitError(
            f"brute force enumeration refuses {d} features (limit {BRUTE_FORCE_MAX_FEATURES})"
        )
    bg = _as_matrix(background, features)
    if bg.shape[0] == 0:
        raise DataError("background must contain at least one row")
    x = _row_vector(row, features)

    values = np.empty(1 << d)
    for mask in range(1 << d):
        hybrid = bg.copy()
        for j in range(d):
            if mask >> j & 1:
                hybrid[:, j] = x[j]
        values[mask] = model.predict_matrix(hybrid).mean()

    fact = [math.factorial(k) for k in range(d + 1)]
    phi = np.zeros(d)
    for mask in range(1 << d):
        s = bin(mask).count("1")
        w = fact[s] * fact[d - s - 1] / fact[d]
        for j in range(d):
            if not mask >> j & 1:
                phi[j] += w * (values[mask | (1 << j)] - values[mask])
    prediction = float(model.predict_matrix(x[None, :])[0])
    return Attribution(
        base_value=float(values[0]),
        contributions={f: float(v) for f, v in zip(features, phi)},
        prediction=prediction,
    )


def rank_features(
    model: Ensemble,
    data: Dataset | np.ndarray,
    background: Dataset | np.ndarray,
) -> list[tuple[str, float]]:
    """Features sorted by mean |phi| over the rows of ``data``, descending.

    Ties keep the model's feature order.
    """
    rows = _as_matrix(data, model.features)
    if rows.shape[0] == 0:
        raise DataError("rank_features needs at least one row")
    explainer = TreeShapExplainer(model, background)
    mass = np.zeros(len(model.features))
    for i in range(rows.shape[0]):
        attr = explainer.attribute(rows[i])
        mass += np.abs([attr.contributions[f] for f in model.features])
    mass /= rows.shape[0]
    order = sorted(range(len(model.features)), key=lambda j: (-mass[j], j))
    return [(model.features[j], float(mass[j])) for j in order]


@dataclass(frozen=True)
class FeatureSelection:
    """Partition of the input columns into included and excluded sets."""

    target: str
    included: tuple[str, ...]
    excluded: tuple[str, ...]
    policy: str

    def __post_init__(self) -> None:
        overlap = set(self.included) & set(self.excluded)
        if overlap:
            raise SchemaError(f"features both included and excluded: {sorted(overlap)}")

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "included": list(self.included),
            "excluded": list(self.excluded),
            "policy": self.policy,
        }

    @staticmethod
    def from_dict(doc: dict) -> "FeatureSelection":
        return FeatureSelection(
            target=doc["target"],
            included=tuple(doc["included"]),
            excluded=tuple(doc["excluded"]),
            policy=doc["policy"],
        )


def select_features(
    ranking: Sequence[tuple[str, float]],
    policy: Mapping,
    target: str = "",
) -> FeatureSelection:
    """Apply a selection policy to an importance ranking.

    Policies: {"kind": "fixed-list", "excluded": [...]} drops an explicit
    list; {"kind": "bottom-k", "k": n} drops the n lowest-importance
    features; {"kind": "threshold", "fraction": f} drops features whose
    mean |phi| is below f times the total importance mass.
    """
    names = [name for name, _ in ranking]
    kind = policy.get("kind")
    if kind == "fixed-list":
        excluded = list(policy["excluded"])
        unknown = [e for e in excluded if e not in names]
        if unknown:
            raise SchemaError(f"fixed-list names unknown column {unknown[0]!r}")
        included = [n for n in names if n not in excluded]
    elif kind == "bottom-k":
        k = int(policy["k"])
        if k < 0:
            raise SchemaError("bottom-k requires k >= 0")
        worst = [name for name, _ in sorted(ranking, key=lambda p: p[1])[:k]]
        excluded = [n for n in names if n in worst]
        included = [n for n in names if n not in worst]
    elif kind == "threshold":
        fraction = float(policy["fraction"])
        total = sum(v for _, v in ranking)
        cut = fraction * total
        excluded = [n for n, v in ranking if v < cut]
        included = [n for n, v in ranking if v >= cut]
    else:
        raise SchemaError(f"unknown selection policy kind {kind!r}")
    if not included:
        raise SchemaError(f"selection policy excluded every feature for {target!r}")
    return FeatureSelection(
        target=target,
        included=tuple(included),
        excluded=tuple(excluded),
        policy=str(kind),
    )


def default_selections(schema: FeatureSchema | None = None) -> dict[str, FeatureSelection]:
    """The shipped per-target fixed-list selections over the 17 UHPC inputs."""
    from .data import uhpc_schema

    schema = schema or uhpc_schema()
    text = (
        importlib_resources.files("mixforge.resources")
        .joinpath("uhpc_feature_selections_v1.json")
        .read_text(encoding="utf-8")
    )
    doc = json.loads(text)
    inputs = schema.input_names
    out: dict[str, FeatureSelection] = {}
    for target, entry in doc["selections"].items():
        ranking = [(name, 0.0) for name in inputs]
        out[target] = select_features(
            ranking, {"kind": "fixed-list", "excluded": entry["excluded"]}, target=target
        )
    return out
