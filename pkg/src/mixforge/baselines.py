"""Pre-selection model zoo and the comparison harness.

Twelve representative learner families are implemented here (closed-form
and iterative linear models, CART-style trees and their ensembles, and two
boosting variants that reuse the gbtree learner). The harness fits each
requested kind with default or supplied parameters, evaluates the six
indicators on train and test, merges externally supplied metric rows for
families that are out of implementation scope, and ranks everything through
the shared selection rule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset
from .errors import FitError
from .gbtree import Ensemble, GbtConfig, fit_matrix
from .metrics import MetricsReport, evaluate, select_optimal
from .tune import kfold_indices


class BaselineKind(str, Enum):
    OLS_LINEAR = "ols_linear"
    RIDGE = "ridge"
    RIDGE_CV = "ridge_cv"
    LASSO = "lasso"
    DECISION_TREE = "decision_tree"
    RANDOM_FOREST = "random_forest"
    EXTRA_TREES = "extra_trees"
    BAGGING = "bagging"
    ADABOOST_R2 = "adaboost_r2"
    GRADIENT_BOOSTING = "gradient_boosting"
    LEAST_SQUARES_BOOSTING = "least_squares_boosting"
    VOTING_MEAN = "voting_mean"


# ---------------------------------------------------------------- linear ---


@dataclass
class LinearModel:
    coef: np.ndarray
    intercept: float
    features: tuple[str, ...] = ()

    def predict_matrix(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.coef + self.intercept


def fit_ols(x: np.ndarray, y: np.ndarray) -> LinearModel:
    n, d = x.shape
    design = np.column_stack([x, np.ones(n)])
    rank = np.linalg.matrix_rank(design)
    if rank < d + 1:
        raise FitError(
            "design matrix is singular; unregularized least squares has no "
            "unique solution (consider ridge)"
        )
    beta, *_ = np.linalg.lstsq(design, y, rcond=None)
    return LinearModel(coef=beta[:-1], intercept=float(beta[-1]))


def fit_ridge(x: np.ndarray, y: np.ndarray, lam: float = 1.0) -> LinearModel:
    x_mean = x.mean(axis=0)
    y_mean = float(y.mean())
    xc = x - x_mean
    yc = y - y_mean
    d = x.shape[1]
    coef = np.linalg.solve(xc.T @ xc + lam * np.eye(d), xc.T @ yc)
    return LinearModel(coef=coef, intercept=y_mean - float(x_mean @ coef))


def fit_ridge_cv(
    x: np.ndarray,
    y: np.ndarray,
    lambdas: Sequence[float] | None = None,
    k: int = 5,
    seed: int = 0,
) -> LinearModel:
    if lambdas is None:
        lambdas = np.logspace(-3, 3, 10)
    k = min(k, x.shape[0])
    folds = kfold_indices(x.shape[0], k, seed)
    best_lam = None
    best_rmse = np.inf
    for lam in lambdas:
        errs = []
        for fold in folds:
            mask = np.ones(x.shape[0], dtype=bool)
            mask[fold] = False
            model = fit_ridge(x[mask], y[mask], lam=float(lam))
            pred = model.predict_matrix(x[fold])
            errs.append(((pred - y[fold]) ** 2).sum())
        rmse = float(np.sqrt(sum(errs) / x.shape[0]))
        if rmse < best_rmse:
            best_rmse = rmse
            best_lam = float(lam)
    return fit_ridge(x, y, lam=best_lam)


def fit_lasso(
    x: np.ndarray,
    y: np.ndarray,
    lam: float = 1.0,
    tol: float = 1e-10,
    max_iter: int = 10000,
) -> LinearModel:
    """Coordinate descent on (1/2n)||y - Xb - c||^2 + lam * ||b||_1."""
    n, d = x.shape
    x_mean = x.mean(axis=0)
    y_mean = float(y.mean())
    xc = x - x_mean
    yc = y - y_mean
    col_sq = (xc * xc).sum(axis=0)
    beta = np.zeros(d)
    resid = yc.copy()
    for _ in range(max_iter):
        max_delta = 0.0
        for j in range(d):
            if col_sq[j] == 0.0:
                continue
            rho = float(xc[:, j] @ resid) + beta[j] * col_sq[j]
            thr = lam * n
            if rho > thr:
                new = (rho - thr) / col_sq[j]
            elif rho < -thr:
                new = (rho + thr) / col_sq[j]
            else:
                new = 0.0
            delta = new - beta[j]
            if delta != 0.0:
                resid -= delta * xc[:, j]
                beta[j] = new
                max_delta = max(max_delta, abs(delta))
        if max_delta < tol:
            break
    return LinearModel(coef=beta, intercept=y_mean - float(x_mean @ beta))


# ----------------------------------------------------------------- trees ---


@dataclass
class _CartNode:
    feature: int = -1
    threshold: float = 0.0
    left: "_CartNode | None" = None
    right: "_CartNode | None" = None
    value: float = 0.0


@dataclass
class CartTree:
    """Exact-split regression tree minimizing squared error."""

    max_depth: int = 25
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_features: int | None = None
    splitter: str = "best"
    seed: int = 0
    root: _CartNode | None = None
    features: tuple[str, ...] = ()

    def fit(self, x: np.ndarray, y: np.ndarray, sample_rng: np.random.Generator | None = None) -> "CartTree":
        rng = sample_rng or np.random.default_rng(self.seed)
        self.root = self._grow(x, y, np.arange(x.shape[0]), 0, rng)
        return self

    def _grow(self, x, y, rows, depth, rng) -> _CartNode:
        node = _CartNode(value=float(y[rows].mean()))
        if (
            depth >= self.max_depth
            or rows.size < self.min_samples_split
            or rows.size < 2 * self.min_samples_leaf
        ):
            return node
        d = x.shape[1]
        if self.max_features is not None and self.max_features < d:
            feats = np.sort(rng.choice(d, size=self.max_features, replace=False))
        else:
            feats = np.arange(d)
        best_gain = 0.0
        best: tuple[int, float] | None = None
        sum_tot = float(y[rows].sum())
        n_tot = rows.size
        parent_term = sum_tot * sum_tot / n_tot
        for f in feats:
            vals = x[rows, f]
            if self.splitter == "random":
                lo, hi = float(vals.min()), float(vals.max())
                if lo == hi:
                    continue
                thr = float(rng.uniform(lo, hi))
                mask = vals < thr
                nl = int(mask.sum())
                if nl < self.min_samples_leaf or n_tot - nl < self.min_samples_leaf:
                    continue
                sl = float(y[rows[mask]].sum())
                gain = sl * sl / nl + (sum_tot - sl) ** 2 / (n_tot - nl) - parent_term
                if gain > best_gain:
                    best_gain = gain
                    best = (int(f), thr)
            else:
                order = np.argsort(vals, kind="stable")
                sv = vals[order]
                sy = y[rows[order]]
                csum = np.cumsum(sy)
                for k in range(self.min_samples_leaf - 1, n_tot - self.min_samples_leaf):
                    if sv[k] == sv[k + 1]:
                        continue
                    nl = k + 1
                    sl = csum[k]
                    gain = sl * sl / nl + (sum_tot - sl) ** 2 / (n_tot - nl) - parent_term
                    if gain > best_gain:
                        best_gain = gain
                        best = (int(f), (sv[k] + sv[k + 1]) / 2.0)
        if best is None:
            return node
        f, thr = best
        mask = x[rows, f] < thr
        node.feature = f
        node.threshold = thr
        node.left = self._grow(x, y, rows[mask], depth + 1, rng)
        node.right = self._grow(x, y, rows[~mask], depth + 1, rng)
        return node

    def predict_matrix(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(x.shape[0])
        for i in range(x.shape[0]):
            node = self.root
            while node.feature >= 0:
                node = node.left if x[i, node.feature] < node.threshold else node.right
            out[i] = node.value
        return out


@dataclass
class MeanForest:
    """Average of independently grown trees (random forest, extra trees, bagging)."""

    trees: list[CartTree] = field(default_factory=list)
    features: tuple[str, ...] = ()

    def predict_matrix(self, x: np.ndarray) -> np.ndarray:
        preds = np.stack([t.predict_matrix(x) for t in self.trees])
        return preds.mean(axis=0)


def _fit_forest(
    x: np.ndarray,
    y: np.ndarray,
    n_estimators: int,
    bootstrap: bool,
    max_features: int | None,
    splitter: str,
    max_depth: int,
    min_samples_leaf: int,
    seed: int,
) -> MeanForest:
    n = x.shape[0]
    root = np.random.SeedSequence(entropy=(seed, 0xF02E57))
    forest = MeanForest()
    for t, child in enumerate(root.spawn(n_estimators)):
        rng = np.random.default_rng(child)
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        tree = CartTree(
            max_depth=max_depth,
            min_samples_leaf=min_samples_leaf,
            max_features=max_features,
            splitter=splitter,
        )
        tree.fit(x[rows], y[rows], sample_rng=rng)
        forest.trees.append(tree)
    return forest


@dataclass
class AdaBoostR2:
    """AdaBoost.R2 with linear loss and weighted-median aggregation."""

    estimators: list[CartTree] = field(default_factory=list)
    log_inv_beta: list[float] = field(default_factory=list)
    features: tuple[str, ...] = ()

    def predict_matrix(self, x: np.ndarray) -> np.ndarray:
        preds = np.stack([t.predict_matrix(x) for t in self.estimators])  # (T, n)
        w = np.asarray(self.log_inv_beta)
        out = np.empty(x.shape[0])
        for i in range(x.shape[0]):
            order = np.argsort(preds[:, i], kind="stable")
            cum = np.cumsum(w[order])
            j = int(np.searchsorted(cum, 0.5 * cum[-1]))
            out[i] = preds[order[j], i]
        return out


def fit_adaboost_r2(
    x: np.ndarray,
    y: np.ndarray,
    n_estimators: int = 50,
    max_depth: int = 3,
    seed: int = 0,
) -> AdaBoostR2:
    n = x.shape[0]
    weights = np.full(n, 1.0 / n)
    model = AdaBoostR2()
    root = np.random.SeedSequence(entropy=(seed, 0xADAB))
    for child in root.spawn(n_estimators):
        rng = np.random.default_rng(child)
        rows = rng.choice(n, size=n, replace=True, p=weights)
        tree = CartTree(max_depth=max_depth).fit(x[rows], y[rows])
        pred = tree.predict_matrix(x)
        abs_err = np.abs(pred - y)
        max_err = abs_err.max()
        if max_err <= 0:
            model.estimators.append(tree)
            model.log_inv_beta.append(1.0)
            break
        loss = abs_err / max_err
        avg_loss = float((loss * weights).sum())
        if avg_loss >= 0.5:
            if not model.estimators:
                model.estimators.append(tree)
                model.log_inv_beta.append(1e-3)
            break
        beta = avg_loss / (1.0 - avg_loss)
        weights = weights * beta ** (1.0 - loss)
        weights = weights / weights.sum()
        model.estimators.append(tree)
        model.log_inv_beta.append(float(np.log(1.0 / beta)))
    return model


@dataclass
class VotingMean:
    members: list = field(default_factory=list)
    features: tuple[str, ...] = ()

    def predict_matrix(self, x: np.ndarray) -> np.ndarray:
        preds = np.stack([m.predict_matrix(x) for m in self.members])
        return preds.mean(axis=0)


@dataclass
class GbtBaseline:
    ensemble: Ensemble
    features: tuple[str, ...] = ()

    def predict_matrix(self, x: np.ndarray) -> np.ndarray:
        return self.ensemble.predict_matrix(x)


# --------------------------------------------------------------- harness ---


def fit_baseline(
    kind: BaselineKind | str,
    train: Dataset,
    target: str,
    params: Mapping | None = None,
    seed: int = 0,
    features: Sequence[str] | None = None,
):
    """Fit one baseline kind; returns a model exposing predict_matrix."""
    kind = BaselineKind(kind)
    params = dict(params or {})
    features = list(features) if features is not None else train.schema.input_names
    x = train.matrix(features)
    y = train.column(target)

    if kind is BaselineKind.OLS_LINEAR:
        model = fit_ols(x, y)
    elif kind is BaselineKind.RIDGE:
        model = fit_ridge(x, y, lam=params.get("lam", 1.0))
    elif kind is BaselineKind.RIDGE_CV:
        model = fit_ridge_cv(x, y, lambdas=params.get("lambdas"), seed=seed)
    elif kind is BaselineKind.LASSO:
        model = fit_lasso(x, y, lam=params.get("lam", 1.0))
    elif kind is BaselineKind.DECISION_TREE:
        model = CartTree(
            max_depth=params.get("max_depth", 25),
            min_samples_leaf=params.get("min_samples_leaf", 1),
            seed=seed,
        ).fit(x, y)
    elif kind is BaselineKind.RANDOM_FOREST:
        model = _fit_forest(
            x, y,
            n_estimators=params.get("n_estimators", 100),
            bootstrap=params.get("bootstrap", True),
            max_features=params.get("max_features", max(1, x.shape[1] // 3)),
            splitter="best",
            max_depth=params.get("max_depth", 25),
            min_samples_leaf=params.get("min_samples_leaf", 1),
            seed=seed,
        )
    elif kind is BaselineKind.EXTRA_TREES:
        model = _fit_forest(
            x, y,
            n_estimators=params.get("n_estimators", 100),
            bootstrap=params.get("bootstrap", False),
            max_features=params.get("max_features"),
            splitter="random",
            max_depth=params.get("max_depth", 25),
            min_samples_leaf=params.get("min_samples_leaf", 1),
            seed=seed,
        )
    elif kind is BaselineKind.BAGGING:
        model = _fit_forest(
            x, y,
            n_estimators=params.get("n_estimators", 10),
            bootstrap=params.get("bootstrap", True),
            max_features=None,
            splitter="best",
            max_depth=params.get("max_depth", 25),
            min_samples_leaf=params.get("min_samples_leaf", 1),
            seed=seed,
        )
    elif kind is BaselineKind.ADABOOST_R2:
        model = fit_adaboost_r2(
            x, y,
            n_estimators=params.get("n_estimators", 50),
            max_depth=params.get("max_depth", 3),
            seed=seed,
        )
    elif kind is BaselineKind.GRADIENT_BOOSTING:
        cfg = GbtConfig(
            learning_rate=params.get("learning_rate", 0.1),
            max_depth=params.get("max_depth", 3),
            lambda_l1=params.get("lambda_l1", 0.0),
            lambda_l2=params.get("lambda_l2", 1.0),
            n_rounds=params.get("n_rounds", 100),
            seed=seed,
        )
        model = GbtBaseline(ensemble=fit_matrix(x, y, cfg))
    elif kind is BaselineKind.LEAST_SQUARES_BOOSTING:
        cfg = GbtConfig(
            learning_rate=params.get("learning_rate", 0.1),
            max_depth=params.get("max_depth", 3),
            lambda_l1=0.0,
            lambda_l2=0.0,
            gamma=0.0,
            n_rounds=params.get("n_rounds", 100),
            seed=seed,
        )
        model = GbtBaseline(ensemble=fit_matrix(x, y, cfg))
    elif kind is BaselineKind.VOTING_MEAN:
        member_specs = params.get(
            "members",
            [
                ("decision_tree", {"max_depth": 8}),
                ("ridge", {}),
                ("random_forest", {"n_estimators": 20}),
            ],
        )
        members = [
            fit_baseline(mk, train, target, mp, seed=seed + i, features=features)
            for i, (mk, mp) in enumerate(member_specs)
        ]
        model = VotingMean(members=members)
    else:  # pragma: no cover - enum is exhaustive
        raise FitError(f"unsupported baseline kind {kind}")

    model.features = tuple(features)
    return model


@dataclass(frozen=True)
class PreselectRow:
    label: str
    source: str  # fitted | external | failed
    train: MetricsReport | None
    test: MetricsReport | None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "source": self.source,
            "train": self.train.to_dict() if self.train else None,
            "test": self.test.to_dict() if self.test else None,
            "error": self.error,
        }


@dataclass(frozen=True)
class PreselectReport:
    rows: tuple[PreselectRow, ...]
    ranked: tuple[str, ...]
    passing: tuple[str, ...]
    gate: tuple[float, float]

    def to_json(self) -> str:
        return json.dumps(
            {
                "gate": {"rmse_max": self.gate[0], "r2_min": self.gate[1]},
                "ranked": list(self.ranked),
                "passing": list(self.passing),
                "rows": [r.to_dict() for r in self.rows],
            },
            indent=2,
            sort_keys=True,
        )

    def to_csv(self) -> str:
        cols = ["mae", "pmae_percent", "mse", "rmse", "maxae", "r2"]
        header = ["label", "source"]
        header += [f"train_{c}" for c in cols] + [f"test_{c}" for c in cols]
        lines = [",".join(header)]
        for row in self.rows:
            cells = [row.label, row.source]
            for rep in (row.train, row.test):
                if rep is None:
                    cells += [""] * len(cols)
                else:
                    doc = rep.to_dict()
                    cells += ["" if doc[c] is None else repr(doc[c]) for c in cols]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def preselect(
    train: Dataset,
    test: Dataset,
    target: str,
    kinds: Sequence[BaselineKind | str] | None = None,
    gate: tuple[float, float] = (30.0, 0.18),
    params: Mapping[str, Mapping] | None = None,
    seed: int = 0,
    external_rows: Mapping[str, Mapping] | None = None,
    features: Sequence[str] | None = None,
) -> PreselectReport:
    """Fit every kind, evaluate train/test, merge external rows, rank and gate.

    A kind whose fit raises is recorded as failed rather than aborting the
    run. ``external_rows`` maps label -> {"train": metrics dict | None,
    "test": metrics dict} for families supplied from outside.
    """
    if kinds is None:
        kinds = list(BaselineKind)
    if not kinds and not external_rows:
        raise FitError("preselect needs at least one kind or external row")
    params = params or {}
    features = list(features) if features is not None else train.schema.input_names
    x_train = train.matrix(features)
    y_train = train.column(target)
    x_test = test.matrix(features)
    y_test = test.column(target)

    rows: list[PreselectRow] = []
    for kind in kinds:
        label = BaselineKind(kind).value
        try:
            model = fit_baseline(kind, train, target, params.get(label), seed=seed, features=features)
            rep_train = evaluate(y_train, model.predict_matrix(x_train))
            rep_test = evaluate(y_test, model.predict_matrix(x_test))
            rows.append(PreselectRow(label, "fitted", rep_train, rep_test))
        except FitError as exc:
            rows.append(PreselectRow(label, "failed", None, None, error=str(exc)))

    for label, entry in (external_rows or {}).items():
        rep_train = MetricsReport.from_dict(entry["train"]) if entry.get("train") else None
        rep_test = MetricsReport.from_dict(entry["test"])
        rows.append(PreselectRow(label, "external", rep_train, rep_test))

    scored = [(r.label, r.train, r.test) for r in rows if r.test is not None]
    result = select_optimal(scored, rmse_max=gate[0], r2_min=gate[1])
    return PreselectReport(
        rows=tuple(rows), ranked=result.ranked, passing=result.passing, gate=gate
    )


def load_reference_rows() -> dict[str, dict]:
    """Published 21-learner comparison metrics shipped with the package."""
    from importlib import resources as importlib_resources

    text = (
        importlib_resources.files("mixforge.resources")
        .joinpath("uhpc_preselection_reference_v1.json")
        .read_text(encoding="utf-8")
    )
    doc = json.loads(text)
    cols = doc["metric_columns"]
    out: dict[str, dict] = {}
    for row in doc["rows"]:
        entry: dict = {}
        for split_name in ("train", "test"):
            vals = row.get(split_name)
            if vals is None:
                entry[split_name] = None
                continue
            rep = {c: v for c, v in zip(cols, vals)}
            rep["m"] = 0
            rep["pmae_skipped"] = 0
            entry[split_name] = rep
        out[row["label"]] = entry
    return out
