"""Histogram-binned gradient-boosted regression trees.

Squared-error objective with second-order boosting: per round the gradient
is (y_hat - y) and the hessian is 1. Candidate splits come from per-feature
equal-frequency quantile histograms computed once on the training set; the
split score is the regularized gain

    0.5 * [S(G_L)^2/(H_L+l2) + S(G_R)^2/(H_R+l2) - S(G)^2/(H+l2)] - gamma

with the L1 soft-threshold S(G) = sign(G) * max(|G| - l1, 0), and the leaf
weight is -S(G)/(H+l2) scaled by the learning rate (weights are stored
post-scaling, so prediction is a pure sum). Ties in gain break toward the
lower feature index, then the lower bin index, which makes training fully
deterministic for a fixed (data, config, seed).

The per-tree growth kernel is JIT-compiled with numba: the tuning loop of
the surrounding pipeline fits thousands of ensembles, and a pure-Python
builder would be orders of magnitude too slow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numba import njit

from .data import Dataset
from .errors import FitError, SchemaError

MAX_BIN_HARD_CAP = 60000  # bin indices are stored as uint16


@dataclass(frozen=True)
class GbtConfig:
    """Hyperparameters of the boosted-tree learner.

    The documented tuning ranges (learning_rate 0.01-0.3, max_depth 2-20,
    subsample 0.5-1, colsample_bytree 0.5-1, lambda_l1/l2 0.05-1, max_bin
    10-2000, min_child_weight 1-10, gamma 0-0.9) live in the search space;
    validation here only rejects values that are mathematically unusable,
    so reference configurations such as an unregularized stump remain
    expressible.
    """

    learning_rate: float = 0.1
    max_depth: int = 6
    subsample: float = 1.0
    colsample_bytree: float = 1.0
    lambda_l1: float = 0.05
    lambda_l2: float = 0.05
    max_bin: int = 256
    min_child_weight: float = 1.0
    gamma: float = 0.0
    n_rounds: int = 500
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.learning_rate > 0.0:
            raise FitError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.max_depth < 1:
            raise FitError(f"max_depth must be at least 1, got {self.max_depth}")
        if not 0.0 < self.subsample <= 1.0:
            raise FitError(f"subsample must be in (0, 1], got {self.subsample}")
        if not 0.0 < self.colsample_bytree <= 1.0:
            raise FitError(f"colsample_bytree must be in (0, 1], got {self.colsample_bytree}")
        if self.lambda_l1 < 0.0 or self.lambda_l2 < 0.0:
            raise FitError("lambda_l1 and lambda_l2 must be non-negative")
        if not 2 <= self.max_bin <= MAX_BIN_HARD_CAP:
            raise FitError(f"max_bin must be in [2, {MAX_BIN_HARD_CAP}], got {self.max_bin}")
        if self.min_child_weight < 0.0:
            raise FitError("min_child_weight must be non-negative")
        if self.gamma < 0.0:
            raise FitError("gamma must be non-negative")
        if self.n_rounds < 1:
            raise FitError(f"n_rounds must be at least 1, got {self.n_rounds}")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "max_depth": self.max_depth,
            "subsample": self.subsample,
            "colsample_bytree": self.colsample_bytree,
            "lambda_l1": self.lambda_l1,
            "lambda_l2": self.lambda_l2,
            "max_bin": self.max_bin,
            "min_child_weight": self.min_child_weight,
            "gamma": self.gamma,
            "n_rounds": self.n_rounds,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(doc: dict) -> "GbtConfig":
        return GbtConfig(
            learning_rate=float(doc["learning_rate"]),
            max_depth=int(doc["max_depth"]),
            subsample=float(doc["subsample"]),
            colsample_bytree=float(doc["colsample_bytree"]),
            lambda_l1=float(doc["lambda_l1"]),
            lambda_l2=float(doc["lambda_l2"]),
            max_bin=int(doc["max_bin"]),
            min_child_weight=float(doc["min_child_weight"]),
            gamma=float(doc["gamma"]),
            n_rounds=int(doc["n_rounds"]),
            seed=int(doc["seed"]),
        )


def soft_threshold(g: float, lambda_l1: float) -> float:
    """L1 soft-threshold S(G): shrink toward zero, dead zone |G| <= l1."""
    if g > lambda_l1:
        return g - lambda_l1
    if g < -lambda_l1:
        return g + lambda_l1
    return 0.0


def leaf_weight(g: float, h: float, lambda_l1: float, lambda_l2: float) -> float:
    """Regularized leaf solution -S(G)/(H + l2) (unscaled)."""
    if h < 0.0:
        raise FitError("hessian sum must be non-negative")
    return -soft_threshold(g, lambda_l1) / (h + lambda_l2)


def split_gain(
    g_left: float,
    h_left: float,
    g_right: float,
    h_right: float,
    lambda_l1: float,
    lambda_l2: float,
    gamma: float,
) -> float:
    """Gain of splitting a node with children stats (G_L, H_L), (G_R, H_R)."""
    if h_left < 0.0 or h_right < 0.0:
        raise FitError("hessian sums must be non-negative")
    g_tot = g_left + g_right
    h_tot = h_left + h_right

    def term(g: float, h: float) -> float:
        s = soft_threshold(g, lambda_l1)
        return s * s / (h + lambda_l2)

    return 0.5 * (term(g_left, h_left) + term(g_right, h_right) - term(g_tot, h_tot)) - gamma


@dataclass(frozen=True)
class TreeNodes:
    """One regression tree as parallel node arrays (node 0 is the root).

    ``feature[i] < 0`` marks a leaf; leaves carry the learning-rate-scaled
    weight. Routing is strict: go left when x[feature] < threshold.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    weight: np.ndarray

    def __post_init__(self) -> None:
        for arr in (self.feature, self.threshold, self.left, self.right, self.weight):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def depth(self) -> int:
        def walk(i: int) -> int:
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(int(self.left[i])), walk(int(self.right[i])))

        return walk(0)

    def to_dict(self) -> dict:
        return {
            "feature": [int(v) for v in self.feature],
            "threshold": [float(v) for v in self.threshold],
            "left": [int(v) for v in self.left],
            "right": [int(v) for v in self.right],
            "weight": [float(v) for v in self.weight],
        }

    @staticmethod
    def from_dict(doc: dict) -> "TreeNodes":
        return TreeNodes(
            feature=np.asarray(doc["feature"], dtype=np.int32),
            threshold=np.asarray(doc["threshold"], dtype=np.float64),
            left=np.asarray(doc["left"], dtype=np.int32),
            right=np.asarray(doc["right"], dtype=np.int32),
            weight=np.asarray(doc["weight"], dtype=np.float64),
        )


@dataclass
class Ensemble:
    """Fitted boosted-tree model: base score plus a sum of scaled leaf weights."""

    base_score: float
    trees: list[TreeNodes]
    features: tuple[str, ...]
    config: GbtConfig
    target: str = ""
    _packed: tuple | None = field(default=None, repr=False, compare=False)

    def predict_matrix(self, x: np.ndarray) -> np.ndarray:
        """Predict rows of an (n, len(features)) matrix in feature order."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != len(self.features):
            raise SchemaError(
                f"expected matrix with {len(self.features)} columns, got shape {x.shape}"
            )
        if not self.trees:
            return np.full(x.shape[0], self.base_score)
        feats, thrs, lefts, rights, weights, ptr = self._pack()
        out = np.empty(x.shape[0])
        _predict_kernel(x, feats, thrs, lefts, rights, weights, ptr, out)
        return out + self.base_score

    def predict(self, row: Mapping[str, float]) -> float:
        """Predict one row given by feature name; missing features are errors."""
        values = []
        for name in self.features:
            if name not in row:
                raise SchemaError(f"missing feature {name!r} in prediction input")
            values.append(float(row[name]))
        return float(self.predict_matrix(np.asarray([values]))[0])

    def _pack(self) -> tuple:
        if self._packed is None:
            ptr = np.zeros(len(self.trees) + 1, dtype=np.int64)
            for i, t in enumerate(self.trees):
                ptr[i + 1] = ptr[i] + t.n_nodes
            feats = np.concatenate([t.feature for t in self.trees])
            thrs = np.concatenate([t.threshold for t in self.trees])
            lefts = np.concatenate([t.left for t in self.trees])
            rights = np.concatenate([t.right for t in self.trees])
            weights = np.concatenate([t.weight for t in self.trees])
            self._packed = (feats, thrs, lefts, rights, weights, ptr)
        return self._packed

    def max_depth(self) -> int:
        return max((t.depth() for t in self.trees), default=0)

    def to_dict(self) -> dict:
        return {
            "base_score": self.base_score,
            "features": list(self.features),
            "target": self.target,
            "config": self.config.to_dict(),
            "trees": [t.to_dict() for t in self.trees],
        }

    @staticmethod
    def from_dict(doc: dict) -> "Ensemble":
        return Ensemble(
            base_score=float(doc["base_score"]),
            trees=[TreeNodes.from_dict(t) for t in doc["trees"]],
            features=tuple(doc["features"]),
            config=GbtConfig.from_dict(doc["config"]),
            target=doc.get("target", ""),
        )


def fit(
    train: Dataset,
    target: str,
    config: GbtConfig,
    features: Sequence[str] | None = None,
) -> Ensemble:
    """Fit a boosted ensemble predicting ``target`` from ``features``."""
    if features is None:
        features = train.schema.input_names
    features = list(features)
    if not features:
        raise FitError("feature set is empty")
    if target in features:
        raise FitError(f"target {target!r} cannot be a feature")
    x = train.matrix(features)
    y = train.column(target)
    model = fit_matrix(x, y, config)
    model.features = tuple(features)
    model.target = target
    return model


def fit_matrix(x: np.ndarray, y: np.ndarray, config: GbtConfig) -> Ensemble:
    """Fit on a raw (n, d) matrix; feature names default to column indices."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n, d = x.shape
    if n < 2:
        raise FitError(f"need at least 2 training rows, got {n}")
    if d < 1:
        raise FitError("feature set is empty")

    bins, edges = _make_bins(x, config.max_bin)
    bins_t = np.ascontiguousarray(bins.T)  # (d, n): per-feature rows are contiguous
    order = np.empty((d, n), dtype=np.int32)
    for j in range(d):
        order[j] = np.argsort(bins_t[j], kind="stable").astype(np.int32)

    # padded (d, max_edges) matrix of bin edges for threshold lookup
    max_edges = max((e.size for e in edges), default=0)
    edge_mat = np.zeros((d, max(max_edges, 1)))
    for j, e in enumerate(edges):
        edge_mat[j, : e.size] = e

    base_score = float(y.mean())
    y_hat = np.full(n, base_score)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(config.seed, 0x6B7)))

    n_sampled = max(1, int(round(config.subsample * n)))
    n_feats = max(1, int(round(config.colsample_bytree * d)))

    cap = 4 * n + 3
    node_feature = np.empty(cap, dtype=np.int32)
    node_bin = np.empty(cap, dtype=np.int32)
    node_left = np.empty(cap, dtype=np.int32)
    node_right = np.empty(cap, dtype=np.int32)
    node_weight = np.empty(cap, dtype=np.float64)
    node_of_row = np.empty(n, dtype=np.int32)
    ws_a = np.empty((d, n), dtype=np.int32)
    ws_b = np.empty((d, n), dtype=np.int32)

    trees: list[TreeNodes] = []
    for _ in range(config.n_rounds):
        g = y_hat - y
        if config.subsample < 1.0:
            sampled = np.zeros(n, dtype=np.bool_)
            sampled[rng.choice(n, size=n_sampled, replace=False)] = True
            round_sampled = n_sampled
        else:
            sampled = np.ones(n, dtype=np.bool_)
            round_sampled = n
        if config.colsample_bytree < 1.0:
            feat_ids = np.sort(rng.choice(d, size=n_feats, replace=False)).astype(np.int64)
        else:
            feat_ids = np.arange(d, dtype=np.int64)

        node_of_row[:] = 0
        n_nodes = _grow_kernel(
            bins_t,
            order,
            g,
            sampled,
            config.max_depth,
            float(config.min_child_weight),
            config.lambda_l1,
            config.lambda_l2,
            config.gamma,
            config.learning_rate,
            feat_ids,
            round_sampled,
            node_feature,
            node_bin,
            node_left,
            node_right,
            node_weight,
            node_of_row,
            ws_a,
            ws_b,
        )
        feat_arr = node_feature[:n_nodes].copy()
        thr_arr = np.zeros(n_nodes)
        internal = feat_arr >= 0
        if internal.any():
            thr_arr[internal] = edge_mat[feat_arr[internal], node_bin[:n_nodes][internal]]
        weight_arr = np.where(internal, 0.0, node_weight[:n_nodes])
        trees.append(
            TreeNodes(
                feature=feat_arr,
                threshold=thr_arr,
                left=node_left[:n_nodes].copy(),
                right=node_right[:n_nodes].copy(),
                weight=weight_arr,
            )
        )
        y_hat += weight_arr[node_of_row]

    return Ensemble(
        base_score=base_score,
        trees=trees,
        features=tuple(str(j) for j in range(d)),
        config=config,
    )


def _make_bins(x: np.ndarray, max_bin: int) -> tuple[np.ndarray, list[np.ndarray]]:
    """Equal-frequency quantile binning; one bin per distinct value when possible.

    Returns per-row bin indices and per-feature sorted edge arrays. A value
    equal to an edge belongs to the bin on the right, matching the strict
    x < threshold routing used at prediction time.
    """
    n, d = x.shape
    bins = np.empty((n, d), dtype=np.uint16)
    edges: list[np.ndarray] = []
    for j in range(d):
        col = x[:, j]
        uniq = np.unique(col)
        if uniq.size <= 1:
            e = np.empty(0)
        elif uniq.size <= max_bin:
            e = (uniq[:-1] + uniq[1:]) / 2.0
        else:
            qs = np.quantile(col, np.arange(1, max_bin) / max_bin)
            e = np.unique(qs)
        edges.append(e)
        bins[:, j] = np.searchsorted(e, col, side="right").astype(np.uint16)
    return bins, edges


@njit(cache=True)
def _soft(g, lam1):
    if g > lam1:
        return g - lam1
    if g < -lam1:
        return g + lam1
    return 0.0


@njit(cache=True)
def _grow_kernel(
    bins_t,
    order,
    g,
    sampled,
    max_depth,
    mcw,
    lam1,
    lam2,
    gamma,
    lr,
    feat_ids,
    n_sampled,
    node_feature,
    node_bin,
    node_left,
    node_right,
    node_weight,
    node_of_row,
    ws_a,
    ws_b,
):
    """Grow one tree level-wise; returns the number of nodes created.

    Per searched feature a compacted row buffer is carried from level to
    level: it holds only the sampled rows of still-splittable nodes, grouped
    by node and bin-ascending within each group. Scatter and split scanning
    therefore touch active rows only, independent of the bin count, and the
    total work decays geometrically with depth.
    """
    n = g.shape[0]
    n_feats = feat_ids.shape[0]

    buf_prev = ws_a
    buf_cur = ws_b
    prev_len = n
    if n_sampled == n:
        for fi in range(n_feats):
            f = feat_ids[fi]
            buf_prev[f, :] = order[f, :]
    else:
        for fi in range(n_feats):
            f = feat_ids[fi]
            k = 0
            for i in range(n):
                r = order[f, i]
                if sampled[r]:
                    buf_prev[f, k] = order[f, i]
                    k += 1
            prev_len = k

    lvl_start = 0
    lvl_end = 1
    depth = 0
    node_feature[0] = -1
    node_left[0] = -1
    node_right[0] = -1
    node_weight[0] = 0.0

    # per-node gradient/hessian sums accumulate in ascending row order; the
    # root sums are seeded here and children inherit theirs from the routing
    # pass below, keeping float summation order independent of bin layouts
    G = np.zeros(1)
    H = np.zeros(1)
    for r in range(n):
        if sampled[r]:
            G[0] += g[r]
            H[0] += 1.0

    while lvl_start < lvl_end:
        m = lvl_end - lvl_start

        splittable = np.empty(m, np.bool_)
        any_splittable = False
        for a in range(m):
            ok = depth < max_depth and H[a] >= 2.0 * mcw and H[a] >= 2.0
            splittable[a] = ok
            if ok:
                any_splittable = True

        best_gain = np.zeros(m)
        best_feat = np.full(m, -1, np.int32)
        best_bin = np.full(m, -1, np.int32)
        cur_len = 0

        if any_splittable:
            offs = np.zeros(m + 1, np.int64)
            for a in range(m):
                extra = 0
                if splittable[a]:
                    extra = int(H[a])
                offs[a + 1] = offs[a] + extra
            cur_len = int(offs[m])
            pos = np.empty(m, np.int64)

            for fi in range(n_feats):
                f = feat_ids[fi]
                for a in range(m):
                    pos[a] = offs[a]
                for i in range(prev_len):
                    r = buf_prev[f, i]
                    nd = node_of_row[r]
                    if lvl_start <= nd < lvl_end:
                        a = nd - lvl_start
                        if splittable[a]:
                            buf_cur[f, pos[a]] = r
                            pos[a] += 1
                for a in range(m):
                    if not splittable[a]:
                        continue
                    s = offs[a]
                    e = offs[a + 1]
                    g_tot = G[a]
                    h_tot = H[a]
                    sp = _soft(g_tot, lam1)
                    parent_term = sp * sp / (h_tot + lam2)
                    gl = 0.0
                    hl = 0.0
                    for k in range(s, e - 1):
                        r = buf_cur[f, k]
                        gl += g[r]
                        hl += 1.0
                        b_cur = bins_t[f, r]
                        b_next = bins_t[f, buf_cur[f, k + 1]]
                        if b_cur != b_next:
                            hr = h_tot - hl
                            if hl >= mcw and hr >= mcw:
                                gr = g_tot - gl
                                sl = _soft(gl, lam1)
                                sr = _soft(gr, lam1)
                                gain = (
                                    0.5
                                    * (
                                        sl * sl / (hl + lam2)
                                        + sr * sr / (hr + lam2)
                                        - parent_term
                                    )
                                    - gamma
                                )
                                if gain > best_gain[a]:
                                    best_gain[a] = gain
                                    best_feat[a] = np.int32(f)
                                    best_bin[a] = np.int32(b_cur)

        child = lvl_end
        for a in range(m):
            nd = lvl_start + a
            if best_feat[a] >= 0:
                node_feature[nd] = best_feat[a]
                node_bin[nd] = best_bin[a]
                node_left[nd] = child
                node_right[nd] = child + 1
                node_weight[nd] = 0.0
                node_feature[child] = -1
                node_left[child] = -1
                node_right[child] = -1
                node_weight[child] = 0.0
                node_feature[child + 1] = -1
                node_left[child + 1] = -1
                node_right[child + 1] = -1
                node_weight[child + 1] = 0.0
                child += 2
            else:
                node_feature[nd] = -1
                node_left[nd] = -1
                node_right[nd] = -1
                w = 0.0
                if H[a] > 0.0:
                    w = -_soft(G[a], lam1) / (H[a] + lam2) * lr
                node_weight[nd] = w

        G_next = np.zeros(child - lvl_end)
        H_next = np.zeros(child - lvl_end)
        if child > lvl_end:
            for r in range(n):
                nd = node_of_row[r]
                if lvl_start <= nd < lvl_end:
                    a = nd - lvl_start
                    if best_feat[a] >= 0:
                        if bins_t[best_feat[a], r] <= best_bin[a]:
                            new_nd = node_left[nd]
                        else:
                            new_nd = node_right[nd]
                        node_of_row[r] = new_nd
                        if sampled[r]:
                            G_next[new_nd - lvl_end] += g[r]
                            H_next[new_nd - lvl_end] += 1.0

        G = G_next
        H = H_next
        tmp = buf_prev
        buf_prev = buf_cur
        buf_cur = tmp
        prev_len = cur_len
        lvl_start = lvl_end
        lvl_end = child
        depth += 1

    return lvl_end


@njit(cache=True)
def _predict_kernel(x, feats, thrs, lefts, rights, weights, ptr, out):
    n = x.shape[0]
    n_trees = ptr.shape[0] - 1
    for r in range(n):
        s = 0.0
        for t in range(n_trees):
            base = ptr[t]
            node = 0
            while feats[base + node] >= 0:
                if x[r, feats[base + node]] < thrs[base + node]:
                    node = lefts[base + node]
                else:
                    node = rights[base + node]
            s += weights[base + node]
        out[r] = s
