"""Correlation analysis, multicollinearity pruning, and outlier filtering.

The outlier detector is an isolation forest built from scratch: an ensemble
of random binary partition trees over uniformly drawn subsamples. Points
that isolate in fewer splits than the average unsuccessful-search depth of
a binary tree receive scores near 1 and are removed first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Dataset
from .errors import DataError, FitError

EULER_GAMMA = 0.5772156649


@dataclass(frozen=True)
class CorrelationMatrix:
    """Pairwise Pearson correlations with explicit undefined-entry tracking.

    ``defined[i, j]`` is False when either column has zero variance; the
    corresponding ``values`` entry is 0 and must not be interpreted.
    """

    labels: tuple[str, ...]
    values: np.ndarray
    defined: np.ndarray

    def pair(self, a: str, b: str) -> float:
        i, j = self.labels.index(a), self.labels.index(b)
        if not self.defined[i, j]:
            raise DataError(f"correlation between {a!r} and {b!r} is undefined")
        return float(self.values[i, j])

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "values": [[float(v) for v in row] for row in self.values],
            "defined": [[bool(v) for v in row] for row in self.defined],
        }

    def to_csv(self) -> str:
        """Square matrix with a label header row/column; undefined cells empty."""

        def q(label: str) -> str:
            return '"' + label.replace('"', '""') + '"' if "," in label or '"' in label else label

        lines = ["," + ",".join(q(l) for l in self.labels)]
        for i, label in enumerate(self.labels):
            cells = [q(label)]
            for j in range(len(self.labels)):
                cells.append(repr(float(self.values[i, j])) if self.defined[i, j] else "")
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def correlation_matrix(data: Dataset, columns: Sequence[str] | None = None) -> CorrelationMatrix:
    """Pearson r for every pair of the given (default: input) columns."""
    if columns is None:
        columns = data.schema.input_names
    if len(columns) < 2:
        raise DataError("correlation needs at least 2 columns")
    if data.n < 3:
        raise DataError(f"correlation needs at least 3 rows, got {data.n}")
    mat = data.matrix(columns)
    centered = mat - mat.mean(axis=0)
    norms = np.sqrt((centered * centered).sum(axis=0))
    ok = norms > 0.0
    d = len(columns)
    values = np.zeros((d, d))
    scaled = np.where(ok, norms, 1.0)
    unit = centered / scaled
    values = unit.T @ unit
    defined = np.outer(ok, ok)
    values[~defined] = 0.0
    np.fill_diagonal(values, np.where(ok, 1.0, 0.0))
    np.clip(values, -1.0, 1.0, out=values)
    return CorrelationMatrix(labels=tuple(columns), values=values, defined=defined)


@dataclass(frozen=True)
class PruneAudit:
    dropped: str
    partner: str
    correlation: float
    reason: str


def prune_multicollinear(
    corr: CorrelationMatrix,
    threshold: float = 0.7,
    keep_overrides: Sequence[str] = (),
) -> tuple[list[str], list[PruneAudit]]:
    """Iteratively drop one member of each |r| > threshold pair.

    The worst (highest |r|) pair is resolved first; within a pair the member
    with the larger mean absolute correlation to the remaining kept columns
    is dropped, ties broken toward the higher column index. Columns in
    ``keep_overrides`` are never dropped; a pair of two protected columns is
    left in place.
    """
    if not 0.0 < threshold <= 1.0:
        raise DataError(f"threshold must be in (0, 1], got {threshold}")
    overrides = set(keep_overrides)
    unknown = overrides - set(corr.labels)
    if unknown:
        raise DataError(f"keep_overrides name unknown columns: {sorted(unknown)}")

    labels = list(corr.labels)
    kept = list(range(len(labels)))
    audits: list[PruneAudit] = []
    abs_r = np.abs(corr.values)

    while True:
        best: tuple[int, int] | None = None
        best_r = threshold
        for a_pos, i in enumerate(kept):
            for j in kept[a_pos + 1 :]:
                if not corr.defined[i, j]:
                    continue
                protected = labels[i] in overrides and labels[j] in overrides
                if abs_r[i, j] > best_r and not protected:
                    best_r = abs_r[i, j]
                    best = (i, j)
        if best is None:
            break
        i, j = best
        if labels[i] in overrides:
            drop = j
        elif labels[j] in overrides:
            drop = i
        else:
            drop = _heavier_member(abs_r, corr.defined, kept, i, j)
        partner = j if drop == i else i
        kept.remove(drop)
        audits.append(
            PruneAudit(
                dropped=labels[drop],
                partner=labels[partner],
                correlation=float(corr.values[i, j]),
                reason=f"|r|={best_r:.4f} > {threshold}",
            )
        )
    return [labels[i] for i in kept], audits


def _heavier_member(abs_r: np.ndarray, defined: np.ndarray, kept: list[int], i: int, j: int) -> int:
    def mean_abs(k: int) -> float:
        others = [o for o in kept if o != k and defined[k, o]]
        if not others:
            return 0.0
        return float(abs_r[k, others].mean())

    mi, mj = mean_abs(i), mean_abs(j)
    if mi > mj:
        return i
    if mj > mi:
        return j
    return max(i, j)


def average_path_length(n: int) -> float:
    """Average unsuccessful-search depth c(n) of a binary search tree on n points."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * (math.log(n - 1) + EULER_GAMMA) - 2.0 * (n - 1) / n


@dataclass(frozen=True)
class _IsoNode:
    feature: int
    value: float
    left: int
    right: int
    size: int  # leaf sample count; -1 for internal nodes


@dataclass(frozen=True)
class IsolationForestModel:
    """Fitted ensemble of isolation trees over the input columns."""

    columns: tuple[str, ...]
    n_trees: int
    psi: int
    seed: int
    trees: tuple[tuple[_IsoNode, ...], ...]

    @property
    def normalizer(self) -> float:
        return average_path_length(self.psi)


def fit_isolation_forest(
    data: Dataset,
    n_trees: int = 100,
    psi: int | None = None,
    seed: int = 0,
    columns: Sequence[str] | None = None,
) -> IsolationForestModel:
    """Build ``n_trees`` random partition trees on subsamples of size psi.

    Split features are uniform over the columns; split values are uniform
    within the node's (min, max) for that feature. Growth stops at
    isolation, the ceil(log2 psi) height limit, or when every remaining
    feature is constant. Targets are excluded: only input columns are seen.
    """
    if columns is None:
        columns = data.schema.input_names
    mat = data.matrix(columns)
    n = mat.shape[0]
    if psi is None:
        psi = min(256, n)
    if psi < 2:
        raise FitError(f"subsample size must be at least 2, got {psi}")
    if psi > n:
        raise FitError(f"subsample size {psi} exceeds row count {n}")
    height_limit = math.ceil(math.log2(psi))
    root_seq = np.random.SeedSequence(entropy=(seed, 0x15F))
    tree_seeds = root_seq.spawn(n_trees)
    trees = []
    for t in range(n_trees):
        rng = np.random.default_rng(tree_seeds[t])
        sample = rng.choice(n, size=psi, replace=False)
        nodes: list[_IsoNode] = []
        _grow_iso_tree(mat[sample], rng, height_limit, nodes, depth=0)
        trees.append(tuple(nodes))
    return IsolationForestModel(
        columns=tuple(columns), n_trees=n_trees, psi=psi, seed=seed, trees=tuple(trees)
    )


def _grow_iso_tree(
    sub: np.ndarray, rng: np.random.Generator, limit: int, nodes: list[_IsoNode], depth: int
) -> int:
    idx = len(nodes)
    nodes.append(_IsoNode(feature=-1, value=0.0, left=-1, right=-1, size=sub.shape[0]))
    if depth >= limit or sub.shape[0] <= 1:
        return idx
    lo = sub.min(axis=0)
    hi = sub.max(axis=0)
    usable = np.flatnonzero(hi > lo)
    if usable.size == 0:
        return idx
    f = int(usable[rng.integers(usable.size)])
    value = float(rng.uniform(lo[f], hi[f]))
    mask = sub[:, f] < value
    if not mask.any() or mask.all():
        # uniform draw landed on a boundary; fall back to a leaf
        return idx
    left = _grow_iso_tree(sub[mask], rng, limit, nodes, depth + 1)
    right = _grow_iso_tree(sub[~mask], rng, limit, nodes, depth + 1)
    nodes[idx] = _IsoNode(feature=f, value=value, left=left, right=right, size=-1)
    return idx


def score_anomalies(model: IsolationForestModel, data: Dataset) -> np.ndarray:
    """Anomaly score 2^(-E[h(x)] / c(psi)) per row; higher = more anomalous."""
    missing = [c for c in model.columns if c not in data.schema.column_names]
    if missing:
        raise DataError(f"dataset lacks columns used by the forest: {missing}")
    mat = data.matrix(model.columns)
    depths = np.zeros(mat.shape[0])
    for nodes in model.trees:
        depths += _tree_depths(nodes, mat)
    mean_depth = depths / model.n_trees
    return np.power(2.0, -mean_depth / model.normalizer)


def _tree_depths(nodes: tuple[_IsoNode, ...], mat: np.ndarray) -> np.ndarray:
    n = mat.shape[0]
    out = np.zeros(n)
    node_idx = np.zeros(n, dtype=np.intp)
    depth = np.zeros(n)
    active = np.arange(n)
    while active.size:
        cur = node_idx[active]
        feats = np.array([nodes[c].feature for c in cur])
        is_leaf = feats < 0
        if is_leaf.any():
            done = active[is_leaf]
            sizes = np.array([nodes[c].size for c in node_idx[done]], dtype=np.float64)
            out[done] = depth[done] + np.array([average_path_length(int(s)) for s in sizes])
        rest = active[~is_leaf]
        if rest.size == 0:
            break
        cur = node_idx[rest]
        feats = feats[~is_leaf]
        values = np.array([nodes[c].value for c in cur])
        go_left = mat[rest, feats] < values
        lefts = np.array([nodes[c].left for c in cur])
        rights = np.array([nodes[c].right for c in cur])
        node_idx[rest] = np.where(go_left, lefts, rights)
        depth[rest] += 1.0
        active = rest
    return out


def filter_outliers(
    data: Dataset, scores: np.ndarray, contamination: float
) -> tuple[Dataset, list[str]]:
    """Remove exactly floor(contamination * n) highest-scored rows.

    Ties are broken by row order (earlier rows removed first). Returns the
    kept dataset and the removed row ids for the audit trail.
    """
    if not 0.0 <= contamination < 0.5:
        raise DataError(f"contamination must be in [0, 0.5), got {contamination}")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (data.n,):
        raise DataError("scores length does not match dataset")
    n_remove = int(math.floor(contamination * data.n))
    if n_remove == 0:
        return data, []
    order = np.argsort(-scores, kind="stable")
    removed_pos = np.sort(order[:n_remove])
    kept_pos = np.sort(order[n_remove:])
    removed_ids = [data.row_ids[i] for i in removed_pos]
    return data.take(kept_pos), removed_ids
