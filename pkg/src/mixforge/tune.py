"""K-fold cross-validation and random-search hyperparameter optimization.

The search objective is the cross-validated RMSE averaged over folds; the
argmin configuration wins (first seen on ties). Folds are drawn once per
search so every candidate is compared on identical splits, and each trial
derives its own seed from (search seed, trial index), which makes the trial
log independent of evaluation order and safe to compute in parallel.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from multiprocessing import get_context
from typing import Sequence

import numpy as np

from .data import Dataset
from .errors import FitError, SearchError
from .gbtree import GbtConfig, fit_matrix

TRIAL_SEED_TAG = 0x7241
FOLD_SEED_TAG = 0x0F1D


@dataclass(frozen=True)
class Dimension:
    """One hyperparameter range: uniform, optionally integer or log-scaled."""

    name: str
    low: float
    high: float
    integer: bool = False
    log: bool = False

    def __post_init__(self) -> None:
        if not self.low < self.high:
            raise SearchError(f"dimension {self.name!r}: low must be below high")
        if self.log and self.low <= 0:
            raise SearchError(f"dimension {self.name!r}: log scale needs positive bounds")

    def sample(self, rng: np.random.Generator) -> float | int:
        if self.log:
            value = math.exp(rng.uniform(math.log(self.low), math.log(self.high)))
        else:
            value = rng.uniform(self.low, self.high)
        if self.integer:
            return int(round(value))
        return float(value)


@dataclass(frozen=True)
class SearchSpace:
    dimensions: tuple[Dimension, ...]

    def sample(self, rng: np.random.Generator) -> dict:
        return {dim.name: dim.sample(rng) for dim in self.dimensions}

    @staticmethod
    def default() -> "SearchSpace":
        return SearchSpace(
            dimensions=(
                Dimension("learning_rate", 0.01, 0.3),
                Dimension("max_depth", 2, 20, integer=True),
                Dimension("subsample", 0.5, 1.0),
                Dimension("colsample_bytree", 0.5, 1.0),
                Dimension("lambda_l1", 0.05, 1.0),
                Dimension("lambda_l2", 0.05, 1.0),
                Dimension("max_bin", 10, 2000, integer=True),
                Dimension("min_child_weight", 1, 10, integer=True),
                Dimension("gamma", 0.0, 0.9),
            )
        )


@dataclass(frozen=True)
class TrialResult:
    trial_index: int
    seed: int
    config: GbtConfig
    fold_rmse: tuple[float, ...]
    mean_rmse: float
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def to_dict(self) -> dict:
        return {
            "trial": self.trial_index,
            "seed": self.seed,
            "config": self.config.to_dict(),
            "fold_rmse": list(self.fold_rmse),
            "mean_rmse": self.mean_rmse,
            "error": self.error,
        }

    @staticmethod
    def from_dict(doc: dict) -> "TrialResult":
        return TrialResult(
            trial_index=int(doc["trial"]),
            seed=int(doc["seed"]),
            config=GbtConfig.from_dict(doc["config"]),
            fold_rmse=tuple(float(v) for v in doc["fold_rmse"]),
            mean_rmse=float(doc["mean_rmse"]),
            error=doc.get("error"),
        )


def kfold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Seeded shuffle, then contiguous folds whose sizes differ by at most 1."""
    if k < 2:
        raise SearchError(f"k must be at least 2, got {k}")
    if k > n:
        raise SearchError(f"k={k} exceeds row count n={n}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, FOLD_SEED_TAG)))
    perm = rng.permutation(n)
    base = n // k
    remainder = n % k
    folds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < remainder else 0)
        folds.append(np.sort(perm[start : start + size]))
        start += size
    return folds


def cross_validate_matrix(
    config: GbtConfig,
    x: np.ndarray,
    y: np.ndarray,
    folds: Sequence[np.ndarray],
    trial_index: int = 0,
    seed: int | None = None,
) -> TrialResult:
    """Fit on k-1 folds, score RMSE on the held-out fold, aggregate the mean."""
    n = x.shape[0]
    mask = np.ones(n, dtype=bool)
    rmses: list[float] = []
    seed = config.seed if seed is None else seed
    try:
        for fold in folds:
            mask[:] = True
            mask[fold] = False
            model = fit_matrix(x[mask], y[mask], config)
            pred = model.predict_matrix(x[fold])
            rmses.append(float(np.sqrt(((pred - y[fold]) ** 2).mean())))
    except FitError as exc:
        return TrialResult(
            trial_index=trial_index,
            seed=seed,
            config=config,
            fold_rmse=(),
            mean_rmse=math.inf,
            error=str(exc),
        )
    return TrialResult(
        trial_index=trial_index,
        seed=seed,
        config=config,
        fold_rmse=tuple(rmses),
        mean_rmse=float(np.mean(rmses)),
    )


def cross_validate(
    config: GbtConfig,
    data: Dataset,
    target: str,
    k: int = 10,
    seed: int = 0,
    features: Sequence[str] | None = None,
) -> TrialResult:
    features = list(features) if features is not None else data.schema.input_names
    folds = kfold_indices(data.n, k, seed)
    return cross_validate_matrix(config, data.matrix(features), data.column(target), folds)


def trial_seed(search_seed: int, trial_index: int) -> int:
    """Stable per-trial seed; independent of evaluation order."""
    seq = np.random.SeedSequence(entropy=(search_seed, TRIAL_SEED_TAG, trial_index))
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def sample_trial_config(
    space: SearchSpace, search_seed: int, trial_index: int, base: GbtConfig
) -> GbtConfig:
    s = trial_seed(search_seed, trial_index)
    rng = np.random.default_rng(s)
    params = space.sample(rng)
    doc = base.to_dict()
    doc.update(params)
    doc["seed"] = s
    return GbtConfig.from_dict(doc)


def _run_trial(args) -> TrialResult:
    space, search_seed, trial_index, base, x, y, folds = args
    config = sample_trial_config(space, search_seed, trial_index, base)
    return cross_validate_matrix(
        config, x, y, folds, trial_index=trial_index, seed=trial_seed(search_seed, trial_index)
    )


def random_search(
    space: SearchSpace,
    n_trials: int,
    data: Dataset,
    target: str,
    k: int = 10,
    seed: int = 0,
    base_config: GbtConfig | None = None,
    features: Sequence[str] | None = None,
    n_workers: int | None = None,
) -> tuple[TrialResult, list[TrialResult]]:
    """Sample ``n_trials`` configs uniformly and return (best, full log).

    ``base_config`` supplies the non-searched fields (n_rounds in
    particular); each trial overrides the searched dimensions and its seed.
    Best is the minimal mean RMSE, first seen winning ties. Failed trials
    stay in the log with their reason; if everything failed the search
    raises with the log attached.
    """
    if n_trials < 1:
        raise SearchError(f"n_trials must be at least 1, got {n_trials}")
    features = list(features) if features is not None else data.schema.input_names
    x = np.ascontiguousarray(data.matrix(features))
    y = np.ascontiguousarray(data.column(target))
    folds = kfold_indices(data.n, k, seed)
    base = base_config or GbtConfig()

    jobs = [(space, seed, i, base, x, y, folds) for i in range(n_trials)]
    if n_workers is None:
        n_workers = min(os.cpu_count() or 1, n_trials)
    if n_workers > 1:
        # warm the JIT cache before forking so children reuse it
        fit_matrix(x[: min(8, x.shape[0])], y[: min(8, x.shape[0])],
                   GbtConfig(n_rounds=1, max_depth=2, seed=0))
        with get_context("fork").Pool(n_workers) as pool:
            trials = pool.map(_run_trial, jobs, chunksize=max(1, n_trials // (4 * n_workers)))
    else:
        trials = [_run_trial(job) for job in jobs]

    usable = [t for t in trials if not t.failed]
    if not usable:
        err = SearchError(f"all {n_trials} trials failed; first error: {trials[0].error}")
        err.trials = trials  # type: ignore[attr-defined]
        raise err
    best = min(usable, key=lambda t: (t.mean_rmse, t.trial_index))
    return best, trials


def trial_log_lines(trials: Sequence[TrialResult]) -> list[str]:
    """One deterministic JSON line per trial, ordered by trial index."""
    ordered = sorted(trials, key=lambda t: t.trial_index)
    return [json.dumps(t.to_dict(), sort_keys=True) for t in ordered]


def write_trial_log(trials: Sequence[TrialResult], path) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for line in trial_log_lines(trials):
            fh.write(line + "\n")


def read_trial_log(path) -> list[TrialResult]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(TrialResult.from_dict(json.loads(line)))
    return out
