"""Regression performance indicators and the multi-criteria selection rule.

Six indicators are computed per (y, y_hat) pair: MAE, percentage MAE, MSE,
RMSE, maximum absolute error, and R2. Percentage MAE skips pairs whose true
value is numerically zero (|y| < 1e-9) and reports how many were skipped,
because several UHPC targets have observed minima of exactly 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import MixforgeError

PMAE_ZERO_TOLERANCE = 1e-9


@dataclass(frozen=True)
class MetricsReport:
    """Six-indicator report for one evaluation.

    ``r2`` is None when the true values are constant (the ratio is
    undefined); every other field is always populated.
    """

    mae: float
    pmae_percent: float | None
    mse: float
    rmse: float
    maxae: float
    r2: float | None
    m: int
    pmae_skipped: int

    def to_dict(self) -> dict:
        return {
            "mae": self.mae,
            "pmae_percent": self.pmae_percent,
            "mse": self.mse,
            "rmse": self.rmse,
            "maxae": self.maxae,
            "r2": self.r2,
            "m": self.m,
            "pmae_skipped": self.pmae_skipped,
        }

    @staticmethod
    def from_dict(doc: dict) -> "MetricsReport":
        return MetricsReport(
            mae=float(doc["mae"]),
            pmae_percent=None if doc.get("pmae_percent") is None else float(doc["pmae_percent"]),
            mse=float(doc["mse"]),
            rmse=float(doc["rmse"]),
            maxae=float(doc["maxae"]),
            r2=None if doc.get("r2") is None else float(doc["r2"]),
            m=int(doc["m"]),
            pmae_skipped=int(doc.get("pmae_skipped", 0)),
        )


def evaluate(y: Sequence[float] | np.ndarray, y_hat: Sequence[float] | np.ndarray) -> MetricsReport:
    """Compute all six indicators for a pair of equal-length vectors."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape or y.ndim != 1:
        raise MixforgeError(
            f"evaluate needs two equal-length vectors, got shapes {y.shape} and {y_hat.shape}"
        )
    m = y.shape[0]
    if m < 2:
        raise MixforgeError(f"evaluate needs at least 2 pairs, got {m}")

    err = y_hat - y
    abs_err = np.abs(err)
    mae = float(abs_err.mean())
    mse = float((err * err).mean())
    rmse = math.sqrt(mse)
    maxae = float(abs_err.max())

    nonzero = np.abs(y) >= PMAE_ZERO_TOLERANCE
    skipped = int(m - nonzero.sum())
    if skipped < m:
        pmae = float((abs_err[nonzero] / np.abs(y[nonzero])).mean() * 100.0)
    else:
        pmae = None

    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        r2 = None
    else:
        r2 = 1.0 - float((err * err).sum()) / ss_tot

    return MetricsReport(
        mae=mae,
        pmae_percent=pmae,
        mse=mse,
        rmse=rmse,
        maxae=maxae,
        r2=r2,
        m=m,
        pmae_skipped=skipped,
    )


@dataclass(frozen=True)
class SelectionResult:
    """Ranking plus the subset passing the (rmse_max, r2_min) gate."""

    ranked: tuple[str, ...]
    passing: tuple[str, ...]


def select_optimal(
    reports: Sequence[tuple[str, MetricsReport | None, MetricsReport]],
    rmse_max: float | None = None,
    r2_min: float | None = None,
) -> SelectionResult:
    """Rank labelled (train, test) reports and apply an optional quality gate.

    Ordering is lexicographic on (test RMSE ascending, test R2 descending);
    an undefined test R2 sorts last among equal RMSEs. The gate keeps labels
    with test RMSE strictly below ``rmse_max`` and test R2 strictly above
    ``r2_min``; an undefined R2 never passes an R2 gate. The train report is
    carried for callers but does not participate in ranking or gating (it
    may be None for externally supplied rows).
    """
    if not reports:
        raise MixforgeError("select_optimal needs at least one report")

    def sort_key(item: tuple[str, MetricsReport | None, MetricsReport]):
        _, _, test = item
        r2 = -math.inf if test.r2 is None else test.r2
        return (test.rmse, -r2)

    ranked_items = sorted(reports, key=sort_key)
    ranked = tuple(label for label, _, _ in ranked_items)

    passing = []
    for label, _, test in ranked_items:
        if rmse_max is not None and not test.rmse < rmse_max:
            continue
        if r2_min is not None and (test.r2 is None or not test.r2 > r2_min):
            continue
        passing.append(label)
    return SelectionResult(ranked=ranked, passing=tuple(passing))
