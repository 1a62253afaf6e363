"""Synthetic benchmark data over the canonical UHPC schema.

The generator draws mixture inputs uniformly inside the observed ranges,
computes the five properties from fixed smooth nonlinear functions plus a
small noise term, then corrupts a fraction of rows: their inputs are pushed
beyond the observed maxima (making them isolable in feature space) and
their labels receive noise an order of magnitude above the base level. The
paper-scale relative claims (a cleaned second-stage model beats the raw
first-stage model) are reproducible against this data without the original
literature compilation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, FeatureSchema, uhpc_schema

BASE_NOISE_SD = 0.04
CORRUPT_NOISE_SD = 0.6


@dataclass(frozen=True)
class BenchmarkData:
    dataset: Dataset
    corrupted_row_ids: tuple[str, ...]
    clean_signal: np.ndarray  # (n, 5) noise-free target values


def _unit_inputs(x: np.ndarray, schema: FeatureSchema) -> dict[str, np.ndarray]:
    u = {}
    for j, name in enumerate(schema.input_names):
        col = schema.column(name)
        span = col.observed_max - col.observed_min
        u[name] = (x[:, j] - col.observed_min) / span
    return u


def _signals(u: dict[str, np.ndarray]) -> np.ndarray:
    cem = u["Cement content"]
    coarse = u["Coarse aggregate"]
    silica = u["Silica fume content"]
    flyash = u["Fly ash content"]
    sand = u["Sand content"]
    sp = u["Superplasticizer"]
    water = u["Water content"]
    wb = u["Water/binder ratio"]
    sfc = u["Steel fiber content"]
    sfl = u["Steel fiber length"]
    stl = u["SF Tensile strength"]
    moe = u["SF Elastic modulus"]
    age = u["Curing Age"]

    compressive = (
        40.0
        + 150.0 * cem * (1.0 - 0.55 * wb)
        + 60.0 * np.sqrt(age)
        + 45.0 * sfc * silica
        + 20.0 * sand * cem
        - 35.0 * wb
    )
    flexural = (
        2.0
        + 14.0 * sfc * stl
        + 8.0 * np.sqrt(age)
        + 5.0 * silica
        - 4.0 * wb * water
        + 3.0 * cem * sp
    )
    tensile = (
        1.0
        + 7.0 * sfc * moe
        + 4.0 * silica * np.sqrt(age)
        + 2.0 * cem
        - 2.5 * wb
    )
    slump = (
        200.0
        + 450.0 * sp
        + 250.0 * water * wb
        - 150.0 * sfc * sfl
        - 100.0 * coarse
    )
    porosity = (
        0.5
        + 8.0 * wb * wb
        + 4.0 * water * (1.0 - silica)
        + 3.0 * flyash
        - 1.5 * sp
    )
    porosity = np.maximum(porosity, 0.05)
    slump = np.maximum(slump, 5.0)
    return np.column_stack([compressive, flexural, tensile, slump, porosity])


def make_benchmark(
    n: int = 1200,
    corrupt_fraction: float = 0.10,
    seed: int = 7,
    schema: FeatureSchema | None = None,
) -> BenchmarkData:
    schema = schema or uhpc_schema()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0x5E11)))

    d_in = len(schema.input_names)
    x = np.empty((n, d_in))
    for j, name in enumerate(schema.input_names):
        col = schema.column(name)
        x[:, j] = rng.uniform(col.observed_min, col.observed_max, size=n)

    # corrupted rows are pushed beyond the observed maxima first, so their
    # labels (computed below) remain a function of their actual inputs; the
    # corruption is the gross label noise added on top, and the out-of-range
    # inputs are what makes these rows isolable during cleaning
    n_corrupt = int(np.floor(corrupt_fraction * n))
    corrupted = rng.choice(n, size=n_corrupt, replace=False) if n_corrupt else np.array([], dtype=int)
    for i in corrupted:
        cols = rng.choice(d_in, size=6, replace=False)
        for j in cols:
            col = schema.column(schema.input_names[j])
            span = col.observed_max - col.observed_min
            x[i, j] = col.observed_max + rng.uniform(0.25, 0.9) * span

    signal = _signals(_unit_inputs(x, schema))
    sds = signal.std(axis=0)
    y = signal + rng.normal(0.0, BASE_NOISE_SD, size=signal.shape) * sds
    for i in corrupted:
        y[i] += rng.normal(0.0, CORRUPT_NOISE_SD, size=5) * sds

    rows = np.column_stack([x, y])
    ids = tuple(f"s{i}" for i in range(n))
    dataset = Dataset(schema=schema, rows=rows, row_ids=ids, provenance="synthetic-benchmark")
    return BenchmarkData(
        dataset=dataset,
        corrupted_row_ids=tuple(ids[i] for i in np.sort(corrupted)),
        clean_signal=signal,
    )
