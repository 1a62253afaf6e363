"""Dataset schema, CSV ingestion, z-normalization, and seeded splitting.

The canonical UHPC schema (17 mixture inputs, 5 predicted properties) ships
as a versioned JSON resource and is loaded with :func:`uhpc_schema`. All
tabular data flows through :class:`Dataset`, an immutable row-major float64
matrix bound to a schema, with stable row ids that survive filtering and
splitting.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass
from importlib import resources as importlib_resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, RangeError, SchemaError

logger = logging.getLogger(__name__)

KIND_INPUT = "input"
KIND_TARGET = "target"


@dataclass(frozen=True)
class ColumnSpec:
    """One column of a feature schema.

    ``observed_min``/``observed_max`` are the ranges seen in the compiled
    literature data, not physical bounds; ``observed_mean``/``observed_sd``
    seed UI defaults and are optional.
    """

    name: str
    unit: str
    observed_min: float
    observed_max: float
    kind: str
    observed_mean: float | None = None
    observed_sd: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in (KIND_INPUT, KIND_TARGET):
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if not self.observed_min <= self.observed_max:
            raise SchemaError(
                f"column {self.name!r}: observed_min {self.observed_min} exceeds "
                f"observed_max {self.observed_max}"
            )


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered column contract for a dataset."""

    columns: tuple[ColumnSpec, ...]
    name: str = "unnamed"
    format_version: int = 1

    def __post_init__(self) -> None:
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate column names: {dupes}")

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def input_names(self) -> list[str]:
        return [c.name for c in self.columns if c.kind == KIND_INPUT]

    @property
    def target_names(self) -> list[str]:
        return [c.name for c in self.columns if c.kind == KIND_TARGET]

    def column(self, name: str) -> ColumnSpec:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"schema {self.name!r} has no column {name!r}")

    def index_of(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise SchemaError(f"schema {self.name!r} has no column {name!r}")

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "name": self.name,
            "columns": [
                {
                    "name": c.name,
                    "unit": c.unit,
                    "observed_min": c.observed_min,
                    "observed_max": c.observed_max,
                    "observed_mean": c.observed_mean,
                    "observed_sd": c.observed_sd,
                    "kind": c.kind,
                }
                for c in self.columns
            ],
        }

    @staticmethod
    def from_dict(doc: dict) -> "FeatureSchema":
        try:
            cols = tuple(
                ColumnSpec(
                    name=c["name"],
                    unit=c["unit"],
                    observed_min=float(c["observed_min"]),
                    observed_max=float(c["observed_max"]),
                    kind=c["kind"],
                    observed_mean=c.get("observed_mean"),
                    observed_sd=c.get("observed_sd"),
                )
                for c in doc["columns"]
            )
        except KeyError as exc:
            raise SchemaError(f"schema document missing field {exc}") from exc
        return FeatureSchema(
            columns=cols,
            name=doc.get("name", "unnamed"),
            format_version=int(doc.get("format_version", 1)),
        )


def uhpc_schema() -> FeatureSchema:
    """Load the canonical 22-column UHPC schema shipped with the package."""
    text = (
        importlib_resources.files("mixforge.resources")
        .joinpath("uhpc_schema_v1.json")
        .read_text(encoding="utf-8")
    )
    return FeatureSchema.from_dict(json.loads(text))


def load_schema(path: str | Path) -> FeatureSchema:
    with open(path, encoding="utf-8") as fh:
        return FeatureSchema.from_dict(json.load(fh))


@dataclass(frozen=True)
class Dataset:
    """Immutable numeric table bound to a schema.

    ``rows`` is an (n, d) float64 matrix in schema column order. ``row_ids``
    are stable identifiers: any filtered or split view keeps the ids of the
    surviving rows, so audits can always be traced back to the source file.
    """

    schema: FeatureSchema
    rows: np.ndarray
    row_ids: tuple[str, ...]
    provenance: str = ""

    def __post_init__(self) -> None:
        if self.rows.ndim != 2 or self.rows.shape[1] != len(self.schema.columns):
            raise DataError(
                f"row matrix shape {self.rows.shape} does not match the "
                f"{len(self.schema.columns)}-column schema"
            )
        if self.rows.shape[0] < 1:
            raise DataError("dataset must contain at least one row")
        if len(self.row_ids) != self.rows.shape[0]:
            raise DataError("row_ids length does not match row count")
        if len(set(self.row_ids)) != len(self.row_ids):
            raise DataError("row_ids must be unique")
        if not np.all(np.isfinite(self.rows)):
            raise DataError("dataset contains non-finite cells")
        self.rows.setflags(write=False)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.schema.index_of(name)]

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        idx = [self.schema.index_of(n) for n in names]
        return self.rows[:, idx]

    def take(self, positions: np.ndarray | Sequence[int]) -> "Dataset":
        positions = np.asarray(positions, dtype=np.intp)
        return Dataset(
            schema=self.schema,
            rows=self.rows[positions].copy(),
            row_ids=tuple(self.row_ids[i] for i in positions),
            provenance=self.provenance,
        )

    def with_rows(self, rows: np.ndarray) -> "Dataset":
        """Same ids/schema, new cell values (used by standardization)."""
        return Dataset(
            schema=self.schema,
            rows=rows,
            row_ids=self.row_ids,
            provenance=self.provenance,
        )


def load_dataset(
    path: str | Path,
    schema: FeatureSchema,
    strict: bool = False,
) -> Dataset:
    """Parse a UTF-8 CSV with a header row into a :class:`Dataset`.

    Header names must match the schema (order-insensitive). Rows with any
    missing or unparseable cell are rejected with the row id and column
    named. In strict mode a value outside the column's observed range is an
    error; in lenient mode it is logged as a warning.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        return _parse_csv(fh, schema, strict=strict, provenance=str(path))


def loads_dataset(text: str, schema: FeatureSchema, strict: bool = False) -> Dataset:
    return _parse_csv(io.StringIO(text), schema, strict=strict, provenance="<string>")


def _parse_csv(fh, schema: FeatureSchema, strict: bool, provenance: str) -> Dataset:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError(f"{provenance}: file is empty") from None
    header = [h.strip() for h in header]

    missing = [n for n in schema.column_names if n not in header]
    if missing:
        raise SchemaError(f"{provenance}: missing column {missing[0]!r}")
    extra = [h for h in header if h not in schema.column_names]
    if extra:
        raise SchemaError(f"{provenance}: unknown column {extra[0]!r}")

    order = [header.index(n) for n in schema.column_names]
    rows: list[list[float]] = []
    ids: list[str] = []
    for line_no, raw in enumerate(reader, start=2):
        if not raw or all(not cell.strip() for cell in raw):
            continue
        if len(raw) != len(header):
            raise DataError(
                f"{provenance}: row {line_no} has {len(raw)} cells, expected {len(header)}"
            )
        parsed: list[float] = []
        for col, src_idx in zip(schema.columns, order):
            cell = raw[src_idx].strip()
            if cell == "":
                raise DataError(
                    f"{provenance}: row {line_no}: missing value for {col.name!r}"
                )
            try:
                value = float(cell)
            except ValueError:
                raise DataError(
                    f"{provenance}: row {line_no}: unparseable value {cell!r} "
                    f"for {col.name!r}"
                ) from None
            if not np.isfinite(value):
                raise DataError(
                    f"{provenance}: row {line_no}: non-finite value for {col.name!r}"
                )
            if not col.observed_min <= value <= col.observed_max:
                msg = (
                    f"{provenance}: row {line_no}: {col.name!r} = {value} outside "
                    f"observed range [{col.observed_min}, {col.observed_max}]"
                )
                if strict:
                    raise RangeError(msg)
                logger.warning(msg)
            parsed.append(value)
        rows.append(parsed)
        ids.append(f"r{line_no}")
    if not rows:
        raise DataError(f"{provenance}: no data rows")
    return Dataset(
        schema=schema,
        rows=np.asarray(rows, dtype=np.float64),
        row_ids=tuple(ids),
        provenance=provenance,
    )


def save_dataset(data: Dataset, path: str | Path) -> None:
    """Write a dataset back to CSV losslessly (float repr round-trips)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(data.schema.column_names)
        for row in data.rows:
            writer.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class StandardizationParams:
    """Per-column z-normalization parameters (sample sd, n-1 denominator)."""

    columns: tuple[str, ...]
    mean: np.ndarray
    sd: np.ndarray
    fitted_on: int

    def __post_init__(self) -> None:
        self.mean.setflags(write=False)
        self.sd.setflags(write=False)

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "mean": [float(v) for v in self.mean],
            "sd": [float(v) for v in self.sd],
            "fitted_on": self.fitted_on,
        }

    @staticmethod
    def from_dict(doc: dict) -> "StandardizationParams":
        return StandardizationParams(
            columns=tuple(doc["columns"]),
            mean=np.asarray(doc["mean"], dtype=np.float64),
            sd=np.asarray(doc["sd"], dtype=np.float64),
            fitted_on=int(doc["fitted_on"]),
        )


def fit_standardizer(
    data: Dataset, columns: Sequence[str] | None = None
) -> StandardizationParams:
    """Fit per-column mean and sample standard deviation.

    Targets are never standardized by the pipeline; callers pass the input
    columns. A constant column is a fit-time error because its sd is zero.
    """
    if columns is None:
        columns = data.schema.input_names
    if data.n < 2:
        raise DataError(f"need at least 2 rows to fit a standardizer, got {data.n}")
    mat = data.matrix(columns)
    mean = mat.mean(axis=0)
    sd = mat.std(axis=0, ddof=1)
    for name, s in zip(columns, sd):
        if s <= 0.0:
            raise DataError(f"column {name!r} has zero variance; cannot standardize")
    return StandardizationParams(
        columns=tuple(columns), mean=mean, sd=sd, fitted_on=data.n
    )


def apply_standardizer(params: StandardizationParams, data: Dataset) -> Dataset:
    """Replace each covered cell with (x - mean) / sd. Other columns pass through."""
    rows = data.rows.copy()
    for name, mu, sigma in zip(params.columns, params.mean, params.sd):
        j = data.schema.index_of(name)
        rows[:, j] = (rows[:, j] - mu) / sigma
    return data.with_rows(rows)


def invert_standardizer(params: StandardizationParams, data: Dataset) -> Dataset:
    rows = data.rows.copy()
    for name, mu, sigma in zip(params.columns, params.mean, params.sd):
        j = data.schema.index_of(name)
        rows[:, j] = rows[:, j] * sigma + mu
    return data.with_rows(rows)


def standardize_matrix(params: StandardizationParams, mat: np.ndarray, names: Sequence[str]) -> np.ndarray:
    """Standardize an (n, len(names)) matrix given column names.

    Columns without fitted parameters raise; used on request paths where the
    caller assembled the matrix outside a Dataset.
    """
    lookup = {c: i for i, c in enumerate(params.columns)}
    out = np.array(mat, dtype=np.float64, copy=True)
    for k, name in enumerate(names):
        if name not in lookup:
            raise SchemaError(f"no standardization parameters fitted for {name!r}")
        i = lookup[name]
        out[:, k] = (out[:, k] - params.mean[i]) / params.sd[i]
    return out


def split(
    data: Dataset, train_fraction: float, seed: int
) -> tuple[Dataset, Dataset]:
    """Seed-reproducible uniform random partition into train and test.

    Train size is round(train_fraction * n), clamped so both parts are
    non-empty; the union is the input and the parts are disjoint.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if data.n < 2:
        raise DataError("need at least 2 rows to split")
    n_train = int(round(train_fraction * data.n))
    n_train = min(max(n_train, 1), data.n - 1)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(data.n)
    train_pos = np.sort(perm[:n_train])
    test_pos = np.sort(perm[n_train:])
    return data.take(train_pos), data.take(test_pos)
