"""Two-stage training orchestration and the persisted model bundle.

Stage 1 tunes and trains one boosted ensemble per target on the raw data.
Stage 2 cleans first: multicollinear inputs are pruned at |r| > threshold,
an isolation forest removes the top contamination fraction of rows scored
on input features, the per-target feature selections are applied, and each
target is re-tuned (by default) and retrained on the cleaned data. The
bundle records both generations side by side with their split ids and
standardizers, so every stored metric can be re-derived from the stored
artifacts alone.
"""

from __future__ import annotations

import datetime as _dt
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .data import (
    Dataset,
    FeatureSchema,
    StandardizationParams,
    apply_standardizer,
    fit_standardizer,
    split,
    standardize_matrix,
)
from .errors import BundleError, DataError, SchemaError, VersionError
from .explain import FeatureSelection, default_selections, rank_features, select_features
from .gbtree import Ensemble, GbtConfig
from .gbtree import fit as gbt_fit
from .metrics import MetricsReport, evaluate
from .preprocess import (
    correlation_matrix,
    filter_outliers,
    fit_isolation_forest,
    prune_multicollinear,
    score_anomalies,
)
from .tune import SearchSpace, TrialResult, random_search

BUNDLE_FORMAT_VERSION = 1

SEED_SPLIT = 0x5137
SEED_SEARCH = 0x5EA2
SEED_FOREST = 0xF027
SEED_BACKGROUND = 0xBA6


def _derive_seed(master: int, tag: int, index: int = 0) -> int:
    seq = np.random.SeedSequence(entropy=(master, tag, index))
    return int(seq.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs of the end-to-end run; the defaults replay the reference workflow."""

    targets: tuple[str, ...] | None = None
    train_fraction: float = 0.7
    prune_threshold: float = 0.7
    contamination: float = 0.10
    selection_policies: Mapping[str, Mapping] | None = None  # None: shipped fixed lists
    n_trials: int = 60
    k: int = 10
    seed: int = 42
    filter_scope: str = "full"  # "full" (pre-split) or "train-only"
    retune_stage2: bool = True
    search_rounds: int = 100
    final_rounds: int = 300
    n_workers: int | None = None
    keep_overrides: tuple[str, ...] = ()
    forest_trees: int = 100
    forest_psi: int | None = None
    background_rows: int = 128

    def __post_init__(self) -> None:
        if self.filter_scope not in ("full", "train-only"):
            raise DataError(f"filter_scope must be 'full' or 'train-only', got {self.filter_scope!r}")

    def resolved_targets(self, schema: FeatureSchema) -> tuple[str, ...]:
        if self.targets is None:
            return tuple(schema.target_names)
        unknown = [t for t in self.targets if t not in schema.target_names]
        if unknown:
            raise SchemaError(f"unknown target column {unknown[0]!r}")
        return tuple(self.targets)

    def policy_for(self, target: str, schema: FeatureSchema) -> Mapping:
        if self.selection_policies and target in self.selection_policies:
            return self.selection_policies[target]
        if schema.name == "uhpc-mixture-v1":
            sel = default_selections(schema).get(target)
            if sel is not None:
                return {"kind": "fixed-list", "excluded": list(sel.excluded)}
        return {"kind": "bottom-k", "k": 0}

    def to_dict(self) -> dict:
        return {
            "targets": None if self.targets is None else list(self.targets),
            "train_fraction": self.train_fraction,
            "prune_threshold": self.prune_threshold,
            "contamination": self.contamination,
            "selection_policies": None
            if self.selection_policies is None
            else {k: dict(v) for k, v in self.selection_policies.items()},
            "n_trials": self.n_trials,
            "k": self.k,
            "seed": self.seed,
            "filter_scope": self.filter_scope,
            "retune_stage2": self.retune_stage2,
            "search_rounds": self.search_rounds,
            "final_rounds": self.final_rounds,
            "n_workers": self.n_workers,
            "keep_overrides": list(self.keep_overrides),
            "forest_trees": self.forest_trees,
            "forest_psi": self.forest_psi,
            "background_rows": self.background_rows,
        }

    @staticmethod
    def from_dict(doc: Mapping) -> "PipelineConfig":
        kwargs = dict(doc)
        if kwargs.get("targets") is not None:
            kwargs["targets"] = tuple(kwargs["targets"])
        if kwargs.get("keep_overrides") is not None:
            kwargs["keep_overrides"] = tuple(kwargs["keep_overrides"])
        return PipelineConfig(**kwargs)


@dataclass
class ModelEntry:
    """One fitted generation (stage 1 or stage 2) for one target."""

    stage: int
    target: str
    selection: FeatureSelection
    features_used: tuple[str, ...]
    config: GbtConfig
    ensemble: Ensemble
    standardizer: StandardizationParams
    train_metrics: MetricsReport
    test_metrics: MetricsReport
    train_row_ids: tuple[str, ...]
    test_row_ids: tuple[str, ...]
    trial_log_ref: str

    def predict_rows(self, raw: np.ndarray, names: Sequence[str]) -> np.ndarray:
        """Predict physical-unit rows given column names for ``raw``."""
        lookup = {n: i for i, n in enumerate(names)}
        missing = [f for f in self.features_used if f not in lookup]
        if missing:
            raise SchemaError(f"missing feature {missing[0]!r} in prediction input")
        mat = raw[:, [lookup[f] for f in self.features_used]]
        std = standardize_matrix(self.standardizer, mat, self.features_used)
        return self.ensemble.predict_matrix(std)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "target": self.target,
            "selection": self.selection.to_dict(),
            "features_used": list(self.features_used),
            "config": self.config.to_dict(),
            "ensemble": self.ensemble.to_dict(),
            "standardizer": self.standardizer.to_dict(),
            "train_metrics": self.train_metrics.to_dict(),
            "test_metrics": self.test_metrics.to_dict(),
            "train_row_ids": list(self.train_row_ids),
            "test_row_ids": list(self.test_row_ids),
            "trial_log_ref": self.trial_log_ref,
        }

    @staticmethod
    def from_dict(doc: dict) -> "ModelEntry":
        return ModelEntry(
            stage=int(doc["stage"]),
            target=doc["target"],
            selection=FeatureSelection.from_dict(doc["selection"]),
            features_used=tuple(doc["features_used"]),
            config=GbtConfig.from_dict(doc["config"]),
            ensemble=Ensemble.from_dict(doc["ensemble"]),
            standardizer=StandardizationParams.from_dict(doc["standardizer"]),
            train_metrics=MetricsReport.from_dict(doc["train_metrics"]),
            test_metrics=MetricsReport.from_dict(doc["test_metrics"]),
            train_row_ids=tuple(doc["train_row_ids"]),
            test_row_ids=tuple(doc["test_row_ids"]),
            trial_log_ref=doc["trial_log_ref"],
        )


@dataclass
class ModelBundle:
    """Persisted artifact: schema, both model generations, audits, background."""

    schema: FeatureSchema
    targets: tuple[str, ...]
    model1: dict[str, ModelEntry]
    model2: dict[str, ModelEntry]
    pruned_kept: tuple[str, ...]
    prune_audit: tuple[dict, ...]
    outlier_removed_ids: tuple[str, ...]
    background_columns: tuple[str, ...]
    background: np.ndarray  # raw physical units
    pipeline_config: PipelineConfig
    created_at: str = ""
    package_version: str = __version__
    format_version: int = BUNDLE_FORMAT_VERSION

    def entry(self, target: str, stage: int = 2) -> ModelEntry:
        table = self.model2 if stage == 2 else self.model1
        if target not in table:
            raise BundleError(f"bundle has no stage-{stage} entry for target {target!r}")
        return table[target]

    def predict_row(self, row: Mapping[str, float], stage: int = 2) -> dict[str, float]:
        """Predict every bundled target for one physical-unit feature map."""
        out: dict[str, float] = {}
        for target in self.targets:
            entry = self.entry(target, stage)
            values = []
            for f in entry.features_used:
                if f not in row:
                    raise SchemaError(f"missing feature {f!r} in prediction input")
                values.append(float(row[f]))
            mat = np.asarray([values])
            std = standardize_matrix(entry.standardizer, mat, entry.features_used)
            out[target] = float(entry.ensemble.predict_matrix(std)[0])
        return out

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "package_version": self.package_version,
            "created_at": self.created_at,
            "schema": self.schema.to_dict(),
            "targets": list(self.targets),
            "pipeline_config": self.pipeline_config.to_dict(),
            "pruned_kept": list(self.pruned_kept),
            "prune_audit": list(self.prune_audit),
            "outlier_removed_ids": list(self.outlier_removed_ids),
            "background_columns": list(self.background_columns),
            "background": [[float(v) for v in row] for row in self.background],
            "model1": {t: e.to_dict() for t, e in self.model1.items()},
            "model2": {t: e.to_dict() for t, e in self.model2.items()},
        }

    @staticmethod
    def from_dict(doc: dict) -> "ModelBundle":
        version = int(doc.get("format_version", -1))
        if version != BUNDLE_FORMAT_VERSION:
            raise VersionError(
                f"bundle format version {version} is not supported "
                f"(this build reads version {BUNDLE_FORMAT_VERSION})"
            )
        return ModelBundle(
            schema=FeatureSchema.from_dict(doc["schema"]),
            targets=tuple(doc["targets"]),
            model1={t: ModelEntry.from_dict(e) for t, e in doc["model1"].items()},
            model2={t: ModelEntry.from_dict(e) for t, e in doc["model2"].items()},
            pruned_kept=tuple(doc["pruned_kept"]),
            prune_audit=tuple(doc["prune_audit"]),
            outlier_removed_ids=tuple(doc["outlier_removed_ids"]),
            background_columns=tuple(doc["background_columns"]),
            background=np.asarray(doc["background"], dtype=np.float64)
            if doc["background"]
            else np.zeros((0, len(doc["background_columns"]))),
            pipeline_config=PipelineConfig.from_dict(doc["pipeline_config"]),
            created_at=doc.get("created_at", ""),
            package_version=doc.get("package_version", ""),
            format_version=version,
        )


def save_bundle(bundle: ModelBundle, path: str | Path) -> None:
    doc = bundle.to_dict()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def load_bundle(path: str | Path) -> ModelBundle:
    path = Path(path)
    if not path.exists():
        raise BundleError(f"bundle file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise BundleError(f"corrupted bundle {path}: {exc}") from exc
    return ModelBundle.from_dict(doc)


@dataclass
class TargetStageResult:
    entry: ModelEntry
    trials: list[TrialResult] = field(default_factory=list)


@dataclass
class Stage1Result:
    data: Dataset
    train: Dataset
    test: Dataset
    standardizer: StandardizationParams
    per_target: dict[str, TargetStageResult]
    config: PipelineConfig


def _train_one(
    train: Dataset,
    test: Dataset,
    std: StandardizationParams,
    target: str,
    features: Sequence[str],
    selection: FeatureSelection,
    stage: int,
    pipeline_config: PipelineConfig,
    search_seed: int,
    reuse_config: GbtConfig | None = None,
) -> TargetStageResult:
    std_train = apply_standardizer(std, train)
    std_test = apply_standardizer(std, test)

    trials: list[TrialResult] = []
    if reuse_config is None:
        base = GbtConfig(n_rounds=pipeline_config.search_rounds)
        best, trials = random_search(
            SearchSpace.default(),
            pipeline_config.n_trials,
            std_train,
            target,
            k=pipeline_config.k,
            seed=search_seed,
            base_config=base,
            features=features,
            n_workers=pipeline_config.n_workers,
        )
        chosen = replace(best.config, n_rounds=pipeline_config.final_rounds)
    else:
        chosen = replace(reuse_config, n_rounds=pipeline_config.final_rounds)

    ensemble = gbt_fit(std_train, target, chosen, features=features)
    train_pred = ensemble.predict_matrix(std_train.matrix(list(features)))
    test_pred = ensemble.predict_matrix(std_test.matrix(list(features)))
    entry = ModelEntry(
        stage=stage,
        target=target,
        selection=selection,
        features_used=tuple(features),
        config=chosen,
        ensemble=ensemble,
        standardizer=std,
        train_metrics=evaluate(train.column(target), train_pred),
        test_metrics=evaluate(test.column(target), test_pred),
        train_row_ids=train.row_ids,
        test_row_ids=test.row_ids,
        trial_log_ref=f"stage{stage}:{target}",
    )
    return TargetStageResult(entry=entry, trials=trials)


def run_stage1(data: Dataset, config: PipelineConfig) -> Stage1Result:
    """Tune and train the first-generation model per target on raw data."""
    schema = data.schema
    targets = config.resolved_targets(schema)
    train, test = split(data, config.train_fraction, _derive_seed(config.seed, SEED_SPLIT))
    std = fit_standardizer(train, schema.input_names)

    per_target: dict[str, TargetStageResult] = {}
    for ti, target in enumerate(targets):
        selection = FeatureSelection(
            target=target,
            included=tuple(schema.input_names),
            excluded=(),
            policy="all",
        )
        per_target[target] = _train_one(
            train,
            test,
            std,
            target,
            schema.input_names,
            selection,
            stage=1,
            pipeline_config=config,
            search_seed=_derive_seed(config.seed, SEED_SEARCH, ti),
        )
    return Stage1Result(
        data=data, train=train, test=test, standardizer=std, per_target=per_target, config=config
    )


def run_stage2(data: Dataset, stage1: Stage1Result, config: PipelineConfig | None = None) -> ModelBundle:
    """Clean (prune, de-outlier, select), retrain, and assemble the bundle."""
    config = config or stage1.config
    schema = data.schema
    targets = config.resolved_targets(schema)

    # 1. multicollinearity pruning on the input columns
    corr = correlation_matrix(data, schema.input_names)
    kept, audits = prune_multicollinear(
        corr, threshold=config.prune_threshold, keep_overrides=config.keep_overrides
    )

    # 2. isolation-forest outlier removal on the pruned inputs
    forest_seed = _derive_seed(config.seed, SEED_FOREST)
    if config.filter_scope == "full":
        scope_data = data
    else:
        scope_data = stage1.train
    psi = config.forest_psi or min(256, scope_data.n)
    removed_ids: list[str] = []
    if config.contamination > 0.0:
        forest = fit_isolation_forest(
            scope_data, n_trees=config.forest_trees, psi=psi, seed=forest_seed, columns=kept
        )
        scores = score_anomalies(forest, scope_data)
        cleaned_scope, removed_ids = filter_outliers(scope_data, scores, config.contamination)
    else:
        cleaned_scope = scope_data

    # 3. split policy: full scope re-splits the cleaned data with the same
    #    derived seed; train-only scope keeps the stage-1 test set intact
    if config.filter_scope == "full":
        train2, test2 = split(
            cleaned_scope, config.train_fraction, _derive_seed(config.seed, SEED_SPLIT)
        )
    else:
        train2, test2 = cleaned_scope, stage1.test
    std2 = fit_standardizer(train2, schema.input_names)

    # 4. per-target selection and retraining
    model2: dict[str, ModelEntry] = {}
    trials2: dict[str, list[TrialResult]] = {}
    for ti, target in enumerate(targets):
        policy = config.policy_for(target, schema)
        if policy.get("kind") == "fixed-list":
            ranking = [(name, 0.0) for name in schema.input_names]
        else:
            stage1_entry = stage1.per_target[target].entry
            bg_seed = _derive_seed(config.seed, SEED_BACKGROUND, ti)
            rng = np.random.default_rng(bg_seed)
            std_train1 = apply_standardizer(stage1_entry.standardizer, stage1.train)
            mat = std_train1.matrix(list(stage1_entry.features_used))
            n_bg = min(config.background_rows, mat.shape[0])
            bg = mat[rng.choice(mat.shape[0], size=n_bg, replace=False)]
            sample = mat[rng.choice(mat.shape[0], size=min(128, mat.shape[0]), replace=False)]
            ranking = rank_features(stage1_entry.ensemble, sample, bg)
        selection = select_features(ranking, policy, target=target)
        included = set(selection.included) & set(kept)
        features = [f for f in schema.input_names if f in included]
        if not features:
            raise SchemaError(
                f"feature selection and pruning left no inputs for target {target!r}"
            )
        reuse = None if config.retune_stage2 else stage1.per_target[target].entry.config
        result = _train_one(
            train2,
            test2,
            std2,
            target,
            features,
            selection,
            stage=2,
            pipeline_config=config,
            search_seed=_derive_seed(config.seed, SEED_SEARCH, ti),
            reuse_config=reuse,
        )
        model2[target] = result.entry
        trials2[target] = result.trials

    # background sample for attribution: raw-unit training rows of stage 2
    rng = np.random.default_rng(_derive_seed(config.seed, SEED_BACKGROUND, 9999))
    n_bg = min(config.background_rows, train2.n)
    bg_pos = np.sort(rng.choice(train2.n, size=n_bg, replace=False))
    background = train2.matrix(schema.input_names)[bg_pos]

    bundle = ModelBundle(
        schema=schema,
        targets=targets,
        model1={t: stage1.per_target[t].entry for t in targets},
        model2=model2,
        pruned_kept=tuple(kept),
        prune_audit=tuple(
            {
                "dropped": a.dropped,
                "partner": a.partner,
                "correlation": a.correlation,
                "reason": a.reason,
            }
            for a in audits
        ),
        outlier_removed_ids=tuple(removed_ids),
        background_columns=tuple(schema.input_names),
        background=background,
        pipeline_config=config,
        created_at=_dt.datetime.now(_dt.timezone.utc).isoformat(),
    )
    bundle.stage2_trials = trials2  # type: ignore[attr-defined]
    return bundle


def run_pipeline(data: Dataset, config: PipelineConfig) -> tuple[ModelBundle, dict[str, list[TrialResult]]]:
    """Stage 1 followed by stage 2; returns the bundle and all trial logs."""
    stage1 = run_stage1(data, config)
    bundle = run_stage2(data, stage1, config)
    logs: dict[str, list[TrialResult]] = {}
    for target, res in stage1.per_target.items():
        logs[f"stage1:{target}"] = res.trials
    for target, trials in getattr(bundle, "stage2_trials", {}).items():
        logs[f"stage2:{target}"] = trials
    return bundle, logs


def validate_out_of_set(
    bundle: ModelBundle, data: Dataset, target: str, stage: int = 2
) -> dict:
    """Per-row signed percentage errors against never-trained-on data."""
    entry = bundle.entry(target, stage)
    preds = entry.predict_rows(data.rows, data.schema.column_names)
    y = data.column(target)
    rows = []
    max_abs = 0.0
    for rid, yi, pi in zip(data.row_ids, y, preds):
        if abs(yi) < 1e-9:
            rows.append({"row_id": rid, "actual": float(yi), "predicted": float(pi),
                         "pct_error": None, "flag": "zero-actual"})
            continue
        pct = 100.0 * (pi - yi) / yi
        max_abs = max(max_abs, abs(pct))
        rows.append({"row_id": rid, "actual": float(yi), "predicted": float(pi),
                     "pct_error": float(pct), "flag": None})
    return {
        "target": target,
        "stage": stage,
        "rows": rows,
        "max_abs_pct_error": max_abs,
        "n_flagged": sum(1 for r in rows if r["flag"]),
    }
