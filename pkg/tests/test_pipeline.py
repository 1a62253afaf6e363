import json

import numpy as np
import pytest

from mixforge.errors import BundleError, VersionError
from mixforge.pipeline import (
    ModelBundle,
    PipelineConfig,
    load_bundle,
    run_pipeline,
    run_stage1,
    run_stage2,
    save_bundle,
    validate_out_of_set,
)
from mixforge.synthetic import make_benchmark

from .conftest import TINY_TARGETS, tiny_config


def strip_created(doc: dict) -> dict:
    doc = dict(doc)
    doc.pop("created_at", None)
    return doc


class TestStage1:
    def test_structure(self, tiny_benchmark):
        stage1 = run_stage1(tiny_benchmark.dataset, tiny_config())
        assert set(stage1.per_target) == set(TINY_TARGETS)
        assert stage1.train.n + stage1.test.n == tiny_benchmark.dataset.n
        for res in stage1.per_target.values():
            entry = res.entry
            assert entry.stage == 1
            assert entry.selection.excluded == ()
            assert len(res.trials) == 3
            assert entry.test_metrics.rmse > 0

    def test_single_target_run(self, tiny_benchmark):
        cfg = tiny_config(targets=("Porosity",))
        stage1 = run_stage1(tiny_benchmark.dataset, cfg)
        assert list(stage1.per_target) == ["Porosity"]


class TestStage2:
    def test_bundle_contents(self, tiny_bundle):
        assert set(tiny_bundle.model1) == set(TINY_TARGETS)
        assert set(tiny_bundle.model2) == set(TINY_TARGETS)
        assert len(tiny_bundle.outlier_removed_ids) == 24  # floor(0.10 * 240)
        for t in TINY_TARGETS:
            entry = tiny_bundle.model2[t]
            assert entry.stage == 2
            assert set(entry.features_used) <= set(entry.selection.included)

    def test_default_selections_are_fixed_lists(self, tiny_bundle):
        sel = tiny_bundle.model2["Compressive strength"].selection
        assert sel.policy == "fixed-list"
        assert "Coarse aggregate" in sel.excluded

    def test_cleaned_row_count_floor_rule(self, tiny_bundle):
        entry = tiny_bundle.model2["Porosity"]
        assert len(entry.train_row_ids) + len(entry.test_row_ids) == 240 - 24

    def test_removed_ids_are_real_rows(self, tiny_benchmark, tiny_bundle):
        assert set(tiny_bundle.outlier_removed_ids) <= set(tiny_benchmark.dataset.row_ids)

    def test_outlier_removal_targets_corrupted_rows(self, tiny_benchmark, tiny_bundle):
        removed = set(tiny_bundle.outlier_removed_ids)
        corrupted = set(tiny_benchmark.corrupted_row_ids)
        # most of the removed rows should be genuinely corrupted ones
        assert len(removed & corrupted) >= 0.7 * len(removed)

    def test_noop_cleaning_reduces_to_stage1(self, tiny_benchmark):
        cfg = tiny_config(
            contamination=0.0,
            prune_threshold=1.0,
            selection_policies={t: {"kind": "bottom-k", "k": 0} for t in TINY_TARGETS},
        )
        stage1 = run_stage1(tiny_benchmark.dataset, cfg)
        bundle = run_stage2(tiny_benchmark.dataset, stage1, cfg)
        for t in TINY_TARGETS:
            e1, e2 = bundle.model1[t], bundle.model2[t]
            assert e1.config == e2.config
            assert e1.train_metrics == e2.train_metrics
            assert e1.test_metrics == e2.test_metrics

    def test_train_only_scope_keeps_test_set(self, tiny_benchmark):
        cfg = tiny_config(filter_scope="train-only")
        stage1 = run_stage1(tiny_benchmark.dataset, cfg)
        bundle = run_stage2(tiny_benchmark.dataset, stage1, cfg)
        for t in TINY_TARGETS:
            assert bundle.model2[t].test_row_ids == stage1.test.row_ids
            assert set(bundle.outlier_removed_ids) <= set(stage1.train.row_ids)

    def test_end_to_end_determinism(self, tiny_benchmark):
        cfg = tiny_config(seed=77)
        b1, _ = run_pipeline(tiny_benchmark.dataset, cfg)
        b2, _ = run_pipeline(tiny_benchmark.dataset, cfg)
        assert strip_created(b1.to_dict()) == strip_created(b2.to_dict())

    def test_metrics_rederive_from_stored_artifacts(self, tiny_benchmark, tiny_bundle):
        data = tiny_benchmark.dataset
        pos = {rid: i for i, rid in enumerate(data.row_ids)}
        for t in TINY_TARGETS:
            for entry in (tiny_bundle.model1[t], tiny_bundle.model2[t]):
                test_rows = data.rows[[pos[r] for r in entry.test_row_ids]]
                preds = entry.predict_rows(test_rows, data.schema.column_names)
                y = test_rows[:, data.schema.index_of(t)]
                rmse = float(np.sqrt(((preds - y) ** 2).mean()))
                assert rmse == pytest.approx(entry.test_metrics.rmse, abs=1e-9)


class TestBundleIO:
    def test_roundtrip_bit_exact(self, tiny_bundle, tmp_path):
        path = tmp_path / "b.json"
        save_bundle(tiny_bundle, path)
        again = load_bundle(path)
        rng = np.random.default_rng(0)
        schema = tiny_bundle.schema
        for _ in range(20):
            row = {
                c.name: float(rng.uniform(c.observed_min, c.observed_max))
                for c in schema.columns
                if c.kind == "input"
            }
            assert tiny_bundle.predict_row(row) == again.predict_row(row)

    def test_future_version_rejected(self, tiny_bundle, tmp_path):
        doc = tiny_bundle.to_dict()
        doc["format_version"] = 99
        path = tmp_path / "future.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(VersionError):
            load_bundle(path)

    def test_corrupted_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format_version": 1, "schema": {')
        with pytest.raises(BundleError, match="corrupted"):
            load_bundle(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(BundleError, match="not found"):
            load_bundle(tmp_path / "nope.json")

    def test_missing_target_lookup(self, tiny_bundle):
        with pytest.raises(BundleError, match="Slump flow"):
            tiny_bundle.entry("Slump flow")

    def test_serialized_roundtrip_identical_dict(self, tiny_bundle):
        again = ModelBundle.from_dict(tiny_bundle.to_dict())
        assert strip_created(again.to_dict()) == strip_created(tiny_bundle.to_dict())


class TestOutOfSetValidation:
    def test_known_percentage_errors(self, tiny_benchmark, tiny_bundle):
        data = tiny_benchmark.dataset.take(list(range(10)))
        target = "Compressive strength"
        entry = tiny_bundle.entry(target, 2)
        preds = entry.predict_rows(data.rows, data.schema.column_names)
        rows = data.rows.copy()
        rows[:, data.schema.index_of(target)] = preds / 1.124
        shifted = data.with_rows(rows)
        report = validate_out_of_set(tiny_bundle, shifted, target)
        for row in report["rows"]:
            assert row["pct_error"] == pytest.approx(12.4, abs=1e-9)
        assert report["max_abs_pct_error"] == pytest.approx(12.4, abs=1e-9)

    def test_negative_errors(self, tiny_benchmark, tiny_bundle):
        data = tiny_benchmark.dataset.take(list(range(5)))
        target = "Porosity"
        entry = tiny_bundle.entry(target, 2)
        preds = entry.predict_rows(data.rows, data.schema.column_names)
        rows = data.rows.copy()
        rows[:, data.schema.index_of(target)] = preds / 0.917
        report = validate_out_of_set(tiny_bundle, data.with_rows(rows), target)
        for row in report["rows"]:
            assert row["pct_error"] == pytest.approx(-8.3, abs=1e-9)

    def test_zero_actual_flagged(self, tiny_benchmark, tiny_bundle):
        data = tiny_benchmark.dataset.take(list(range(3)))
        target = "Porosity"
        rows = data.rows.copy()
        rows[:, data.schema.index_of(target)] = 0.0
        report = validate_out_of_set(tiny_bundle, data.with_rows(rows), target)
        assert report["n_flagged"] == 3
        assert all(r["pct_error"] is None for r in report["rows"])


class TestPipelineConfig:
    def test_roundtrip(self):
        cfg = tiny_config(filter_scope="train-only", retune_stage2=False)
        assert PipelineConfig.from_dict(cfg.to_dict()) == cfg

    def test_bad_scope(self):
        with pytest.raises(Exception):
            PipelineConfig(filter_scope="sideways")

    def test_unknown_target(self, tiny_benchmark):
        cfg = tiny_config(targets=("Bogus",))
        with pytest.raises(Exception, match="Bogus"):
            run_stage1(tiny_benchmark.dataset, cfg)
