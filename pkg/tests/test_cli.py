import json

import numpy as np
import pytest

from mixforge.cli import main
from mixforge.data import save_dataset, uhpc_schema
from mixforge.synthetic import make_benchmark


@pytest.fixture(scope="module")
def data_csv(tmp_path_factory):
    bench = make_benchmark(n=160, seed=9)
    path = tmp_path_factory.mktemp("data") / "uhpc.csv"
    save_dataset(bench.dataset, path)
    return path


def run_cli(capsys, *argv) -> tuple[int, str]:
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


class TestValidate:
    def test_ok(self, capsys, data_csv):
        code, out = run_cli(capsys, "validate", "--data", str(data_csv))
        assert code == 0
        doc = json.loads(out)
        assert doc["rows"] == 160 and doc["status"] == "ok"

    def test_missing_column_exits_1(self, capsys, tmp_path):
        bad = tmp_path / "bad.csv"
        schema = uhpc_schema()
        cols = [c for c in schema.column_names if c != "Porosity"]
        bad.write_text(",".join(cols) + "\n" + ",".join(["1"] * len(cols)) + "\n")
        code = main(["validate", "--data", str(bad)])
        assert code == 1

    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_unknown_flag_exits_2(self, data_csv):
        with pytest.raises(SystemExit) as exc:
            main(["validate", "--data", str(data_csv), "--no-such-flag"])
        assert exc.value.code == 2


class TestSplit:
    def test_writes_artifacts(self, capsys, data_csv, tmp_path):
        out_dir = tmp_path / "split"
        code, out = run_cli(
            capsys, "split", "--data", str(data_csv), "--out", str(out_dir),
            "--fraction", "0.7", "--seed", "5",
        )
        assert code == 0
        doc = json.loads(out)
        assert doc["train_rows"] == 112 and doc["test_rows"] == 48
        assert (out_dir / "train.csv").exists()
        assert (out_dir / "test.csv").exists()
        assert (out_dir / "manifest.json").exists()

    def test_rerun_reproduces(self, capsys, data_csv, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_cli(capsys, "split", "--data", str(data_csv), "--out", str(a), "--seed", "5")
        run_cli(capsys, "split", "--data", str(data_csv), "--out", str(b), "--seed", "5")
        assert (a / "train.csv").read_bytes() == (b / "train.csv").read_bytes()
        assert (a / "test.csv").read_bytes() == (b / "test.csv").read_bytes()


class TestCleanAndPreselect:
    def test_clean_artifacts(self, capsys, data_csv, tmp_path):
        out_dir = tmp_path / "clean"
        code, out = run_cli(
            capsys, "clean", "--data", str(data_csv), "--out", str(out_dir),
            "--contamination", "0.1", "--seed", "3",
        )
        assert code == 0
        doc = json.loads(out)
        assert doc["removed_rows"] == 16
        assert doc["remaining_rows"] == 144
        assert (out_dir / "cleaned.csv").exists()
        assert (out_dir / "audit.csv").exists()
        assert (out_dir / "correlation.csv").exists()
        assert (out_dir / "correlation.json").exists()

    def test_preselect_small(self, capsys, data_csv, tmp_path):
        out_dir = tmp_path / "pre"
        code, out = run_cli(
            capsys, "preselect", "--data", str(data_csv), "--out", str(out_dir),
            "--target", "Porosity", "--kinds", "ridge", "decision_tree",
            "--seed", "2",
        )
        assert code == 0
        doc = json.loads(out)
        assert set(doc["ranked"]) == {"ridge", "decision_tree"}
        assert (out_dir / "preselect.csv").exists()
        assert (out_dir / "preselect.json").exists()


@pytest.fixture(scope="module")
def run_dir(data_csv, tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("run")
    code = main([
        "pipeline", "--data", str(data_csv), "--out", str(out_dir),
        "--seed", "4", "--trials", "2", "--workers", "1",
        "--targets", "Compressive strength", "Porosity",
        "--set-option", "k=3",
        "--set-option", "search_rounds=15",
        "--set-option", "final_rounds=20",
    ])
    assert code == 0
    return out_dir


class TestPipelineCommands:
    def test_artifact_contract(self, run_dir):
        for name in ("bundle.json", "trials.jsonl", "audit.csv", "report.json", "manifest.json"):
            assert (run_dir / name).exists(), name

    def test_manifest_records_resolved_config(self, run_dir):
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 4
        assert manifest["config"]["n_trials"] == 2
        assert manifest["config"]["k"] == 3

    def test_trials_log_lines(self, run_dir):
        lines = [json.loads(l) for l in (run_dir / "trials.jsonl").read_text().splitlines()]
        # 2 stages x 2 targets x 2 trials
        assert len(lines) == 8
        assert all("mean_rmse" in l for l in lines)

    def test_predict_command(self, capsys, run_dir):
        schema = uhpc_schema()
        argv = ["predict", "--bundle", str(run_dir / "bundle.json")]
        for col in schema.columns:
            if col.kind == "input":
                argv += ["--set", f"{col.name}={col.observed_mean}"]
        code, out = run_cli(capsys, *argv)
        assert code == 0
        doc = json.loads(out)
        assert set(doc) == {"Compressive strength", "Porosity"}
        assert doc["Compressive strength"]["unit"] == "MPa"
        assert np.isfinite(doc["Compressive strength"]["value"])

    def test_predict_from_json_file(self, capsys, run_dir, tmp_path):
        schema = uhpc_schema()
        row = {c.name: c.observed_mean for c in schema.columns if c.kind == "input"}
        row_path = tmp_path / "row.json"
        row_path.write_text(json.dumps(row))
        code, out = run_cli(
            capsys, "predict", "--bundle", str(run_dir / "bundle.json"), "--json", str(row_path)
        )
        assert code == 0

    def test_explain_command_local_accuracy(self, capsys, run_dir):
        schema = uhpc_schema()
        argv = ["explain", "--bundle", str(run_dir / "bundle.json")]
        for col in schema.columns:
            if col.kind == "input":
                argv += ["--set", f"{col.name}={col.observed_mean}"]
        code, out = run_cli(capsys, *argv)
        assert code == 0
        doc = json.loads(out)
        for target, attr in doc.items():
            total = attr["base_value"] + sum(attr["contributions"].values())
            assert total == pytest.approx(attr["prediction"], abs=1e-6)

    def test_evaluate_command(self, capsys, run_dir, data_csv):
        code, out = run_cli(
            capsys, "evaluate", "--data", str(data_csv),
            "--bundle", str(run_dir / "bundle.json"), "--out-of-set",
        )
        assert code == 0
        doc = json.loads(out)
        assert "rmse" in doc["Porosity"]
        assert "out_of_set" in doc["Porosity"]

    def test_missing_bundle_is_domain_error(self, capsys, tmp_path):
        code = main(["predict", "--bundle", str(tmp_path / "none.json"), "--set", "a=1"])
        assert code == 1
