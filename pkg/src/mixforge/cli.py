"""Command-line interface: every pipeline capability behind one entry point.

Subcommands delegate 1:1 to module operations. Every run that writes
artifacts also writes a manifest recording the resolved configuration and
seeds, so any output can be reproduced from its manifest alone. Exit codes:
0 success, 1 domain error, 2 usage error. Logging goes to stderr; the level
is controlled by the MIXFORGE_LOG environment variable.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import BaselineKind, load_reference_rows, preselect
from .data import (
    load_dataset,
    load_schema,
    save_dataset,
    split,
    uhpc_schema,
)
from .errors import MixforgeError
from .explain import TreeShapExplainer
from .metrics import evaluate
from .pipeline import (
    ModelBundle,
    PipelineConfig,
    load_bundle,
    run_pipeline,
    save_bundle,
    validate_out_of_set,
)
from .preprocess import correlation_matrix, filter_outliers, fit_isolation_forest, prune_multicollinear, score_anomalies
from .tune import write_trial_log

logger = logging.getLogger(__name__)


def _setup_logging() -> None:
    level = os.environ.get("MIXFORGE_LOG", "WARNING").upper()
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_schema_arg(path: str | None):
    return load_schema(path) if path else uhpc_schema()


def _resolve_config(args) -> PipelineConfig:
    """Precedence: flags > config file > defaults."""
    doc: dict = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            doc.update(json.load(fh))
    for key, value in getattr(args, "set_option", None) or []:
        doc[key] = value
    if getattr(args, "seed", None) is not None:
        doc["seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        doc["n_trials"] = args.trials
    if getattr(args, "workers", None) is not None:
        doc["n_workers"] = args.workers
    if getattr(args, "targets", None):
        doc["targets"] = args.targets
    return PipelineConfig.from_dict(doc)


def _parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _write_manifest(out_dir: Path, command: str, config: dict, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "package_version": __version__,
        "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "config": config,
    }
    if extra:
        manifest.update(extra)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _parse_feature_sets(pairs: list[str]) -> dict[str, float]:
    row: dict[str, float] = {}
    for pair in pairs:
        key, value = _parse_override(pair)
        row[key] = float(value)
    return row


def cmd_validate(args) -> int:
    schema = _load_schema_arg(args.schema)
    ds = load_dataset(args.data, schema, strict=args.strict)
    print(json.dumps({"rows": ds.n, "columns": len(schema.columns), "status": "ok"}))
    return 0


def cmd_split(args) -> int:
    schema = _load_schema_arg(args.schema)
    ds = load_dataset(args.data, schema)
    train, test = split(ds, args.fraction, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(train, out / "train.csv")
    save_dataset(test, out / "test.csv")
    _write_manifest(out, "split", {"fraction": args.fraction, "seed": args.seed, "data": str(args.data)})
    print(json.dumps({"train_rows": train.n, "test_rows": test.n, "out": str(out)}))
    return 0


def cmd_preselect(args) -> int:
    schema = _load_schema_arg(args.schema)
    ds = load_dataset(args.data, schema)
    train, test = split(ds, args.fraction, args.seed)
    kinds = [BaselineKind(k) for k in args.kinds] if args.kinds else None
    external = load_reference_rows() if args.with_reference_rows else None
    report = preselect(
        train, test, args.target,
        kinds=kinds, gate=(args.gate_rmse, args.gate_r2),
        seed=args.seed, external_rows=external,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "preselect.json").write_text(report.to_json(), encoding="utf-8")
    (out / "preselect.csv").write_text(report.to_csv(), encoding="utf-8")
    _write_manifest(out, "preselect", {
        "data": str(args.data), "target": args.target, "seed": args.seed,
        "gate": [args.gate_rmse, args.gate_r2], "kinds": args.kinds,
    })
    print(json.dumps({"ranked": list(report.ranked), "passing": list(report.passing)}))
    return 0


def cmd_clean(args) -> int:
    schema = _load_schema_arg(args.schema)
    ds = load_dataset(args.data, schema)
    corr = correlation_matrix(ds, schema.input_names)
    kept, audits = prune_multicollinear(corr, threshold=args.prune_threshold)
    forest = fit_isolation_forest(ds, n_trees=args.trees, seed=args.seed, columns=kept)
    scores = score_anomalies(forest, ds)
    cleaned, removed = filter_outliers(ds, scores, args.contamination)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(cleaned, out / "cleaned.csv")
    (out / "correlation.csv").write_text(corr.to_csv(), encoding="utf-8")
    (out / "correlation.json").write_text(
        json.dumps(corr.to_dict(), sort_keys=True), encoding="utf-8"
    )
    with open(out / "audit.csv", "w", encoding="utf-8") as fh:
        fh.write("kind,detail\n")
        for a in audits:
            fh.write(f"pruned,{a.dropped} ({a.reason} vs {a.partner})\n")
        for rid in removed:
            fh.write(f"outlier,{rid}\n")
    _write_manifest(out, "clean", {
        "data": str(args.data), "seed": args.seed,
        "prune_threshold": args.prune_threshold, "contamination": args.contamination,
    })
    print(json.dumps({
        "kept_columns": kept, "dropped_columns": [a.dropped for a in audits],
        "removed_rows": len(removed), "remaining_rows": cleaned.n,
    }))
    return 0


def cmd_tune(args) -> int:
    from .gbtree import GbtConfig
    from .tune import SearchSpace, random_search

    schema = _load_schema_arg(args.schema)
    ds = load_dataset(args.data, schema)
    cfg = _resolve_config(args)
    best, trials = random_search(
        SearchSpace.default(), cfg.n_trials, ds, args.target,
        k=cfg.k, seed=cfg.seed, base_config=GbtConfig(n_rounds=cfg.search_rounds),
        n_workers=cfg.n_workers,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trial_log(trials, out / "trials.jsonl")
    _write_manifest(out, "tune", cfg.to_dict(), {"target": args.target, "data": str(args.data)})
    print(json.dumps({"best_mean_rmse": best.mean_rmse, "best_config": best.config.to_dict()}))
    return 0


def cmd_train(args) -> int:
    from .pipeline import run_stage1

    schema = _load_schema_arg(args.schema)
    ds = load_dataset(args.data, schema)
    cfg = _resolve_config(args)
    stage1 = run_stage1(ds, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trial_path = out / "trials.jsonl"
    if trial_path.exists():
        trial_path.unlink()
    summary = {}
    for target, res in stage1.per_target.items():
        write_trial_log(res.trials, trial_path)
        summary[target] = {
            "test_rmse": res.entry.test_metrics.rmse,
            "test_r2": res.entry.test_metrics.r2,
        }
    _write_manifest(out, "train", cfg.to_dict(), {"data": str(args.data)})
    print(json.dumps({"stage1": summary}))
    return 0


def cmd_pipeline(args) -> int:
    schema = _load_schema_arg(args.schema)
    ds = load_dataset(args.data, schema)
    cfg = _resolve_config(args)
    bundle, logs = run_pipeline(ds, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_bundle(bundle, out / "bundle.json")
    trial_path = out / "trials.jsonl"
    if trial_path.exists():
        trial_path.unlink()
    for ref in sorted(logs):
        write_trial_log(logs[ref], trial_path)
    with open(out / "audit.csv", "w", encoding="utf-8") as fh:
        fh.write("kind,detail\n")
        for a in bundle.prune_audit:
            fh.write(f"pruned,{a['dropped']} ({a['reason']} vs {a['partner']})\n")
        for rid in bundle.outlier_removed_ids:
            fh.write(f"outlier,{rid}\n")
    report = {
        t: {
            "model1": {"test_rmse": bundle.model1[t].test_metrics.rmse,
                       "test_r2": bundle.model1[t].test_metrics.r2},
            "model2": {"test_rmse": bundle.model2[t].test_metrics.rmse,
                       "test_r2": bundle.model2[t].test_metrics.r2},
        }
        for t in bundle.targets
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    _write_manifest(out, "pipeline", cfg.to_dict(), {"data": str(args.data)})
    print(json.dumps({"out": str(out), "targets": list(bundle.targets)}))
    return 0


def cmd_evaluate(args) -> int:
    schema = _load_schema_arg(args.schema)
    ds = load_dataset(args.data, schema)
    bundle = load_bundle(args.bundle)
    stage = args.stage
    out = {}
    for target in bundle.targets:
        entry = bundle.entry(target, stage)
        preds = entry.predict_rows(ds.rows, ds.schema.column_names)
        rep = evaluate(ds.column(target), preds)
        out[target] = rep.to_dict()
        if args.out_of_set:
            out[target]["out_of_set"] = {
                "max_abs_pct_error": validate_out_of_set(bundle, ds, target, stage)[
                    "max_abs_pct_error"
                ]
            }
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def cmd_predict(args) -> int:
    bundle = load_bundle(args.bundle)
    if args.json:
        row = {k: float(v) for k, v in json.loads(Path(args.json).read_text()).items()}
    else:
        row = _parse_feature_sets(args.set or [])
    preds = bundle.predict_row(row, stage=args.stage)
    out = {
        t: {"value": v, "unit": bundle.schema.column(t).unit}
        for t, v in preds.items()
    }
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def cmd_explain(args) -> int:
    bundle = load_bundle(args.bundle)
    if args.json:
        row = {k: float(v) for k, v in json.loads(Path(args.json).read_text()).items()}
    else:
        row = _parse_feature_sets(args.set or [])
    out = {}
    for target in bundle.targets:
        entry = bundle.entry(target, args.stage)
        bg = bundle.background[:, [bundle.background_columns.index(f) for f in entry.features_used]]
        from .data import standardize_matrix

        bg_std = standardize_matrix(entry.standardizer, bg, entry.features_used)
        explainer = TreeShapExplainer(entry.ensemble, bg_std)
        values = [float(row[f]) for f in entry.features_used if f in row]
        missing = [f for f in entry.features_used if f not in row]
        if missing:
            raise MixforgeError(f"missing feature {missing[0]!r} in prediction input")
        mat = standardize_matrix(
            entry.standardizer, np.asarray([values]), entry.features_used
        )
        attr = explainer.attribute(mat[0])
        out[target] = attr.to_dict()
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.bundle, strict_ranges=args.strict)
    host, _, port = args.bind.partition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000), log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixforge",
        description="Two-stage boosted-tree pipeline for UHPC mixture properties",
    )
    parser.add_argument("--version", action="version", version=f"mixforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, data=True, out=False):
        if data:
            p.add_argument("--data", required=True, help="input CSV file")
        p.add_argument("--schema", help="schema JSON (default: built-in UHPC schema)")
        if out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("validate", help="check a CSV against the schema")
    add_common(p)
    p.add_argument("--strict", action="store_true", help="treat out-of-range values as errors")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("split", help="seeded train/test split to CSV files")
    add_common(p, out=True)
    p.add_argument("--fraction", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("preselect", help="compare baseline model families")
    add_common(p, out=True)
    p.add_argument("--target", required=True)
    p.add_argument("--fraction", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--kinds", nargs="*", help="subset of baseline kinds")
    p.add_argument("--gate-rmse", type=float, default=30.0)
    p.add_argument("--gate-r2", type=float, default=0.18)
    p.add_argument(
        "--with-reference-rows",
        action="store_true",
        help="merge the published 21-learner reference metrics",
    )
    p.set_defaults(func=cmd_preselect)

    p = sub.add_parser("clean", help="prune multicollinear columns and remove outliers")
    add_common(p, out=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--prune-threshold", type=float, default=0.7)
    p.add_argument("--contamination", type=float, default=0.10)
    p.add_argument("--trees", type=int, default=100)
    p.set_defaults(func=cmd_clean)

    def add_config_opts(p):
        p.add_argument("--config", help="pipeline config JSON file")
        p.add_argument("--seed", type=int, help="master seed (overrides config file)")
        p.add_argument("--trials", type=int, help="random-search trials per target")
        p.add_argument("--workers", type=int, help="parallel trial workers")
        p.add_argument("--targets", nargs="*", help="subset of target columns")
        p.add_argument(
            "--set-option",
            action="append",
            type=_parse_override,
            metavar="KEY=VALUE",
            help="override any pipeline config field",
        )

    p = sub.add_parser("tune", help="random-search one target")
    add_common(p, out=True)
    p.add_argument("--target", required=True)
    add_config_opts(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("train", help="stage 1 only: tune and fit on raw data")
    add_common(p, out=True)
    add_config_opts(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("pipeline", help="full two-stage run producing a bundle")
    add_common(p, out=True)
    add_config_opts(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("evaluate", help="score a bundle against a labelled CSV")
    add_common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--stage", type=int, default=2, choices=(1, 2))
    p.add_argument("--out-of-set", action="store_true", help="add percentage-error summary")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="predict the five properties for one mix")
    p.add_argument("--bundle", required=True)
    p.add_argument("--stage", type=int, default=2, choices=(1, 2))
    p.add_argument("--set", action="append", metavar="NAME=VALUE", help="feature assignment")
    p.add_argument("--json", help="JSON file with a feature->value map")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("explain", help="per-feature attribution for one mix")
    p.add_argument("--bundle", required=True)
    p.add_argument("--stage", type=int, default=2, choices=(1, 2))
    p.add_argument("--set", action="append", metavar="NAME=VALUE")
    p.add_argument("--json", help="JSON file with a feature->value map")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("serve", help="run the HTTP prediction service")
    p.add_argument("--bundle", required=True)
    p.add_argument("--bind", default="127.0.0.1:8000")
    p.add_argument("--strict", action="store_true", help="reject out-of-range inputs")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MixforgeError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
