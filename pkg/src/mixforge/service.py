"""HTTP JSON API serving a model bundle for prediction and explanation.

The service is stateless over an immutable bundle: identical requests give
identical responses. Range checking against the schema's observed ranges is
lenient by default (out-of-range inputs produce structured warnings, never
errors) because mix designers deliberately explore beyond the compiled
data; a strict startup flag turns those warnings into rejections.
"""

from __future__ import annotations

import logging
import uuid
from pathlib import Path
from typing import Mapping

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .data import standardize_matrix
from .errors import MixforgeError
from .explain import TreeShapExplainer
from .pipeline import ModelBundle, load_bundle

logger = logging.getLogger(__name__)


def _required_features(bundle: ModelBundle, stage: int) -> list[str]:
    seen: list[str] = []
    for target in bundle.targets:
        for f in bundle.entry(target, stage).features_used:
            if f not in seen:
                seen.append(f)
    return seen


def _range_warnings(bundle: ModelBundle, row: Mapping[str, float]) -> list[dict]:
    warnings = []
    for name, value in row.items():
        col = bundle.schema.column(name)
        if not col.observed_min <= value <= col.observed_max:
            warnings.append(
                {
                    "column": name,
                    "value": value,
                    "observed_min": col.observed_min,
                    "observed_max": col.observed_max,
                    "message": (
                        f"{name} = {value} is outside the observed range "
                        f"[{col.observed_min}, {col.observed_max}]"
                    ),
                }
            )
    return warnings


async def _parse_feature_body(request: Request, bundle: ModelBundle, stage: int):
    """Returns (row, warnings) or a JSONResponse error."""
    try:
        body = await request.json()
    except Exception as exc:
        return JSONResponse(
            status_code=400,
            content={"error": "malformed JSON body", "detail": str(exc)},
        )
    if not isinstance(body, dict):
        return JSONResponse(
            status_code=400,
            content={"error": "malformed JSON body", "detail": "expected an object"},
        )
    input_names = set(bundle.schema.input_names)
    row: dict[str, float] = {}
    for name, value in body.items():
        if name not in input_names:
            return JSONResponse(
                status_code=422,
                content={"error": "unknown feature", "feature": name},
            )
        if not isinstance(value, (int, float)) or isinstance(value, bool) or not np.isfinite(value):
            return JSONResponse(
                status_code=422,
                content={"error": "feature value must be a finite number", "feature": name},
            )
        row[name] = float(value)
    missing = [f for f in _required_features(bundle, stage) if f not in row]
    if missing:
        return JSONResponse(
            status_code=422,
            content={"error": "missing required feature", "feature": missing[0],
                     "missing": missing},
        )
    return row, _range_warnings(bundle, row)


def create_app(
    bundle: ModelBundle | str | Path,
    strict_ranges: bool = False,
    stage: int = 2,
) -> FastAPI:
    if not isinstance(bundle, ModelBundle):
        bundle = load_bundle(bundle)
    for target in bundle.targets:
        bundle.entry(target, stage)  # self-validation: every entry present

    app = FastAPI(title="mixforge prediction service", version=bundle.package_version)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    explainers: dict[str, TreeShapExplainer] = {}

    def explainer_for(target: str) -> TreeShapExplainer:
        if target not in explainers:
            entry = bundle.entry(target, stage)
            cols = [bundle.background_columns.index(f) for f in entry.features_used]
            bg = bundle.background[:, cols]
            bg_std = standardize_matrix(entry.standardizer, bg, entry.features_used)
            explainers[target] = TreeShapExplainer(entry.ensemble, bg_std)
        return explainers[target]

    @app.get("/health")
    async def health():
        return {"status": "ok"}

    @app.get("/schema")
    async def schema():
        return {
            "name": bundle.schema.name,
            "columns": [
                {
                    "name": c.name,
                    "unit": c.unit,
                    "observed_min": c.observed_min,
                    "observed_max": c.observed_max,
                    "observed_mean": c.observed_mean,
                    "kind": c.kind,
                }
                for c in bundle.schema.columns
            ],
            "targets": list(bundle.targets),
            "features_used": {
                t: list(bundle.entry(t, stage).features_used) for t in bundle.targets
            },
            "strict_ranges": strict_ranges,
        }

    @app.get("/model/info")
    async def model_info():
        out = {}
        for t in bundle.targets:
            entry = bundle.entry(t, stage)
            out[t] = {
                "stage": entry.stage,
                "config": entry.config.to_dict(),
                "train_metrics": entry.train_metrics.to_dict(),
                "test_metrics": entry.test_metrics.to_dict(),
                "features_used": list(entry.features_used),
                "excluded": list(entry.selection.excluded),
                "n_trees": len(entry.ensemble.trees),
            }
        return {
            "targets": out,
            "created_at": bundle.created_at,
            "package_version": bundle.package_version,
            "pipeline_seed": bundle.pipeline_config.seed,
            "outliers_removed": len(bundle.outlier_removed_ids),
            "pruned_kept": list(bundle.pruned_kept),
        }

    @app.post("/predict")
    async def predict(request: Request):
        parsed = await _parse_feature_body(request, bundle, stage)
        if isinstance(parsed, JSONResponse):
            return parsed
        row, warnings = parsed
        if strict_ranges and warnings:
            return JSONResponse(
                status_code=422,
                content={"error": "value outside observed range", "warnings": warnings},
            )
        try:
            preds = bundle.predict_row(row, stage=stage)
        except MixforgeError as exc:
            return JSONResponse(status_code=422, content={"error": str(exc)})
        except Exception:
            error_id = uuid.uuid4().hex
            logger.exception("prediction failed (error id %s)", error_id)
            return JSONResponse(status_code=500, content={"error_id": error_id})
        return {
            "predictions": {
                t: {
                    "value": v,
                    "unit": bundle.schema.column(t).unit,
                    "features_used": list(bundle.entry(t, stage).features_used),
                }
                for t, v in preds.items()
            },
            "warnings": warnings,
        }

    @app.post("/explain")
    async def explain(request: Request):
        parsed = await _parse_feature_body(request, bundle, stage)
        if isinstance(parsed, JSONResponse):
            return parsed
        row, warnings = parsed
        if strict_ranges and warnings:
            return JSONResponse(
                status_code=422,
                content={"error": "value outside observed range", "warnings": warnings},
            )
        try:
            out = {}
            for target in bundle.targets:
                entry = bundle.entry(target, stage)
                mat = np.asarray([[row[f] for f in entry.features_used]])
                std = standardize_matrix(entry.standardizer, mat, entry.features_used)
                attr = explainer_for(target).attribute(std[0])
                out[target] = attr.to_dict()
        except MixforgeError as exc:
            return JSONResponse(status_code=422, content={"error": str(exc)})
        except Exception:
            error_id = uuid.uuid4().hex
            logger.exception("explanation failed (error id %s)", error_id)
            return JSONResponse(status_code=500, content={"error_id": error_id})
        return {"explanations": out, "warnings": warnings}

    return app
