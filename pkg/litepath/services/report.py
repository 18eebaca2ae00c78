"""
Report emission: a JSON summary, a plain-text table and curve files.

Reports carry no timestamps, so emitting twice from the same inputs gives
byte-identical files.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .benchmark import BenchResult
from ..core.metrics import AucResult, DScoreInput, NonInferiorityResult, auc_retention, dscore, ranking_scores
from ..data.tables import write_curve
from ..utils.utils import Utils, ValidationError

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ["model", "macro_auc", "ci_low", "ci_high", "dscore", "mean_rank", "retention", "flops",
                 "slides_per_hour"]


@dataclass
class ReportBundle:
    json_path: str
    table_path: str
    curve_paths: List[str] = field(default_factory=list)
    table: Optional[pd.DataFrame] = None


def _check_models(aucs: Mapping[str, AucResult], sections: Mapping[str, Optional[Mapping]]):
    models = sorted(aucs)
    if not models:
        raise ValidationError("report needs at least one model")
    for name, section in sections.items():
        if section is not None and sorted(section) != models:
            raise ValidationError(f"{name} covers models {sorted(section)}, expected {models}")


def _dscores(aucs: Mapping[str, AucResult], flops: Mapping[str, float]) -> Dict[str, Optional[float]]:
    """Per-model D-Score, or None for every model when it is undefined."""
    models = sorted(aucs)
    values = [aucs[m].macro_auc for m in models]
    if len(models) < 2 or max(values) == min(values):
        logger.warning("D-Score is undefined for this model set (needs two models with differing AUCs)")
        return {m: None for m in models}
    scores = dscore(DScoreInput(values, [flops[m] for m in models]))
    return {m: float(s) for m, s in zip(models, scores)}


def resolve_reference(aucs: Mapping[str, AucResult], reference: str) -> str:
    """The reference model, or the only model when the report has just one."""
    if reference in aucs:
        return reference
    if len(aucs) != 1:
        raise ValidationError(f"reference model '{reference}' is not in the report")
    return next(iter(aucs))


def summary_table(aucs: Mapping[str, AucResult], flops: Mapping[str, float],
                  bench: Optional[Mapping[str, BenchResult]] = None, reference: str = "full") -> pd.DataFrame:
    """One row per model, sorted by model name."""
    _check_models(aucs, {"flops": flops, "bench": bench})
    models = sorted(aucs)
    reference = resolve_reference(aucs, reference)

    dscores = _dscores(aucs, flops)
    ranks = ranking_scores({"cohort": {m: aucs[m].macro_auc for m in models}})
    rows = []
    for m in models:
        rows.append({
            "model": m,
            "macro_auc": aucs[m].macro_auc,
            "ci_low": aucs[m].ci_low,
            "ci_high": aucs[m].ci_high,
            "dscore": dscores[m],
            "mean_rank": ranks[m],
            "retention": auc_retention(aucs[m].macro_auc, aucs[reference].macro_auc),
            "flops": float(flops[m]),
            "slides_per_hour": bench[m].slides_per_hour if bench else None,
        })
    return pd.DataFrame(rows, columns=TABLE_COLUMNS)


def _jsonable(value):
    if isinstance(value, float) and np.isnan(value):
        return None
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def emit_report(output_dir: str, aucs: Mapping[str, AucResult], flops: Mapping[str, float],
                provenance: str, bench: Optional[Mapping[str, BenchResult]] = None,
                reference: str = "full",
                noninferiority: Optional[Mapping[str, NonInferiorityResult]] = None,
                curves: Optional[Mapping[str, Sequence[Tuple[int, float]]]] = None,
                extra: Optional[Mapping] = None, name: str = "report") -> ReportBundle:
    """Write <name>.json, <name>.txt and one <name>_curve_<key>.csv per curve.

    Args:
        output_dir: Report directory
        aucs: Per-model Macro-AUC with confidence interval
        flops: Per-model mean FLOPs per slide
        provenance: Provenance comment line
        bench: Optional per-model throughput results
        reference: Model used as the 100% retention reference
        noninferiority: Optional per-model test against the reference
        curves: Optional named (x, y) series
        extra: Optional additional JSON fields (breakdowns, selected config)

    Returns:
        ReportBundle
    """
    table = summary_table(aucs, flops, bench, reference)
    Utils.ensure_dir(output_dir)

    models = {}
    for row in table.to_dict(orient="records"):
        model = row.pop("model")
        models[model] = {key: _jsonable(value) for key, value in row.items()}
        if bench:
            models[model]["bench"] = bench[model].to_dict()
        if noninferiority and model in noninferiority:
            models[model]["noninferiority"] = noninferiority[model].to_dict()

    record = {
        "provenance": provenance.lstrip("# ").strip(),
        "reference_model": resolve_reference(aucs, reference),
        "models": models,
    }
    if extra:
        record.update(extra)

    json_path = os.path.join(output_dir, f"{name}.json")
    with open(json_path, "w", encoding="utf-8", newline="") as f:
        f.write(json.dumps(record, sort_keys=True, indent=2) + "\n")

    table_path = os.path.join(output_dir, f"{name}.txt")
    with open(table_path, "w", encoding="utf-8", newline="") as f:
        f.write(provenance.rstrip("\n") + "\n")
        f.write(table.to_string(index=False, na_rep="-", float_format=lambda v: f"{v:.4f}") + "\n")

    curve_paths = []
    for key in sorted(curves or {}):
        path = os.path.join(output_dir, f"{name}_curve_{Utils.sanitize_filename(key)}.csv")
        curve_paths.append(write_curve(path, curves[key], provenance))

    logger.info(f"Report written to {json_path}")
    return ReportBundle(json_path, table_path, curve_paths, table)
