"""
Delimited-text tables: cohort manifests and per-slide score tables.

Every file starts with a provenance comment line
"# config_hash=... seed=... weights_hash=...".
"""

import logging
import os
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd

from .synthetic import CohortSplits
from ..utils.utils import ValidationError

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["slide_id", "case_id", "split", "label", "n_patches", "lesion_start", "lesion_stop"]
SCORE_PREFIX = "score_class_"


def _write_with_provenance(path: str, frame: pd.DataFrame, provenance: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(provenance.rstrip("\n") + "\n")
        frame.to_csv(f, index=False, float_format="%.17g", lineterminator="\n")
    return path


def read_provenance(path: str) -> Dict[str, str]:
    """Key/value pairs of the leading comment line (empty if there is none)."""
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline().strip()
    if not first.startswith("#"):
        return {}
    pairs = (item.split("=", 1) for item in first.lstrip("#").split())
    return {key: value for key, value in pairs}


def _read_with_provenance(path: str) -> Tuple[pd.DataFrame, Dict[str, str]]:
    if not os.path.exists(path):
        raise ValidationError(f"Table not found: {path}")
    provenance = read_provenance(path)
    frame = pd.read_csv(path, skiprows=1 if provenance else 0, dtype={"slide_id": str, "case_id": str})
    return frame, provenance


def manifest_frame(splits: CohortSplits) -> pd.DataFrame:
    rows = []
    for name in ("train", "val", "test"):
        for slide in splits.split(name):
            lesion = slide.lesion or (0, 0)
            rows.append([slide.slide_id, slide.case_id, name, slide.label, slide.n_patches, lesion[0], lesion[1]])
    return pd.DataFrame(rows, columns=MANIFEST_COLUMNS)


def write_manifest(path: str, splits: CohortSplits, provenance: str) -> str:
    return _write_with_provenance(path, manifest_frame(splits), provenance)


def read_manifest(path: str) -> pd.DataFrame:
    frame, _ = _read_with_provenance(path)
    missing = set(MANIFEST_COLUMNS) - set(frame.columns)
    if missing:
        raise ValidationError(f"{path} is missing manifest columns {sorted(missing)}")
    return frame


def score_frame(slide_ids: Iterable[str], case_ids: Iterable[str], labels: Iterable[Optional[int]],
                probabilities: np.ndarray, flops: Optional[Iterable[int]] = None) -> pd.DataFrame:
    """Table with slide_id, case_id, label, predicted, [flops,] score_class_0..k."""
    probabilities = np.atleast_2d(np.asarray(probabilities, dtype=np.float64))
    frame = pd.DataFrame({
        "slide_id": list(slide_ids),
        "case_id": list(case_ids),
        "label": pd.array(list(labels), dtype="Int64"),
    })
    if len(frame) == 0:
        for k in range(probabilities.shape[1] if probabilities.size else 0):
            frame[f"{SCORE_PREFIX}{k}"] = []
        frame.insert(3, "predicted", pd.array([], dtype="Int64"))
        return frame
    frame["predicted"] = probabilities.argmax(axis=1)
    if flops is not None:
        frame["flops"] = np.asarray(list(flops), dtype=np.int64)
    for k in range(probabilities.shape[1]):
        frame[f"{SCORE_PREFIX}{k}"] = probabilities[:, k]
    return frame


def write_score_table(path: str, frame: pd.DataFrame, provenance: str) -> str:
    return _write_with_provenance(path, frame, provenance)


def read_score_table(path: str) -> Tuple[pd.DataFrame, Dict[str, str]]:
    """(table, provenance); the table must carry slide_id, case_id, label and score columns."""
    frame, provenance = _read_with_provenance(path)
    missing = {"slide_id", "case_id", "label"} - set(frame.columns)
    if missing or not score_columns(frame):
        raise ValidationError(f"{path} is not a score table (missing {sorted(missing) or 'scores'})")
    return frame, provenance


def score_columns(frame: pd.DataFrame) -> List[str]:
    columns = [c for c in frame.columns if c.startswith(SCORE_PREFIX)]
    return sorted(columns, key=lambda c: int(c[len(SCORE_PREFIX):]))


def score_arrays(frame: pd.DataFrame) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(labels, probabilities, case_ids) ready for the metrics functions."""
    if frame["label"].isna().any():
        raise ValidationError("score table has unlabelled slides")
    labels = frame["label"].to_numpy(dtype=np.int64)
    scores = frame[score_columns(frame)].to_numpy(dtype=np.float64)
    return labels, scores, frame["case_id"].astype(str).to_numpy()


def write_curve(path: str, points: Iterable[Tuple[int, float]], provenance: str,
                columns: Tuple[str, str] = ("n_patches", "relative_flops")) -> str:
    """Two-column curve file (x, y) for plotting."""
    frame = pd.DataFrame(list(points), columns=list(columns))
    return _write_with_provenance(path, frame, provenance)


def read_dscore_table(path: str) -> pd.DataFrame:
    """Rows of (model, cohort, auc, flops) for the D-Score ranking."""
    frame, _ = _read_with_provenance(path)
    missing = {"model", "cohort", "auc", "flops"} - set(frame.columns)
    if missing:
        raise ValidationError(f"{path} is missing columns {sorted(missing)}")
    if frame.duplicated(["model", "cohort"]).any():
        raise ValidationError(f"{path} lists a (model, cohort) pair twice")
    return frame
