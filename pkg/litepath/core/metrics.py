"""
Deployability metrics: Macro-AUC with case-level bootstrap intervals,
paired non-inferiority testing, D-Score, ranking scores and AUC retention.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import special, stats
from sklearn.metrics import roc_auc_score

from .numerics import SeededRng
from ..config.constants import Constants
from ..utils.utils import ValidationError, check_finite

logger = logging.getLogger(__name__)

Statistic = Callable[[np.ndarray, np.ndarray], float]


@dataclass
class AucResult:
    macro_auc: float
    ci_low: float
    ci_high: float
    n_bootstrap: int

    def to_dict(self):
        return {
            "macro_auc": self.macro_auc,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "n_bootstrap": self.n_bootstrap,
        }


@dataclass
class NonInferiorityResult:
    mean_diff: float
    ci_low: float
    ci_high: float
    margin: float
    passed: bool

    def to_dict(self):
        return {
            "mean_diff": self.mean_diff,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "margin": self.margin,
            "pass": self.passed,
        }


@dataclass
class DScoreInput:
    aucs: Sequence[float]
    flops: Sequence[float]
    alpha: float = Constants.DSCORE_ALPHA

    def __post_init__(self):
        if len(self.aucs) != len(self.flops):
            raise ValidationError("aucs and flops must have the same length")
        if len(self.aucs) < 2:
            raise ValidationError("D-Score needs at least two models")
        if any(not f > 0 for f in self.flops):
            raise ValidationError("FLOPs must be positive")


def macro_auc(labels: np.ndarray, scores: np.ndarray) -> float:
    """Mean one-vs-rest ROC AUC over the scorable classes.

    Args:
        labels: Class index per sample
        scores: (n, num_classes) class scores, or (n,) positive-class scores
            for a binary problem

    Returns:
        Macro-AUC; ties count one half
    """
    labels = np.asarray(labels).astype(np.int64).reshape(-1)
    scores = check_finite(np.asarray(scores, dtype=np.float64), "scores")
    if scores.shape[0] != labels.shape[0]:
        raise ValidationError(f"{labels.shape[0]} labels but {scores.shape[0]} score rows")

    if scores.ndim == 1:
        positives = labels == 1
        if positives.all() or not positives.any():
            raise ValidationError("binary AUC needs both classes present")
        return float(roc_auc_score(positives, scores))

    aucs = []
    for c in range(scores.shape[1]):
        positives = labels == c
        if positives.all() or not positives.any():
            logger.debug(f"class {c} has no positives or no negatives; skipped")
            continue
        aucs.append(roc_auc_score(positives, scores[:, c]))
    if len(aucs) < 2:
        raise ValidationError(f"fewer than 2 scorable classes ({len(aucs)})")
    return float(np.mean(aucs))


def _case_groups(n: int, case_ids: Optional[Sequence]) -> List[np.ndarray]:
    if case_ids is None:
        return [np.array([i]) for i in range(n)]
    case_ids = np.asarray(case_ids)
    order = {}
    for i, case in enumerate(case_ids):
        order.setdefault(case, []).append(i)
    return [np.array(members) for members in order.values()]


def _resample_indices(groups: List[np.ndarray], n_rep: int, seed: int,
                      accept: Callable[[np.ndarray], bool]) -> List[np.ndarray]:
    """Case-level resamples; replicate draws use seed + attempt and rejected draws are redrawn."""
    resamples = []
    attempt = 0
    max_attempts = 10 * n_rep
    while len(resamples) < n_rep:
        if attempt >= max_attempts:
            raise ValidationError(f"only {len(resamples)} of {n_rep} bootstrap resamples were usable")
        rng = SeededRng(seed + attempt)
        picked = rng.integers(0, len(groups), len(groups))
        indices = np.concatenate([groups[g] for g in picked])
        attempt += 1
        if accept(indices):
            resamples.append(indices)
    skipped = attempt - n_rep
    if skipped:
        logger.debug(f"redrew {skipped} degenerate bootstrap resamples")
    return resamples


def bootstrap_samples(labels: np.ndarray, scores: np.ndarray, case_ids: Optional[Sequence] = None,
                      statistic: Statistic = macro_auc, n_rep: int = Constants.BOOTSTRAP_REPLICATES,
                      seed: int = 0) -> np.ndarray:
    """Statistic evaluated on n_rep case-level resamples."""
    labels = np.asarray(labels)
    scores = np.asarray(scores)
    groups = _case_groups(len(labels), case_ids)
    if len(groups) < 2:
        raise ValidationError("bootstrap needs at least two cases")

    values = []

    def accept(indices):
        try:
            values.append(statistic(labels[indices], scores[indices]))
            return True
        except ValidationError:
            return False

    _resample_indices(groups, n_rep, seed, accept)
    return np.asarray(values, dtype=np.float64)


def bootstrap_ci(labels: np.ndarray, scores: np.ndarray, case_ids: Optional[Sequence] = None,
                 statistic: Statistic = macro_auc, n_rep: int = Constants.BOOTSTRAP_REPLICATES,
                 seed: int = 0) -> Tuple[float, float]:
    """Percentile (2.5%, 97.5%) interval over case-level resamples."""
    samples = bootstrap_samples(labels, scores, case_ids, statistic, n_rep, seed)
    low, high = np.percentile(samples, Constants.CI_PERCENTILES)
    return float(low), float(high)


def auc_with_ci(labels: np.ndarray, scores: np.ndarray, case_ids: Optional[Sequence] = None,
                n_rep: int = Constants.BOOTSTRAP_REPLICATES, seed: int = 0) -> AucResult:
    point = macro_auc(labels, scores)
    low, high = bootstrap_ci(labels, scores, case_ids, macro_auc, n_rep, seed)
    return AucResult(point, min(low, point), max(high, point), n_rep)


def paired_bootstrap_diffs(labels: np.ndarray, scores_model: np.ndarray, scores_baseline: np.ndarray,
                           case_ids: Optional[Sequence] = None,
                           n_rep: int = Constants.BOOTSTRAP_REPLICATES, seed: int = 0) -> np.ndarray:
    """AUC(model) - AUC(baseline) on shared case-level resamples."""
    labels = np.asarray(labels)
    scores_model = np.asarray(scores_model)
    scores_baseline = np.asarray(scores_baseline)
    if scores_model.shape != scores_baseline.shape:
        raise ValidationError("paired scores must have the same shape")
    groups = _case_groups(len(labels), case_ids)
    if len(groups) < 2:
        raise ValidationError("bootstrap needs at least two cases")

    diffs = []

    def accept(indices):
        try:
            diffs.append(macro_auc(labels[indices], scores_model[indices])
                         - macro_auc(labels[indices], scores_baseline[indices]))
            return True
        except ValidationError:
            return False

    _resample_indices(groups, n_rep, seed, accept)
    return np.asarray(diffs, dtype=np.float64)


def noninferiority(diffs: Sequence[float], margin: float = Constants.NONINFERIORITY_MARGIN) -> NonInferiorityResult:
    """Pass iff the 2.5th percentile of the AUC differences exceeds margin."""
    diffs = np.sort(np.asarray(diffs, dtype=np.float64))
    if diffs.size < Constants.MIN_NONINFERIORITY_SAMPLES:
        raise ValidationError(
            f"non-inferiority needs at least {Constants.MIN_NONINFERIORITY_SAMPLES} samples, got {diffs.size}"
        )
    low, high = np.percentile(diffs, Constants.CI_PERCENTILES)
    return NonInferiorityResult(
        mean_diff=float(diffs.mean()),
        ci_low=float(low),
        ci_high=float(high),
        margin=margin,
        passed=bool(low > margin),
    )


def lower_median(values: Sequence[float]) -> float:
    """Median that picks the lower middle element for even counts."""
    ordered = sorted(values)
    return float(ordered[(len(ordered) - 1) // 2])


def dscore(data: DScoreInput) -> np.ndarray:
    """d = a_norm^alpha * f_norm^(1 - alpha) per model.

    a_norm is min-max normalised AUC; f_norm = 1 - sigmoid(ln f - ln T) with
    T the lower median of the FLOPs.
    """
    aucs = np.asarray(data.aucs, dtype=np.float64)
    flops = np.asarray(data.flops, dtype=np.float64)
    spread = aucs.max() - aucs.min()
    if spread == 0:
        raise ValidationError("all AUCs are equal; D-Score is undefined, compare models with differing AUCs")
    a_norm = (aucs - aucs.min()) / spread
    threshold = lower_median(flops)
    f_norm = 1.0 - special.expit(np.log(flops) - np.log(threshold))
    return a_norm ** data.alpha * f_norm ** (1.0 - data.alpha)


def average_dscore(per_cohort: Mapping[str, Mapping[str, float]]) -> Dict[str, float]:
    """Mean D-Score per model over cohorts ({cohort: {model: score}})."""
    models = _common_models(per_cohort)
    return {model: float(np.mean([scores[model] for scores in per_cohort.values()])) for model in models}


def _common_models(table: Mapping[str, Mapping[str, float]]) -> List[str]:
    if not table:
        raise ValidationError("empty table")
    cohorts = list(table)
    models = sorted(table[cohorts[0]])
    for cohort in cohorts:
        if sorted(table[cohort]) != models:
            raise ValidationError(f"cohort '{cohort}' does not score every model")
    return models


def ranking_scores(aucs: Mapping[str, Mapping[str, float]]) -> Dict[str, float]:
    """Mean rank per model over cohorts ({cohort: {model: auc}}); rank 1 is best, ties share midranks."""
    models = _common_models(aucs)
    ranks = np.zeros(len(models))
    for cohort, scores in aucs.items():
        ranks += stats.rankdata([-scores[m] for m in models], method="average")
    ranks /= len(aucs)
    return {model: float(rank) for model, rank in zip(models, ranks)}


def auc_retention(model_auc: float, reference_auc: float) -> float:
    """100 * model_auc / reference_auc."""
    if not reference_auc > 0:
        raise ValidationError(f"reference AUC must be positive, got {reference_auc}")
    return 100.0 * model_auc / reference_auc


def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    return float(stats.spearmanr(a, b)[0])
