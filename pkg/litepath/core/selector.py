"""
Adaptive patch selection: uniform index sampling, exclusion-aware attention
top-k, their union, and the (k_u, k_a) grid search.

Indices are 0-based positions in the slide's stored raster order.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .heads import ABMILHead
from .metrics import macro_auc
from .numerics import softmax
from ..utils.utils import NumericalError, ValidationError

logger = logging.getLogger(__name__)

AUC_TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class SelectionConfig:
    k_u: int = 0
    k_a: int = 0

    def __post_init__(self):
        if self.k_u < 0 or self.k_a < 0:
            raise ValidationError(f"k_u and k_a must be non-negative, got ({self.k_u}, {self.k_a})")
        if self.k_u + self.k_a < 1:
            raise ValidationError("k_u + k_a must be at least 1")

    @property
    def total(self) -> int:
        return self.k_u + self.k_a

    def uniform_count(self, n: int) -> int:
        return min(self.k_u, n)

    def selected_count(self, n: int) -> int:
        """|S| for a slide of n patches."""
        u = self.uniform_count(n)
        return u + min(self.k_a, n - u)

    def scorer_needed(self, n: int) -> bool:
        """Attention scores matter only if some candidates compete for the attention slots."""
        return self.k_a > 0 and self.k_u + self.k_a < n

    def to_dict(self):
        return {"k_u": self.k_u, "k_a": self.k_a}


@dataclass
class SelectionResult:
    uniform: List[int] = field(default_factory=list)
    attention: List[int] = field(default_factory=list)
    combined: List[int] = field(default_factory=list)
    n_total: int = 0

    def provenance(self, index: int) -> Optional[str]:
        """'uniform', 'attention', or None if the index was not selected."""
        if index in set(self.uniform):
            return "uniform"
        if index in set(self.attention):
            return "attention"
        return None

    def to_dict(self):
        return {
            "uniform": list(self.uniform),
            "attention": list(self.attention),
            "combined": list(self.combined),
            "n_total": self.n_total,
        }


def uniform_indices(n: int, k_u: int) -> List[int]:
    """floor(m * n / k) for m = 0..k-1 with k = min(k_u, n)."""
    if n < 1:
        raise ValidationError("cannot sample from an empty slide")
    if k_u < 0:
        raise ValidationError(f"k_u must be non-negative, got {k_u}")
    k = min(k_u, n)
    return [(m * n) // k for m in range(k)]


def attention_topk(scores: np.ndarray, excluded: Iterable[int], k_a: int) -> List[int]:
    """The k_a highest-scoring indices outside excluded, best first; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(scores)):
        raise NumericalError("attention scores must be finite")
    if k_a <= 0:
        return []
    candidates = np.ones(scores.size, dtype=bool)
    excluded = np.fromiter(excluded, dtype=np.int64)
    if excluded.size:
        if excluded.min() < 0 or excluded.max() >= scores.size:
            raise ValidationError("excluded indices fall outside the slide")
        candidates[excluded] = False
    idx = np.flatnonzero(candidates)
    order = np.lexsort((idx, -scores[idx]))
    return idx[order[:k_a]].tolist()


def topk_indices(scores: np.ndarray, k: int) -> List[int]:
    """Plain top-k over all patches (partial-inference baseline)."""
    return attention_topk(scores, (), k)


def select(n: int, scores: Optional[np.ndarray], config: SelectionConfig) -> SelectionResult:
    """Union of the uniform set and the attention set, combined in ascending order.

    scores may be None when config.scorer_needed(n) is False.
    """
    uniform = uniform_indices(n, config.k_u)
    if scores is not None:
        if len(scores) != n:
            raise ValidationError(f"expected {n} scores, got {len(scores)}")
        attention = attention_topk(scores, uniform, config.k_a)
    elif config.scorer_needed(n):
        raise ValidationError("attention scores are required for this selection")
    else:
        # Saturated: every remaining index fits in the attention budget.
        taken = set(uniform)
        attention = [i for i in range(n) if i not in taken][:config.k_a]
    return SelectionResult(
        uniform=uniform,
        attention=attention,
        combined=sorted(uniform + attention),
        n_total=n,
    )


@dataclass
class ValidationSlide:
    """Precomputed inputs for evaluating selections on one slide."""

    slide_id: str
    label: int
    scores: Optional[np.ndarray]
    embeddings: np.ndarray


def evaluate_selection(slides: Sequence[ValidationSlide], config: SelectionConfig, abmil: ABMILHead,
                       workers: int = 1) -> float:
    """Macro-AUC of the selective pipeline over precomputed validation slides."""

    def predict(slide: ValidationSlide) -> np.ndarray:
        result = select(len(slide.embeddings), slide.scores, config)
        logits, _ = abmil.forward(slide.embeddings[result.combined])
        return softmax(logits)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            probs = list(executor.map(predict, slides))
    else:
        probs = [predict(slide) for slide in slides]

    labels = np.array([slide.label for slide in slides])
    return macro_auc(labels, np.vstack(probs))


def grid_search(validation: Sequence[ValidationSlide], grid: Sequence[SelectionConfig], abmil: ABMILHead,
                workers: int = 1, logger: Optional[logging.Logger] = None) -> SelectionConfig:
    """Pick the configuration with the best validation Macro-AUC.

    Ties go to the smaller k_u + k_a, then to the larger k_u.
    """
    log = logger or logging.getLogger(__name__)
    if not validation:
        raise ValidationError("grid search needs a non-empty validation set")
    if not grid:
        raise ValidationError("grid search needs a non-empty grid")

    best = None
    best_auc = -np.inf
    for config in grid:
        auc = evaluate_selection(validation, config, abmil, workers)
        log.info(f"grid k_u={config.k_u} k_a={config.k_a}: macro-AUC {auc:.4f}")
        if best is None or auc > best_auc + AUC_TIE_TOLERANCE:
            best, best_auc = config, auc
        elif abs(auc - best_auc) <= AUC_TIE_TOLERANCE:
            if (config.total, -config.k_u) < (best.total, -best.k_u):
                best, best_auc = config, max(auc, best_auc)

    log.info(f"Selected k_u={best.k_u} k_a={best.k_a} (macro-AUC {best_auc:.4f})")
    return best
