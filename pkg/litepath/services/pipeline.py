"""
Slide-level inference: the selective split pipeline, the conventional full
pipeline, two partial-inference baselines, feature caching and cohort runs.
"""

import logging
import threading
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.bundle import ModelBundle
from ..core.flops import (
    encoder_flops,
    full_slide_flops,
    litepath_slide_flops,
    selective_pays_off,
    topk_slide_flops,
    uniform_slide_flops,
)
from ..core.heads import concat_shallow
from ..core.numerics import softmax
from ..core.selector import SelectionConfig, SelectionResult, attention_topk, select, topk_indices, uniform_indices
from ..data.feature_cache import FeatureCache
from ..data.slides import SlideRecord
from ..utils.utils import CohortError, LitePathError, ValidationError

MODES = ("litepath", "full", "topk", "uniform")


class NullTimer:
    """Timer that records nothing."""

    @contextmanager
    def stage(self, name: str):
        yield


class StageTimer:
    """Wall-clock seconds accumulated per named stage."""

    def __init__(self):
        self.totals: Dict[str, float] = defaultdict(float)
        self._lock = threading.Lock()

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            with self._lock:
                self.totals[name] += elapsed

    def reset(self):
        with self._lock:
            self.totals.clear()


@dataclass
class PredictionRecord:
    slide_id: str
    case_id: str
    label: Optional[int]
    mode: str
    logits: np.ndarray
    probabilities: np.ndarray
    predicted: int
    flops_charged: int
    n_patches: int
    selection: SelectionResult = field(default_factory=SelectionResult)
    attention: Optional[np.ndarray] = None

    def to_dict(self):
        return {
            "slide_id": self.slide_id,
            "case_id": self.case_id,
            "label": self.label,
            "mode": self.mode,
            "logits": self.logits.tolist(),
            "predicted": self.predicted,
            "flops_charged": self.flops_charged,
            "n_patches": self.n_patches,
            "selection": self.selection.to_dict() if self.selection.combined else None,
        }


@dataclass
class CohortResult:
    records: List[PredictionRecord] = field(default_factory=list)

    @property
    def probabilities(self) -> np.ndarray:
        return np.vstack([r.probabilities for r in self.records]) if self.records else np.empty((0, 0))

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records])

    @property
    def case_ids(self) -> List[str]:
        return [r.case_id for r in self.records]

    @property
    def total_flops(self) -> int:
        return int(sum(r.flops_charged for r in self.records))

    @property
    def mean_flops(self) -> float:
        return self.total_flops / len(self.records) if self.records else 0.0


class InferencePipeline:
    """Runs one bundle over slides; safe to share between worker threads."""

    def __init__(self, bundle: ModelBundle, chunk_size: int = 256, timer=None,
                 cache: Optional[FeatureCache] = None, logger: Optional[logging.Logger] = None):
        """Initialize the pipeline.

        Args:
            bundle: Encoder with heads (ABMIL is needed for predictions); switched to inference mode
            chunk_size: Patches per encoder call
            timer: StageTimer for benchmarking, NullTimer otherwise
            cache: Optional feature cache used by features()
            logger: Optional logger instance
        """
        if chunk_size < 1:
            raise ValidationError("chunk_size must be positive")
        self.bundle = bundle.eval()
        self.encoder = bundle.encoder
        self.chunk_size = chunk_size
        self.timer = timer or NullTimer()
        self.cache = cache
        self.logger = logger or logging.getLogger(__name__)
        self.breakdown = encoder_flops(
            bundle.encoder.config,
            bundle.scorer.config if bundle.scorer is not None else None,
            bundle.abmil.config if bundle.abmil is not None else None,
        )
        self.calls: Dict[str, int] = defaultdict(int)
        self._lock = threading.Lock()
        self._encoder_hash: Optional[str] = None

    def _count(self, name: str, n: int = 1):
        with self._lock:
            self.calls[name] += n

    def reset_calls(self):
        with self._lock:
            self.calls.clear()

    def _post(self, tokens: np.ndarray) -> np.ndarray:
        """encode_post over tokens in chunk_size pieces, in order."""
        parts = []
        for start in range(0, len(tokens), self.chunk_size):
            self._count("post")
            parts.append(self.encoder.encode_post(tokens[start:start + self.chunk_size]))
        return np.concatenate(parts)

    def _aggregate(self, embeddings: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        self.bundle.require("abmil")
        self._count("abmil")
        with self.timer.stage("mil"):
            return self.bundle.abmil.forward(embeddings)

    def _record(self, slide: SlideRecord, mode: str, logits: np.ndarray, flops: int,
                selection: Optional[SelectionResult] = None, attention: Optional[np.ndarray] = None):
        probabilities = softmax(logits.astype(np.float64))
        return PredictionRecord(
            slide_id=slide.slide_id,
            case_id=slide.case_id,
            label=slide.label,
            mode=mode,
            logits=logits,
            probabilities=probabilities,
            predicted=int(np.argmax(probabilities)),
            flops_charged=int(flops),
            n_patches=slide.n_patches,
            selection=selection or SelectionResult(n_total=slide.n_patches),
            attention=attention,
        )

    def full_embeddings(self, slide: SlideRecord) -> np.ndarray:
        """(n, output_dim) embeddings of every patch, one chunk at a time."""
        parts = []
        for _, patches in slide.iter_chunks(self.chunk_size):
            self._count("pre")
            with self.timer.stage("pre"):
                tokens = self.encoder.encode_pre(patches)
            self._count("post")
            with self.timer.stage("post"):
                parts.append(self.encoder.encode_post(tokens))
        return np.concatenate(parts)

    def shallow_features(self, slide: SlideRecord) -> np.ndarray:
        """(n, 2 * embed_dim) concatenated shallow features of every patch."""
        parts = []
        for _, patches in slide.iter_chunks(self.chunk_size):
            self._count("pre")
            parts.append(concat_shallow(self.encoder.encode_pre(patches)))
        return np.concatenate(parts)

    def infer_full(self, slide: SlideRecord) -> PredictionRecord:
        """Every patch through the whole encoder, then ABMIL over all."""
        embeddings = self.full_embeddings(slide)
        logits, attention = self._aggregate(embeddings)
        flops = full_slide_flops(slide.n_patches, self.breakdown)
        return self._record(slide, "full", logits, flops, attention=attention)

    def infer_litepath(self, slide: SlideRecord, selection: SelectionConfig) -> PredictionRecord:
        """Pre-stage on all patches, score, select, post-stage and ABMIL on the selection only.

        Shallow tokens are kept only for the uniform set and the running
        best attention candidates, so memory stays bounded by k_u + k_a + chunk.
        """
        n = slide.n_patches
        needs_scores = selection.scorer_needed(n)
        if needs_scores:
            self.bundle.require("scorer")
        if selection.selected_count(n) == n or not selective_pays_off(n, self.breakdown, selection):
            # Full coverage, or scoring would cost more than it skips: run the full path.
            embeddings = self.full_embeddings(slide)
            uniform = uniform_indices(n, selection.k_u)
            taken = set(uniform)
            result = SelectionResult(uniform=uniform, attention=[i for i in range(n) if i not in taken],
                                     combined=list(range(n)), n_total=n)
            logits, attention = self._aggregate(embeddings)
            flops = litepath_slide_flops(n, self.breakdown, selection)
            return self._record(slide, "litepath", logits, flops, result, attention)

        uniform = np.asarray(uniform_indices(n, selection.k_u), dtype=np.int64)
        in_uniform = np.zeros(n, dtype=bool)
        in_uniform[uniform] = True
        kept_idx: List[np.ndarray] = []
        kept_tokens: List[np.ndarray] = []
        cand_idx = np.empty(0, dtype=np.int64)
        cand_scores = np.empty(0)
        cand_tokens = None
        scores = np.empty(n) if needs_scores else None

        for start, patches in slide.iter_chunks(self.chunk_size):
            idx = np.arange(start, start + len(patches))
            self._count("pre")
            with self.timer.stage("pre"):
                tokens = self.encoder.encode_pre(patches)
            mask = in_uniform[idx]
            if mask.any():
                kept_idx.append(idx[mask])
                kept_tokens.append(tokens[mask])
            if not needs_scores:
                continue

            self._count("scorer")
            with self.timer.stage("scoring"):
                chunk_scores = np.asarray(self.bundle.scorer.forward(concat_shallow(tokens)), dtype=np.float64)
            scores[idx] = chunk_scores

            # Merge this chunk's candidates and keep the running top k_a.
            free = ~mask
            merged_idx = np.concatenate([cand_idx, idx[free]])
            merged_scores = np.concatenate([cand_scores, chunk_scores[free]])
            merged_tokens = tokens[free] if cand_tokens is None else np.concatenate([cand_tokens, tokens[free]])
            best = np.lexsort((merged_idx, -merged_scores))[:selection.k_a]
            cand_idx, cand_scores, cand_tokens = merged_idx[best], merged_scores[best], merged_tokens[best]

        result = select(n, scores, selection)
        if needs_scores:
            chosen = attention_topk(scores, uniform.tolist(), selection.k_a)
            if sorted(chosen) != sorted(cand_idx.tolist()):
                raise LitePathError("streaming candidate set disagrees with the attention selection")
            kept_idx.append(cand_idx)
            kept_tokens.append(cand_tokens)

        all_idx = np.concatenate(kept_idx)
        order = np.argsort(all_idx, kind="stable")
        selected_tokens = np.concatenate(kept_tokens)[order]

        with self.timer.stage("post"):
            embeddings = self._post(selected_tokens)
        logits, attention = self._aggregate(embeddings)
        flops = litepath_slide_flops(n, self.breakdown, selection)
        return self._record(slide, "litepath", logits, flops, result, attention)

    def infer_topk(self, slide: SlideRecord, k: int) -> PredictionRecord:
        """Ablation baseline: top-k patches by the final ABMIL attention, re-aggregated."""
        embeddings = self.full_embeddings(slide)
        _, attention = self._aggregate(embeddings)
        chosen = sorted(topk_indices(attention, k))
        logits, sub_attention = self._aggregate(embeddings[chosen])
        result = SelectionResult(attention=topk_indices(attention, k), combined=chosen, n_total=slide.n_patches)
        flops = topk_slide_flops(slide.n_patches, self.breakdown, k)
        return self._record(slide, "topk", logits, flops, result, sub_attention)

    def infer_uniform(self, slide: SlideRecord, k: int) -> PredictionRecord:
        """Ablation baseline: only k uniformly sampled patches are read and encoded."""
        chosen = uniform_indices(slide.n_patches, k)
        patches = slide.source.take(chosen)
        parts = []
        for start in range(0, len(patches), self.chunk_size):
            self._count("pre")
            self._count("post")
            parts.append(self.encoder.full_encode(patches[start:start + self.chunk_size]))
        logits, attention = self._aggregate(np.concatenate(parts))
        result = SelectionResult(uniform=chosen, combined=list(chosen), n_total=slide.n_patches)
        flops = uniform_slide_flops(slide.n_patches, self.breakdown, k)
        return self._record(slide, "uniform", logits, flops, result, attention)

    def infer(self, slide: SlideRecord, mode: str, selection: Optional[SelectionConfig] = None,
              k: Optional[int] = None) -> PredictionRecord:
        if mode == "full":
            return self.infer_full(slide)
        if mode == "litepath":
            if selection is None:
                raise ValidationError("litepath mode needs a selection config")
            return self.infer_litepath(slide, selection)
        if mode in ("topk", "uniform"):
            if k is None or k < 1:
                raise ValidationError(f"{mode} mode needs k >= 1")
            return self.infer_topk(slide, k) if mode == "topk" else self.infer_uniform(slide, k)
        raise ValidationError(f"Unknown mode '{mode}'; expected one of {MODES}")

    def run_cohort(self, slides: Sequence[SlideRecord], mode: str, selection: Optional[SelectionConfig] = None,
                   k: Optional[int] = None, workers: int = 1) -> CohortResult:
        """Infer every slide; records come back in input order whatever the worker count."""

        def run(slide: SlideRecord) -> PredictionRecord:
            try:
                return self.infer(slide, mode, selection, k)
            except Exception as e:
                raise CohortError(slide.slide_id, str(e)) from e

        if not slides:
            return CohortResult()
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                records = list(executor.map(run, slides))
        else:
            records = [run(slide) for slide in slides]
        self.logger.info(f"Processed {len(records)} slides in {mode} mode")
        return CohortResult(records)

    def features(self, slide: SlideRecord, tier: str) -> np.ndarray:
        """Shallow or full features, through the cache when one is configured."""
        if tier not in ("shallow", "full"):
            raise ValidationError(f"Unknown cache tier '{tier}'")
        if self.cache is not None and self._encoder_hash is None:
            self._encoder_hash = self.bundle.encoder_hash
        key = self._encoder_hash
        if self.cache is not None:
            cached = self.cache.load(slide.slide_id, key, tier)
            if cached is not None:
                return cached
        features = self.shallow_features(slide) if tier == "shallow" else self.full_embeddings(slide)
        if self.cache is not None:
            self.cache.store(slide.slide_id, key, tier, features)
        return features


def cache_features(slide: SlideRecord, bundle: ModelBundle, tier: str, cache: FeatureCache,
                   chunk_size: int = 256) -> str:
    """Compute (or reuse) a slide's features and return the cache file path."""
    pipeline = InferencePipeline(bundle, chunk_size, cache=cache)
    pipeline.features(slide, tier)
    return cache.path(slide.slide_id, bundle.encoder_hash, tier)
