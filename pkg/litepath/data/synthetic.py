"""
Planted-signal synthetic cohorts.

Each slide has a contiguous raster block of lesion patches that carry its
class pattern; every other patch is class-independent noise.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List

import numpy as np

from .slides import SlideRecord, SyntheticPatchSource
from ..config.constants import Constants
from ..core.numerics import SeededRng
from ..utils.utils import ValidationError

logger = logging.getLogger(__name__)

# Child stream keys under the cohort seed.
_PATTERN_STREAM = 1
_LAYOUT_STREAM = 2
_SLIDE_STREAM = 3
_SPLIT_STREAM = 4


@dataclass(frozen=True)
class SyntheticCohortSpec:
    n_slides: int = 200
    min_patches: int = 500
    max_patches: int = 2000
    n_classes: int = 2
    lesion_fraction: float = 0.1
    signal_strength: float = 1.5
    slides_per_case: int = 1
    subspace_fraction: float = 0.25
    image_size: int = 32
    in_chans: int = 3
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.lesion_fraction <= 1:
            raise ValidationError("lesion_fraction must lie in (0, 1]")
        if not 1 <= self.min_patches <= self.max_patches:
            raise ValidationError("patches per slide must satisfy 1 <= min_patches <= max_patches")
        if self.n_classes < 2:
            raise ValidationError("a cohort needs at least two classes")
        if self.slides_per_case < 1:
            raise ValidationError("slides_per_case must be positive")
        if not 0 < self.subspace_fraction <= 1:
            raise ValidationError("subspace_fraction must lie in (0, 1]")
        if self.signal_strength < 0:
            raise ValidationError("signal_strength must be non-negative")

    @property
    def image_shape(self):
        return (self.in_chans, self.image_size, self.image_size)

    def to_dict(self):
        return asdict(self)


@dataclass
class CohortSplits:
    train: List[SlideRecord] = field(default_factory=list)
    val: List[SlideRecord] = field(default_factory=list)
    test: List[SlideRecord] = field(default_factory=list)

    def split(self, name: str) -> List[SlideRecord]:
        if name not in ("train", "val", "test"):
            raise ValidationError(f"Unknown split '{name}'")
        return getattr(self, name)

    def all(self) -> List[SlideRecord]:
        return self.train + self.val + self.test


def class_patterns(spec: SyntheticCohortSpec) -> np.ndarray:
    """(n_classes, C, H, W) patterns: +-1 on a random pixel subspace, 0 elsewhere."""
    rng = SeededRng(spec.seed).spawn(_PATTERN_STREAM)
    size = int(np.prod(spec.image_shape))
    active = max(1, int(round(spec.subspace_fraction * size)))
    patterns = np.zeros((spec.n_classes, size))
    for c in range(spec.n_classes):
        stream = rng.spawn(c)
        pixels = stream.choice(size, active, replace=False)
        patterns[c, pixels] = np.where(stream.uniform(shape=active) < 0.5, -1.0, 1.0)
    return patterns.reshape((spec.n_classes,) + spec.image_shape)


def _stratified_split(labels: np.ndarray, spec: SyntheticCohortSpec) -> Dict[str, List[int]]:
    """Per-class 7:1:2 split of slide indices; each class is shuffled first."""
    rng = SeededRng(spec.seed).spawn(_SPLIT_STREAM)
    total = sum(Constants.SPLIT_RATIO)
    splits = {"train": [], "val": [], "test": []}
    for c in range(spec.n_classes):
        members = np.flatnonzero(labels == c)
        if len(members) < Constants.MIN_SLIDES_PER_CLASS:
            raise ValidationError(
                f"class {c} has {len(members)} slides; at least {Constants.MIN_SLIDES_PER_CLASS} are required"
            )
        members = members[rng.spawn(c).permutation(len(members))]
        n_train = int(round(len(members) * Constants.SPLIT_RATIO[0] / total))
        n_val = max(1, int(round(len(members) * Constants.SPLIT_RATIO[1] / total)))
        splits["train"].extend(members[:n_train].tolist())
        splits["val"].extend(members[n_train:n_train + n_val].tolist())
        splits["test"].extend(members[n_train + n_val:].tolist())
    return {name: sorted(indices) for name, indices in splits.items()}


def generate_cohort(spec: SyntheticCohortSpec) -> CohortSplits:
    """Build train/val/test slide records; patches are generated lazily on read.

    Slides of one case share the case's label and land in the same split.
    """
    root = SeededRng(spec.seed)
    layout = root.spawn(_LAYOUT_STREAM)
    patterns = class_patterns(spec)

    n_cases = math.ceil(spec.n_slides / spec.slides_per_case)
    case_labels = np.arange(n_cases) % spec.n_classes
    case_labels = case_labels[layout.spawn(0).permutation(n_cases)]
    case_split = _stratified_split(case_labels, spec)
    split_of = {case: name for name, cases in case_split.items() for case in cases}

    low, high = math.log(spec.min_patches), math.log(spec.max_patches)
    sizes = np.exp(layout.spawn(1).uniform(low, high, shape=spec.n_slides))
    sizes = np.clip(np.round(sizes).astype(np.int64), spec.min_patches, spec.max_patches)
    starts = layout.spawn(2).uniform(shape=spec.n_slides)

    splits = CohortSplits()
    for s in range(spec.n_slides):
        case = s // spec.slides_per_case
        label = int(case_labels[case])
        n = int(sizes[s])
        length = max(1, int(round(spec.lesion_fraction * n)))
        start = int(starts[s] * (n - length + 1))
        source = SyntheticPatchSource(
            n_patches=n,
            rng=root.spawn(_SLIDE_STREAM, s),
            pattern=patterns[label],
            lesion=(start, start + length),
            signal_strength=spec.signal_strength,
        )
        record = SlideRecord(
            slide_id=f"slide_{s:05d}",
            source=source,
            label=label,
            case_id=f"case_{case:05d}",
            lesion=(start, start + length),
        )
        splits.split(split_of[case]).append(record)

    logger.info(
        f"Generated cohort of {spec.n_slides} slides "
        f"(train {len(splits.train)}, val {len(splits.val)}, test {len(splits.test)})"
    )
    return splits


def sample_patches(slides: List[SlideRecord], size: int, rng: SeededRng) -> np.ndarray:
    """Draw up to size distinct patches uniformly from the pooled slides, in pooled order."""
    if not slides:
        raise ValidationError("cannot sample patches from an empty slide list")
    counts = np.array([slide.n_patches for slide in slides])
    offsets = np.concatenate([[0], np.cumsum(counts)])
    total = int(offsets[-1])
    size = min(size, total)
    picked = np.sort(rng.choice(total, size, replace=False))
    owner = np.searchsorted(offsets, picked, side="right") - 1
    parts = []
    for s in np.unique(owner):
        local = picked[owner == s] - offsets[s]
        parts.append(slides[s].source.take(local.tolist()))
    return np.concatenate(parts)
