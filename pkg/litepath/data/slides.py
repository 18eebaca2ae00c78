"""
Slide records and lazy patch sources.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np

from ..core.numerics import SeededRng
from ..utils.utils import ValidationError

logger = logging.getLogger(__name__)


class PatchSource(ABC):
    """Ordered, immutable collection of patch images read in ranges."""

    def __init__(self, n_patches: int, image_shape: Tuple[int, int, int]):
        if n_patches < 1:
            raise ValidationError("a slide needs at least one patch")
        self.n_patches = int(n_patches)
        self.image_shape = tuple(image_shape)

    @abstractmethod
    def read(self, start: int, stop: int) -> np.ndarray:
        """Patches [start, stop) as an array (stop - start, C, H, W)."""
        pass

    def _check_range(self, start: int, stop: int):
        if not 0 <= start <= stop <= self.n_patches:
            raise ValidationError(f"patch range [{start}, {stop}) outside [0, {self.n_patches})")

    def take(self, indices: Sequence[int], chunk: int = 1024) -> np.ndarray:
        """Patches at the given ascending indices."""
        indices = np.asarray(indices, dtype=np.int64)
        out = None
        filled = 0
        for start in range(0, self.n_patches, chunk):
            stop = min(start + chunk, self.n_patches)
            lo = np.searchsorted(indices, start)
            hi = np.searchsorted(indices, stop)
            if hi > lo:
                block = self.read(start, stop)
                if out is None:
                    out = np.empty((len(indices),) + self.image_shape, dtype=block.dtype)
                out[filled:filled + hi - lo] = block[indices[lo:hi] - start]
                filled += hi - lo
        return out if out is not None else np.empty((0,) + self.image_shape)


class ArrayPatchSource(PatchSource):
    """Patches held in memory."""

    def __init__(self, patches: np.ndarray):
        super().__init__(len(patches), patches.shape[1:])
        self.patches = patches

    def read(self, start: int, stop: int) -> np.ndarray:
        self._check_range(start, stop)
        return self.patches[start:stop]

    def take(self, indices: Sequence[int], chunk: int = 1024) -> np.ndarray:
        return self.patches[np.asarray(indices, dtype=np.int64)]


class SyntheticPatchSource(PatchSource):
    """Planted-signal patches regenerated on demand.

    Background pixels are N(0, 1). Patches inside the lesion range
    additionally carry signal_strength * pattern, where pattern is the
    label's +-1 mask over a pixel subspace. Patches are produced in fixed
    blocks, each from its own child stream, so any range reads identically.
    """

    BLOCK = 256

    def __init__(self, n_patches: int, rng: SeededRng, pattern: np.ndarray,
                 lesion: Tuple[int, int], signal_strength: float):
        super().__init__(n_patches, pattern.shape)
        self.rng = rng
        self.pattern = pattern
        self.lesion = lesion
        self.signal_strength = signal_strength

    def _block(self, b: int) -> np.ndarray:
        start = b * self.BLOCK
        stop = min(start + self.BLOCK, self.n_patches)
        patches = self.rng.spawn(b).normal((stop - start,) + self.image_shape)
        lo = max(start, self.lesion[0])
        hi = min(stop, self.lesion[1])
        if hi > lo and self.signal_strength:
            patches[lo - start:hi - start] += self.signal_strength * self.pattern
        return patches

    def read(self, start: int, stop: int) -> np.ndarray:
        self._check_range(start, stop)
        if stop == start:
            return np.empty((0,) + self.image_shape)
        first, last = start // self.BLOCK, (stop - 1) // self.BLOCK
        blocks = np.concatenate([self._block(b) for b in range(first, last + 1)])
        offset = first * self.BLOCK
        return blocks[start - offset:stop - offset]


class DummyPatchSource(PatchSource):
    """Benchmark slide: a fixed pool of random patches tiled to n_patches."""

    POOL = 64

    def __init__(self, n_patches: int, image_shape: Tuple[int, int, int], seed: int = 0,
                 dtype=np.float32):
        super().__init__(n_patches, image_shape)
        pool = SeededRng(seed).normal((min(self.POOL, n_patches),) + self.image_shape)
        self.pool = pool.astype(dtype)

    def read(self, start: int, stop: int) -> np.ndarray:
        self._check_range(start, stop)
        return self.pool[np.arange(start, stop) % len(self.pool)]


@dataclass
class SlideRecord:
    slide_id: str
    source: PatchSource
    label: Optional[int] = None
    case_id: Optional[str] = None
    lesion: Optional[Tuple[int, int]] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.case_id is None:
            self.case_id = self.slide_id

    @property
    def n_patches(self) -> int:
        return self.source.n_patches

    @property
    def lesion_mask(self) -> np.ndarray:
        """Boolean ground-truth mask of lesion patches (all False if none planted)."""
        mask = np.zeros(self.n_patches, dtype=bool)
        if self.lesion is not None:
            mask[self.lesion[0]:self.lesion[1]] = True
        return mask

    def iter_chunks(self, chunk_size: int) -> Iterator[Tuple[int, np.ndarray]]:
        """(start, patches) in raster order."""
        if chunk_size < 1:
            raise ValidationError("chunk_size must be positive")
        for start in range(0, self.n_patches, chunk_size):
            yield start, self.source.read(start, min(start + chunk_size, self.n_patches))

    def read_all(self) -> np.ndarray:
        return self.source.read(0, self.n_patches)
