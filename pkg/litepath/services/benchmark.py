"""
Throughput benchmark on in-memory dummy slides.
"""

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .pipeline import InferencePipeline, StageTimer
from ..core.bundle import ModelBundle
from ..core.selector import SelectionConfig
from ..data.slides import DummyPatchSource, SlideRecord
from ..utils.utils import ValidationError

PRECISIONS = {"float32": np.float32, "float64": np.float64}
BENCH_MODES = ("litepath", "full")


@dataclass(frozen=True)
class BenchSpec:
    n_patches: int = 30000
    repetitions: int = 3
    warmup: int = 1
    selection: SelectionConfig = field(default_factory=lambda: SelectionConfig(0, 1000))
    precision: str = "float32"
    chunk_size: int = 512
    min_duration: float = 0.05

    def __post_init__(self):
        if self.repetitions < 3:
            raise ValidationError(f"bench repetitions must be at least 3, got {self.repetitions}")
        if self.n_patches < 1 or self.warmup < 0 or self.chunk_size < 1:
            raise ValidationError("n_patches and chunk_size must be positive, warmup non-negative")
        if self.precision not in PRECISIONS:
            raise ValidationError(f"precision must be one of {sorted(PRECISIONS)}")
        if self.min_duration < 0:
            raise ValidationError("min_duration must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass
class BenchResult:
    mode: str
    n_patches: int
    slides_per_hour: float
    latency_p50: float
    latency_p90: float
    latency_p99: float
    stage_seconds: Dict[str, float]
    slides_per_timing: int
    workers: int = 1
    latencies: List[float] = field(default_factory=list)

    def to_dict(self):
        record = asdict(self)
        record.pop("latencies")
        return record


def bench_throughput(bundle: ModelBundle, spec: BenchSpec, mode: str = "litepath", seed: int = 0,
                     logger: Optional[logging.Logger] = None) -> BenchResult:
    """Time one dummy slide per repetition and report throughput.

    Slides are generated in memory so disk I/O is excluded. When a slide
    finishes faster than spec.min_duration, several slides are timed
    together and the per-slide latency is their mean.

    Args:
        bundle: Model bundle; cast to spec.precision for the run
        spec: Benchmark parameters
        mode: "litepath" or "full"
        seed: Seed of the dummy patch pool

    Returns:
        BenchResult with slides/hour from the median latency
    """
    log = logger or logging.getLogger(__name__)
    if mode not in BENCH_MODES:
        raise ValidationError(f"bench mode must be one of {BENCH_MODES}")

    dtype = PRECISIONS[spec.precision]
    model = bundle.astype(dtype)
    timer = StageTimer()
    pipeline = InferencePipeline(model, spec.chunk_size, timer=timer, logger=log)
    source = DummyPatchSource(spec.n_patches, model.encoder.config.image_shape, seed=seed, dtype=dtype)
    slide = SlideRecord("dummy", source)

    def run_once():
        pipeline.infer(slide, mode, spec.selection)

    for _ in range(spec.warmup):
        run_once()

    slides_per_timing = 1
    while True:
        start = time.perf_counter()
        for _ in range(slides_per_timing):
            run_once()
        if time.perf_counter() - start >= spec.min_duration or slides_per_timing >= 1 << 20:
            break
        slides_per_timing *= 2
        log.debug(f"slide too fast to time; timing {slides_per_timing} slides together")

    latencies = []
    stages: Dict[str, List[float]] = {}
    for rep in range(spec.repetitions):
        timer.reset()
        start = time.perf_counter()
        for _ in range(slides_per_timing):
            run_once()
        latency = (time.perf_counter() - start) / slides_per_timing
        latencies.append(latency)
        for name, seconds in timer.totals.items():
            stages.setdefault(name, []).append(seconds / slides_per_timing)
        log.info(f"bench {mode} rep {rep}: {latency:.4f}s per slide")

    p50, p90, p99 = np.percentile(latencies, [50, 90, 99])
    result = BenchResult(
        mode=mode,
        n_patches=spec.n_patches,
        slides_per_hour=3600.0 / float(p50),
        latency_p50=float(p50),
        latency_p90=float(p90),
        latency_p99=float(p99),
        stage_seconds={name: float(np.median(values)) for name, values in sorted(stages.items())},
        slides_per_timing=slides_per_timing,
        latencies=latencies,
    )
    log.info(f"bench {mode}: {result.slides_per_hour:.1f} slides/hour (median {result.latency_p50:.4f}s)")
    return result
