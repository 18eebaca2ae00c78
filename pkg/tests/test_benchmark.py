import numpy as np
import pytest

from litepath.core.selector import SelectionConfig
from litepath.services.benchmark import BenchSpec, bench_throughput
from litepath.utils.utils import ValidationError


def small_spec(**overrides):
    values = dict(n_patches=120, repetitions=3, warmup=1, selection=SelectionConfig(0, 10),
                  precision="float64", chunk_size=32, min_duration=0.0)
    values.update(overrides)
    return BenchSpec(**values)


@pytest.mark.parametrize("mode", ["litepath", "full"])
def test_bench_reports_percentiles_and_stages(tiny_bundle, mode):
    result = bench_throughput(tiny_bundle, small_spec(), mode)
    assert result.mode == mode
    assert len(result.latencies) == 3
    assert 0 < result.latency_p50 <= result.latency_p90 <= result.latency_p99
    assert result.slides_per_hour == pytest.approx(3600.0 / result.latency_p50)
    assert result.slides_per_timing == 1
    assert {"pre", "post", "mil"} <= set(result.stage_seconds)
    assert ("scoring" in result.stage_seconds) == (mode == "litepath")
    assert "latencies" not in result.to_dict()


def test_bench_runs_in_float32(tiny_bundle):
    result = bench_throughput(tiny_bundle, small_spec(precision="float32"), "litepath")
    assert result.latency_p50 > 0
    # The caller's bundle keeps its own precision.
    assert tiny_bundle.encoder.dtype == np.float64


def test_fast_slides_are_timed_in_groups(tiny_bundle):
    result = bench_throughput(tiny_bundle, small_spec(n_patches=4, min_duration=0.02), "full")
    assert result.slides_per_timing >= 1
    assert result.slides_per_timing * result.latency_p50 > 0


def test_bench_rejects_other_modes(tiny_bundle):
    with pytest.raises(ValidationError):
        bench_throughput(tiny_bundle, small_spec(), "topk")


@pytest.mark.parametrize("overrides", [
    dict(repetitions=2),
    dict(precision="float16"),
    dict(n_patches=0),
    dict(chunk_size=0),
    dict(warmup=-1),
    dict(min_duration=-0.1),
])
def test_bench_spec_validation(overrides):
    with pytest.raises(ValidationError):
        small_spec(**overrides)
