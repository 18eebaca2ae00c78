import json

import numpy as np
import pytest

from litepath.core.metrics import AucResult, DScoreInput, NonInferiorityResult, dscore
from litepath.services.benchmark import BenchResult
from litepath.services.report import emit_report, summary_table
from litepath.utils.utils import Utils, ValidationError

PROVENANCE = Utils.provenance_line("cfg", 0, "w")


def two_models():
    aucs = {
        "full": AucResult(0.90, 0.85, 0.95, 1000),
        "litepath": AucResult(0.88, 0.82, 0.93, 1000),
    }
    flops = {"full": 100.0, "litepath": 10.0}
    return aucs, flops


def test_summary_table_rows():
    aucs, flops = two_models()
    table = summary_table(aucs, flops)
    assert table["model"].tolist() == ["full", "litepath"]
    full, lite = table.to_dict(orient="records")
    assert full["retention"] == pytest.approx(100.0)
    assert lite["retention"] == pytest.approx(100.0 * 0.88 / 0.90)
    assert full["mean_rank"] == 1.0 and lite["mean_rank"] == 2.0
    expected = dscore(DScoreInput([0.90, 0.88], [100.0, 10.0]))
    assert full["dscore"] == pytest.approx(expected[0])
    assert lite["dscore"] == pytest.approx(expected[1])
    assert full["dscore"] == pytest.approx((1 / 11) ** 0.1)


def test_single_model_is_its_own_reference(tmp_path):
    aucs = {"litepath": AucResult(0.8, 0.7, 0.9, 1000)}
    bundle = emit_report(str(tmp_path), aucs, {"litepath": 5.0}, PROVENANCE)
    with open(bundle.json_path) as f:
        record = json.load(f)
    model = record["models"]["litepath"]
    assert model["retention"] == pytest.approx(100.0)
    assert model["mean_rank"] == 1.0
    assert model["dscore"] is None
    assert record["reference_model"] == "litepath"


def test_unknown_reference_with_several_models():
    aucs, flops = two_models()
    with pytest.raises(ValidationError):
        summary_table(aucs, flops, reference="other")


def test_model_sets_must_agree():
    aucs, _ = two_models()
    with pytest.raises(ValidationError):
        summary_table(aucs, {"full": 1.0})
    with pytest.raises(ValidationError):
        summary_table({}, {})


def test_equal_aucs_leave_dscore_empty():
    aucs = {"a": AucResult(0.8, 0.7, 0.9, 10), "b": AucResult(0.8, 0.7, 0.9, 10)}
    table = summary_table(aucs, {"a": 1.0, "b": 2.0}, reference="a")
    assert table["dscore"].isna().all()
    assert table["mean_rank"].tolist() == [1.5, 1.5]


def test_emission_is_byte_identical(tmp_path):
    aucs, flops = two_models()
    bench = {
        name: BenchResult(name, 100, 3600.0 / p50, p50, p50, p50, {"pre": p50 / 2}, 1)
        for name, p50 in (("full", 2.0), ("litepath", 0.5))
    }
    tests = {"litepath": NonInferiorityResult(-0.01, -0.02, 0.0, -0.025, True)}
    curves = {"relative_flops": [(100, 0.5), (1000, 0.2)]}

    first = emit_report(str(tmp_path / "a"), aucs, flops, PROVENANCE, bench, noninferiority=tests, curves=curves,
                        extra={"selection": {"k_u": 0, "k_a": 10}})
    second = emit_report(str(tmp_path / "b"), aucs, flops, PROVENANCE, bench, noninferiority=tests, curves=curves,
                         extra={"selection": {"k_u": 0, "k_a": 10}})
    for a, b in [(first.json_path, second.json_path), (first.table_path, second.table_path)] + list(
            zip(first.curve_paths, second.curve_paths)):
        assert open(a, "rb").read() == open(b, "rb").read()

    with open(first.json_path) as f:
        record = json.load(f)
    assert record["provenance"] == "config_hash=cfg seed=0 weights_hash=w"
    assert record["selection"] == {"k_u": 0, "k_a": 10}
    assert record["models"]["litepath"]["noninferiority"]["pass"] is True
    assert record["models"]["full"]["slides_per_hour"] == 1800.0
    assert "noninferiority" not in record["models"]["full"]
    assert first.curve_paths[0].endswith("report_curve_relative_flops.csv")
    assert open(first.table_path).readline().rstrip("\n") == PROVENANCE
    assert np.isclose(first.table.loc[first.table["model"] == "litepath", "flops"].item(), 10.0)
