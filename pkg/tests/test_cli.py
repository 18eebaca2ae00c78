import json
import logging
import os

import pytest

from litepath.app import LitePathApp
from litepath.main import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main

TINY_INI = """
[run]
preset = desk
seed = 3
workers = 2

[encoder]
input_size = 8
patch_size = 4
embed_dim = 16
depth = 3
heads = 2
mlp_ratio = 2
output_dim = 8

[teachers]
kind = linear
dims = 12, 8, 8
embed_dim = 16
heads = 2

[distill]
steps = 5
batch_size = 8
dataset_size = 64
warmup_steps = 1

[mil]
hidden_dim = 8
attn_dim = 4
epochs = 2
patience = 2

[aps]
hidden_dim = 8
attn_dim = 4
epochs = 2
patience = 2

[selection]
k_u = 2
k_a = 4
grid_ku = 0, 2
grid_ka = 0, 4

[cohort]
n_slides = 40
min_patches = 20
max_patches = 40

[pipeline]
chunk_size = 16

[bench]
n_patches = 200
k_a = 10
chunk_size = 64
min_duration = 0.0

[report]
curve_points = 100, 1000
"""


@pytest.fixture(autouse=True)
def detach_log_handlers():
    yield
    root = logging.getLogger()
    for handler in LitePathApp._handlers:
        root.removeHandler(handler)
        handler.close()
    LitePathApp._handlers = []


@pytest.fixture
def tiny_run(tmp_path):
    config = tmp_path / "tiny.ini"
    config.write_text(TINY_INI)
    out = tmp_path / "out"

    def run(*argv):
        return main(list(argv) + ["--config", str(config), "--output-dir", str(out)])

    return run, out


def test_usage_errors_exit_with_one(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["infer", "--mode", "sideways"]) == EXIT_USAGE
    assert main(["dscore"]) == EXIT_USAGE
    assert main(["report", "missing-equals-sign", "--output-dir", str(tmp_path)]) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_flops_prints_headline(tmp_path, capsys):
    assert main(["flops", "--config", "default", "--output-dir", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "full encoder: 4.24G FLOPs per patch" in out
    with open(tmp_path / "reports" / "flops.json") as f:
        record = json.load(f)
    assert record["full_per_patch"] == 4241227776
    assert record["encoder_parameters"] == 22059904
    assert record["competitors"]["virchow2"]["composite"] == pytest.approx(403.5, rel=0.02)
    assert os.path.exists(tmp_path / "reports" / "flops_curve.csv")
    assert os.path.exists(tmp_path / "logs" / "litepath.log")


def test_runtime_errors_exit_with_two(tmp_path):
    assert main(["flops", "--config", str(tmp_path / "absent.ini"), "--output-dir", str(tmp_path)]) == EXIT_RUNTIME
    assert main(["infer", "--config", "desk", "--output-dir", str(tmp_path)]) == EXIT_RUNTIME


def test_dscore_command(tmp_path):
    table = tmp_path / "table.csv"
    table.write_text("model,cohort,auc,flops\n"
                     "a,c1,0.9,2\nb,c1,0.7,1\nc,c1,0.8,3\n"
                     "a,c2,0.6,2\nb,c2,0.8,1\nc,c2,0.7,3\n")
    assert main(["dscore", "--table", str(table), "--config", "desk", "--output-dir", str(tmp_path)]) == EXIT_OK
    with open(tmp_path / "reports" / "dscore.json") as f:
        record = json.load(f)
    assert record["per_cohort"]["c1"]["a"] == pytest.approx(0.5 ** 0.1)
    assert record["per_cohort"]["c1"]["b"] == 0.0
    assert record["mean_rank"] == {"a": 2.0, "b": 2.0, "c": 2.0}


def test_pipeline_stages_end_to_end(tiny_run):
    run, out = tiny_run
    for command in ("gen", "distill", "train-mil", "train-aps", "grid"):
        assert run(command) == EXIT_OK, command
    assert os.path.exists(out / "cohort" / "manifest.csv")
    assert os.path.exists(out / "weights" / "litepath.lpw")
    with open(out / "reports" / "selection.json") as f:
        selection = json.load(f)
    assert {selection["k_u"], selection["k_a"]} <= {0, 2, 4}

    assert run("infer", "--mode", "full") == EXIT_OK
    assert run("infer", "--mode", "litepath") == EXIT_OK
    assert run("infer", "--mode", "litepath", "--ku", "1000", "--out", str(out / "covered.csv")) == EXIT_OK
    full = (out / "predictions" / "full.csv").read_bytes()
    assert (out / "covered.csv").read_bytes() == full
    assert run("infer", "--mode", "topk", "--k", "5") == EXIT_OK
    assert run("infer", "--mode", "uniform", "--k", "5") == EXIT_OK

    assert run("eval", str(out / "predictions" / "litepath.csv"),
               "--baseline", str(out / "predictions" / "full.csv")) == EXIT_OK
    with open(out / "reports" / "eval.json") as f:
        evaluation = json.load(f)
    assert evaluation["auc"]["ci_low"] <= evaluation["auc"]["macro_auc"] <= evaluation["auc"]["ci_high"]
    assert "pass" in evaluation["noninferiority"]

    assert run("bench") == EXIT_OK
    assert run("report", "litepath=" + str(out / "predictions" / "litepath.csv"),
               "full=" + str(out / "predictions" / "full.csv")) == EXIT_OK
    with open(out / "reports" / "report.json") as f:
        report = json.load(f)
    assert report["models"]["full"]["retention"] == pytest.approx(100.0)
    assert report["models"]["litepath"]["flops"] < report["models"]["full"]["flops"]
    assert "noninferiority" in report["models"]["litepath"]
    assert report["models"]["full"]["slides_per_hour"] > 0

    table = out / "table.csv"
    table.write_text("model,cohort,auc,flops\na,c1,0.9,2\nb,c1,0.7,1\n")
    assert run("dscore", "--table", str(table)) == EXIT_OK
    assert run("flops") == EXIT_OK
    assert_every_json_output_carries_provenance(out)


def assert_every_json_output_carries_provenance(out):
    with open(out / "cohort" / "manifest.csv") as f:
        stamp = f.readline().split()[1]
    assert stamp.startswith("config_hash=")
    outputs = sorted((out / "reports").glob("*.json")) + [out / "cohort" / "cohort.json"]
    names = {path.name for path in outputs}
    assert {"selection.json", "eval.json", "dscore.json", "flops.json", "bench.json", "report.json"} <= names
    for path in outputs:
        with open(path) as f:
            record = json.load(f)
        assert stamp in record["provenance"], path.name
