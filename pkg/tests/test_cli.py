import json

import pytest

from c3conv.cli import main


@pytest.fixture
def config(tmp_path):
    def write(*nodes, shape=(1, 16, 32, 32)):
        path = tmp_path / "model.json"
        path.write_text(json.dumps({"input_shape": list(shape), "nodes": list(nodes)}))
        return str(path)

    return write


def test_analyze_table(config, capsys):
    path = config({"id": "m", "kind": "c3_module"}, shape=(1, 128, 128, 128))
    assert main(["analyze", path]) == 0
    out = capsys.readouterr().out
    assert "434.13" in out
    assert "13,568" in out


def test_machine_totals_match_table(config, capsys):
    path = config({"id": "e", "kind": "esp_module"}, shape=(1, 128, 128, 128))
    assert main(["analyze", path, "--format", "machine"]) == 0
    records = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    total = records[-1]
    assert total["id"] == "total"
    assert total["flops_exact"] == sum(r["flops_exact"] for r in records[:-1]) == 1_048_657_920
    assert total["params"] == 32_000
    assert main(["analyze", path]) == 0
    assert total["flops_formatted"] in capsys.readouterr().out


def test_analyze_input_size_override(config, capsys):
    path = config({"id": "p", "kind": "pointwise_conv", "out_channels": 8})
    main(["analyze", path, "--input-size", "2x3", "--format", "machine"])
    total = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert total["flops_exact"] == 2 * 3 * 2 * 16 * 8


@pytest.mark.parametrize(
    "nodes, full, partial",
    [
        ([{"id": "d", "kind": "dilated_conv", "dilation": 8}], "17×17", "17×17"),
        ([{"id": "c", "kind": "c3_block", "dilation": 4}], "15×15", "9×9"),
        ([{"id": "p", "kind": "pointwise_conv", "out_channels": 4}], "1×1", "1×1"),
    ],
)
def test_rf(config, capsys, nodes, full, partial):
    assert main(["rf", config(*nodes), "--check"]) == 0
    out = capsys.readouterr().out
    assert f"receptive field: {full}" in out
    assert f"without concentration stage: {partial}" in out
    assert "agrees" in out


def test_coverage_files(tmp_path, capsys):
    out = tmp_path / "grid.txt"
    assert main(["coverage", "--dilations", "2,2", "--out", str(out)]) == 0
    assert "holes: 56 / 81" in capsys.readouterr().out
    rec = json.loads((tmp_path / "grid.txt.json").read_text())
    assert rec["hole_count"] == 56 == len(rec["holes"])
    assert len(out.read_text().splitlines()) >= 9


def test_coverage_stdout(capsys):
    assert main(["coverage", "--dilations", "2,3,7,13"]) == 0
    assert "holes: 200 / 2601" in capsys.readouterr().out


def test_verify_suite(capsys):
    assert main(["verify", "--suite", "costs"]) == 0
    out = capsys.readouterr().out
    assert "10/10 checks passed" in out


def test_bench_single_rep(capsys):
    assert main(["bench", "--block", "c3", "--channels", "4", "--hw", "8x8", "--reps", "1"]) == 0
    line = capsys.readouterr().out.splitlines()[0]
    fields = dict(tok.split("=") for tok in line.split() if "=" in tok)
    assert fields["min"] == fields["median"]
    assert fields["reps"] == "1"


def test_train_toy_deterministic(capsys):
    assert main(["train-toy", "--steps", "3"]) == 0
    first = capsys.readouterr().out
    assert main(["train-toy", "--steps", "3"]) == 0
    assert capsys.readouterr().out == first
    assert first.count("step") == 4


@pytest.mark.parametrize(
    "argv",
    [
        ["analyze", "/no/such/file.json"],
        ["coverage", "--dilations", "2", "--kernel", "4"],
        ["coverage", "--dilations", ""],
        ["coverage", "--dilations", "a,b"],
        ["bench", "--reps", "0"],
        ["bench", "--hw", "0x4"],
        ["frobnicate"],
        [],
    ],
)
def test_usage_errors(argv, capsys):
    assert main(argv) == 2
    assert capsys.readouterr().err


def test_bad_config_reports_field(config, capsys):
    path = config({"id": "x", "kind": "c3_block"})
    assert main(["analyze", path]) == 2
    assert "nodes[0].dilation" in capsys.readouterr().err


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "analyze" in capsys.readouterr().out
