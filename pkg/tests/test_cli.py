import json

import pytest

from conftest import tiny_config_dict
from tsner.cli import EXIT_GRADCHECK, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main


@pytest.fixture
def config_file(tmp_path):
    def make(mode="single"):
        path = tmp_path / f"{mode}.json"
        path.write_text(json.dumps(tiny_config_dict(mode)))
        return str(path)

    return make


def test_usage_errors(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["fly"]) == EXIT_USAGE
    assert main(["run"]) == EXIT_USAGE  # --out is required
    assert main(["run", "--out", str(tmp_path), "--mode", "both"]) == EXIT_USAGE
    assert main(["gradcheck", "--instances", "0"]) == EXIT_USAGE
    assert main(["train-langid", "--out", str(tmp_path)]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"train": {"student": {"lr": 0}}}')
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert main(["run", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_missing_inputs_are_runtime_errors(tmp_path, config_file):
    assert main(["train-teacher", "--config", config_file(), "--out", str(tmp_path / "empty")]) == EXIT_RUNTIME


def test_corrupt_checkpoint_is_runtime_error(tmp_path, config_file):
    out = str(tmp_path / "w")
    cfg = config_file()
    assert main(["gen-corpus", "--config", cfg, "--out", out]) == EXIT_OK
    assert main(["train-teacher", "--config", cfg, "--out", out]) == EXIT_OK
    ckpt = tmp_path / "w" / "checkpoints" / "seed0-teacher-src.json"
    ckpt.write_text(ckpt.read_text()[:100])
    assert main(["evaluate", "--config", cfg, "--out", out]) == EXIT_RUNTIME


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--instances", "2"]) == EXIT_OK
    assert capsys.readouterr().out.count("PASS") == 3
    assert main(["gradcheck", "--instances", "1", "--tol", "1e-30"]) == EXIT_GRADCHECK


def test_staged_pipeline_matches_run(tmp_path, config_file, capsys):
    cfg = config_file()
    staged, whole = str(tmp_path / "staged"), str(tmp_path / "whole")
    for argv in (
        ["gen-corpus"],
        ["train-teacher"],
        ["train-student", "--arm", "ours"],
        ["train-student", "--arm", "hl"],
        ["evaluate"],
    ):
        assert main(argv + ["--config", cfg, "--out", staged]) == EXIT_OK
    assert main(["run", "--config", cfg, "--out", whole]) == EXIT_OK
    a = json.loads((tmp_path / "staged" / "metrics.json").read_text())
    b = json.loads((tmp_path / "whole" / "metrics.json").read_text())
    for arm in ("ours", "hl", "mt"):
        assert a["arms"][arm] == {k: v for k, v in b["per_seed"][0]["arms"][arm].items() if k in a["arms"][arm]}
    assert a["histogram"] == b["per_seed"][0]["histogram"]
    for name in ("seed0-teacher-src.json", "seed0-student-ours.json", "seed0-student-hl.json"):
        assert (tmp_path / "staged" / "checkpoints" / name).read_bytes() == (
            tmp_path / "whole" / "checkpoints" / name
        ).read_bytes()
    assert "ours" in capsys.readouterr().out


def test_staged_multi_source(tmp_path, config_file):
    cfg = config_file("multi")
    out = str(tmp_path / "m")
    for argv in (["gen-corpus"], ["train-teacher"], ["train-langid"], ["weigh"], ["train-student"], ["evaluate"]):
        assert main(argv + ["--config", cfg, "--out", out]) == EXIT_OK
    weights = json.loads((tmp_path / "m" / "weights.json").read_text())
    assert set(weights) >= {"avg", "sim", "sources"}
    assert abs(sum(weights["sim"]["alpha"]) - 1) <= 1e-12
    metrics = json.loads((tmp_path / "m" / "metrics.json").read_text())
    assert "ours-sim" in metrics["arms"] and "mt" in metrics["arms"]


def test_run_arm_filter(tmp_path, config_file):
    out = tmp_path / "r"
    assert main(["run", "--config", config_file(), "--out", str(out), "--arm", "mt"]) == EXIT_OK
    assert json.loads((out / "metrics.json").read_text())["arms"] == ["mt"]
