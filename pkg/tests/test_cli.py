import json
import re
import subprocess
import sys

import pytest

from conftest import FIXTURES, tiny_config
from resprune.cli import main
from resprune.core import ops
from resprune.experiment.config import dump_config


@pytest.fixture
def config_file(tmp_path):
    def write(method="control", **extra):
        path = tmp_path / f"{method}.cfg"
        path.write_text(dump_config(tiny_config(method, **extra)))
        return path
    return write


def test_train_synthetic(config_file, tmp_path, capsys):
    cfg = config_file("cutout_prune", epochs=1)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["method"] == "cutout_prune" and result["mflops"] < 40.55
    for name in ("metrics.csv", "timing.csv", "result.json", "final.rpck", "config.txt"):
        assert (tmp_path / "run" / name).exists()


def test_train_zero_epochs_and_default_out(config_file, capsys):
    cfg = config_file("prune")
    assert main(["train", "--config", str(cfg), "--epochs", "0"]) == 0
    assert json.loads(capsys.readouterr().out)["epochs"] == 0
    assert (cfg.parent / "prune_run" / "result.json").exists()


def test_train_stop_and_resume(config_file, tmp_path, capsys):
    cfg = config_file("control", epochs=2)
    out = str(tmp_path / "r")
    assert main(["train", "--config", str(cfg), "--out", out, "--stop-after", "0"]) == 0
    assert "stopped after epoch 0" in capsys.readouterr().out
    assert main(["train", "--config", str(cfg), "--out", out]) == 0
    assert json.loads(capsys.readouterr().out)["epochs"] == 2


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("method = prune\nprune.rato = 0.9\n")
    assert main(["train", "--config", str(cfg)]) == 2
    assert "prune.rato" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.cfg")]) == 3


def test_cifar_missing_is_io_error(config_file, tmp_path, monkeypatch):
    monkeypatch.delenv("RESPRUNE_DATA_DIR", raising=False)
    cfg = config_file("control", **{"data.source": "cifar10"})
    assert main(["train", "--config", str(cfg), "--data-dir", str(tmp_path / "none")]) == 3


@pytest.mark.parametrize("argv,expected", [
    (["--depth", "20"], "40.55 MegaFLOPs"),
    (["--depth", "56", "--keep-ratio", "0.9"], "106.99 MegaFLOPs"),
    (["--depth", "20", "--keep-ratio", "0.9", "--counting", "floor"], "35.45 MegaFLOPs"),
])
def test_flops(argv, expected, capsys):
    assert main(["flops"] + argv) == 0
    assert expected in capsys.readouterr().out


def test_flops_bad_depth(capsys):
    assert main(["flops", "--depth", "21"]) == 2
    assert "20, 32, 44, 56, 110" in capsys.readouterr().err


def test_flops_csv(tmp_path):
    assert main(["flops", "--depth", "20", "--csv", str(tmp_path / "f.csv")]) == 0
    assert (tmp_path / "f.csv").read_text().startswith("layer,h_out")


def test_report_fixture(tmp_path, capsys):
    assert main(["report", "--runs", str(FIXTURES / "published_runs"), "--out", str(tmp_path)]) == 0
    assert "Cutout & Pruning" in capsys.readouterr().out
    for name in ("results.txt", "results.csv", "mflops_vs_accuracy.svg"):
        assert (tmp_path / name).exists()


def test_report_empty_and_missing(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert main(["report", "--runs", str(tmp_path / "empty")]) == 0
    assert "warning" in capsys.readouterr().err
    assert main(["report", "--runs", str(tmp_path / "missing")]) == 3


def test_eval_checkpoint(config_file, tmp_path, capsys):
    cfg = config_file("prune", epochs=1)
    main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")])
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(tmp_path / "r/final.rpck"), "--synthetic", "20"]) == 0
    assert capsys.readouterr().out.startswith("accuracy ")
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.rpck"), "--synthetic", "20"]) == 3


def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert re.search(r"^PASS +grad\.conv2d ", out, re.M) and "FAIL" not in out


def test_selftest_catches_wrong_conv_gradient(monkeypatch, capsys):
    real = ops.conv2d_backward

    def wrong(*a, **k):
        gx, gw = real(*a, **k)
        return gx, 1.5 * gw
    monkeypatch.setattr(ops, "conv2d_backward", wrong)
    assert main(["selftest"]) == 1
    assert "grad.conv2d" in capsys.readouterr().err


@pytest.mark.parametrize("cmd", ["train", "eval", "flops", "report", "selftest"])
def test_help(cmd, capsys):
    assert main([cmd, "--help"]) == 0
    assert "usage" in capsys.readouterr().out


def test_usage_errors():
    assert main(["flops", "--depth", "20", "--bogus"]) == 2
    assert main([]) == 2
    assert main(["flops", "--depth", "20", "--scope", "classifier"]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "resprune", "flops", "--depth", "20"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "40.55" in proc.stdout
