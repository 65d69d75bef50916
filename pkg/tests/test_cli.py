"""Command-line surface: exit codes, help, thread capping, and the on-disk
workflows driven exactly as a user would."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from flash_sr import cli
from flash_sr import rangeimg as ri


def run_cli(*argv):
    return cli.main(list(argv))


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli("--help")
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for name in ("project", "unproject", "synth", "train", "infer", "eval",
                 "bench", "serve"):
        assert name in out


def test_subcommand_help_lists_flags(capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli("infer", "--help")
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--ckpt", "--in", "--out", "--mc-samples", "--mc-batch",
                 "--dropout"):
        assert flag in out


def test_unknown_flag_exits_two(capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli("synth", "--out-dir", "/tmp/x", "--count", "1", "--bogus")
    assert exc.value.code == 2


def test_missing_subcommand_exits_two(capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli()
    assert exc.value.code == 2


def test_runtime_error_exits_one(tmp_path, capsys):
    code = run_cli("project", "--in", str(tmp_path / "missing.bin"),
                   "--out", str(tmp_path / "o.frim"))
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_bad_magic_exits_one_with_message(tmp_path, capsys):
    bad = tmp_path / "bad.frim"
    bad.write_bytes(b"JUNKJUNKJUNKJUNK")
    code = run_cli("unproject", "--in", str(bad), "--out",
                   str(tmp_path / "c.ply"))
    assert code == 1
    assert "magic" in capsys.readouterr().err


def test_threads_flag_sets_env(tmp_path, capsys, monkeypatch):
    for var in cli._THREAD_VARS:
        monkeypatch.delenv(var, raising=False)
    src = tmp_path / "one.bin"
    np.array([10.0, 0.0, 0.0, 0.0], dtype="<f4").tofile(src)
    code = run_cli("--threads", "2", "project", "--in", str(src),
                   "--out", str(tmp_path / "o.frim"), "--dims", "32x64")
    assert code == 0
    assert os.environ["OMP_NUM_THREADS"] == "2"


def test_threads_env_var_honored(monkeypatch):
    for var in cli._THREAD_VARS:
        monkeypatch.delenv(var, raising=False)
    monkeypatch.setenv("FLASH_THREADS", "3")
    cli._apply_threads(None)
    assert os.environ["OPENBLAS_NUM_THREADS"] == "3"


def test_invalid_threads_exits_one(capsys):
    code = run_cli("--threads", "0", "synth", "--out-dir", "/tmp/x",
                   "--count", "1")
    assert code == 1


def test_project_round_trip_via_cli(tmp_path, capsys):
    src = tmp_path / "one.bin"
    np.array([[10.0, 0.0, 0.0, 0.1], [5.0, 1.0, -1.0, 0.2]],
             dtype="<f4").tofile(src)
    frim = tmp_path / "img.frim"
    assert run_cli("project", "--in", str(src), "--out", str(frim),
                   "--dims", "64x1024") == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["points"] == 2
    assert summary["valid_cells"] == 2
    ply = tmp_path / "back.ply"
    assert run_cli("unproject", "--in", str(frim), "--out", str(ply)) == 0
    assert ri.read_ply(str(ply)).count == 2


def test_full_training_workflow_via_cli(tmp_path, capsys):
    data = str(tmp_path / "data")
    run = str(tmp_path / "run")
    assert run_cli("synth", "--out-dir", data, "--count", "12",
                   "--dims", "32x64", "--seed", "0") == 0
    cfg = tmp_path / "train.cfg"
    cfg.write_text("channels = 8\ndepths = 1,1\nwindow = 2,4\n"
                   "epochs = 2\nbatch_size = 4\npeak_lr = 1e-3\nwarmup = 1\n")
    # --set overrides the file entry
    assert run_cli("train", "--data", data, "--out", run,
                   "--config", str(cfg), "--set", "epochs=1") == 0
    capsys.readouterr()

    low = os.path.join(data, "scene_00001_low.frim")
    pred = tmp_path / "pred.frim"
    assert run_cli("infer", "--ckpt", os.path.join(run, "best.ckpt"),
                   "--in", low, "--out", str(pred)) == 0
    capsys.readouterr()

    high = os.path.join(data, "scene_00001_high.frim")
    report = tmp_path / "report.json"
    assert run_cli("eval", "--pred", str(pred), "--gt", high,
                   "--report", str(report)) == 0
    out = capsys.readouterr().out
    assert "overall" in out
    assert report.exists()
    parsed = json.loads(report.read_text())
    assert "mae_log" in parsed and "bins" in parsed

    assert run_cli("bench", "--ckpt", os.path.join(run, "best.ckpt"),
                   "--reps", "2", "--warmup", "1") == 0
    bench = json.loads(capsys.readouterr().out)
    assert bench["single_ms"] > 0

    with open(os.path.join(run, "loss.csv")) as f:
        assert f.readline().startswith("epoch,")


def test_train_set_requires_key_value(tmp_path, capsys):
    code = run_cli("train", "--data", str(tmp_path), "--out",
                   str(tmp_path / "r"), "--set", "epochs")
    assert code == 1


def test_entry_point_subprocess():
    # the module must also work as a real child process
    proc = subprocess.run([sys.executable, "-m", "flash_sr.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "project" in proc.stdout
