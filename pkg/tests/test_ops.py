"""File-level operations: config parsing, conversions, and the train/infer/
eval round trip on disk."""

import json
import math
import os

import numpy as np
import pytest

from flash_sr import ops
from flash_sr import rangeimg as ri


# ------------------------------------------------------------ config parsing

def test_parse_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "# model\n"
        "channels = 8\n"
        "depths = 1,1\n"
        "enable_fa = true   # keep the frequency branch\n"
        "\n"
        "epochs=3\n"
        "peak_lr = 1e-3\n")
    entries = ops.parse_config_file(str(cfg))
    assert entries == {"channels": "8", "depths": "1,1", "enable_fa": "true",
                       "epochs": "3", "peak_lr": "1e-3"}
    model_kw, train_kw = ops.split_config(entries)
    assert model_kw == {"channels": 8, "depths": (1, 1), "enable_fa": True}
    assert train_kw == {"epochs": 3, "peak_lr": 1e-3}


def test_parse_config_rejects_malformed_lines(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("epochs 3\n")
    with pytest.raises(ValueError):
        ops.parse_config_file(str(bad))
    bad.write_text("epochs =\n")
    with pytest.raises(ValueError):
        ops.parse_config_file(str(bad))


def test_split_config_rejects_unknown_key():
    with pytest.raises(ValueError):
        ops.split_config({"momentum": "0.9"})


def test_split_config_bool_values():
    assert ops.split_config({"enable_msf": "off"})[0] == {"enable_msf": False}
    with pytest.raises(ValueError):
        ops.split_config({"enable_msf": "maybe"})


def test_parse_dims_fov_bins():
    assert ops.parse_dims("64x1024") == (64, 1024)
    up, down = ops.parse_fov("2.0:-24.8")
    assert up == pytest.approx(math.radians(2.0))
    assert down == pytest.approx(math.radians(-24.8))
    assert ops.parse_bins("0:30,30:60") == ((0.0, 30.0), (30.0, 60.0))
    for bad in ("64", "ax4"):
        with pytest.raises(ValueError):
            ops.parse_dims(bad)
    with pytest.raises(ValueError):
        ops.parse_fov("2.0")
    with pytest.raises(ValueError):
        ops.parse_bins("30:30")


# ----------------------------------------------------------------- transforms

def test_project_single_point_bin(tmp_path):
    src = tmp_path / "one.bin"
    np.array([10.0, 0.0, 0.0, 0.7], dtype="<f4").tofile(src)
    out = tmp_path / "one.frim"
    summary = ops.op_project(str(src), str(out), dims="64x1024")
    assert summary["points"] == 1
    assert summary["dropped"] == 0
    assert summary["valid_cells"] == 1
    img = ri.read_rangeimage(str(out))
    assert int(img.mask.sum()) == 1


def test_project_rejects_unknown_extension(tmp_path):
    with pytest.raises(ValueError):
        ops.op_project(str(tmp_path / "c.xyz"), str(tmp_path / "o.frim"))


def test_project_unproject_project_value_stable(tmp_path):
    # after the first projection quantizes ranges, further round trips
    # through cloud files land on the identical bytes
    synth = ops.op_synth(str(tmp_path / "d"), count=1, seed=4, dims="32x64")
    high = os.path.join(synth["out_dir"], "scene_00004_high.frim")
    a = tmp_path / "a.frim"
    cloud_a = tmp_path / "a.ply"
    b = tmp_path / "b.frim"
    ops.op_unproject(high, str(tmp_path / "h.ply"))
    ops.op_project(str(tmp_path / "h.ply"), str(a), dims="32x64")
    ops.op_unproject(str(a), str(cloud_a))
    ops.op_project(str(cloud_a), str(b), dims="32x64")
    assert a.read_bytes() == b.read_bytes()


def test_unproject_bin_output(tmp_path):
    synth = ops.op_synth(str(tmp_path / "d"), count=1, seed=0, dims="32x64")
    high = os.path.join(synth["out_dir"], "scene_00000_high.frim")
    out = tmp_path / "c.bin"
    summary = ops.op_unproject(high, str(out))
    cloud = ri.read_velodyne_bin(str(out))
    assert cloud.count == summary["points"] > 0


def test_synth_same_seed_byte_identical(tmp_path):
    ops.op_synth(str(tmp_path / "x"), count=2, seed=3, dims="32x64")
    ops.op_synth(str(tmp_path / "y"), count=2, seed=3, dims="32x64")
    for name in sorted(os.listdir(tmp_path / "x")):
        assert (tmp_path / "x" / name).read_bytes() == \
            (tmp_path / "y" / name).read_bytes()


def test_synth_rejects_bad_count(tmp_path):
    with pytest.raises(ValueError):
        ops.op_synth(str(tmp_path), count=0)


# ------------------------------------------------------- train + infer + eval

@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    data = str(root / "data")
    run = str(root / "run")
    ops.op_synth(data, count=12, seed=0, dims="32x64")
    summary = ops.op_train(data, run, overrides={
        "epochs": "2", "channels": "8", "depths": "1,1", "window": "2,4",
        "batch_size": "4", "peak_lr": "1e-3", "warmup": "1"})
    return root, data, run, summary


def test_train_outputs(trained):
    root, data, run, summary = trained
    assert summary["epochs"] == 2
    assert summary["train_scenes"] == 10
    assert summary["val_scenes"] == 2
    assert math.isfinite(summary["final_val_l1"])
    for name in ("last.ckpt", "best.ckpt", "loss.csv", "loss.svg"):
        assert os.path.exists(os.path.join(run, name))


def test_train_unknown_override_fails(tmp_path, trained):
    _, data, _, _ = trained
    with pytest.raises(ValueError):
        ops.op_train(data, str(tmp_path / "r"), overrides={"bogus": "1"})


def test_train_missing_data_dir_fails(tmp_path):
    with pytest.raises((ValueError, OSError)):
        ops.op_train(str(tmp_path / "nowhere"), str(tmp_path / "r"))


def test_infer_deterministic_and_idempotent(trained, tmp_path):
    _, data, run, _ = trained
    low = os.path.join(data, "scene_00001_low.frim")
    out1, out2 = tmp_path / "p1.frim", tmp_path / "p2.frim"
    s = ops.op_infer(os.path.join(run, "best.ckpt"), low, str(out1))
    ops.op_infer(os.path.join(run, "best.ckpt"), low, str(out2))
    assert out1.read_bytes() == out2.read_bytes()
    assert s["dims"] == [32, 64]
    pred = ri.read_rangeimage(str(out1))
    assert pred.mask.all()
    assert np.isfinite(pred.values).all()


def test_infer_mc_writes_std(trained, tmp_path):
    _, data, run, _ = trained
    low = os.path.join(data, "scene_00001_low.frim")
    out = tmp_path / "mc.frim"
    s = ops.op_infer(os.path.join(run, "best.ckpt"), low, str(out),
                     mc_samples=4, mc_batch=2, dropout=0.2)
    assert s["std_out"].endswith("mc_std.frim")
    std = ri.read_rangeimage(s["std_out"])
    assert (std.values > 0).any()
    assert s["mc_latency_ms"] > 0


def test_infer_rejects_wrong_input_dims(trained, tmp_path):
    _, data, run, _ = trained
    high = os.path.join(data, "scene_00001_high.frim")
    with pytest.raises(ValueError):
        ops.op_infer(os.path.join(run, "best.ckpt"), high,
                     str(tmp_path / "x.frim"))


def test_eval_perfect_and_idempotent(trained, tmp_path):
    _, data, _, _ = trained
    high = os.path.join(data, "scene_00001_high.frim")
    r1, r2 = tmp_path / "r1.json", tmp_path / "r2.json"
    payload = ops.op_eval(high, high, report_path=str(r1))
    ops.op_eval(high, high, report_path=str(r2))
    assert payload["mae_log"] == 0.0
    assert payload["iou"] == 1.0
    assert "overall" in payload["table"]
    assert r1.read_bytes() == r2.read_bytes()
    assert json.loads(r1.read_text())["cd"] == 0.0


def test_eval_missing_file_no_partial_report(trained, tmp_path):
    _, data, _, _ = trained
    high = os.path.join(data, "scene_00001_high.frim")
    report = tmp_path / "never.json"
    with pytest.raises((ValueError, OSError)):
        ops.op_eval(high, str(tmp_path / "missing.frim"),
                    report_path=str(report))
    assert not report.exists()


def test_bench_reports_latencies(trained):
    _, _, run, _ = trained
    out = ops.op_bench(os.path.join(run, "best.ckpt"), reps=3, warmup=1,
                       mc_samples=4, mc_batch=2)
    assert out["single_ms"] > 0
    assert out["mc_ms"] > 0
    assert out["mc_over_single"] > 1.0
