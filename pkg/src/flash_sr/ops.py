"""File-level operations behind the CLI and the HTTP service.

Every function takes paths plus plain-value options and returns a JSON-able
summary dict. Paths ending in .bin are packed Velodyne records, .ply is ASCII
point data, .frim is the range-image container, .ckpt the parameter
checkpoint.
"""

from __future__ import annotations

import math
import os
from dataclasses import replace

import numpy as np

from . import evaluation as ev
from . import rangeimg as ri
from . import tensorkit as tk
from . import training as tr
from . import viz
from .network import FlashConfig, FlashModel, load_model
from .rangeimg import ProjectionConfig, RangeImage

DEFAULT_BIN_SPEC = "0:30,30:60"

MODEL_KEYS = {
    "height": int, "width": int, "channels": int, "mlp_ratio": float,
    "dropout": float, "enable_fa": None, "enable_msf": None, "seed": int,
    "depths": None, "heads": None, "window": None,
}
TRAIN_KEYS = {
    "epochs": int, "batch_size": int, "weight_decay": float,
    "peak_lr": float, "warmup": int, "cycle": int, "decay": float,
    "floor_lr": float, "log_every": int,
}


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_int_tuple(raw: str) -> tuple[int, ...]:
    return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)


def parse_config_file(path: str) -> dict[str, str]:
    """KEY = VALUE lines; # starts a comment; keys validated by the consumer."""
    out: dict[str, str] = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ValueError(f"{path}:{lineno}: expected KEY = VALUE")
            key, value = (s.strip() for s in text.split("=", 1))
            if not key or not value:
                raise ValueError(f"{path}:{lineno}: empty key or value")
            out[key] = value
    return out


def split_config(entries: dict[str, str]) -> tuple[dict, dict]:
    """Raw strings -> (FlashConfig kwargs, training kwargs); unknown keys fail."""
    model: dict = {}
    train: dict = {}
    for key, raw in entries.items():
        if key in MODEL_KEYS:
            conv = MODEL_KEYS[key]
            if key in ("depths", "heads", "window"):
                model[key] = _parse_int_tuple(raw)
            elif conv is None:
                model[key] = _parse_bool(raw)
            else:
                model[key] = conv(raw)
        elif key in TRAIN_KEYS:
            train[key] = TRAIN_KEYS[key](raw)
        else:
            raise ValueError(f"unknown config key {key!r}")
    return model, train


def parse_dims(raw: str) -> tuple[int, int]:
    try:
        h, w = raw.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise ValueError(f"bad dims {raw!r}, expected HxW like 64x1024") from None


def parse_fov(raw: str) -> tuple[float, float]:
    try:
        up, down = raw.split(":")
        return math.radians(float(up)), math.radians(float(down))
    except ValueError:
        raise ValueError(f"bad fov {raw!r}, expected degUp:degDown "
                         "like 2.0:-24.8") from None


def parse_bins(raw: str) -> tuple[tuple[float, float], ...]:
    bins = []
    for part in raw.split(","):
        lo, hi = part.split(":")
        lo, hi = float(lo), float(hi)
        if hi <= lo:
            raise ValueError(f"empty bin {part!r}")
        bins.append((lo, hi))
    if not bins:
        raise ValueError("no bins given")
    return tuple(bins)


def projection_config(dims: str | None = None,
                      fov: str | None = None) -> ProjectionConfig:
    cfg = ProjectionConfig()
    if dims:
        h, w = parse_dims(dims)
        cfg = replace(cfg, height=h, width=w)
    if fov:
        up, down = parse_fov(fov)
        cfg = replace(cfg, theta_max=up, theta_min=down)
    return cfg


def _read_cloud(path: str) -> ri.PointCloud:
    if path.endswith(".bin"):
        return ri.read_velodyne_bin(path)
    if path.endswith(".ply"):
        return ri.read_ply(path)
    raise ValueError(f"unsupported cloud format: {path!r} (.bin or .ply)")


def _write_cloud(cloud: ri.PointCloud, path: str) -> None:
    if path.endswith(".ply"):
        ri.write_ply(cloud, path)
    elif path.endswith(".bin"):
        padded = np.zeros((cloud.count, 4), dtype="<f4")
        padded[:, :3] = cloud.points
        padded.tofile(path)
    else:
        raise ValueError(f"unsupported cloud format: {path!r} (.bin or .ply)")


# ---------------------------------------------------------------- operations

def op_project(in_path: str, out_path: str, dims: str | None = None,
               fov: str | None = None) -> dict:
    cloud = _read_cloud(in_path)
    cfg = projection_config(dims, fov)
    img, dropped = ri.project(cloud, cfg)
    ri.write_rangeimage(img, out_path)
    return {
        "points": cloud.count,
        "dropped": dropped,
        "valid_cells": int(img.mask.sum()),
        "dims": list(img.shape),
        "out": out_path,
    }


def op_unproject(in_path: str, out_path: str,
                 fov: str | None = None) -> dict:
    img = ri.read_rangeimage(in_path)
    cfg = projection_config(f"{img.shape[0]}x{img.shape[1]}", fov)
    cloud = ri.unproject(img, cfg)
    _write_cloud(cloud, out_path)
    return {"points": cloud.count, "out": out_path}


def op_synth(out_dir: str, count: int, seed: int = 0,
             dims: str | None = None, fov: str | None = None) -> dict:
    if count < 1:
        raise ValueError("count must be positive")
    cfg = projection_config(dims, fov)
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for k in range(count):
        sample = tr.synth_scene(seed + k, cfg)
        stem = f"scene_{seed + k:05d}"
        ri.write_rangeimage(sample.high, os.path.join(out_dir, f"{stem}_high.frim"))
        ri.write_rangeimage(sample.low, os.path.join(out_dir, f"{stem}_low.frim"))
        names.append(stem)
    return {"scenes": count, "first": names[0], "last": names[-1],
            "out_dir": out_dir, "dims": [cfg.height, cfg.width]}


def _load_pairs(data_dir: str):
    highs = sorted(f for f in os.listdir(data_dir) if f.endswith("_high.frim"))
    if not highs:
        raise ValueError(f"no *_high.frim files in {data_dir!r}")
    pairs = []
    for name in highs:
        low_name = name.replace("_high.frim", "_low.frim")
        low_path = os.path.join(data_dir, low_name)
        if not os.path.exists(low_path):
            raise ValueError(f"missing pair file {low_name!r}")
        high = ri.read_rangeimage(os.path.join(data_dir, name))
        low = ri.read_rangeimage(low_path)
        digits = "".join(ch for ch in name if ch.isdigit())
        seed = int(digits) if digits else len(pairs)
        pairs.append(tr.SceneSample(scene=tr.SyntheticScene(seed, []),
                                    cloud=ri.PointCloud(np.zeros((0, 3))),
                                    high=high, low=low))
    return pairs


def op_train(data_dir: str, out_dir: str, config_path: str | None = None,
             overrides: dict[str, str] | None = None,
             val_modulus: int = 10) -> dict:
    entries = parse_config_file(config_path) if config_path else {}
    entries.update(overrides or {})
    model_kw, train_kw = split_config(entries)

    pairs = _load_pairs(data_dir)
    train_set = [p for p in pairs if p.scene.seed % val_modulus != 0]
    val_set = [p for p in pairs if p.scene.seed % val_modulus == 0]
    if not train_set:
        raise ValueError("training split is empty; need non-multiple seeds")

    low_h, low_w = train_set[0].low.shape
    model_kw.setdefault("height", low_h)
    model_kw.setdefault("width", low_w)
    model = FlashModel(FlashConfig(**model_kw))

    sched = tr.LrSchedule(
        peak=train_kw.pop("peak_lr", 5e-4),
        warmup=train_kw.pop("warmup", 6),
        cycle=train_kw.pop("cycle", 60),
        decay=train_kw.pop("decay", 0.7),
        floor=train_kw.pop("floor_lr", None),
    )
    tcfg = tr.TrainConfig(schedule=sched, out_dir=out_dir,
                          seed=model.cfg.seed, **train_kw)
    history = tr.train(model, train_set, val_set, tcfg)
    viz.write_svg_lines(
        {"train_l1": [h["train_l1"] for h in history],
         "val_l1": [h["val_l1"] for h in history]},
        os.path.join(out_dir, "loss.svg"), title="masked L1 (log range)")
    best = min((h["val_l1"] for h in history
                if not math.isnan(h["val_l1"])), default=math.nan)
    return {
        "epochs": len(history),
        "train_scenes": len(train_set),
        "val_scenes": len(val_set),
        "final_train_l1": history[-1]["train_l1"],
        "final_val_l1": history[-1]["val_l1"],
        "best_val_l1": best,
        "out_dir": out_dir,
    }


def op_infer(ckpt: str, in_path: str, out_path: str,
             mc_samples: int | None = None, mc_batch: int = 8,
             dropout: float = 0.2, ply: str | None = None,
             svg: str | None = None, fov: str | None = None) -> dict:
    model = load_model(ckpt)
    low = ri.read_rangeimage(in_path)
    if low.shape != (model.cfg.height, model.cfg.width):
        raise ValueError(f"input {low.shape} does not match model "
                         f"({model.cfg.height}, {model.cfg.width})")
    log_low = ri.log_transform(low).values

    summary: dict = {"in": in_path, "out": out_path}
    if mc_samples:
        mean, std, latency = ev.mc_dropout_infer(model, log_low,
                                                 samples=mc_samples,
                                                 batch=mc_batch, p=dropout)
        pred_log = mean
        std_path = os.path.splitext(out_path)[0] + "_std.frim"
        full = np.ones(std.shape, dtype=bool)
        ri.write_rangeimage(RangeImage(std, full), std_path)
        summary.update(mc_samples=mc_samples, mc_batch=mc_batch,
                       dropout=dropout, std_out=std_path,
                       mc_latency_ms=latency)
    else:
        with tk.no_grad():
            pred_log = model.forward(tk.Tensor(log_low[None])).data[0]

    full = np.ones(pred_log.shape, dtype=bool)
    pred = ri.inverse_log_transform(RangeImage(pred_log, full))
    ri.write_rangeimage(pred, out_path)
    summary["dims"] = list(pred.shape)

    if ply:
        cfg = projection_config(f"{pred.shape[0]}x{pred.shape[1]}", fov)
        ri.write_ply(ri.unproject(pred, cfg), ply)
        summary["ply"] = ply
    if svg:
        viz.write_svg_heatmap(pred, svg, title=os.path.basename(out_path))
        summary["svg"] = svg
    return summary


def op_eval(pred_path: str, gt_path: str, bins: str = DEFAULT_BIN_SPEC,
            report_path: str | None = None,
            fov: str | None = None) -> dict:
    pred = ri.read_rangeimage(pred_path)
    gt = ri.read_rangeimage(gt_path)
    if pred.shape != gt.shape:
        raise ValueError(f"pred {pred.shape} vs gt {gt.shape}")
    cfg = projection_config(f"{gt.shape[0]}x{gt.shape[1]}", fov)
    report = ev.evaluate(pred, gt, cfg, bins=parse_bins(bins))
    payload = ev.report_to_dict(report)
    if report_path:
        with open(report_path, "w") as f:
            f.write(ev.report_to_json(report) + "\n")
        payload["report"] = report_path
    payload["table"] = ev.report_table(report)
    return payload


def op_bench(ckpt: str, reps: int = 20, warmup: int = 3,
             mc_samples: int | None = None, mc_batch: int = 8,
             dropout: float = 0.2) -> dict:
    if reps < 1:
        raise ValueError("reps must be positive")
    model = load_model(ckpt)
    pcfg = projection_config(f"{model.cfg.height * 4}x{model.cfg.width}")
    sample = tr.synth_scene(0, pcfg)
    img = ri.log_transform(sample.low).values
    single = ev.time_single_pass(model, img, warmup=warmup, reps=reps)
    out = {"single_ms": single, "reps": reps,
           "dims": [model.cfg.height, model.cfg.width]}
    if mc_samples:
        _, _, latency = ev.mc_dropout_infer(model, img, samples=mc_samples,
                                            batch=mc_batch, p=dropout)
        out.update(mc_ms=latency, mc_samples=mc_samples, mc_batch=mc_batch,
                   mc_over_single=latency / single if single else math.inf)
    return out
