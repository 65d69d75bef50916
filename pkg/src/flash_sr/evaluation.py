"""Metric suite: masked MAE, Chamfer distance, voxel occupancy scores,
distance-binned reports, stochastic-inference harness, and latency timing.

Chamfer nearest neighbors run on a 3D grid hash with a shell-expansion search
that is exact: shells keep expanding until no unvisited cell can hold a closer
point, and small point sets fall back to exhaustive search. Distances are
computed with the same elementwise expression as the brute-force path, so the
two agree bitwise.
"""

from __future__ import annotations

import json
import math
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from . import rangeimg as ri
from . import tensorkit as tk
from .network import FlashModel
from .rangeimg import PointCloud, ProjectionConfig, RangeImage
from .tensorkit import Tensor

VOXEL_EDGE = 0.1
DEFAULT_BINS = ((0.0, 30.0), (30.0, 60.0))


# ----------------------------------------------------------------------- MAE

def mae(pred: RangeImage, gt: RangeImage, space: str = "log") -> float:
    """Mean absolute error over gt-valid cells.

    ``space`` selects the representation: "log" compares log(1+r) values (the
    training target), "meters" compares raw ranges.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if space not in ("log", "meters"):
        raise ValueError(f"unknown space {space!r}")
    m = gt.mask
    if not m.any():
        return math.nan
    p, g = pred.values[m], gt.values[m]
    if space == "log":
        p, g = np.log1p(np.maximum(p, 0.0)), np.log1p(g)
    return float(np.abs(p - g).mean())


# ------------------------------------------------------------------- chamfer

_BRUTE_PAIR_LIMIT = 1 << 22   # below this many pairs, skip the index


def _brute_nn2(queries: np.ndarray, points: np.ndarray) -> np.ndarray:
    return ((queries[:, None, :] - points[None, :, :]) ** 2).sum(axis=2).min(axis=1)


def _nn_sq_distances(queries: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Exact squared nearest-neighbor distance from each query to points."""
    n, m = queries.shape[0], points.shape[0]
    if n * m <= _BRUTE_PAIR_LIMIT:
        return _brute_nn2(queries, points)

    lo, hi = points.min(axis=0), points.max(axis=0)
    vol = float(np.prod(np.maximum(hi - lo, 1e-9)))
    edge = max((vol / m) ** (1.0 / 3.0), 1e-9)

    buckets: dict[tuple, list[int]] = {}
    for i, c in enumerate(map(tuple, np.floor(points / edge).astype(np.int64))):
        buckets.setdefault(c, []).append(i)
    occ = np.array(list(buckets), dtype=np.int64)
    occ_pts = [points[idx] for idx in buckets.values()]

    groups: dict[tuple, list[int]] = {}
    for i, c in enumerate(map(tuple, np.floor(queries / edge).astype(np.int64))):
        groups.setdefault(c, []).append(i)

    best2 = np.full(n, np.inf)
    for qcell, qidx in groups.items():
        # visit occupied cells by Chebyshev distance; a cell at distance r
        # cannot hold a point closer than (r-1)*edge, which bounds the scan
        cheb = np.abs(occ - np.asarray(qcell)).max(axis=1)
        order = np.argsort(cheb, kind="stable")
        qs = queries[qidx]
        b2 = np.full(len(qidx), np.inf)
        for j in order:
            if b2.max() <= ((cheb[j] - 1) * edge) ** 2:
                break
            b2 = np.minimum(b2, _brute_nn2(qs, occ_pts[j]))
        best2[qidx] = b2
    return best2


def chamfer(a: PointCloud, b: PointCloud, squared: bool = False) -> float:
    """Symmetric mean nearest-neighbor distance.

    Unsquared by default (meters); ``squared=True`` averages squared
    distances instead (meters squared).
    """
    if a.count == 0 or b.count == 0:
        raise ValueError("chamfer distance is undefined for empty clouds")
    d2_ab = _nn_sq_distances(a.points, b.points)
    d2_ba = _nn_sq_distances(b.points, a.points)
    if not squared:
        d2_ab, d2_ba = np.sqrt(d2_ab), np.sqrt(d2_ba)
    return 0.5 * (float(d2_ab.mean()) + float(d2_ba.mean()))


# --------------------------------------------------------------- voxel scores

def voxelize(cloud: PointCloud, edge: float = VOXEL_EDGE) -> set:
    """Occupied voxel index set, indices = floor(coord / edge)."""
    if cloud.count == 0:
        return set()
    return set(map(tuple, np.floor(cloud.points / edge).astype(np.int64)))


def voxel_scores(pred: PointCloud, gt: PointCloud,
                 edge: float = VOXEL_EDGE) -> tuple[float, float, float, float]:
    """(IoU, precision, recall, F1) over occupied voxel sets."""
    p, g = voxelize(pred, edge), voxelize(gt, edge)
    inter = len(p & g)
    union = len(p | g)
    iou = inter / union if union else 0.0
    precision = inter / len(p) if p else 0.0
    recall = inter / len(g) if g else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return iou, precision, recall, f1


# ------------------------------------------------------------------- reports

@dataclass
class BinReport:
    lo: float
    hi: float
    mae_m: float | None
    cd: float
    iou: float
    precision: float
    recall: float
    f1: float
    pred_points: int
    gt_points: int


@dataclass
class MetricReport:
    mae_log: float
    mae_m: float
    cd: float
    iou: float
    precision: float
    recall: float
    f1: float
    bins: dict = field(default_factory=dict)       # label -> BinReport | None
    latency_ms: float | None = None
    mc_latency_ms: float | None = None


def _filter_by_range(cloud: PointCloud, lo: float, hi: float) -> PointCloud:
    r = np.linalg.norm(cloud.points, axis=1)
    return PointCloud(cloud.points[(r >= lo) & (r < hi)])


def binned_eval(pred: RangeImage, gt: RangeImage, cfg: ProjectionConfig,
                bins=DEFAULT_BINS) -> dict:
    """Per-distance-band reports; a band missing points on either side maps
    to None (absent, not zero)."""
    pred_cloud = ri.unproject(pred, cfg)
    gt_cloud = ri.unproject(gt, cfg)
    out: dict[str, BinReport | None] = {}
    for lo, hi in bins:
        label = f"{lo:g}-{hi:g}m"
        p = _filter_by_range(pred_cloud, lo, hi)
        g = _filter_by_range(gt_cloud, lo, hi)
        if p.count == 0 or g.count == 0:
            out[label] = None
            continue
        cell = gt.mask & (gt.values >= lo) & (gt.values < hi)
        mae_m = (float(np.abs(pred.values[cell] - gt.values[cell]).mean())
                 if cell.any() else None)
        iou, precision, recall, f1 = voxel_scores(p, g)
        out[label] = BinReport(lo, hi, mae_m, chamfer(p, g), iou, precision,
                               recall, f1, p.count, g.count)
    return out


def evaluate(pred: RangeImage, gt: RangeImage, cfg: ProjectionConfig,
             bins=DEFAULT_BINS) -> MetricReport:
    """Whole-frame metrics plus distance-binned sub-reports."""
    pred_cloud = ri.unproject(pred, cfg)
    gt_cloud = ri.unproject(gt, cfg)
    iou, precision, recall, f1 = voxel_scores(pred_cloud, gt_cloud)
    return MetricReport(
        mae_log=mae(pred, gt, "log"),
        mae_m=mae(pred, gt, "meters"),
        cd=chamfer(pred_cloud, gt_cloud),
        iou=iou, precision=precision, recall=recall, f1=f1,
        bins=binned_eval(pred, gt, cfg, bins),
    )


def report_to_dict(report: MetricReport) -> dict:
    d = {
        "mae_log": report.mae_log,
        "mae_m": report.mae_m,
        "cd": report.cd,
        "iou": report.iou,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "bins": {},
    }
    for label, b in report.bins.items():
        d["bins"][label] = None if b is None else {
            "mae_m": b.mae_m, "cd": b.cd, "iou": b.iou,
            "precision": b.precision, "recall": b.recall, "f1": b.f1,
            "pred_points": b.pred_points, "gt_points": b.gt_points,
        }
    if report.latency_ms is not None:
        d["latency_ms"] = report.latency_ms
    if report.mc_latency_ms is not None:
        d["mc_latency_ms"] = report.mc_latency_ms
    return d


def report_to_json(report: MetricReport) -> str:
    return json.dumps(report_to_dict(report), indent=2)


def report_table(report: MetricReport) -> str:
    """Aligned-column rendering: one row overall, one per distance band."""
    header = f"{'band':<10}{'MAE(log)':>10}{'MAE(m)':>10}{'CD(m)':>10}" \
             f"{'IoU':>8}{'P':>8}{'R':>8}{'F1':>8}"
    lines = [header, "-" * len(header)]

    def fmt(v):
        return "   -" if v is None else f"{v:.4f}"

    lines.append(f"{'overall':<10}{report.mae_log:>10.4f}{report.mae_m:>10.4f}"
                 f"{report.cd:>10.4f}{report.iou:>8.4f}{report.precision:>8.4f}"
                 f"{report.recall:>8.4f}{report.f1:>8.4f}")
    for label, b in report.bins.items():
        if b is None:
            lines.append(f"{label:<10}{'absent':>10}")
            continue
        lines.append(f"{label:<10}{'-':>10}{fmt(b.mae_m):>10}{b.cd:>10.4f}"
                     f"{b.iou:>8.4f}{b.precision:>8.4f}{b.recall:>8.4f}"
                     f"{b.f1:>8.4f}")
    return "\n".join(lines)


# ------------------------------------------------------- stochastic inference

def mc_dropout_infer(model: FlashModel, img: np.ndarray, samples: int = 20,
                     batch: int = 8, p: float = 0.2):
    """Repeated stochastic forward passes on one input.

    Returns (mean, std, latency_ms) on the log-range output grid. The input
    image is replicated into batches of ``batch``; dropout draws differ per
    replica. With p=0 every pass is identical, so the mean is exactly the
    single-pass output and the std is zero.
    """
    if samples < 1 or batch < 1:
        raise ValueError("samples and batch must be positive")
    saved_p = model.cfg.dropout
    model.cfg.dropout = p
    try:
        outs = []
        start = time.perf_counter()
        with tk.no_grad():
            chunk = 0
            done = 0
            while done < samples:
                k = min(batch, samples - done)
                rng = (tk.generator_for(model.cfg.seed, f"mc.{chunk}")
                       if p > 0 else None)
                stacked = Tensor(np.repeat(img[None], k, axis=0))
                out = model.forward(stacked, rng=rng)
                outs.append(out.data)
                done += k
                chunk += 1
        latency_ms = (time.perf_counter() - start) * 1000.0
    finally:
        model.cfg.dropout = saved_p
    stack = np.concatenate(outs, axis=0)
    if p == 0.0:
        return stack[0], np.zeros_like(stack[0]), latency_ms
    return stack.mean(axis=0), stack.std(axis=0), latency_ms


def time_single_pass(model: FlashModel, img: np.ndarray, warmup: int = 3,
                     reps: int = 20) -> float:
    """Median wall-clock milliseconds of the deterministic forward pass."""
    x = Tensor(img[None])
    timings = []
    with tk.no_grad():
        for _ in range(warmup):
            model.forward(x)
        for _ in range(reps):
            t0 = time.perf_counter()
            model.forward(x)
            timings.append((time.perf_counter() - t0) * 1000.0)
    return statistics.median(timings)
