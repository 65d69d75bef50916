"""Optimizer, learning-rate schedule, synthetic scenes, and the training loop.

Scenes are ray-cast against analytic primitives exactly at the cell-center
angles of the sensor grid, so projecting the resulting cloud reproduces the
rendered image and low/high-resolution pairs are geometrically consistent by
construction.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import rangeimg as ri
from . import tensorkit as tk
from .network import FlashModel, l1_loss, save_model
from .rangeimg import PointCloud, ProjectionConfig, RangeImage
from .tensorkit import Tensor


# ------------------------------------------------------------------ optimizer

class AdamW:
    """Adaptive moments with decoupled weight decay.

    Update per step t (all elementwise):
        m <- b1*m + (1-b1)*g        v <- b2*v + (1-b2)*g^2
        theta <- theta - lr*( m/(1-b1^t) / (sqrt(v/(1-b2^t)) + eps) + wd*theta )
    Decay applies to the pre-step value of theta.
    """

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self, lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            update += self.weight_decay * p.data
            update *= lr
            p.data = p.data - update


def opt_step(opt: AdamW, lr: float) -> None:
    """Apply one optimizer step at the given learning rate."""
    opt.step(lr)


# ------------------------------------------------------------------- schedule

@dataclass
class LrSchedule:
    """Linear warmup into cosine annealing with warm restarts.

    Each restart cycle starts at peak * decay^cycle_index and anneals to the
    floor; the first post-warmup epoch of every cycle returns the cycle peak
    exactly.
    """

    peak: float = 5e-4
    warmup: int = 6
    cycle: int = 60
    decay: float = 0.7
    floor: float | None = None

    def __post_init__(self):
        if self.warmup < 0 or self.cycle < 1:
            raise ValueError("need warmup >= 0 and cycle >= 1")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must lie in (0, 1]")
        if self.floor is None:
            self.floor = self.peak / 100.0


def lr_at(sched: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if epoch < sched.warmup:
        return sched.peak * epoch / sched.warmup
    e = epoch - sched.warmup
    # decayed restarts never sink below the floor
    cycle_peak = max(sched.peak * sched.decay ** (e // sched.cycle), sched.floor)
    t = e % sched.cycle
    if t == 0:
        return cycle_peak
    return sched.floor + (cycle_peak - sched.floor) * (
        1.0 + math.cos(math.pi * t / sched.cycle)) / 2.0


# ----------------------------------------------------------- synthetic scenes

@dataclass
class GroundPlane:
    z: float = -1.8


@dataclass
class Box:
    center: tuple[float, float, float]
    half: tuple[float, float, float]
    yaw: float = 0.0


@dataclass
class Cylinder:
    center: tuple[float, float]
    radius: float
    z_top: float
    z_bottom: float = -1.8


@dataclass
class SyntheticScene:
    seed: int
    primitives: list


@dataclass
class SceneSample:
    scene: SyntheticScene
    cloud: PointCloud
    high: RangeImage
    low: RangeImage


def _ray_dirs(cfg: ProjectionConfig) -> np.ndarray:
    """(H, W, 3) unit directions through every cell center."""
    v = np.arange(cfg.height) + 0.5
    u = np.arange(cfg.width) + 0.5
    elev = cfg.theta_max - v * (cfg.theta_max - cfg.theta_min) / cfg.height
    az = (cfg.width / 2.0 - u) * (2.0 * math.pi / cfg.width)
    ce, se = np.cos(elev)[:, None], np.sin(elev)[:, None]
    ca, sa = np.cos(az)[None, :], np.sin(az)[None, :]
    shape = (cfg.height, cfg.width)
    return np.stack([ce * ca, ce * sa, np.broadcast_to(se, shape)], axis=-1)


def _hit_plane(d: np.ndarray, p: GroundPlane) -> np.ndarray:
    dz = d[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(dz < 0, p.z / dz, np.inf)
    return t


def _hit_box(d: np.ndarray, b: Box) -> np.ndarray:
    c, s = math.cos(b.yaw), math.sin(b.yaw)
    # rotate world into the box frame
    dx = c * d[..., 0] + s * d[..., 1]
    dy = -s * d[..., 0] + c * d[..., 1]
    dz = d[..., 2]
    ox = -(c * b.center[0] + s * b.center[1])
    oy = -(-s * b.center[0] + c * b.center[1])
    oz = -b.center[2]
    tmin = np.full(d.shape[:-1], -np.inf)
    tmax = np.full(d.shape[:-1], np.inf)
    for o_ax, d_ax, half in ((ox, dx, b.half[0]), (oy, dy, b.half[1]),
                             (oz, dz, b.half[2])):
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-half - o_ax) / d_ax
            t2 = (half - o_ax) / d_ax
        lo, hi = np.minimum(t1, t2), np.maximum(t1, t2)
        parallel = d_ax == 0.0
        inside = np.abs(o_ax) <= half
        lo = np.where(parallel, np.where(inside, -np.inf, np.inf), lo)
        hi = np.where(parallel, np.where(inside, np.inf, -np.inf), hi)
        tmin, tmax = np.maximum(tmin, lo), np.minimum(tmax, hi)
    hit = (tmax >= tmin) & (tmin > 0)
    return np.where(hit, tmin, np.inf)


def _hit_cylinder(d: np.ndarray, cyl: Cylinder) -> np.ndarray:
    dx, dy, dz = d[..., 0], d[..., 1], d[..., 2]
    cx, cy = cyl.center
    a = dx * dx + dy * dy
    b = -2.0 * (dx * cx + dy * cy)
    c = cx * cx + cy * cy - cyl.radius ** 2
    disc = b * b - 4 * a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where((disc >= 0) & (a > 0), (-b - np.sqrt(np.maximum(disc, 0))) / (2 * a), np.inf)
    z = t * dz
    ok = (t > 0) & (z >= cyl.z_bottom) & (z <= cyl.z_top)
    return np.where(ok, t, np.inf)


_HIT = {GroundPlane: _hit_plane, Box: _hit_box, Cylinder: _hit_cylinder}


def render_scene(primitives: list, cfg: ProjectionConfig) -> RangeImage:
    """Nearest-hit ray cast over the sensor grid."""
    d = _ray_dirs(cfg)
    r = np.full((cfg.height, cfg.width), np.inf)
    for prim in primitives:
        r = np.minimum(r, _HIT[type(prim)](d, prim))
    mask = np.isfinite(r) & (r >= cfg.r_min) & (r <= cfg.r_max)
    return RangeImage(np.where(mask, r, 0.0), mask)


def synth_scene(seed: int, cfg: ProjectionConfig) -> SceneSample:
    """Deterministic random street-like scene and its image pair.

    Ground plane, a few yaw-rotated boxes, scattered cylinders, and a
    periodic fence of thin posts (strong azimuthal frequency content).
    """
    gen = np.random.default_rng(seed)
    prims: list = [GroundPlane(z=-1.8)]
    for _ in range(int(gen.integers(2, 6))):
        ang = gen.uniform(-math.pi, math.pi)
        dist = gen.uniform(6.0, 45.0)
        prims.append(Box(
            center=(dist * math.cos(ang), dist * math.sin(ang),
                    -1.8 + gen.uniform(0.5, 2.2)),
            half=(gen.uniform(0.5, 3.0), gen.uniform(0.5, 3.0),
                  gen.uniform(0.5, 2.2)),
            yaw=gen.uniform(0, math.pi),
        ))
    for _ in range(int(gen.integers(1, 4))):
        ang = gen.uniform(-math.pi, math.pi)
        dist = gen.uniform(4.0, 40.0)
        prims.append(Cylinder(
            center=(dist * math.cos(ang), dist * math.sin(ang)),
            radius=gen.uniform(0.2, 1.0),
            z_top=gen.uniform(0.5, 4.0),
        ))
    fence_ang = gen.uniform(-math.pi, math.pi)
    fence_dist = gen.uniform(8.0, 30.0)
    step_ang = gen.uniform(0.05, 0.12)
    for k in range(int(gen.integers(8, 16))):
        a = fence_ang + k * step_ang
        prims.append(Cylinder(
            center=(fence_dist * math.cos(a), fence_dist * math.sin(a)),
            radius=gen.uniform(0.08, 0.2),
            z_top=gen.uniform(0.8, 1.6),
        ))
    scene = SyntheticScene(seed=seed, primitives=prims)
    high = render_scene(prims, cfg)
    return SceneSample(
        scene=scene,
        cloud=ri.unproject(high, cfg),
        high=high,
        low=ri.downsample_rows(high, 4),
    )


def make_dataset(n_scenes: int, cfg: ProjectionConfig,
                 val_modulus: int = 10) -> tuple[list, list]:
    """Scenes split into train/val by seed residue (seed %% modulus == 0)."""
    train, val = [], []
    for seed in range(n_scenes):
        sample = synth_scene(seed, cfg)
        (val if seed % val_modulus == 0 else train).append(sample)
    return train, val


# ---------------------------------------------------------------- train loop

@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 4
    schedule: LrSchedule = field(default_factory=LrSchedule)
    weight_decay: float = 0.01
    seed: int = 0
    out_dir: str | None = None       # checkpoints + loss CSV land here
    log_every: int = 0               # epochs between stdout lines; 0 = silent


def _log_batch(samples: list, idx: np.ndarray):
    """Stack log-range inputs and targets for the given sample indices."""
    lows = np.stack([ri.log_transform(samples[i].low).values for i in idx])
    highs = np.stack([ri.log_transform(samples[i].high).values for i in idx])
    masks = np.stack([samples[i].high.mask for i in idx])
    return lows, highs, masks


def evaluate_l1(model: FlashModel, samples: list, batch_size: int) -> float:
    """Masked L1 on log-range over a sample list, inference path."""
    if not samples:
        return math.nan
    total, count = 0.0, 0
    with tk.no_grad():
        for start in range(0, len(samples), batch_size):
            idx = np.arange(start, min(start + batch_size, len(samples)))
            lows, highs, masks = _log_batch(samples, idx)
            pred = model.forward(Tensor(lows))
            err = np.abs(pred.data - highs) * masks
            total += err.sum()
            count += masks.sum()
    return total / count


def train(model: FlashModel, train_set: list, val_set: list,
          cfg: TrainConfig) -> list[dict]:
    """Minibatch L1 training; returns per-epoch history rows.

    Every epoch appends {epoch, train_l1, val_l1, lr} and, when out_dir is
    set, rewrites loss.csv, last.ckpt, and best.ckpt (lowest val loss so far).
    """
    if not train_set:
        raise ValueError("empty training set")
    opt = AdamW(model.store.params, weight_decay=cfg.weight_decay)
    history: list[dict] = []
    best_val = math.inf
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)

    for epoch in range(cfg.epochs):
        lr = lr_at(cfg.schedule, epoch)
        order = tk.generator_for(cfg.seed, f"shuffle.{epoch}").permutation(
            len(train_set))
        epoch_loss, steps = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            lows, highs, masks = _log_batch(train_set, idx)
            model.store.zero_grad()
            pred = model.forward(Tensor(lows))
            loss, starved = l1_loss(pred, Tensor(highs), masks)
            value = loss.item()
            if not math.isfinite(value):
                raise FloatingPointError(
                    f"non-finite loss {value} at epoch {epoch} step {steps}")
            if not starved:
                loss.backward()
                opt.step(lr)
            epoch_loss += value
            steps += 1

        row = {
            "epoch": epoch,
            "train_l1": epoch_loss / max(steps, 1),
            "val_l1": evaluate_l1(model, val_set, cfg.batch_size),
            "lr": lr,
        }
        history.append(row)
        if cfg.log_every and epoch % cfg.log_every == 0:
            print(f"epoch {epoch:4d}  train {row['train_l1']:.5f}  "
                  f"val {row['val_l1']:.5f}  lr {lr:.2e}")
        if cfg.out_dir:
            write_history_csv(history, os.path.join(cfg.out_dir, "loss.csv"))
            save_model(model, os.path.join(cfg.out_dir, "last.ckpt"))
            if math.isnan(row["val_l1"]) or row["val_l1"] < best_val:
                best_val = row["val_l1"] if not math.isnan(row["val_l1"]) else best_val
                save_model(model, os.path.join(cfg.out_dir, "best.ckpt"))
    return history


def write_history_csv(history: list[dict], path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["epoch", "train_l1", "val_l1", "lr"])
        writer.writeheader()
        writer.writerows(history)
