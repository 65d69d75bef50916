"""Adaptive multi-scale fusion for encoder-decoder skip connections.

Encoder and decoder features are summed, filtered at three receptive-field
sizes in parallel, and blended with per-position softmax weights learned from
the concatenated scale responses. A channel-then-spatial attention pass
refines the blend. All convolutions wrap horizontally to honor the circular
scan.

Parameters initialize near the identity: delta-centered kernels, uniform
scale weights, and open attention gates. An untrained fusion block therefore
behaves like a plain residual skip and only learns where to deviate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorkit as tk
from .tensorkit import Tensor
from .tensorkit.params import ParamStore


@dataclass
class CBAMParams:
    """Channel MLP (shared between avg/max pools) and spatial gate conv."""

    mlp_w1: Tensor        # (C, C // rho)
    mlp_b1: Tensor
    mlp_w2: Tensor        # (C // rho, C)
    mlp_b2: Tensor
    spatial_w: Tensor     # (k, k, 2, 1)
    spatial_b: Tensor


@dataclass
class MSFParams:
    conv1_w: Tensor       # (1, 1, C, C)
    conv1_b: Tensor
    conv3_w: Tensor       # (3, 3, C, C)
    conv3_b: Tensor
    conv5_w: Tensor       # (5, 5, C, C)
    conv5_b: Tensor
    wgen_w: Tensor        # (1, 1, 3C, 3) scale-weight logits
    wgen_b: Tensor
    cbam: CBAMParams
    proj_w: Tensor | None = None   # optional encoder channel alignment
    proj_b: Tensor | None = None


def make_cbam_params(store: ParamStore, prefix: str, channels: int,
                     spatial_kernel: int = 7) -> CBAMParams:
    rho = min(4, channels)
    hidden = channels // rho
    return CBAMParams(
        mlp_w1=store.trunc_normal(f"{prefix}.mlp_w1", (channels, hidden)),
        mlp_b1=store.zeros(f"{prefix}.mlp_b1", (hidden,)),
        mlp_w2=store.trunc_normal(f"{prefix}.mlp_w2", (hidden, channels)),
        # positive gate biases open both gates (about 0.88) at init, so the
        # block starts near a pass-through and learns what to suppress; the
        # channel bias enters twice, once per pooling path
        mlp_b2=store.constant(f"{prefix}.mlp_b2", np.full(channels, 1.0)),
        spatial_w=store.trunc_normal(
            f"{prefix}.spatial_w", (spatial_kernel, spatial_kernel, 2, 1)),
        spatial_b=store.constant(f"{prefix}.spatial_b", np.full(1, 2.0)),
    )


def make_msf_params(store: ParamStore, prefix: str, channels: int,
                    spatial_kernel: int = 7) -> MSFParams:
    c = channels
    p = MSFParams(
        conv1_w=store.trunc_normal(f"{prefix}.conv1_w", (1, 1, c, c)),
        conv1_b=store.zeros(f"{prefix}.conv1_b", (c,)),
        conv3_w=store.trunc_normal(f"{prefix}.conv3_w", (3, 3, c, c)),
        conv3_b=store.zeros(f"{prefix}.conv3_b", (c,)),
        conv5_w=store.trunc_normal(f"{prefix}.conv5_w", (5, 5, c, c)),
        conv5_b=store.zeros(f"{prefix}.conv5_b", (c,)),
        # zero logits make the softmax blend start exactly uniform
        wgen_w=store.zeros(f"{prefix}.wgen_w", (1, 1, 3 * c, 3)),
        wgen_b=store.zeros(f"{prefix}.wgen_b", (3,)),
        cbam=make_cbam_params(store, f"{prefix}.cbam", c, spatial_kernel),
    )
    # delta-centered kernels: each scale branch starts as identity plus noise
    eye = np.eye(c)
    p.conv1_w.data[0, 0] += eye
    p.conv3_w.data[1, 1] += eye
    p.conv5_w.data[2, 2] += eye
    return p


def cbam(x: Tensor, p: CBAMParams) -> Tensor:
    """Sequential channel-then-spatial gating, each gate in (0, 1)."""

    def mlp(t: Tensor) -> Tensor:
        return tk.linear(tk.relu(tk.linear(t, p.mlp_w1, p.mlp_b1)), p.mlp_w2, p.mlp_b2)

    b, _, _, c = x.shape
    avg_pool = x.mean(axis=(1, 2))
    max_pool = x.max(axis=1).max(axis=1)
    channel_gate = tk.sigmoid(mlp(avg_pool) + mlp(max_pool))
    x = x * channel_gate.reshape((b, 1, 1, c))

    pooled = tk.concat([x.mean(axis=-1, keepdims=True),
                        x.max(axis=-1, keepdims=True)], axis=-1)
    spatial_gate = tk.sigmoid(
        tk.conv2d(pooled, p.spatial_w, p.spatial_b, pad_mode=tk.PAD_CIRCULAR_H))
    return x * spatial_gate


def _scale_responses(x_e: Tensor, x_d: Tensor, p: MSFParams):
    if p.proj_w is not None:
        x_e = tk.linear(x_e, p.proj_w, p.proj_b)
    if x_e.shape != x_d.shape:
        raise ValueError(f"encoder {x_e.shape} and decoder {x_d.shape} disagree")

    combined = x_e + x_d
    f1 = tk.conv2d(combined, p.conv1_w, p.conv1_b, pad_mode=tk.PAD_CIRCULAR_H)
    f3 = tk.conv2d(combined, p.conv3_w, p.conv3_b, pad_mode=tk.PAD_CIRCULAR_H)
    f5 = tk.conv2d(combined, p.conv5_w, p.conv5_b, pad_mode=tk.PAD_CIRCULAR_H)

    logits = tk.conv2d(tk.concat([f1, f3, f5], axis=-1),
                       p.wgen_w, p.wgen_b, pad_mode=tk.PAD_CIRCULAR_H)
    return f1, f3, f5, tk.softmax(logits, axis=-1)


def scale_weights(x_e: Tensor, x_d: Tensor, p: MSFParams) -> Tensor:
    """Per-position softmax weights over the three scales, shape (B, H, W, 3)."""
    return _scale_responses(x_e, x_d, p)[3]


def msf_fuse(x_e: Tensor, x_d: Tensor, p: MSFParams) -> Tensor:
    """Blend encoder and decoder features through the three-scale mixer."""
    f1, f3, f5, weights = _scale_responses(x_e, x_d, p)
    fused = (weights[..., 0:1] * f1 + weights[..., 1:2] * f3
             + weights[..., 2:3] * f5)
    return cbam(fused, p.cbam)
