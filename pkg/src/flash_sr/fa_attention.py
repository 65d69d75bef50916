"""Frequency-aware window attention.

Couples windowed multi-head self-attention (with relative position bias and
the shifted-window scheme) to a global frequency branch: the channel-mean map
is pushed through a 2D FFT, its magnitude spectrum drives a sigmoid gate that
rescales every complex coefficient, and the inverse transform is folded back
into the spatial output through a learned scalar.

The range image wraps horizontally (a full 360 degree sweep), so cyclic column
shifts need no attention mask; only the top-bottom seam introduced by vertical
shifts is masked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensorkit as tk
from .tensorkit import Tensor
from .tensorkit.params import ParamStore

SEAM_PENALTY = -1e9


@dataclass
class WindowGrid:
    """Feature map tiled into (batch * n_windows, tokens, channels)."""

    windows: Tensor
    window: tuple[int, int]
    source: tuple[int, int, int, int]   # B, H, W, C
    shift: tuple[int, int]


@dataclass
class FAParams:
    """Learned state for one attention block."""

    heads: int
    window: tuple[int, int]
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    bias_table: Tensor        # ((2Mh-1)(2Mw-1), heads)
    freq_w: Tensor | None     # (3, 3, 1, 1) spectrum-gate conv
    freq_b: Tensor | None
    alpha: Tensor | None      # scalar branch mixer

    def __post_init__(self):
        c = self.wq.shape[0]
        if c % self.heads != 0:
            raise ValueError(f"channels {c} not divisible by heads {self.heads}")
        mh, mw = self.window
        table = (2 * mh - 1) * (2 * mw - 1)
        if self.bias_table.shape != (table, self.heads):
            raise ValueError(
                f"bias table must be ({table}, {self.heads}), got {self.bias_table.shape}")


def make_fa_params(store: ParamStore, prefix: str, channels: int, heads: int,
                   window: tuple[int, int],
                   include_frequency: bool = True) -> FAParams:
    mh, mw = window
    table = (2 * mh - 1) * (2 * mw - 1)
    return FAParams(
        heads=heads,
        window=window,
        wq=store.trunc_normal(f"{prefix}.wq", (channels, channels)),
        bq=store.zeros(f"{prefix}.bq", (channels,)),
        wk=store.trunc_normal(f"{prefix}.wk", (channels, channels)),
        bk=store.zeros(f"{prefix}.bk", (channels,)),
        wv=store.trunc_normal(f"{prefix}.wv", (channels, channels)),
        bv=store.zeros(f"{prefix}.bv", (channels,)),
        wo=store.trunc_normal(f"{prefix}.wo", (channels, channels)),
        bo=store.zeros(f"{prefix}.bo", (channels,)),
        bias_table=store.trunc_normal(f"{prefix}.bias_table", (table, heads)),
        freq_w=store.zeros(f"{prefix}.freq_gate.w", (3, 3, 1, 1))
        if include_frequency else None,
        freq_b=store.zeros(f"{prefix}.freq_gate.b", (1,))
        if include_frequency else None,
        alpha=store.constant(f"{prefix}.alpha", 0.1)
        if include_frequency else None,
    )


# ------------------------------------------------------------- window tiling

def window_partition(x: Tensor, window: tuple[int, int],
                     shift: tuple[int, int] = (0, 0)) -> WindowGrid:
    """Cyclically shift then tile (B, H, W, C) into flat token windows."""
    b, h, w, c = x.shape
    mh, mw = window
    sh, sw = shift
    if h % mh or w % mw:
        raise ValueError(f"({h}, {w}) not divisible by window ({mh}, {mw})")
    if not (0 <= sh < mh and 0 <= sw < mw):
        raise ValueError(f"shift {shift} must be inside window {window}")
    if sh or sw:
        x = x.roll((-sh, -sw), axis=(1, 2))
    tiles = x.reshape((b, h // mh, mh, w // mw, mw, c))
    tiles = tiles.transpose((0, 1, 3, 2, 4, 5))
    flat = tiles.reshape((b * (h // mh) * (w // mw), mh * mw, c))
    return WindowGrid(flat, window, (b, h, w, c), shift)


def window_reverse(grid: WindowGrid) -> Tensor:
    """Exact inverse of window_partition, including the cyclic shift."""
    b, h, w, c = grid.source
    mh, mw = grid.window
    sh, sw = grid.shift
    tiles = grid.windows.reshape((b, h // mh, w // mw, mh, mw, c))
    tiles = tiles.transpose((0, 1, 3, 2, 4, 5))
    x = tiles.reshape((b, h, w, c))
    if sh or sw:
        x = x.roll((sh, sw), axis=(1, 2))
    return x


@lru_cache(maxsize=None)
def relative_position_index(mh: int, mw: int) -> np.ndarray:
    """(Mh*Mw, Mh*Mw) lookup into the (2Mh-1)(2Mw-1) offset table."""
    coords = np.stack(np.meshgrid(np.arange(mh), np.arange(mw), indexing="ij"))
    flat = coords.reshape(2, -1)
    rel = (flat[:, :, None] - flat[:, None, :]).transpose(1, 2, 0)
    rel[:, :, 0] += mh - 1
    rel[:, :, 1] += mw - 1
    return rel[:, :, 0] * (2 * mw - 1) + rel[:, :, 1]


@lru_cache(maxsize=None)
def _seam_mask(height: int, width: int, window: tuple[int, int],
               vshift: int) -> np.ndarray | None:
    """Pairwise token penalties for windows straddling the vertical seam.

    Rows are grouped by which side of the cyclic roll they came from; token
    pairs from different groups are pushed to -inf before the softmax. Columns
    are never masked: the sweep is circular so wrapped columns are neighbors.
    """
    if vshift == 0:
        return None
    mh, mw = window
    ids = np.zeros((height, width))
    ids[height - mh:height - vshift] = 1.0
    ids[height - vshift:] = 2.0
    tiles = ids.reshape(height // mh, mh, width // mw, mw)
    tiles = tiles.transpose(0, 2, 1, 3).reshape(-1, mh * mw)
    return np.where(tiles[:, :, None] != tiles[:, None, :], SEAM_PENALTY, 0.0)


# ---------------------------------------------------------------- attention

def spatial_attention(grid: WindowGrid, p: FAParams) -> WindowGrid:
    """Per-window multi-head self-attention with relative position bias."""
    n, m, c = grid.windows.shape
    if c != p.wq.shape[0]:
        raise ValueError(f"feature channels {c} do not match params {p.wq.shape[0]}")
    heads = p.heads
    d = c // heads

    def split(t: Tensor) -> Tensor:
        return t.reshape((n, m, heads, d)).transpose((0, 2, 1, 3))

    q = split(tk.linear(grid.windows, p.wq, p.bq))
    k = split(tk.linear(grid.windows, p.wk, p.bk))
    v = split(tk.linear(grid.windows, p.wv, p.bv))

    logits = (q @ k.transpose((0, 1, 3, 2))) * (1.0 / math.sqrt(d))
    idx = relative_position_index(*p.window).reshape(-1)
    bias = p.bias_table.take(idx).reshape((m, m, heads)).transpose((2, 0, 1))
    logits = logits + bias.reshape((1, heads, m, m))

    _, h, w, _ = grid.source
    mask = _seam_mask(h, w, p.window, grid.shift[0])
    if mask is not None:
        batch = grid.source[0]
        logits = logits + Tensor(np.tile(mask, (batch, 1, 1))[:, None])

    attn = tk.softmax(logits, axis=-1)
    out = (attn @ v).transpose((0, 2, 1, 3)).reshape((n, m, c))
    return WindowGrid(tk.linear(out, p.wo, p.bo), grid.window, grid.source, grid.shift)


def frequency_branch(x: Tensor, p: FAParams) -> Tensor:
    """Gate the spectrum of the channel-mean map; returns a (B, H, W) grid.

    The gate is a sigmoid over a 3x3 convolution of the magnitude spectrum, so
    it is real and phase-preserving; both quadrature components of every
    frequency coefficient are scaled by the same factor.
    """
    if p.freq_w is None:
        raise ValueError("params were built without the frequency branch")
    b, h, w, _ = x.shape
    m = x.mean(axis=-1)
    grid = tk.fft2d(m)
    mag = grid.magnitude().reshape((b, h, w, 1))
    gate = tk.sigmoid(tk.conv2d(mag, p.freq_w, p.freq_b, pad_mode=tk.PAD_CIRCULAR_H))
    out, _ = tk.ifft2d(grid.scale(gate.reshape((b, h, w))))
    return out


def fa_forward(x: Tensor, p: FAParams, shift: tuple[int, int] = (0, 0)) -> Tensor:
    """Windowed attention plus alpha-scaled global frequency branch."""
    b, h, w, c = x.shape
    spatial = window_reverse(spatial_attention(window_partition(x, p.window, shift), p))
    freq = frequency_branch(x, p).reshape((b, h, w, 1))
    return spatial + p.alpha * freq
