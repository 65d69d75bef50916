"""Neural-network kernels on top of the autodiff tensor.

Everything the super-resolution network needs: linear projection, 2D
convolution with circular horizontal padding, softmax, sigmoid, GELU, ReLU,
layer normalization and dropout. All kernels are fused primitives with
hand-written backward rules (verified against finite differences in the test
suite).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

from .tensor import Tensor, _out, as_tensor

PAD_ZEROS = "zeros"
PAD_CIRCULAR_H = "circular_horizontal_zeros_vertical"

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def linear(x, w, b=None) -> Tensor:
    """``y = x @ w + b`` over the last axis; x (..., Ci), w (Ci, Co), b (Co,)."""
    x, w = as_tensor(x), as_tensor(w)
    ci, co = w.data.shape
    if x.data.shape[-1] != ci:
        raise ValueError(f"linear: input last dim {x.data.shape[-1]} != {ci}")
    lead = x.data.shape[:-1]
    x2 = x.data.reshape(-1, ci)
    y2 = x2 @ w.data
    if b is not None:
        b = as_tensor(b)
        y2 = y2 + b.data

    def backward(g):
        g2 = g.reshape(-1, co)
        gx = (g2 @ w.data.T).reshape(x.data.shape)
        gw = x2.T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _out(y2.reshape(lead + (co,)), parents, backward)


def _pad2d(x: np.ndarray, ph: int, pw: int, pad_mode: str) -> np.ndarray:
    if pw:
        if pad_mode == PAD_CIRCULAR_H:
            x = np.concatenate([x[:, :, -pw:], x, x[:, :, :pw]], axis=2)
        else:
            x = np.pad(x, ((0, 0), (0, 0), (pw, pw), (0, 0)))
    if ph:
        x = np.pad(x, ((0, 0), (ph, ph), (0, 0), (0, 0)))
    return x


def conv2d(x, w, b=None, pad_mode: str = PAD_CIRCULAR_H) -> Tensor:
    """Same-size 2D cross-correlation, channels last.

    Args:
        x: (B, H, W, Cin) input.
        w: (k, k, Cin, Cout) kernel, k odd.
        b: optional (Cout,) bias.
        pad_mode: ``zeros`` pads both axes with zeros;
            ``circular_horizontal_zeros_vertical`` wraps columns (360 degree
            azimuth continuity) and zero-pads rows.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4:
        raise ValueError(f"conv2d expects (B, H, W, C) input, got {x.shape}")
    kh, kw, cin, cout = w.data.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"conv2d kernel must be square with odd size, got {kh}x{kw}")
    if x.data.shape[-1] != cin:
        raise ValueError(f"conv2d: input channels {x.data.shape[-1]} != kernel {cin}")
    if pad_mode not in (PAD_ZEROS, PAD_CIRCULAR_H):
        raise ValueError(f"unknown pad_mode {pad_mode!r}")
    k = kh
    p = k // 2
    bsz, h, wd, _ = x.data.shape
    if pad_mode == PAD_CIRCULAR_H and p > wd:
        raise ValueError(f"conv2d: kernel {k} too wide for circular width {wd}")

    xp = _pad2d(x.data, p, p, pad_mode)
    # (B, H, W, Cin, k, k) -> (B*H*W, k*k*Cin) GEMM operand
    cols = sliding_window_view(xp, (k, k), axis=(1, 2))
    cols2 = cols.transpose(0, 1, 2, 4, 5, 3).reshape(bsz * h * wd, k * k * cin)
    y2 = cols2 @ w.data.reshape(k * k * cin, cout)
    if b is not None:
        b = as_tensor(b)
        y2 = y2 + b.data

    def backward(g):
        g2 = g.reshape(-1, cout)
        gw = (cols2.T @ g2).reshape(k, k, cin, cout)
        # input grad: full correlation of zero-padded g with the flipped kernel
        gpad = np.pad(g, ((0, 0), (k - 1, k - 1), (k - 1, k - 1), (0, 0)))
        gcols = sliding_window_view(gpad, (k, k), axis=(1, 2))
        gcols2 = gcols.transpose(0, 1, 2, 4, 5, 3).reshape(-1, k * k * cout)
        wf = w.data[::-1, ::-1].transpose(0, 1, 3, 2).reshape(k * k * cout, cin)
        gxp = (gcols2 @ wf).reshape(bsz, h + 2 * p, wd + 2 * p, cin)
        gxp = gxp[:, p : p + h]  # rows are zero-padded in both modes: drop flaps
        if p == 0:
            gx = gxp
        elif pad_mode == PAD_CIRCULAR_H:
            gx = gxp[:, :, p : p + wd].copy()
            gx[:, :, : p] += gxp[:, :, wd + p :]
            gx[:, :, wd - p :] += gxp[:, :, :p]
        else:
            gx = gxp[:, :, p : p + wd]
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _out(y2.reshape(bsz, h, wd, cout), parents, backward)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"softmax axis {axis} out of range for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _out(y, (x,), backward)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = expit(x.data)
    return _out(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    return _out(np.maximum(x.data, 0.0), (x,), lambda g: (g * (x.data > 0),))


def gelu(x) -> Tensor:
    x = as_tensor(x)
    phi = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    y = x.data * phi

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (phi + x.data * pdf),)

    return _out(y, (x,), backward)


def layer_norm(x, gain, offset, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gain, offset = as_tensor(x), as_tensor(gain), as_tensor(offset)
    n = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gain.data + offset.data

    def backward(g):
        red = tuple(range(g.ndim - 1))
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _out(y, (x, gain, offset), backward)


def dropout(x, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: scales kept units by 1/(1-p) during training.

    Identity (the input tensor itself) when ``training`` is false or p == 0,
    so the deterministic path is bitwise-unchanged.
    """
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout with p > 0 requires an rng")
    mask = (rng.random(x.data.shape) >= p) / (1.0 - p)
    return _out(x.data * mask, (x,), lambda g: (g * mask,))
