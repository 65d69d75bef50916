"""Finite-difference gradient verification utilities.

Used by the test and acceptance suites to check every analytic backward rule
against central differences. Double precision with h ~= 1e-5 keeps the
truncation + roundoff floor near 1e-9, far below the 1e-4 relative tolerance
the checks assert.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_gradient(f: Callable[[], float], x: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. every element of x."""
    flat = x.data.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * eps)
    return out.reshape(x.data.shape)


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / scale).max()) if analytic.size else 0.0


def check_gradients(
    make_loss: Callable[[], Tensor],
    wrt: Sequence[Tensor],
    eps: float = 1e-5,
) -> float:
    """Max relative error between backward() grads and finite differences.

    ``make_loss`` must rebuild the graph from the current ``.data`` of the
    tensors in ``wrt`` and return a scalar Tensor.
    """
    for t in wrt:
        t.grad = None
    make_loss().backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in wrt]
    worst = 0.0
    for t, a in zip(wrt, analytic):
        n = numeric_gradient(lambda: make_loss().item(), t, eps)
        worst = max(worst, max_relative_error(a, n))
    return worst


def check_directional(
    make_loss: Callable[[], Tensor],
    wrt: Sequence[Tensor],
    n_dirs: int = 3,
    eps: float = 1e-5,
    seed: int = 0,
) -> float:
    """Directional-derivative check for parameter sets too large to sweep.

    Compares <grad, d> against central differences of the loss along random
    unit directions d over the full parameter vector.
    """
    for t in wrt:
        t.grad = None
    make_loss().backward()
    grads = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in wrt]
    gen = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_dirs):
        dirs = [gen.normal(size=t.data.shape) for t in wrt]
        norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
        dirs = [d / norm for d in dirs]
        analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
        saved = [t.data.copy() for t in wrt]
        for t, d in zip(wrt, dirs):
            t.data = t.data + eps * d
        fp = make_loss().item()
        for t, s, d in zip(wrt, saved, dirs):
            t.data = s - eps * d
        fm = make_loss().item()
        for t, s in zip(wrt, saved):
            t.data = s
        numeric = (fp - fm) / (2.0 * eps)
        worst = max(worst, max_relative_error(np.array([analytic]), np.array([numeric])))
    return worst
