"""Differentiable 2D FFT over the last two spatial axes.

The forward transform is the standard unnormalized DFT; the inverse carries
the 1/(H*W) factor. Complex spectra are held as a real tensor with a trailing
axis of size two (real plane, imaginary plane), so the whole frequency branch
stays inside the real-valued autodiff graph. Gradients are the analytic
adjoints: an inverse transform of the upstream complex gradient.

Dimensions are required to be powers of two; the network configs guarantee
this, and the restriction keeps every grid on the fast radix-2 path of the
underlying FFT.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, _out, as_tensor, mul, reshape


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def _check_dims(h: int, w: int) -> None:
    if not (_is_pow2(h) and _is_pow2(w)):
        raise ValueError(f"FFT dims must be powers of two, got {h}x{w}")


class ComplexGrid:
    """Complex H x W spectrum stored as paired real/imaginary planes.

    Wraps a Tensor of shape (..., H, W, 2) so the planes participate in
    autodiff like any other feature map.
    """

    def __init__(self, pair: Tensor):
        if pair.shape[-1] != 2:
            raise ValueError(f"ComplexGrid expects trailing pair axis, got {pair.shape}")
        self.pair = pair

    @property
    def shape(self) -> tuple:
        return self.pair.shape[:-1]

    @property
    def real(self) -> Tensor:
        return self.pair[..., 0]

    @property
    def imag(self) -> Tensor:
        return self.pair[..., 1]

    def magnitude(self) -> Tensor:
        return complex_magnitude(self.pair)

    def scale(self, gate: Tensor) -> "ComplexGrid":
        """Multiply both planes by a real gate of shape (..., H, W)."""
        g = reshape(gate, gate.shape + (1,))
        return ComplexGrid(mul(self.pair, g))

    def to_numpy(self) -> np.ndarray:
        """Plain complex ndarray of the current values (no gradient)."""
        return self.pair.data[..., 0] + 1j * self.pair.data[..., 1]


def fft2d(x) -> ComplexGrid:
    """Unnormalized forward DFT of a real grid over its last two axes."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ValueError(f"fft2d expects at least 2 dims, got {x.shape}")
    h, w = x.shape[-2], x.shape[-1]
    _check_dims(h, w)
    c = np.fft.fft2(x.data, axes=(-2, -1))
    pair = np.stack([c.real, c.imag], axis=-1)

    def backward(g):
        gc = g[..., 0] + 1j * g[..., 1]
        return ((h * w) * np.fft.ifft2(gc, axes=(-2, -1)).real,)

    return ComplexGrid(_out(pair, (x,), backward))


def ifft2d(grid: ComplexGrid) -> tuple[Tensor, float]:
    """Inverse DFT (1/(H*W) normalized); returns the real part.

    Also reports the maximum imaginary magnitude left after the inverse
    transform, which should be at rounding level for spectra of real signals.
    """
    pair = grid.pair
    h, w = pair.shape[-3], pair.shape[-2]
    _check_dims(h, w)
    z = np.fft.ifft2(pair.data[..., 0] + 1j * pair.data[..., 1], axes=(-2, -1))
    max_imag = float(np.abs(z.imag).max()) if z.size else 0.0

    def backward(g):
        gi = np.fft.ifft2(g, axes=(-2, -1))
        return (np.stack([gi.real, -gi.imag], axis=-1),)

    return _out(z.real, (pair,), backward), max_imag


def complex_magnitude(pair) -> Tensor:
    """|re + i*im| with a zero subgradient at exact zeros."""
    pair = as_tensor(pair)
    re = pair.data[..., 0]
    im = pair.data[..., 1]
    mag = np.hypot(re, im)

    def backward(g):
        safe = np.where(mag == 0.0, 1.0, mag)
        scale = g / safe
        out = np.stack([scale * re, scale * im], axis=-1)
        return (out,)

    return _out(mag, (pair,), backward)
