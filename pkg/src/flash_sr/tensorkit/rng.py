"""Deterministic, splittable random number generation.

Every consumer derives its own Philox stream from a 64-bit root seed plus a
string label (parameter name, dropout site, scene index). Streams are
independent of creation order, so two model configurations that share a
parameter name draw identical initial values.
"""

from __future__ import annotations

import hashlib

import numpy as np


def generator_for(seed: int, label: str) -> np.random.Generator:
    """Independent generator keyed by (seed, label)."""
    key = hashlib.blake2b(
        label.encode("utf-8"),
        digest_size=8,
        key=int(seed).to_bytes(8, "little", signed=False),
    ).digest()
    return np.random.Generator(np.random.Philox(int.from_bytes(key, "little")))


def trunc_normal(gen: np.random.Generator, shape: tuple, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) truncated to +/- 2 std by rejection resampling."""
    out = gen.normal(0.0, std, size=shape)
    bound = 2.0 * std
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = gen.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > bound
    return out
