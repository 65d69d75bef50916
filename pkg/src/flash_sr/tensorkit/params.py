"""Named parameter store for model construction and checkpointing.

Parameters are created under dotted path names ("enc0.blk1.attn.wq"); each
name seeds its own RNG stream, so initial values depend only on (seed, name)
and never on creation order. This keeps ablated model variants bitwise-aligned
on their shared parameters.
"""

from __future__ import annotations

import numpy as np

from .rng import generator_for, trunc_normal
from .tensor import Tensor


class ParamStore:
    def __init__(self, seed: int):
        self.seed = seed
        self.params: dict[str, Tensor] = {}

    def _register(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def trunc_normal(self, name: str, shape: tuple, std: float = 0.02) -> Tensor:
        gen = generator_for(self.seed, name)
        return self._register(name, trunc_normal(gen, shape, std))

    def zeros(self, name: str, shape: tuple) -> Tensor:
        return self._register(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple) -> Tensor:
        return self._register(name, np.ones(shape))

    def constant(self, name: str, value) -> Tensor:
        return self._register(name, np.asarray(value, dtype=np.float64))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ValueError(
                f"parameter set mismatch: missing={sorted(missing)}, unexpected={sorted(extra)}"
            )
        for k, v in state.items():
            arr = np.asarray(v, dtype=np.float64)
            if arr.shape != self.params[k].data.shape:
                raise ValueError(
                    f"shape mismatch for {k!r}: checkpoint {arr.shape}, model {self.params[k].data.shape}"
                )
            self.params[k].data = arr.copy()
