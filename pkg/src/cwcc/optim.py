"""Adam optimiser over a name -> Tensor parameter mapping."""
from __future__ import annotations

from typing import Mapping

import numpy as np

from .tensor import Tensor


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: dict, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, applied in place.

    ``state`` holds ``t`` plus first/second moment arrays per name; it is
    initialised lazily with zeros.  Names missing from ``grads`` are skipped.
    """
    t = state.get("t", 0) + 1
    state["t"] = t
    m, v = state.setdefault("m", {}), state.setdefault("v", {})
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape "
                             f"{p.shape} for {name!r}")
        if name not in m:
            m[name] = np.zeros_like(p)
            v[name] = np.zeros_like(p)
        m[name] = beta1 * m[name] + (1 - beta1) * g
        v[name] = beta2 * v[name] + (1 - beta2) * g * g
        step = lr * (m[name] / c1) / (np.sqrt(v[name] / c2) + eps)
        p -= step.astype(p.dtype, copy=False)


class Adam:
    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state: dict = {}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        arrays = {k: p.data for k, p in self.params.items()}
        adam_step(arrays, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)
