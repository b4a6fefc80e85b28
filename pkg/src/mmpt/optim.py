"""Adam with bias correction; optional decoupled weight decay (AdamW)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mmpt.tensor import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, Tensor],
    state: AdamState,
    lr: float | dict[str, float],
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    decoupled: bool = False,
) -> None:
    """Update ``params`` in place from their ``.grad``.

    ``lr`` may map parameter names to per-parameter rates.  With
    ``decoupled=True`` weight decay is applied AdamW-style (``p -= lr*wd*p``),
    otherwise it is added to the gradient.
    """
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name in sorted(params):
        p = params[name]
        rate = lr[name] if isinstance(lr, dict) else lr
        g = p.grad
        if weight_decay and not decoupled:
            g = g + weight_decay * p.data
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        if weight_decay and decoupled:
            p.data = p.data - rate * weight_decay * p.data
        p.data = p.data - rate * (m / c1) / (np.sqrt(v / c2) + eps)
