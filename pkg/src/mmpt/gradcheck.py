"""Central finite-difference checks of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from mmpt import tensor as T
from mmpt.tensor import Tensor

DEFAULT_STEP = 1e-5
# entries whose gradient magnitude is below this are judged on absolute error
REL_FLOOR = 1e-4


@dataclass
class GradCheckResult:
    max_rel_err: float
    checked: int
    worst: tuple | None  # (param name, flat index, analytic, numeric)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err < tol


def rel_err(analytic: float, numeric: float, floor: float = REL_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(
    fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    rng: np.random.Generator,
    per_param: int = 3,
    h: float = DEFAULT_STEP,
) -> GradCheckResult:
    """Compare ``backward(fn())`` against central differences.

    For each parameter the entry with the largest analytic gradient plus
    ``per_param`` random entries are perturbed.
    """
    for p in params.values():
        p.zero_grad()
    T.backward(fn())
    analytic = {k: p.grad.copy() for k, p in params.items()}
    worst, max_err, checked = None, 0.0, 0
    with T.no_grad():
        for name in sorted(params):
            p = params[name]
            flat = p.data.reshape(-1)
            g = analytic[name].reshape(-1)
            picks = {int(np.argmax(np.abs(g)))}
            picks.update(int(i) for i in rng.choice(flat.size, size=min(per_param, flat.size), replace=False))
            for i in sorted(picks):
                orig = flat[i]
                flat[i] = orig + h
                f_plus = fn().item()
                flat[i] = orig - h
                f_minus = fn().item()
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2 * h)
                err = rel_err(g[i], numeric)
                checked += 1
                if worst is None or err > max_err:
                    max_err = err
                    worst = (name, i, float(g[i]), float(numeric))
    return GradCheckResult(max_err, checked, worst)


def check_op(
    op: Callable[..., Tensor],
    inputs: list[np.ndarray],
    rng: np.random.Generator,
    h: float = DEFAULT_STEP,
) -> GradCheckResult:
    """Check every input entry of ``sum(op(*inputs) * w)`` for a random weight ``w``."""
    tensors = {f"x{i}": Tensor(np.array(x, dtype=np.float64), requires_grad=True) for i, x in enumerate(inputs)}
    names = [f"x{i}" for i in range(len(inputs))]
    with T.no_grad():
        out_shape = np.shape(op(*[tensors[n] for n in names]).data)
    weight = rng.normal(size=out_shape)

    def fn():
        return T.sum_(op(*[tensors[n] for n in names]) * weight)

    total = max(t.data.size for t in tensors.values())
    return check_gradients(fn, tensors, rng, per_param=total, h=h)
