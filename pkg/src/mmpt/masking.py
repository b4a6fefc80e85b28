"""Mutex mask sampling and [MASK]-token substitution."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class MutexMasks:
    """Complementary sorted index sets; ``len(m) == n_atoms // 2``."""

    m: np.ndarray
    m_bar: np.ndarray
    n_atoms: int

    def indicator(self) -> np.ndarray:
        """Boolean vector, True on ``m``."""
        out = np.zeros(self.n_atoms, dtype=bool)
        out[self.m] = True
        return out


def sample_mutex_masks(n_atoms: int, rng: np.random.Generator) -> MutexMasks:
    """Uniform floor(N/2)-subset via a partial Fisher-Yates shuffle."""
    if n_atoms < 1:
        raise ValueError("n_atoms must be >= 1")
    size = n_atoms // 2
    idx = np.arange(n_atoms)
    for t in range(size):
        j = int(rng.integers(t, n_atoms))
        idx[t], idx[j] = idx[j], idx[t]
    return MutexMasks(np.sort(idx[:size]), np.sort(idx[size:]), n_atoms)


def apply_mask(h: np.ndarray, index_set, token: np.ndarray) -> np.ndarray:
    """Replace rows of ``h`` listed in ``index_set`` by ``token`` (plain arrays)."""
    index_set = np.asarray(index_set, dtype=np.int64)
    if index_set.size and (index_set.min() < 0 or index_set.max() >= h.shape[0]):
        raise IndexError("mask index out of range")
    out = np.array(h, copy=True)
    out[index_set] = token
    return out
