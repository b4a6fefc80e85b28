"""Pre-training objectives.

View convention: the "M view" is decoded from h_S with rows M masked and is
penalized on M; the "M-bar view" likewise on M-bar.  Passing ``None`` for the
second view gives the single-mask form (the first term alone, no 1/2).
Per-view averages over an empty index set count as 0.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from mmpt import tensor as T
from mmpt.elements import NUM_CLASSES
from mmpt.tensor import Tensor

ATOM_WEIGHT = 5.0
BT_WEIGHT = 0.5
DEFAULT_LAMBDA = 5e-3


@dataclass
class LossReport:
    l_A: float = 0.0
    l_X: float = 0.0
    l_L: float = 0.0
    l_BT: float = 0.0
    l_Die: float = 0.0
    l_Unit: float = 0.0
    l_Dis: float = 0.0
    total: float = 0.0

    COLUMNS = ("l_A", "l_X", "l_L", "l_BT", "l_Die", "l_Unit", "l_Dis", "total")

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """Per-row CE of integer class targets, shape (R,)."""
    target = np.asarray(target, dtype=np.int64)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(target)), target] = 1.0
    return -T.sum_(T.log_softmax(logits, axis=1) * onehot, axis=1)


def _masked_mean(values: Tensor, rows: np.ndarray) -> Tensor:
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        return T.Tensor(0.0)
    return T.mean(T.gather_rows(values, rows))


def _two_view(term, first, second) -> Tensor:
    if second is None:
        return term(*first)
    return 0.5 * (term(*first) + term(*second))


def loss_atom(logits: Tensor, logits_bar: Tensor | None, atoms: np.ndarray,
              m_rows: np.ndarray, m_bar_rows: np.ndarray | None) -> Tensor:
    if logits.shape[1] != NUM_CLASSES:
        raise ValueError(f"atom logits need {NUM_CLASSES} classes")
    term = lambda lg, rows: _masked_mean(cross_entropy(lg, atoms), rows)
    return _two_view(term, (logits, m_rows), None if logits_bar is None else (logits_bar, m_bar_rows))


def loss_coord(pred: Tensor, pred_bar: Tensor | None, target: np.ndarray,
               m_rows: np.ndarray, m_bar_rows: np.ndarray | None) -> Tensor:
    """Absolute error between predicted and true atom-to-centroid distances."""
    term = lambda p, rows: _masked_mean(T.abs_(p - target), rows)
    return _two_view(term, (pred, m_rows), None if pred_bar is None else (pred_bar, m_bar_rows))


def loss_lattice(p_l: Tensor, truth: np.ndarray) -> Tensor:
    """Squared error over the six Niggli parameters, normalized by 6 x batch."""
    truth = np.atleast_2d(truth)
    return T.sum_(T.square(p_l - truth)) * (1.0 / (6 * truth.shape[0]))


def cross_correlation(p: Tensor, p_bar: Tensor, centered: bool = False) -> Tensor:
    """C_ij = sum_b p_bi pbar_bj / (||p_:i|| ||pbar_:j||); samples are rows."""
    if centered:
        p = p - T.mean(p, axis=0, keepdims=True)
        p_bar = p_bar - T.mean(p_bar, axis=0, keepdims=True)
    if np.any(np.all(p.data == 0, axis=0)) or np.any(np.all(p_bar.data == 0, axis=0)):
        raise ValueError("degenerate embedding dimension")
    num = T.matmul(T.transpose(p), p_bar)
    n1 = T.l2_norm(p, axis=0, keepdims=True)        # 1 x D
    n2 = T.l2_norm(p_bar, axis=0, keepdims=True)
    return num / T.matmul(T.transpose(n1), n2)


def loss_barlow(p: Tensor, p_bar: Tensor, lam: float = DEFAULT_LAMBDA, centered: bool = False) -> Tensor:
    c = cross_correlation(p, p_bar, centered)
    eye = np.eye(c.shape[0])
    on = T.sum_(T.square(1.0 - c) * eye)
    off = T.sum_(T.square(c) * (1.0 - eye))
    return on + lam * off


def loss_direction(logits: Tensor, logits_bar: Tensor | None, labels: np.ndarray) -> Tensor:
    term = lambda lg: T.mean(cross_entropy(lg, labels))
    return _two_view(term, (logits,), None if logits_bar is None else (logits_bar,))


def loss_unitcell(logits: Tensor, logits_bar: Tensor | None, labels: np.ndarray) -> Tensor:
    term = lambda lg: T.mean(cross_entropy(lg, labels))
    return _two_view(term, (logits,), None if logits_bar is None else (logits_bar,))


def loss_distance(pred: Tensor, pred_bar: Tensor | None, labels: np.ndarray) -> Tensor:
    term = lambda p: T.mean(T.abs_(p - labels))
    return _two_view(term, (pred,), None if pred_bar is None else (pred_bar,))


def total_loss(components: dict[str, Tensor | float], alpha1: float = ATOM_WEIGHT,
               bt_weight: float = BT_WEIGHT) -> Tensor | float:
    """alpha1*L_A + L_X + L_L + bt_weight*L_BT + L_Die + L_Unit + L_Dis."""
    weights = {"l_A": alpha1, "l_X": 1.0, "l_L": 1.0, "l_BT": bt_weight,
               "l_Die": 1.0, "l_Unit": 1.0, "l_Dis": 1.0}
    total = 0.0
    for name, w in weights.items():
        value = components.get(name, 0.0)
        total = total + w * value
    return total
