"""Lattice algebra.

Lattices are 3x3 float arrays whose *rows* are the basis vectors l1, l2, l3
(Cartesian, Angstrom).  Coordinates are row vectors, so ``cart = frac @ L``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from mmpt.errors import DegenerateCellError

if TYPE_CHECKING:
    from mmpt.crystal import Crystal

MIN_ABS_DET = 1e-10
NIGGLI_MAX_ITER = 10_000


class NiggliDivergenceError(RuntimeError):
    pass


def as_lattice(matrix) -> np.ndarray:
    """Validate and return a float64 3x3 lattice matrix."""
    lat = np.array(matrix, dtype=np.float64)
    if lat.shape != (3, 3):
        raise DegenerateCellError(f"lattice must be 3x3, got shape {lat.shape}")
    if not np.all(np.isfinite(lat)):
        raise DegenerateCellError("degenerate cell: non-finite lattice entries")
    if abs(np.linalg.det(lat)) <= MIN_ABS_DET:
        raise DegenerateCellError("degenerate cell")
    return lat


def volume(lattice: np.ndarray) -> float:
    return float(abs(np.linalg.det(lattice)))


def frac_to_cart(frac, lattice: np.ndarray) -> np.ndarray:
    return np.asarray(frac, dtype=np.float64) @ lattice


def cart_to_frac(cart, lattice: np.ndarray) -> np.ndarray:
    if abs(np.linalg.det(lattice)) <= MIN_ABS_DET:
        raise DegenerateCellError("degenerate cell")
    cart = np.asarray(cart, dtype=np.float64)
    # frac @ L = cart  <=>  L^T frac^T = cart^T
    return np.linalg.solve(lattice.T, cart.T).T


def perpendicular_widths(lattice: np.ndarray) -> np.ndarray:
    """Distance between opposite faces of the cell along each basis direction."""
    recip = np.linalg.inv(lattice)  # columns are reciprocal vectors
    return 1.0 / np.linalg.norm(recip, axis=0)


@dataclass(frozen=True)
class SixParams:
    """Cell lengths (Angstrom) and inter-vector angles (radians)."""

    a: float
    b: float
    c: float
    alpha: float
    beta: float
    gamma: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.alpha, self.beta, self.gamma])

    def lengths(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])


def _angle(u: np.ndarray, v: np.ndarray) -> float:
    cos = float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))
    return math.acos(min(1.0, max(-1.0, cos)))


def six_params(lattice: np.ndarray) -> SixParams:
    l1, l2, l3 = np.asarray(lattice, dtype=np.float64)
    return SixParams(
        float(np.linalg.norm(l1)),
        float(np.linalg.norm(l2)),
        float(np.linalg.norm(l3)),
        _angle(l2, l3),
        _angle(l1, l3),
        _angle(l1, l2),
    )


def niggli_reduce(lattice, tol: float = 1e-5) -> tuple[np.ndarray, SixParams]:
    """Reduce ``lattice`` to its Niggli cell.

    Iterative Krivy-Gruber reduction in the numerically stable form of
    Grosse-Kunstleve, Sauter & Adams (2004), with tolerance
    ``tol * volume**(1/3)``.  The integer basis change is tracked, so the
    returned lattice is ``T @ lattice`` for a unimodular integer ``T``.
    """
    lat = as_lattice(lattice)
    eps = tol * volume(lat) ** (1.0 / 3.0)
    T = np.eye(3, dtype=np.int64)
    G = lat @ lat.T

    def apply(M):
        nonlocal G, T
        M = np.asarray(M, dtype=np.int64)
        G = M.T @ G @ M
        T = M.T @ T

    def params():
        return G[0, 0], G[1, 1], G[2, 2], 2 * G[1, 2], 2 * G[0, 2], 2 * G[0, 1]

    def sgn(x):
        return 0 if abs(x) < eps else (1 if x > 0 else -1)

    for _ in range(NIGGLI_MAX_ITER):
        A, B, C, xi, eta, zeta = params()
        # A1
        if B + eps < A or (abs(A - B) < eps and abs(xi) > abs(eta) + eps):
            apply([[0, -1, 0], [-1, 0, 0], [0, 0, -1]])
            A, B, C, xi, eta, zeta = params()
        # A2
        if C + eps < B or (abs(B - C) < eps and abs(eta) > abs(zeta) + eps):
            apply([[-1, 0, 0], [0, 0, -1], [0, -1, 0]])
            continue
        l, m, n = sgn(xi), sgn(eta), sgn(zeta)
        if l * m * n == 1:
            # A3
            apply(np.diag([-1 if l == -1 else 1, -1 if m == -1 else 1, -1 if n == -1 else 1]))
        else:
            # A4
            i = -1 if l == 1 else 1
            j = -1 if m == 1 else 1
            k = -1 if n == 1 else 1
            if i * j * k == -1:
                if n == 0:
                    k = -1
                elif m == 0:
                    j = -1
                elif l == 0:
                    i = -1
            apply(np.diag([i, j, k]))
        A, B, C, xi, eta, zeta = params()
        # A5
        if (
            abs(xi) > B + eps
            or (abs(xi - B) < eps and 2 * eta < zeta - eps)
            or (abs(xi + B) < eps and zeta < -eps)
        ):
            apply([[1, 0, 0], [0, 1, -int(np.sign(xi))], [0, 0, 1]])
            continue
        # A6
        if (
            abs(eta) > A + eps
            or (abs(eta - A) < eps and 2 * xi < zeta - eps)
            or (abs(eta + A) < eps and zeta < -eps)
        ):
            apply([[1, 0, -int(np.sign(eta))], [0, 1, 0], [0, 0, 1]])
            continue
        # A7
        if (
            abs(zeta) > A + eps
            or (abs(zeta - A) < eps and 2 * xi < eta - eps)
            or (abs(zeta + A) < eps and eta < -eps)
        ):
            apply([[1, -int(np.sign(zeta)), 0], [0, 1, 0], [0, 0, 1]])
            continue
        # A8
        s = xi + eta + zeta + A + B
        if s < -eps or (abs(s) < eps and 2 * (A + eta) + zeta > eps):
            apply([[1, 0, 1], [0, 1, 1], [0, 0, 1]])
            continue
        break
    else:
        raise NiggliDivergenceError("niggli divergence")

    reduced = T.astype(np.float64) @ lat
    return reduced, six_params(reduced)


def exhaustive_min_basis(lattice, coeff_range: int = 2) -> SixParams:
    """Brute-force reference for cell reduction.

    Enumerates lattice vectors with integer coefficients in
    ``[-coeff_range, coeff_range]``, returns the unimodular basis with
    lexicographically smallest (a, b, c), with signs chosen so all three
    angles are acute or all are non-acute (the Niggli sign convention).
    """
    lat = as_lattice(lattice)
    rng = range(-coeff_range, coeff_range + 1)
    coeffs = np.array([c for c in itertools.product(rng, rng, rng) if any(c)], dtype=np.int64)
    lengths = np.linalg.norm(coeffs @ lat, axis=1)
    order = np.argsort(lengths, kind="stable")
    coeffs, lengths = coeffs[order], lengths[order]

    idx = np.array(list(itertools.combinations(range(len(coeffs)), 3)))
    dets = np.rint(np.linalg.det(coeffs[idx].astype(np.float64))).astype(np.int64)
    idx = idx[np.abs(dets) == 1]
    # lengths quantized so that numerically tied bases compare equal
    q = np.round(lengths[idx] / (1e-9 * lengths[-1])).astype(np.int64)
    best = idx[np.lexsort((q[:, 2], q[:, 1], q[:, 0]))[0]]
    u, v, w = coeffs[best] @ lat
    for s2, s3 in itertools.product((1, -1), repeat=2):
        basis = np.stack([u, s2 * v, s3 * w])
        p = six_params(basis)
        cosines = np.cos([p.alpha, p.beta, p.gamma])
        if np.all(cosines > 1e-12) or np.all(cosines <= 1e-12):
            return p
    raise AssertionError("unreachable: some sign choice is always all-acute or all-obtuse")


def random_rotation(rng: np.random.Generator, reflect: bool | None = None) -> np.ndarray:
    """Haar-random orthogonal matrix; ``reflect`` forces det -1 (True) or +1 (False)."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if reflect is None:
        return q
    if (np.linalg.det(q) < 0) != reflect:
        q[:, 0] = -q[:, 0]
    return q


def random_unimodular(rng: np.random.Generator, bound: int = 3) -> np.ndarray:
    """Random integer matrix with entries in [-bound, bound] and det +-1."""
    while True:
        U = rng.integers(-bound, bound + 1, size=(3, 3))
        if abs(round(np.linalg.det(U))) == 1:
            return U


@dataclass(frozen=True)
class EuclideanTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        b = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3) or np.max(np.abs(R.T @ R - np.eye(3))) > 1e-10:
            raise ValueError("rotation must be orthogonal (R^T R = I)")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", b)

    @classmethod
    def identity(cls) -> EuclideanTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def random(cls, rng: np.random.Generator, scale: float = 5.0) -> EuclideanTransform:
        return cls(random_rotation(rng), rng.uniform(-scale, scale, size=3))


def apply_euclidean(crystal: Crystal, t: EuclideanTransform) -> Crystal:
    """Map x -> R x + b on atoms and l -> R l on lattice rows."""
    from mmpt.crystal import Crystal

    R, b = t.rotation, t.translation
    cart = crystal.cart_coords @ R.T + b
    lattice = crystal.lattice @ R.T
    return Crystal(crystal.atoms, cart_to_frac(cart, lattice), lattice)


def make_supercell(crystal: Crystal, alpha) -> Crystal:
    """Replicate the cell ``alpha[i]`` times along each lattice vector.

    Atom order is image-major: copies for image (k1, k2, k3) are contiguous,
    so atom ``m`` of the supercell descends from atom ``m % N``.
    """
    from mmpt.crystal import Crystal

    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != 3 or any(a < 1 for a in alpha):
        raise ValueError(f"supercell factors must be positive integers, got {alpha}")
    images = np.array(list(itertools.product(*(range(a) for a in alpha))), dtype=np.float64)
    scale = np.array(alpha, dtype=np.float64)
    frac = (crystal.frac_coords[None, :, :] + images[:, None, :]) / scale
    atoms = np.tile(crystal.atoms, len(images))
    lattice = crystal.lattice * scale[:, None]
    return Crystal(atoms, frac.reshape(-1, 3), lattice)


def wrap_to_cell(crystal: Crystal, beta) -> Crystal:
    """Shift fractional coordinates by ``beta`` and reduce them into [0, 1)."""
    from mmpt.crystal import Crystal

    frac = np.mod(crystal.frac_coords + np.asarray(beta, dtype=np.float64), 1.0)
    frac[frac >= 1.0] = 0.0
    return Crystal(crystal.atoms, frac, crystal.lattice)
