"""Deterministic synthetic crystals: rock-salt, perovskite and perturbed cubic cells."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from mmpt import elements
from mmpt.crystal import Crystal, Dataset, random_split, toy_property
from mmpt.lattice import perpendicular_widths

FAMILIES = ("rocksalt", "perovskite", "perturbed_cubic")
DEFAULT_POOL = ("Na", "Cl", "Ca", "Ti", "O", "Si")
MIN_DISTANCE = 0.5
MAX_TRIES = 1000

# cell-edge ranges used when no edge is given; every site spacing stays >= 1.5 A
_EDGE_RANGE = {"rocksalt": (4.0, 6.5), "perovskite": (3.5, 4.5), "perturbed_cubic": (3.0, 6.0)}

_ROCKSALT_A = [(0, 0, 0), (0, 0.5, 0.5), (0.5, 0, 0.5), (0.5, 0.5, 0)]
_ROCKSALT_B = [(0.5, 0.5, 0.5), (0.5, 0, 0), (0, 0.5, 0), (0, 0, 0.5)]
_PEROVSKITE = [(0, 0, 0), (0.5, 0.5, 0.5), (0.5, 0.5, 0), (0.5, 0, 0.5), (0, 0.5, 0.5)]
_CUBIC_SITES = list(itertools.product((0.0, 0.5), repeat=3))


@dataclass(frozen=True)
class SyntheticParams:
    edge: float | None = None
    species: tuple[str, ...] | None = None
    perturbation: float = 0.0
    pool: tuple[str, ...] = DEFAULT_POOL

    def validate(self, family: str) -> None:
        if family not in FAMILIES:
            raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
        if self.edge is not None and not 2.0 <= self.edge <= 8.0:
            raise ValueError("cell edge must lie in [2, 8] A")
        if not 0.0 <= self.perturbation <= 0.1:
            raise ValueError("perturbation amplitude must lie in [0, 0.1]")
        need = {"rocksalt": 2, "perovskite": 3, "perturbed_cubic": None}[family]
        if self.species is not None and need is not None and len(self.species) != need:
            raise ValueError(f"{family} needs {need} species, got {len(self.species)}")
        for s in (self.species or ()) + tuple(self.pool):
            elements.atomic_number(s)
        if need is not None and self.species is None and len(set(self.pool)) < need:
            raise ValueError(f"element pool too small for {family}")


def min_periodic_distance(frac: np.ndarray, lattice: np.ndarray) -> float:
    """Smallest distance between distinct atoms or an atom and its own images."""
    diff = frac[:, None, :] - frac[None, :, :]
    diff -= np.round(diff)
    shifts = np.array(list(itertools.product((-1, 0, 1), repeat=3)), dtype=np.float64)
    d = np.linalg.norm((diff[:, :, None, :] + shifts[None, None]) @ lattice, axis=-1)
    n = len(frac)
    d[np.arange(n), np.arange(n), 13] = np.inf  # zero shift, same atom
    return float(d.min())


def generate_synthetic(family: str, params: SyntheticParams, seed: int) -> Crystal:
    params.validate(family)
    rng = np.random.default_rng(seed)
    lo, hi = _EDGE_RANGE[family]
    edge = params.edge if params.edge is not None else float(rng.uniform(lo, hi))
    pool = [elements.atomic_number(s) for s in dict.fromkeys(params.pool)]

    if family == "rocksalt":
        za, zb = _pick_species(params.species, pool, 2, rng)
        base = np.array(_ROCKSALT_A + _ROCKSALT_B)
        atoms = np.array([za] * 4 + [zb] * 4)
    elif family == "perovskite":
        za, zb, zx = _pick_species(params.species, pool, 3, rng)
        base = np.array(_PEROVSKITE)
        atoms = np.array([za, zb, zx, zx, zx])
    else:
        n = int(rng.integers(1, len(_CUBIC_SITES) + 1))
        sites = rng.choice(len(_CUBIC_SITES), size=n, replace=False)
        base = np.array(_CUBIC_SITES)[np.sort(sites)]
        if params.species is not None:
            zs = [elements.atomic_number(s) for s in params.species]
            atoms = np.array([zs[i % len(zs)] for i in range(n)])
        else:
            atoms = rng.choice(pool, size=n)

    amp = params.perturbation
    for _ in range(MAX_TRIES):
        strain = rng.uniform(-amp, amp, size=(3, 3)) if amp > 0 else np.zeros((3, 3))
        lattice = edge * (np.eye(3) + 0.5 * (strain + strain.T))
        frac = base + (rng.uniform(-amp, amp, size=base.shape) if amp > 0 else 0.0)
        frac = np.mod(frac, 1.0)
        frac[frac >= 1.0] = 0.0
        if min_periodic_distance(frac, lattice) > MIN_DISTANCE:
            return Crystal(atoms, frac, lattice)
    raise RuntimeError("could not place atoms with the required separation")


def _pick_species(species, pool, k, rng) -> list[int]:
    if species is not None:
        return [elements.atomic_number(s) for s in species]
    return [int(z) for z in rng.choice(pool, size=k, replace=False)]


def random_crystal(
    rng: np.random.Generator,
    max_atoms: int = 12,
    min_width: float = 2.0,
    length_range: tuple[float, float] = (2.5, 6.0),
    pool: tuple[str, ...] = DEFAULT_POOL,
) -> Crystal:
    """Random triclinic crystal for property checks.

    Lengths uniform in ``length_range``, angles in [70, 110] degrees,
    every perpendicular cell width at least ``min_width`` and atoms at least
    ``MIN_DISTANCE`` apart.
    """
    zs = [elements.atomic_number(s) for s in pool]
    while True:
        a, b, c = rng.uniform(*length_range, size=3)
        al, be, ga = np.radians(rng.uniform(70.0, 110.0, size=3))
        lattice = lattice_from_parameters(a, b, c, al, be, ga)
        if lattice is None or perpendicular_widths(lattice).min() < min_width:
            continue
        n = int(rng.integers(1, max_atoms + 1))
        for _ in range(100):
            frac = rng.uniform(0.0, 1.0, size=(n, 3))
            if n == 1 or min_periodic_distance(frac, lattice) > MIN_DISTANCE:
                return Crystal(rng.choice(zs, size=n), frac, lattice)


def lattice_from_parameters(a, b, c, alpha, beta, gamma) -> np.ndarray | None:
    """Lattice rows from lengths and angles (radians); None if the angles are infeasible."""
    ca, cb, cg = np.cos([alpha, beta, gamma])
    sg = np.sin(gamma)
    cx = cb
    cy = (ca - cb * cg) / sg
    sq = 1.0 - cx * cx - cy * cy
    if sq <= 1e-6:
        return None
    return np.array([
        [a, 0.0, 0.0],
        [b * cg, b * sg, 0.0],
        [c * cx, c * cy, c * np.sqrt(sq)],
    ])


def generate_dataset(
    family: str,
    count: int,
    seed: int,
    params: SyntheticParams = SyntheticParams(),
    prop: str | None = None,
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> Dataset:
    """``count`` crystals; sample ``i`` uses seed ``seed ^ i``.

    ``family="mixed"`` cycles through all families.
    """
    crystals, props = [], []
    for i in range(count):
        fam = FAMILIES[i % len(FAMILIES)] if family == "mixed" else family
        c = generate_synthetic(fam, params, seed ^ i)
        crystals.append(c)
        props.append({"name": prop, "value": toy_property(c, prop)} if prop else None)
    split = random_split(count, np.random.default_rng(seed), split_fractions)
    return Dataset(crystals, props, split)
