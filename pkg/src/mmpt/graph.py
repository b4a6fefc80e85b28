"""Periodic multi-graph construction.

Each atom ``i`` gets directed edges to its ``max_neighbors`` nearest periodic
images ``j + (k1, k2, k3)`` within ``r_cut``.  Edges are filtered by cutoff
first, then capped.  Neighbor order is ascending distance; distances within
``TIE_TOL`` of each other count as tied and are ordered by (dst, k1, k2, k3),
which keeps truncation stable under sub-ulp noise from coordinate shifts.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from mmpt.crystal import Crystal
from mmpt.lattice import perpendicular_widths

DEFAULT_CUTOFF = 8.0
DEFAULT_MAX_NEIGHBORS = 12
TIE_TOL = 1e-8
CUTOFF_TOL = 1e-9
MIN_EDGE = 1e-6


@dataclass(frozen=True, eq=False)
class MultiGraph:
    num_nodes: int
    src: np.ndarray       # (E,) int
    dst: np.ndarray       # (E,) int
    offsets: np.ndarray   # (E, 3) int
    distance: np.ndarray  # (E,) float, Angstrom
    r_cut: float
    max_neighbors: int

    @property
    def num_edges(self) -> int:
        return len(self.src)

    def edge_tuples(self) -> list[tuple]:
        return [
            (int(s), int(d), *map(int, k), float(r))
            for s, d, k, r in zip(self.src, self.dst, self.offsets, self.distance)
        ]

    def neighbor_distances(self) -> list[np.ndarray]:
        """Per-atom distance lists (ascending)."""
        return [self.distance[self.src == i] for i in range(self.num_nodes)]

    def to_json(self) -> str:
        rows = ",".join("[{},{},{},{},{},{:.9f}]".format(*e) for e in self.edge_tuples())
        return f'{{"num_nodes":{self.num_nodes},"edges":[{rows}]}}'


def edges_from_json(text: str) -> tuple[int, list[list]]:
    obj = json.loads(text)
    return obj["num_nodes"], obj["edges"]


def canonical_order(dist: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """Permutation sorting edges by distance, ties (within TIE_TOL) by ``keys`` columns."""
    if len(dist) == 0:
        return np.zeros(0, dtype=np.int64)
    first = np.argsort(dist, kind="stable")
    gaps = np.diff(dist[first]) > TIE_TOL
    cluster = np.empty(len(dist), dtype=np.int64)
    cluster[first] = np.concatenate([[0], np.cumsum(gaps)])
    cols = [keys[:, c] for c in range(keys.shape[1] - 1, -1, -1)]
    return np.lexsort(cols + [cluster])


def _image_range(lattice: np.ndarray, r_cut: float) -> np.ndarray:
    widths = perpendicular_widths(lattice)
    return np.array([math.ceil(r_cut / w) + 1 for w in widths], dtype=np.int64)


def build_graph(
    crystal: Crystal,
    r_cut: float = DEFAULT_CUTOFF,
    max_neighbors: int = DEFAULT_MAX_NEIGHBORS,
) -> MultiGraph:
    if r_cut <= 0:
        raise ValueError("r_cut must be positive")
    if max_neighbors < 1:
        raise ValueError("max_neighbors must be >= 1")
    lattice = crystal.lattice
    cart = crystal.cart_coords
    n_atoms = crystal.num_atoms
    K = _image_range(lattice, r_cut)
    axes = [np.arange(-k, k + 1) for k in K]
    offsets = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    shifts = offsets @ lattice
    zero = int(np.flatnonzero(np.all(offsets == 0, axis=1))[0])

    src_all, dst_all, off_all, dist_all = [], [], [], []
    for i in range(n_atoms):
        # (N, M, 3): x_j + k.L - x_i
        disp = cart[None, :, :] + shifts[:, None, :] - cart[i]
        dist = np.linalg.norm(disp, axis=-1).T  # (N, M)
        ok = (dist <= r_cut + CUTOFF_TOL) & (dist > MIN_EDGE)
        ok[i, zero] = False
        j_idx, m_idx = np.nonzero(ok)
        d = dist[j_idx, m_idx]
        keys = np.column_stack([j_idx, offsets[m_idx]])
        order = canonical_order(d, keys)[:max_neighbors]
        src_all.append(np.full(len(order), i, dtype=np.int64))
        dst_all.append(j_idx[order])
        off_all.append(offsets[m_idx[order]])
        dist_all.append(d[order])
    return MultiGraph(
        num_nodes=n_atoms,
        src=np.concatenate(src_all),
        dst=np.concatenate(dst_all).astype(np.int64),
        offsets=np.concatenate(off_all).astype(np.int64).reshape(-1, 3),
        distance=np.concatenate(dist_all),
        r_cut=float(r_cut),
        max_neighbors=int(max_neighbors),
    )


def brute_force_neighbors(
    crystal: Crystal,
    r_cut: float,
    image_range: int,
    max_neighbors: int = DEFAULT_MAX_NEIGHBORS,
) -> list[tuple]:
    """Reference neighbor list: every (j, k) with |k_m| <= image_range, one pair at a time.

    Returns tuples ``(src, dst, k1, k2, k3, distance)``.
    """
    l1, l2, l3 = crystal.lattice.tolist()
    cart = crystal.cart_coords.tolist()
    rng = range(-image_range, image_range + 1)
    images = list(itertools.product(rng, rng, rng))
    edges = []
    for i in range(crystal.num_atoms):
        found = []
        for j in range(crystal.num_atoms):
            for k in images:
                if i == j and k == (0, 0, 0):
                    continue
                d = math.sqrt(sum(
                    (cart[i][c] - (cart[j][c] + k[0] * l1[c] + k[1] * l2[c] + k[2] * l3[c])) ** 2
                    for c in range(3)
                ))
                if MIN_EDGE < d <= r_cut + CUTOFF_TOL:
                    found.append((d, j, k))
        found.sort(key=lambda t: t[0])
        # group near-equal distances, then order each group by (dst, offset)
        groups, last = [], None
        for item in found:
            if last is None or item[0] - last > TIE_TOL:
                groups.append([])
            groups[-1].append(item)
            last = item[0]
        ordered = [it for g in groups for it in sorted(g, key=lambda t: (t[1], t[2]))]
        for d, j, k in ordered[:max_neighbors]:
            edges.append((i, j, *k, d))
    return edges


def edge_distance(crystal: Crystal, src: int, dst: int, offset) -> float:
    lattice = crystal.lattice
    cart = crystal.cart_coords
    k = np.asarray(offset, dtype=np.float64)
    return float(np.linalg.norm(cart[src] - (cart[dst] + k @ lattice)))
