import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmpt.crystal import Crystal, parse_crystal
from mmpt.graph import (
    brute_force_neighbors,
    build_graph,
    canonical_order,
    edge_distance,
    edges_from_json,
)
from mmpt.lattice import EuclideanTransform, apply_euclidean, make_supercell, wrap_to_cell
from mmpt.synthetic import random_crystal

seeds = st.integers(0, 2**32 - 1)
AXES = {(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)}


def cubic_atom(a=2.0):
    return Crystal(np.array([11]), np.zeros((1, 3)), a * np.eye(3))


def test_single_atom_cube_six_edges():
    g = build_graph(cubic_atom(), r_cut=2.5, max_neighbors=12)
    assert g.num_edges == 6
    np.testing.assert_allclose(g.distance, 2.0)
    assert {tuple(k) for k in g.offsets} == AXES
    assert g.edge_tuples() == [tuple(e[:5]) + (pytest.approx(e[5]),) for e in
                               brute_force_neighbors(cubic_atom(), 2.5, 3)]


def test_single_atom_ties_in_canonical_order():
    g = build_graph(cubic_atom(), r_cut=2.5)
    assert [tuple(k) for k in g.offsets] == sorted(AXES)


def test_neighbor_cap_and_sorting():
    c = random_crystal(np.random.default_rng(5), max_atoms=10)
    g = build_graph(c, r_cut=8.0, max_neighbors=12)
    for i in range(c.num_atoms):
        d = g.distance[g.src == i]
        assert len(d) <= 12
        assert np.all(np.diff(d) >= 0)
    assert np.all(g.distance > 1e-6) and np.all(g.distance <= 8.0 + 1e-9)
    internal_self = (g.src == g.dst) & np.all(g.offsets == 0, axis=1)
    assert not internal_self.any()


def test_isolated_atom_has_no_edges():
    g = build_graph(cubic_atom(20.0), r_cut=8.0)
    assert g.num_edges == 0


def test_cutoff_filter_then_cap():
    # a=2, r_cut 2.5: only the 6 face neighbours qualify although the cap allows 12
    assert build_graph(cubic_atom(), r_cut=2.5, max_neighbors=12).num_edges == 6
    # the cap cuts the 18 neighbours within 2*sqrt(2) down to 10
    g = build_graph(cubic_atom(), r_cut=2.9, max_neighbors=10)
    assert g.num_edges == 10
    assert np.sum(np.isclose(g.distance, 2.0)) == 6


def test_rock_salt_motif_matches_oracle():
    c = parse_crystal('{"atoms":[11,17],"frac_coords":[[0,0,0],[0.5,0.5,0.5]],'
                      '"lattice":[[5.64,0,0],[0,5.64,0],[0,0,5.64]]}')
    got = build_graph(c).edge_tuples()
    ref = brute_force_neighbors(c, 8.0, 3)
    assert [e[:5] for e in got] == [e[:5] for e in ref]
    np.testing.assert_allclose([e[5] for e in got], [e[5] for e in ref], atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_matches_brute_force(seed):
    c = random_crystal(np.random.default_rng(seed), max_atoms=8)
    got = build_graph(c).edge_tuples()
    ref = brute_force_neighbors(c, 8.0, 3)
    assert [e[:5] for e in got] == [e[:5] for e in ref]
    assert max((abs(a[5] - b[5]) for a, b in zip(got, ref)), default=0.0) < 1e-9


def test_brute_force_image_range_zero_single_atom():
    assert brute_force_neighbors(cubic_atom(), 8.0, 0) == []


def test_brute_force_saturates():
    c = random_crystal(np.random.default_rng(9), max_atoms=4)
    a = brute_force_neighbors(c, 6.0, 4)
    b = brute_force_neighbors(c, 6.0, 6)
    assert a == b


def test_edge_distance_examples():
    c = Crystal(np.array([1, 1]), np.array([[0, 0, 0], [0.5, 0, 0]]), 2.0 * np.eye(3))
    assert edge_distance(c, 0, 1, (0, 0, 0)) == pytest.approx(1.0)
    assert edge_distance(c, 0, 1, (1, 0, 0)) == pytest.approx(3.0)


def test_stored_distances_recompute():
    c = random_crystal(np.random.default_rng(2))
    g = build_graph(c)
    for s, d, k1, k2, k3, r in g.edge_tuples():
        assert abs(edge_distance(c, s, d, (k1, k2, k3)) - r) < 1e-12


def test_canonical_order_groups_ties():
    dist = np.array([1.0, 1.0 + 1e-12, 0.5, 1.0 - 1e-12])
    keys = np.array([[3, 0, 0, 0], [1, 0, 0, 1], [2, 0, 0, 0], [1, 0, 0, 0]])
    assert canonical_order(dist, keys).tolist() == [2, 3, 1, 0]


def test_json_dump_format():
    g = build_graph(cubic_atom(), r_cut=2.5)
    text = g.to_json()
    n, edges = edges_from_json(text)
    assert n == 1 and len(edges) == 6
    assert '2.000000000]' in text
    assert json.loads(text)["edges"][0][:5] == list(g.edge_tuples()[0][:5])


def _sorted_lists(c):
    g = build_graph(c)
    return [np.sort(g.distance[g.src == i]) for i in range(c.num_atoms)]


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_periodic_shift_invariance(seed):
    rng = np.random.default_rng(seed)
    c = random_crystal(rng)
    shifted = wrap_to_cell(c, rng.uniform(-1, 1, size=3))
    for a, b in zip(_sorted_lists(c), _sorted_lists(shifted)):
        np.testing.assert_allclose(a, b, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_euclidean_invariance(seed):
    rng = np.random.default_rng(seed)
    c = random_crystal(rng)
    moved = apply_euclidean(c, EuclideanTransform.random(rng))
    for a, b in zip(_sorted_lists(c), _sorted_lists(moved)):
        np.testing.assert_allclose(a, b, atol=1e-9)


@pytest.mark.parametrize("alpha", [(2, 1, 1), (1, 2, 2)])
def test_supercell_consistency(alpha):
    c = random_crystal(np.random.default_rng(13), max_atoms=4)
    s = make_supercell(c, alpha)
    base, big = _sorted_lists(c), _sorted_lists(s)
    for m in range(s.num_atoms):
        np.testing.assert_allclose(big[m], base[m % c.num_atoms], atol=1e-9)
