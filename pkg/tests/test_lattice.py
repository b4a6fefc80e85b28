import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmpt.crystal import Crystal
from mmpt.errors import DegenerateCellError
from mmpt.lattice import (
    EuclideanTransform,
    NiggliDivergenceError,
    apply_euclidean,
    cart_to_frac,
    exhaustive_min_basis,
    frac_to_cart,
    make_supercell,
    niggli_reduce,
    random_rotation,
    random_unimodular,
    six_params,
    volume,
    wrap_to_cell,
)
from mmpt.synthetic import lattice_from_parameters, random_crystal

HALF_PI = math.pi / 2
CUBIC2 = 2.0 * np.eye(3)


def cubic_atom(a=2.0):
    return Crystal(np.array([11]), np.zeros((1, 3)), a * np.eye(3))


lattices = st.builds(
    lambda seed: random_crystal(np.random.default_rng(seed), max_atoms=1).lattice,
    st.integers(0, 2**32 - 1),
)


def test_frac_to_cart_examples():
    np.testing.assert_allclose(frac_to_cart([0.5, 0.5, 0.5], CUBIC2), [1, 1, 1])
    np.testing.assert_allclose(frac_to_cart([0, 0, 0], CUBIC2), [0, 0, 0])
    lat = np.array([[1, 1, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    np.testing.assert_allclose(frac_to_cart([1, 0, 0], lat), [1, 1, 0])


def test_cart_to_frac_examples():
    np.testing.assert_allclose(cart_to_frac([1, 1, 1], CUBIC2), [0.5, 0.5, 0.5])
    np.testing.assert_allclose(cart_to_frac([0, 0, 0], CUBIC2), [0, 0, 0])


def test_cart_to_frac_rejects_singular_lattice():
    with pytest.raises(DegenerateCellError, match="degenerate cell"):
        cart_to_frac([1, 0, 0], np.array([[1, 0, 0], [2, 0, 0], [0, 0, 1.0]]))


@settings(max_examples=50, deadline=None)
@given(lattices, st.lists(st.floats(-20, 20), min_size=3, max_size=3))
def test_frac_cart_round_trip(lattice, x):
    back = frac_to_cart(cart_to_frac(x, lattice), lattice)
    np.testing.assert_allclose(back, x, atol=1e-10)


def test_six_params_examples():
    p = six_params(np.eye(3))
    np.testing.assert_allclose(p.as_array(), [1, 1, 1, HALF_PI, HALF_PI, HALF_PI])
    p = six_params(np.diag([2.0, 3.0, 4.0]))
    np.testing.assert_allclose(p.as_array(), [2, 3, 4, HALF_PI, HALF_PI, HALF_PI])


def test_six_params_angle_convention():
    # alpha between l2 and l3, beta between l1 and l3, gamma between l1 and l2
    lat = lattice_from_parameters(3.0, 4.0, 5.0, 1.2, 1.4, 1.7)
    np.testing.assert_allclose(six_params(lat).as_array(), [3, 4, 5, 1.2, 1.4, 1.7], atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(lattices, st.integers(0, 2**32 - 1))
def test_six_params_rotation_invariant(lattice, seed):
    R = random_rotation(np.random.default_rng(seed))
    np.testing.assert_allclose(six_params(lattice @ R.T).as_array(), six_params(lattice).as_array(), atol=1e-9)


def test_niggli_cubic_unchanged():
    red, p = niggli_reduce(CUBIC2)
    np.testing.assert_allclose(np.abs(red), CUBIC2)
    np.testing.assert_allclose(p.as_array(), [2, 2, 2, HALF_PI, HALF_PI, HALF_PI])


def test_niggli_sheared_case_matches_exhaustive_oracle():
    lat = np.array([[1, 0, 0], [1, 1, 0], [0, 0, 1]], dtype=float)
    _, p = niggli_reduce(lat)
    oracle = exhaustive_min_basis(lat)
    # frozen: the lattice is the simple cubic Z^3
    np.testing.assert_allclose(oracle.as_array(), [1, 1, 1, HALF_PI, HALF_PI, HALF_PI], atol=1e-12)
    np.testing.assert_allclose(p.as_array(), oracle.as_array(), atol=1e-8)


@pytest.mark.parametrize("seed", range(20))
def test_niggli_matches_exhaustive_oracle_on_random_cells(seed):
    rng = np.random.default_rng(seed)
    lat = random_crystal(rng, max_atoms=1).lattice
    _, p = niggli_reduce(random_unimodular(rng, bound=1) @ lat)
    oracle = exhaustive_min_basis(lat)
    np.testing.assert_allclose(p.lengths(), oracle.lengths(), atol=1e-6)


@settings(max_examples=60, deadline=None)
@given(lattices, st.integers(0, 2**32 - 1))
def test_niggli_unimodular_invariance(lattice, seed):
    U = random_unimodular(np.random.default_rng(seed), bound=3)
    _, p = niggli_reduce(lattice)
    _, q = niggli_reduce(U @ lattice)
    np.testing.assert_allclose(q.as_array(), p.as_array(), atol=1e-6)


@settings(max_examples=60, deadline=None)
@given(lattices)
def test_niggli_properties(lattice):
    red, p = niggli_reduce(lattice)
    # same translation group: the basis change is integer with det +-1
    T = red @ np.linalg.inv(lattice)
    np.testing.assert_allclose(T, np.rint(T), atol=1e-8)
    assert abs(round(np.linalg.det(np.rint(T)))) == 1
    assert p.a <= p.b + 1e-8 and p.b <= p.c + 1e-8
    cos = np.cos([p.alpha, p.beta, p.gamma])
    assert np.all(cos > -1e-9) or np.all(cos < 1e-9)
    _, again = niggli_reduce(red)
    np.testing.assert_allclose(again.as_array(), p.as_array(), atol=1e-8)
    assert abs(volume(red)) == pytest.approx(abs(volume(lattice)), rel=1e-9)


def test_niggli_divergence_error_type():
    assert issubclass(NiggliDivergenceError, RuntimeError)


def test_random_unimodular_is_unimodular():
    rng = np.random.default_rng(3)
    for _ in range(50):
        U = random_unimodular(rng)
        assert np.all(np.abs(U) <= 3)
        assert abs(round(np.linalg.det(U))) == 1


def test_euclidean_transform_validates_rotation():
    with pytest.raises(ValueError):
        EuclideanTransform(np.diag([1.0, 2.0, 1.0]), np.zeros(3))


def test_apply_euclidean_identity_and_reflection():
    c = random_crystal(np.random.default_rng(0))
    same = apply_euclidean(c, EuclideanTransform.identity())
    np.testing.assert_allclose(same.cart_coords, c.cart_coords, atol=1e-12)
    cube = Crystal(np.array([11, 17]), np.array([[0.1, 0.2, 0.3], [0.5, 0.5, 0.5]]), CUBIC2)
    refl = apply_euclidean(cube, EuclideanTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3)))
    np.testing.assert_allclose(refl.cart_coords[:, 2], -cube.cart_coords[:, 2], atol=1e-12)
    np.testing.assert_allclose(six_params(refl.lattice).as_array(), six_params(cube.lattice).as_array())


def test_supercell_identity():
    c = random_crystal(np.random.default_rng(1))
    s = make_supercell(c, (1, 1, 1))
    np.testing.assert_array_equal(s.frac_coords, c.frac_coords)
    np.testing.assert_array_equal(s.lattice, c.lattice)


def test_supercell_hand_example():
    s = make_supercell(cubic_atom(), (2, 1, 1))
    np.testing.assert_allclose(s.cart_coords, [[0, 0, 0], [2, 0, 0]])
    np.testing.assert_allclose(s.lattice, np.diag([4.0, 2.0, 2.0]))


@pytest.mark.parametrize("alpha", [(1, 2, 3), (2, 2, 1), (3, 1, 1)])
def test_supercell_volume_scales(alpha):
    c = random_crystal(np.random.default_rng(2))
    s = make_supercell(c, alpha)
    assert s.volume == pytest.approx(c.volume * np.prod(alpha), rel=1e-12)
    assert s.num_atoms == c.num_atoms * np.prod(alpha)


def test_supercell_rejects_zero():
    with pytest.raises(ValueError):
        make_supercell(cubic_atom(), (0, 1, 1))


def test_wrap_examples():
    c = Crystal(np.array([11]), np.array([[0.9, 0.0, 0.0]]), CUBIC2)
    np.testing.assert_allclose(wrap_to_cell(c, (0.2, 0, 0)).frac_coords, [[0.1, 0, 0]], atol=1e-12)
    d = random_crystal(np.random.default_rng(4))
    np.testing.assert_array_equal(wrap_to_cell(d, (0, 0, 0)).frac_coords, d.frac_coords)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_wrap_stays_in_unit_cube(seed, beta):
    c = random_crystal(np.random.default_rng(seed))
    w = wrap_to_cell(c, beta)
    assert np.all(w.frac_coords >= 0) and np.all(w.frac_coords < 1)
