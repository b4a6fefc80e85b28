import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmpt import elements
from mmpt.crystal import (
    Crystal,
    Dataset,
    load_dataset,
    one_hot,
    parse_crystal,
    parse_record,
    save_dataset,
    serialize_crystal,
    split_path_for,
    toy_property,
)
from mmpt.errors import AtomicNumberError, DegenerateCellError, DuplicatePositionError, MalformedRecordError
from mmpt.graph import build_graph
from mmpt.lattice import EuclideanTransform, apply_euclidean, make_supercell, wrap_to_cell
from mmpt.synthetic import (
    SyntheticParams,
    generate_dataset,
    generate_synthetic,
    min_periodic_distance,
    random_crystal,
)

NACL = '{"atoms":[11,17],"frac_coords":[[0,0,0],[0.5,0.5,0.5]],"lattice":[[5.64,0,0],[0,5.64,0],[0,0,5.64]]}'
seeds = st.integers(0, 2**32 - 1)


def test_parse_rock_salt_motif():
    c = parse_crystal(NACL)
    assert c.num_atoms == 2
    np.testing.assert_array_equal(c.atoms, [11, 17])
    np.testing.assert_allclose(c.cart_coords[1], [2.82, 2.82, 2.82])


def test_parse_cartesian_record():
    rec = json.loads(NACL)
    rec["cart_coords"] = [[0, 0, 0], [2.82, 2.82, 2.82]]
    del rec["frac_coords"]
    c = parse_crystal(json.dumps(rec))
    np.testing.assert_allclose(c.frac_coords, parse_crystal(NACL).frac_coords, atol=1e-12)


@pytest.mark.parametrize("text,error,match", [
    ('{"atoms":[119],"frac_coords":[[0,0,0]],"lattice":[[1,0,0],[0,1,0],[0,0,1]]}',
     AtomicNumberError, "atomic number out of range"),
    ('{"atoms":[0],"frac_coords":[[0,0,0]],"lattice":[[1,0,0],[0,1,0],[0,0,1]]}',
     AtomicNumberError, "atomic number out of range"),
    ('{"atoms":[1],"frac_coords":[[0,0,0]],"lattice":[[1,0,0],[2,0,0],[0,0,1]]}',
     DegenerateCellError, "degenerate"),
    ('{"atoms":[1,1],"frac_coords":[[0,0,0],[1,0,0]],"lattice":[[1,0,0],[0,1,0],[0,0,1]]}',
     DuplicatePositionError, "duplicate"),
    ('{"atoms":[1],"frac_coords":[[0,0,0]]', MalformedRecordError, "malformed JSON"),
    ('{"atoms":[1],"lattice":[[1,0,0],[0,1,0],[0,0,1]]}', MalformedRecordError, "coords"),
    ('[1, 2]', MalformedRecordError, "object"),
])
def test_parse_errors_are_distinct(text, error, match):
    with pytest.raises(error, match=match):
        parse_crystal(text)


def test_error_variants_are_distinct_classes():
    classes = {AtomicNumberError, DegenerateCellError, DuplicatePositionError, MalformedRecordError}
    for a in classes:
        for b in classes - {a}:
            assert not issubclass(a, b)


@pytest.mark.parametrize("z", [1, 8, 118])
def test_one_hot(z):
    v = one_hot(z)
    assert v.shape == (119,)
    assert v[z] == 1 and v.sum() == 1


@pytest.mark.parametrize("z", [0, 119, -1])
def test_one_hot_range(z):
    with pytest.raises(AtomicNumberError):
        one_hot(z)


def test_crystal_is_immutable():
    c = parse_crystal(NACL)
    with pytest.raises(ValueError):
        c.frac_coords[0, 0] = 0.3


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_serialization_round_trip_is_bitwise(seed):
    c = random_crystal(np.random.default_rng(seed))
    prop = {"name": "number_density", "value": toy_property(c, "number_density")}
    back, p = parse_record(serialize_crystal(c, prop))
    np.testing.assert_array_equal(back.atoms, c.atoms)
    np.testing.assert_array_equal(back.frac_coords, c.frac_coords)
    np.testing.assert_array_equal(back.lattice, c.lattice)
    assert p == prop


def test_dataset_save_load(tmp_path):
    ds = generate_dataset("perovskite", 10, 5, prop="mass_density")
    path = tmp_path / "d.jsonl"
    save_dataset(path, ds)
    assert split_path_for(path).exists()
    back = load_dataset(path)
    assert back.split == ds.split
    assert len(back) == 10
    for a, b in zip(ds.crystals, back.crystals):
        assert a.same_as(b)
    np.testing.assert_array_equal(back.labels("mass_density", range(10)), ds.labels("mass_density", range(10)))


def test_dataset_rejects_overlapping_split():
    c = parse_crystal(NACL)
    with pytest.raises(MalformedRecordError):
        Dataset([c, c], [None, None], {"train": [0], "val": [0], "test": []})
    with pytest.raises(MalformedRecordError):
        Dataset([c], [None], {"train": [3], "val": [], "test": []})


def test_missing_labels_raise():
    ds = generate_dataset("rocksalt", 3, 1)
    with pytest.raises(MalformedRecordError):
        ds.labels("number_density", [0])


def test_load_reports_line_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(NACL + "\n" + NACL.replace("[11,17]", "[11,200]") + "\n")
    with pytest.raises(AtomicNumberError, match=":2:"):
        load_dataset(path)


# ------------------------------------------------------------------ synthetic

def test_rocksalt_textbook_cell():
    c = generate_synthetic("rocksalt", SyntheticParams(edge=5.64, species=("Na", "Cl")), seed=0)
    assert c.num_atoms == 8
    assert sorted(c.atoms.tolist()) == [11] * 4 + [17] * 4
    np.testing.assert_allclose(c.lattice, 5.64 * np.eye(3))
    # the six nearest neighbours of each atom are the other species, at a/2
    g = build_graph(c, r_cut=3.0, max_neighbors=12)
    assert g.num_edges == 8 * 6
    np.testing.assert_allclose(g.distance, 2.82, atol=1e-12)
    assert np.all(c.atoms[g.src] != c.atoms[g.dst])


@pytest.mark.parametrize("family", ["rocksalt", "perovskite", "perturbed_cubic"])
def test_generation_is_deterministic(family):
    p = SyntheticParams(perturbation=0.05)
    a = generate_synthetic(family, p, 42)
    b = generate_synthetic(family, p, 42)
    np.testing.assert_array_equal(a.frac_coords, b.frac_coords)
    np.testing.assert_array_equal(a.lattice, b.lattice)
    np.testing.assert_array_equal(a.atoms, b.atoms)


def test_perturbed_cubic_min_distance():
    p = SyntheticParams(perturbation=0.05)
    for seed in range(100):
        c = generate_synthetic("perturbed_cubic", p, seed)
        if c.num_atoms > 1:
            assert min_periodic_distance(c.frac_coords, c.lattice) > 0.5


@pytest.mark.parametrize("params", [
    SyntheticParams(edge=1.0), SyntheticParams(edge=9.0), SyntheticParams(perturbation=0.2),
    SyntheticParams(species=("Na",)), SyntheticParams(species=("Na", "Xx")),
])
def test_invalid_generation_params(params):
    with pytest.raises((ValueError, KeyError)):
        generate_synthetic("rocksalt", params, 0)


def test_unknown_family():
    with pytest.raises(ValueError):
        generate_synthetic("zincblende", SyntheticParams(), 0)


def test_species_come_from_pool():
    pool = ("Na", "Cl", "Ca", "Ti", "O", "Si")
    zs = {elements.atomic_number(s) for s in pool}
    ds = generate_dataset("mixed", 30, 3, SyntheticParams(perturbation=0.03))
    for c in ds.crystals:
        assert set(c.atoms.tolist()) <= zs


# ------------------------------------------------------------------ toy properties

def test_toy_property_single_atom_cube():
    c = Crystal(np.array([1]), np.zeros((1, 3)), 2.0 * np.eye(3))
    assert toy_property(c, "number_density") == pytest.approx(0.125, abs=1e-15)
    assert toy_property(c, "mean_nn_distance") == pytest.approx(2.0, abs=1e-12)
    assert toy_property(c, "mass_density") == pytest.approx(elements.MASSES[1] / 8.0, abs=1e-15)


def test_mean_nn_distance_rock_salt():
    c = generate_synthetic("rocksalt", SyntheticParams(edge=5.64, species=("Na", "Cl")), seed=0)
    assert toy_property(c, "mean_nn_distance") == pytest.approx(2.82, abs=1e-12)


def test_mass_density_intensive_under_supercell():
    c = random_crystal(np.random.default_rng(11))
    s = make_supercell(c, (2, 1, 1))
    assert toy_property(s, "mass_density") == pytest.approx(toy_property(c, "mass_density"), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seeds, st.sampled_from(["number_density", "mean_nn_distance", "mass_density"]))
def test_toy_properties_invariant(seed, name):
    rng = np.random.default_rng(seed)
    c = random_crystal(rng)
    ref = toy_property(c, name)
    moved = apply_euclidean(c, EuclideanTransform.random(rng))
    shifted = wrap_to_cell(c, rng.uniform(-1, 1, size=3))
    perm = c.permuted(rng.permutation(c.num_atoms))
    for other in (moved, shifted, perm):
        assert math.isclose(toy_property(other, name), ref, rel_tol=1e-9, abs_tol=1e-12)


def test_unknown_property():
    with pytest.raises(ValueError):
        toy_property(parse_crystal(NACL), "band_gap")
