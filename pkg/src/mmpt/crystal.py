"""Crystal data model, JSON records, datasets and toy property oracles."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mmpt import elements
from mmpt.errors import AtomicNumberError, DataError, DuplicatePositionError, MalformedRecordError
from mmpt.lattice import as_lattice, cart_to_frac, volume

MIN_SEPARATION = 1e-6
PROPERTY_NAMES = ("number_density", "mean_nn_distance", "mass_density")
PROPERTY_UNITS = {
    "number_density": "atoms/A^3",
    "mean_nn_distance": "A",
    "mass_density": "amu/A^3",
}


@dataclass(frozen=True, eq=False)
class Crystal:
    """Atom types ``atoms`` (Z), fractional coordinates and lattice rows."""

    atoms: np.ndarray
    frac_coords: np.ndarray
    lattice: np.ndarray

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=np.int64).reshape(-1)
        frac = np.array(self.frac_coords, dtype=np.float64).reshape(-1, 3)
        lattice = as_lattice(self.lattice)
        if len(atoms) == 0:
            raise MalformedRecordError("crystal needs at least one atom")
        if len(atoms) != len(frac):
            raise MalformedRecordError(f"{len(atoms)} atoms but {len(frac)} coordinates")
        if atoms.min() < 1 or atoms.max() > elements.MAX_Z:
            raise AtomicNumberError("atomic number out of range")
        if not np.all(np.isfinite(frac)):
            raise MalformedRecordError("non-finite fractional coordinate")
        _check_separation(frac, lattice)
        for name, value in (("atoms", atoms), ("frac_coords", frac), ("lattice", lattice)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    @property
    def cart_coords(self) -> np.ndarray:
        return self.frac_coords @ self.lattice

    @property
    def volume(self) -> float:
        return volume(self.lattice)

    def permuted(self, perm) -> Crystal:
        perm = np.asarray(perm)
        return Crystal(self.atoms[perm], self.frac_coords[perm], self.lattice)

    def same_as(self, other: Crystal) -> bool:
        """Bitwise equality of all fields."""
        return (
            np.array_equal(self.atoms, other.atoms)
            and np.array_equal(self.frac_coords, other.frac_coords)
            and np.array_equal(self.lattice, other.lattice)
        )


def _check_separation(frac: np.ndarray, lattice: np.ndarray) -> None:
    if len(frac) < 2:
        return
    diff = frac[:, None, :] - frac[None, :, :]
    diff -= np.round(diff)
    dist = np.linalg.norm(diff @ lattice, axis=-1)
    iu = np.triu_indices(len(frac), k=1)
    if np.any(dist[iu] <= MIN_SEPARATION):
        raise DuplicatePositionError("duplicate atomic positions")


def one_hot(z: int) -> np.ndarray:
    if not 1 <= int(z) <= elements.MAX_Z:
        raise AtomicNumberError("atomic number out of range")
    v = np.zeros(elements.NUM_CLASSES)
    v[int(z)] = 1.0
    return v


# --------------------------------------------------------------------- records

def crystal_to_record(crystal: Crystal, prop: dict | None = None) -> dict:
    rec = {
        "atoms": [int(z) for z in crystal.atoms],
        "frac_coords": crystal.frac_coords.tolist(),
        "lattice": crystal.lattice.tolist(),
    }
    if prop is not None:
        rec["property"] = {"name": prop["name"], "value": float(prop["value"])}
    return rec


def serialize_crystal(crystal: Crystal, prop: dict | None = None) -> str:
    return json.dumps(crystal_to_record(crystal, prop))


def record_to_crystal(rec) -> tuple[Crystal, dict | None]:
    if not isinstance(rec, dict):
        raise MalformedRecordError("record must be a JSON object")
    try:
        atoms = rec["atoms"]
        lattice = rec["lattice"]
    except KeyError as exc:
        raise MalformedRecordError(f"missing field {exc.args[0]!r}") from None
    if not isinstance(atoms, list) or not all(isinstance(z, int) and not isinstance(z, bool) for z in atoms):
        raise MalformedRecordError("atoms must be a list of integers")
    if any(z < 1 or z > elements.MAX_Z for z in atoms):
        raise AtomicNumberError("atomic number out of range")
    if "frac_coords" in rec:
        frac = _float_array(rec["frac_coords"], "frac_coords")
        lattice = _float_array(lattice, "lattice")
    elif "cart_coords" in rec:
        cart = _float_array(rec["cart_coords"], "cart_coords")
        lattice = as_lattice(_float_array(lattice, "lattice"))
        if cart.ndim != 2 or cart.shape[1] != 3:
            raise MalformedRecordError("cart_coords must be N x 3")
        frac = cart_to_frac(cart, lattice)
    else:
        raise MalformedRecordError("record needs frac_coords or cart_coords")
    if frac.ndim != 2 or frac.shape[1] != 3:
        raise MalformedRecordError("coordinates must be N x 3")
    crystal = Crystal(np.array(atoms, dtype=np.int64), frac, lattice)
    prop = rec.get("property")
    if prop is not None:
        if not isinstance(prop, dict) or "name" not in prop or "value" not in prop:
            raise MalformedRecordError("property must be {name, value}")
        prop = {"name": str(prop["name"]), "value": float(prop["value"])}
    return crystal, prop


def _float_array(value, name: str) -> np.ndarray:
    try:
        return np.array(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise MalformedRecordError(f"{name} is not a numeric array") from None


def parse_crystal(text: str) -> Crystal:
    return parse_record(text)[0]


def parse_record(text: str) -> tuple[Crystal, dict | None]:
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedRecordError(f"malformed JSON: {exc}") from None
    return record_to_crystal(rec)


# --------------------------------------------------------------------- datasets

@dataclass
class Dataset:
    crystals: list[Crystal]
    properties: list[dict | None]
    split: dict[str, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.crystals) != len(self.properties):
            raise ValueError("crystals and properties differ in length")
        if not self.split:
            self.split = {"train": list(range(len(self.crystals))), "val": [], "test": []}
        seen: set[int] = set()
        for name, idx in self.split.items():
            for i in idx:
                if not 0 <= i < len(self.crystals):
                    raise MalformedRecordError(f"split index {i} out of bounds")
                if i in seen:
                    raise MalformedRecordError(f"split index {i} appears twice")
                seen.add(i)
            self.split[name] = [int(i) for i in idx]

    def __len__(self) -> int:
        return len(self.crystals)

    def labels(self, name: str, indices) -> np.ndarray:
        out = []
        for i in indices:
            prop = self.properties[i]
            if prop is None or prop["name"] != name:
                raise MalformedRecordError(f"record {i} has no {name!r} label")
            out.append(prop["value"])
        return np.array(out, dtype=np.float64)


def split_path_for(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".split.json")


def save_dataset(path, dataset: Dataset) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for crystal, prop in zip(dataset.crystals, dataset.properties):
            fh.write(serialize_crystal(crystal, prop) + "\n")
    with open(split_path_for(path), "w", encoding="utf-8") as fh:
        json.dump(dataset.split, fh)


def load_dataset(path, split_path=None) -> Dataset:
    path = Path(path)
    crystals, props = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                c, p = parse_record(line)
            except DataError as exc:
                raise type(exc)(f"{path}:{lineno}: {exc}") from None
            crystals.append(c)
            props.append(p)
    split_file = Path(split_path) if split_path is not None else split_path_for(path)
    split = {}
    if split_file.exists():
        with open(split_file, encoding="utf-8") as fh:
            try:
                split = json.load(fh)
            except json.JSONDecodeError as exc:
                raise MalformedRecordError(f"malformed split file: {exc}") from None
    elif split_path is not None:
        raise MalformedRecordError(f"split file {split_file} not found")
    return Dataset(crystals, props, split)


def random_split(n: int, rng: np.random.Generator, fractions=(0.8, 0.1, 0.1)) -> dict[str, list[int]]:
    perm = rng.permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return {
        "train": sorted(perm[:n_train].tolist()),
        "val": sorted(perm[n_train:n_train + n_val].tolist()),
        "test": sorted(perm[n_train + n_val:].tolist()),
    }


# --------------------------------------------------------------------- toy properties

def nearest_neighbor_distances(crystal: Crystal) -> np.ndarray:
    """Distance from each atom to its closest periodic neighbor (self-images included)."""
    from mmpt.graph import build_graph

    # the shortest lattice vector bounds every nearest-neighbor distance
    r_cut = float(np.linalg.norm(crystal.lattice, axis=1).min()) * (1 + 1e-9)
    graph = build_graph(crystal, r_cut=r_cut, max_neighbors=1)
    out = np.full(crystal.num_atoms, np.inf)
    np.minimum.at(out, graph.src, graph.distance)
    return out


def toy_property(crystal: Crystal, name: str) -> float:
    if name == "number_density":
        return crystal.num_atoms / crystal.volume
    if name == "mean_nn_distance":
        return float(np.mean(nearest_neighbor_distances(crystal)))
    if name == "mass_density":
        return math.fsum(elements.MASSES[z] for z in crystal.atoms) / crystal.volume
    raise ValueError(f"unknown property {name!r}; expected one of {PROPERTY_NAMES}")
