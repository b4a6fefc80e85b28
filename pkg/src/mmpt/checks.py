"""Seeded property suites behind ``mmpt check``.

Each suite returns a :class:`SuiteReport` holding the measured quantities,
a pass flag and the first counterexample found (JSON-serializable).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from mmpt import tensor as T
from mmpt.attributes import CENTER_CLASS, NUM_DIRECTIONS, direction_class, direction_signs, label_edges
from mmpt.crystal import Crystal, crystal_to_record
from mmpt.gradcheck import check_gradients, check_op
from mmpt.graph import brute_force_neighbors, build_graph
from mmpt.lattice import (
    EuclideanTransform,
    apply_euclidean,
    exhaustive_min_basis,
    niggli_reduce,
    random_unimodular,
    wrap_to_cell,
)
from mmpt.losses import total_loss
from mmpt.masking import MutexMasks, sample_mutex_masks
from mmpt.model import ModelConfig, featurize, finetune_head, init_params, lattice_encode, make_batch, structure_encode
from mmpt.synthetic import random_crystal
from mmpt.tensor import Tensor

SUITES = ("invariance", "gradients", "oracle", "masks")
INVARIANCE_TOL = 1e-8
GRAPH_DIST_TOL = 1e-9
NIGGLI_TOL = 1e-6
IDEMPOTENCE_TOL = 1e-8
GRAD_TOL = 1e-4
FREQ_TOL = 0.02


@dataclass
class SuiteReport:
    suite: str
    passed: bool = True
    metrics: dict = field(default_factory=dict)
    counterexample: dict | None = None
    seconds: float = 0.0

    def fail(self, example: dict) -> None:
        self.passed = False
        if self.counterexample is None:
            self.counterexample = example

    def lines(self) -> list[str]:
        out = [f"suite {self.suite}: {'PASS' if self.passed else 'FAIL'} ({self.seconds:.1f}s)"]
        out += [f"  {k} = {v}" for k, v in self.metrics.items()]
        return out


def rel_diff(a, b) -> float:
    """max|a - b| relative to max|a| (absolute when a is all zeros)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        return float("inf")
    if a.size == 0:
        return 0.0
    scale = float(np.max(np.abs(a)))
    return float(np.max(np.abs(a - b))) / (scale if scale > 0 else 1.0)


def sorted_neighbor_lists(crystal: Crystal, r_cut: float = 8.0, max_neighbors: int = 12) -> list[np.ndarray]:
    g = build_graph(crystal, r_cut, max_neighbors)
    return [np.sort(g.distance[g.src == i]) for i in range(crystal.num_atoms)]


def _encode(params, cfg: ModelConfig, crystal: Crystal) -> tuple[np.ndarray, np.ndarray, float]:
    batch = make_batch([featurize(crystal, cfg)], cfg)
    with T.no_grad():
        h_s = structure_encode(params, cfg, batch)
        h_l = lattice_encode(params, batch.six)
        pred = finetune_head(h_s, h_l, batch, params)
    return h_s.data, h_l.data, float(pred.data[0])


# ------------------------------------------------------------------ invariance

def invariance_suite(count: int = 100, seed: int = 0, cfg: ModelConfig | None = None) -> SuiteReport:
    """Corner-shift and E(3) invariance of graphs, encoders and predictions."""
    t0 = time.perf_counter()
    cfg = cfg or ModelConfig()
    rng = np.random.default_rng(seed)
    params = init_params(cfg, np.random.default_rng(seed + 1))
    rep = SuiteReport("invariance")
    worst = {"shift_neighbors": 0.0, "shift_h_s": 0.0, "e3_h_s": 0.0, "e3_h_l": 0.0, "e3_pred": 0.0}
    for trial in range(count):
        c = random_crystal(rng, max_atoms=12)
        h_s, h_l, pred = _encode(params, cfg, c)
        base_lists = sorted_neighbor_lists(c)

        beta = rng.uniform(-1.0, 1.0, size=3)
        shifted = wrap_to_cell(c, beta)
        lists = sorted_neighbor_lists(shifted)
        d_nb = max(rel_diff(a, b) for a, b in zip(base_lists, lists))
        d_hs = rel_diff(h_s, _encode(params, cfg, shifted)[0])

        t = EuclideanTransform.random(rng)
        moved = apply_euclidean(c, t)
        m_hs, m_hl, m_pred = _encode(params, cfg, moved)
        diffs = {"shift_neighbors": d_nb, "shift_h_s": d_hs, "e3_h_s": rel_diff(h_s, m_hs),
                 "e3_h_l": rel_diff(h_l, m_hl), "e3_pred": rel_diff([pred], [m_pred])}
        for k, v in diffs.items():
            worst[k] = max(worst[k], v)
            if not v <= INVARIANCE_TOL:
                rep.fail({"trial": trial, "check": k, "rel_diff": v, "crystal": crystal_to_record(c),
                          "beta": beta.tolist(), "rotation": t.rotation.tolist(),
                          "translation": t.translation.tolist()})
    rep.metrics = {"crystals": count, **{f"max_rel_{k}": v for k, v in worst.items()}}
    rep.seconds = time.perf_counter() - t0
    return rep


# ------------------------------------------------------------------ oracles

def graph_oracle(count: int = 500, seed: int = 0, image_range: int = 3,
                 r_cut: float = 8.0, max_neighbors: int = 12) -> SuiteReport:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    rep = SuiteReport("graph-oracle")
    worst = 0.0
    for trial in range(count):
        c = random_crystal(rng, max_atoms=8, min_width=2.0)
        g = build_graph(c, r_cut, max_neighbors)
        ref = brute_force_neighbors(c, r_cut, image_range, max_neighbors)
        got = g.edge_tuples()
        keys_ok = [e[:5] for e in got] == [tuple(e[:5]) for e in ref]
        dist = max((abs(a[5] - b[5]) for a, b in zip(got, ref)), default=0.0) if keys_ok else float("inf")
        worst = max(worst, dist)
        if not keys_ok or dist > GRAPH_DIST_TOL:
            rep.fail({"trial": trial, "crystal": crystal_to_record(c), "max_dist_err": dist,
                      "edges_match": keys_ok})
    rep.metrics = {"crystals": count, "max_distance_err": worst}
    rep.seconds = time.perf_counter() - t0
    return rep


NIGGLI_ORACLE_LATTICE = np.array([[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def niggli_oracle(count: int = 200, seed: int = 0) -> SuiteReport:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    rep = SuiteReport("niggli-oracle")
    worst_inv, worst_idem = 0.0, 0.0
    for trial in range(count):
        lattice = random_crystal(rng, max_atoms=1).lattice
        base_red, base = niggli_reduce(lattice)
        U = random_unimodular(rng, bound=3)
        _, other = niggli_reduce(U @ lattice)
        d = float(np.max(np.abs(base.as_array() - other.as_array())))
        _, again = niggli_reduce(base_red)
        di = float(np.max(np.abs(base.as_array() - again.as_array())))
        worst_inv, worst_idem = max(worst_inv, d), max(worst_idem, di)
        if d > NIGGLI_TOL or di > IDEMPOTENCE_TOL:
            rep.fail({"trial": trial, "lattice": lattice.tolist(), "unimodular": U.tolist(),
                      "invariance_err": d, "idempotence_err": di})
    _, red = niggli_reduce(NIGGLI_ORACLE_LATTICE)
    oracle = exhaustive_min_basis(NIGGLI_ORACLE_LATTICE)
    d_oracle = float(np.max(np.abs(red.as_array() - oracle.as_array())))
    if d_oracle > NIGGLI_TOL:
        rep.fail({"lattice": NIGGLI_ORACLE_LATTICE.tolist(), "reduced": red.as_array().tolist(),
                  "oracle": oracle.as_array().tolist()})
    rep.metrics = {"bases": count, "max_invariance_err": worst_inv, "max_idempotence_err": worst_idem,
                   "oracle_case_err": d_oracle}
    rep.seconds = time.perf_counter() - t0
    return rep


def attributes_oracle(count: int = 100, seed: int = 0) -> SuiteReport:
    t0 = time.perf_counter()
    rep = SuiteReport("attributes-oracle")
    classes = set()
    for signs in np.ndindex(3, 3, 3):
        s = tuple(int(v) - 1 for v in signs)
        cls = direction_class(s)
        classes.add(cls)
        if direction_signs(cls) != s:
            rep.fail({"signs": list(s), "class": cls})
    if classes != set(range(NUM_DIRECTIONS)):
        rep.fail({"classes": sorted(classes)})
    rng = np.random.default_rng(seed)
    edges = 0
    for trial in range(count):
        c = random_crystal(rng)
        g = build_graph(c)
        lab = label_edges(c, g)
        bad = np.flatnonzero((lab.unit_cell == 0) != (lab.direction == CENTER_CLASS))
        edges += g.num_edges
        if bad.size:
            rep.fail({"trial": trial, "crystal": crystal_to_record(c), "edge": int(bad[0])})
    rep.metrics = {"sign_triples": NUM_DIRECTIONS, "graphs": count, "edges": edges}
    rep.seconds = time.perf_counter() - t0
    return rep


def oracle_suite(seed: int = 0) -> SuiteReport:
    parts = [graph_oracle(seed=seed), niggli_oracle(seed=seed), attributes_oracle(seed=seed)]
    rep = SuiteReport("oracle", passed=all(p.passed for p in parts))
    rep.counterexample = next((p.counterexample for p in parts if p.counterexample), None)
    for p in parts:
        rep.metrics.update({f"{p.suite}.{k}": v for k, v in p.metrics.items()})
    rep.seconds = sum(p.seconds for p in parts)
    return rep


# ------------------------------------------------------------------ masks

def masks_suite(draws: int = 10_000, seed: int = 0, sizes=range(1, 10), freq_n: int = 6) -> SuiteReport:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    rep = SuiteReport("masks")
    counts = np.zeros(freq_n)
    for n in sizes:
        for _ in range(draws):
            mk = sample_mutex_masks(n, rng)
            m, mb = set(mk.m.tolist()), set(mk.m_bar.tolist())
            if m & mb or m | mb != set(range(n)) or len(m) != n // 2:
                rep.fail({"n_atoms": n, "m": sorted(m), "m_bar": sorted(mb)})
            if n == freq_n:
                counts[mk.m] += 1
    freq = counts / draws
    dev = float(np.max(np.abs(freq - 0.5)))
    if dev > FREQ_TOL:
        rep.fail({"n_atoms": freq_n, "inclusion_frequency": freq.tolist()})
    rep.metrics = {"draws_per_size": draws, "sizes": list(sizes), f"inclusion_freq_n{freq_n}": freq.round(4).tolist(),
                   "max_freq_deviation": dev}
    rep.seconds = time.perf_counter() - t0
    return rep


# ------------------------------------------------------------------ gradients

def tiny_model_config() -> ModelConfig:
    return ModelConfig(d_a=8, d_s=8, d_l=4, hidden=8, mp_layers=2, decoder_hidden=8, lattice_hidden=8,
                       pal_hidden=8, head_hidden=8)


def three_atom_crystal() -> Crystal:
    lattice = np.array([[3.1, 0.0, 0.0], [0.4, 2.9, 0.0], [0.2, 0.3, 3.3]])
    frac = np.array([[0.0, 0.0, 0.0], [0.48, 0.52, 0.1], [0.23, 0.71, 0.56]])
    return Crystal(np.array([11, 17, 8]), frac, lattice)


LOSS_NAMES = ("l_A", "l_X", "l_L", "l_BT", "l_Die", "l_Unit", "l_Dis", "total")


def network_gradient_checks(seed: int = 0, per_param: int = 3) -> dict[str, object]:
    """Finite-difference check of every pre-training loss through the full network."""
    from mmpt.train import RunConfig, pretrain_losses

    mcfg = tiny_model_config()
    cfg = RunConfig(model=mcfg)
    rng = np.random.default_rng(seed)
    params = init_params(cfg.model_config(), rng)
    batch = make_batch([featurize(three_atom_crystal(), mcfg)], mcfg)
    masks = [MutexMasks(np.array([1]), np.array([0, 2]), 3)]
    results = {}
    for name in LOSS_NAMES:
        def fn(name=name):
            comps = pretrain_losses(params, cfg, batch, masks)
            return total_loss(comps) if name == "total" else comps[name]
        results[name] = check_gradients(fn, params, rng, per_param=per_param)
    return results


def op_gradient_cases(rng: np.random.Generator) -> dict[str, list[tuple]]:
    """(op, inputs) cases for every differentiable primitive, three shapes each."""
    shapes = [(3,), (2, 4), (5, 3)]
    pos = lambda s: rng.uniform(0.5, 2.0, size=s)
    nrm = lambda s: rng.normal(size=s)
    away = lambda s: np.where(rng.random(s) < 0.5, -1, 1) * rng.uniform(0.1, 1.5, size=s)

    cases: dict[str, list[tuple]] = {}
    unary = {"neg": (T.neg, nrm), "square": (T.square, nrm), "sqrt": (T.sqrt, pos), "exp": (T.exp, nrm),
             "log": (T.log, pos), "abs": (T.abs_, away), "relu": (T.relu, away),
             "leaky_relu": (T.leaky_relu, away), "sigmoid": (T.sigmoid, nrm), "swish": (T.swish, nrm),
             "sum": (T.sum_, nrm), "mean": (T.mean, nrm)}
    for name, (op, gen) in unary.items():
        cases[name] = [(op, [gen(s)]) for s in shapes]
    for name, op in {"add": T.add, "sub": T.sub, "mul": T.mul}.items():
        cases[name] = [(op, [nrm(s), nrm(s)]) for s in shapes[:2]] + [(op, [nrm((5, 3)), nrm((1, 3))])]
    cases["div"] = [(T.div, [nrm(s), pos(s)]) for s in shapes[:2]] + [(T.div, [nrm((5, 3)), pos((5, 1))])]
    cases["matmul"] = [(T.matmul, [nrm((a, b)), nrm((b, c))]) for a, b, c in [(1, 3, 2), (4, 2, 5), (3, 3, 3)]]
    cases["transpose"] = [(T.transpose, [nrm(s)]) for s in [(1, 3), (2, 4), (5, 3)]]
    cases["reshape"] = [(lambda a, s=s: T.reshape(a, (-1,)), [nrm(s)]) for s in shapes]
    cases["concat"] = [(lambda a, b: T.concat([a, b], axis=0), [nrm((2, 3)), nrm((1, 3))]),
                       (lambda a, b: T.concat([a, b], axis=1), [nrm((2, 3)), nrm((2, 2))]),
                       (lambda a, b: T.concat([a, b], axis=0), [nrm((4,)), nrm((2,))])]
    cases["gather_rows"] = [(lambda a, i=idx: T.gather_rows(a, i), [nrm(s)])
                            for s, idx in [((3,), [0, 2, 2]), ((4, 2), [3, 0, 3, 1]), ((5, 3), [4, 4, 4])]]
    cases["scatter_add_rows"] = [(lambda a, i=idx, n=n: T.scatter_add_rows(a, i, n), [nrm(s)])
                                 for s, idx, n in [((3,), [0, 0, 2], 3), ((4, 2), [1, 0, 1, 1], 2),
                                                   ((5, 3), [4, 2, 0, 2, 1], 6)]]
    cases["mask_rows"] = [(lambda a, t, r=rows: T.mask_rows(a, r, t), [nrm(s), nrm(s[1:])])
                          for s, rows in [((3, 2), [1]), ((4, 3), [0, 3]), ((5, 4), [])]]
    cases["max"] = [(lambda a, ax=ax: T.max_(a, axis=ax), [nrm(s)]) for s, ax in [((3,), 0), ((2, 4), 1), ((5, 3), 0)]]
    cases["segment_max"] = [(lambda a, sg=seg, n=n: T.segment_max(a, sg, n), [nrm(s)])
                            for s, seg, n in [((3, 1), [0, 0, 1], 2), ((4, 2), [1, 0, 1, 0], 2),
                                              ((5, 3), [0, 1, 2, 2, 2], 3)]]
    cases["l2_norm"] = [(lambda a, ax=ax: T.l2_norm(a, axis=ax), [away(s)]) for s, ax in [((3,), 0), ((2, 4), 1), ((5, 3), 0)]]
    cases["softmax"] = [(lambda a, ax=ax: T.softmax(a, axis=ax), [nrm(s)]) for s, ax in [((3,), 0), ((2, 4), 1), ((5, 3), 0)]]
    cases["log_softmax"] = [(lambda a, ax=ax: T.log_softmax(a, axis=ax), [nrm(s)]) for s, ax in [((3,), 0), ((2, 4), 1), ((5, 3), 0)]]
    return cases


def gradients_suite(seed: int = 0) -> SuiteReport:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    rep = SuiteReport("gradients")
    op_worst = 0.0
    for name, cases in op_gradient_cases(rng).items():
        for op, inputs in cases:
            res = check_op(op, inputs, rng)
            op_worst = max(op_worst, res.max_rel_err)
            if not res.passed(GRAD_TOL):
                rep.fail({"op": name, "shapes": [list(np.shape(x)) for x in inputs], "worst": res.worst})
    rep.metrics["ops_max_rel_err"] = op_worst
    for name, res in network_gradient_checks(seed).items():
        rep.metrics[f"{name}_max_rel_err"] = res.max_rel_err
        if not res.passed(GRAD_TOL):
            rep.fail({"loss": name, "worst": res.worst})
    rep.seconds = time.perf_counter() - t0
    return rep


def run_suite(name: str, seed: int = 0) -> SuiteReport:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")
    return {"invariance": invariance_suite, "gradients": gradients_suite,
            "oracle": oracle_suite, "masks": masks_suite}[name](seed=seed)
