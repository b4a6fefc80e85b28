"""Encoder/decoder stack.

Structure encoder: atom embedding -> multi-graph attention -> distance-only
message passing (Gaussian radial basis with a polynomial cutoff envelope)
-> linear head to ``d_s``.  Lattice encoder: MLP on the Niggli six-parameter
form.  Atom and coordinate decoders are sum-aggregation GIN stacks.

Every geometric input is an interatomic distance or a Niggli parameter, so
all outputs are E(3)- and cell-choice-invariant by construction.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from mmpt import tensor as T
from mmpt.attributes import NUM_DIRECTIONS, label_edges
from mmpt.crystal import Crystal
from mmpt.elements import NUM_CLASSES
from mmpt.graph import MultiGraph, build_graph
from mmpt.lattice import niggli_reduce
from mmpt.tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    d_a: int = 128
    d_s: int = 64
    d_l: int = 16
    hidden: int = 64
    mp_layers: int = 4
    rbf_count: int = 6
    rbf_cutoff: float = 8.0
    envelope_exponent: int = 5
    max_neighbors: int = 12
    decoder_layers: int = 2
    decoder_hidden: int = 64
    atom_fc_layers: int = 5
    lattice_fc_layers: int = 5
    lattice_enc_layers: int = 3
    lattice_hidden: int = 32
    pal_hidden: int = 64
    head_layers: int = 4
    head_hidden: int = 64
    attention_heads: int = 1
    use_attention: bool = True
    attention_form: str = "neighbor"  # "neighbor" sums eps_ij * a_j; "literal" sums eps_ij * a_i
    mask_token_mode: str = "learnable"  # or "zero"

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and v < 1:
                raise ValueError(f"{f.name} must be >= 1")
        if self.attention_heads != 1:
            raise ValueError("only single-head attention is supported")
        if self.attention_form not in ("neighbor", "literal"):
            raise ValueError(f"unknown attention_form {self.attention_form!r}")
        if self.mask_token_mode not in ("learnable", "zero"):
            raise ValueError(f"unknown mask_token_mode {self.mask_token_mode!r}")

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------ parameters

def _mlp_shapes(prefix: str, sizes: list[int]) -> dict[str, tuple]:
    out = {}
    for k, (i, o) in enumerate(zip(sizes[:-1], sizes[1:])):
        out[f"{prefix}.l{k}.W"] = (i, o)
        out[f"{prefix}.l{k}.b"] = (o,)
    return out


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    h, dh = cfg.hidden, cfg.decoder_hidden
    shapes: dict[str, tuple] = {
        "encoder.embedding": (NUM_CLASSES, cfg.d_a),
        "encoder.attn.W": (cfg.d_a, cfg.d_a),
        "encoder.attn.score": (2 * cfg.d_a, 1),
        "encoder.attn.score_b": (1,),
        "encoder.attn.fc.W": (cfg.d_a, cfg.d_a),
        "encoder.attn.fc.b": (cfg.d_a,),
        "encoder.input.W": (cfg.d_a, h),
        "encoder.input.b": (h,),
        "encoder.out.W": (h, cfg.d_s),
        "encoder.out.b": (cfg.d_s,),
        "mask_token": (cfg.d_s,),
    }
    for layer in range(cfg.mp_layers):
        shapes[f"encoder.mp{layer}.filter.W"] = (cfg.rbf_count, h)
        shapes[f"encoder.mp{layer}.update.W"] = (h, h)
        shapes[f"encoder.mp{layer}.update.b"] = (h,)
    shapes.update(_mlp_shapes(
        "encoder.lattice", [6] + [cfg.lattice_hidden] * (cfg.lattice_enc_layers - 1) + [cfg.d_l]))
    for name in ("atom", "coord"):
        for layer in range(cfg.decoder_layers):
            d_in = cfg.d_s if layer == 0 else dh
            shapes.update(_mlp_shapes(f"decoder.{name}.gin{layer}", [d_in, dh, dh]))
    shapes.update(_mlp_shapes("decoder.atom.fc", [dh] * cfg.atom_fc_layers + [NUM_CLASSES]))
    shapes.update(_mlp_shapes("decoder.coord.head", [dh, dh // 2, 1]))
    shapes.update(_mlp_shapes("decoder.lattice.fc", [cfg.d_l] + [dh] * (cfg.lattice_fc_layers - 1) + [6]))
    for name, width in (("direction", NUM_DIRECTIONS), ("unit_cell", 2), ("distance", 1)):
        shapes.update(_mlp_shapes(f"pal.{name}", [2 * dh, cfg.pal_hidden, width]))
    shapes.update(_mlp_shapes(
        "head.fc", [cfg.d_l + 2 * cfg.d_s] + [cfg.head_hidden] * (cfg.head_layers - 1) + [1]))
    return shapes


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """LeCun-normal weights, zero biases, N(0, 1) embeddings, N(0, 0.02^2) mask token."""
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name == "encoder.embedding":
            data = rng.normal(size=shape)
        elif name == "mask_token":
            data = rng.normal(scale=0.02, size=shape) if cfg.mask_token_mode == "learnable" else np.zeros(shape)
        elif name.endswith(".b") or name.endswith("score_b"):
            data = np.zeros(shape)
        else:
            data = rng.normal(scale=1.0 / np.sqrt(shape[0]), size=shape)
        trainable = not (name == "mask_token" and cfg.mask_token_mode == "zero")
        params[name] = Tensor(data, requires_grad=trainable)
    return params


def trainable(params: dict[str, Tensor], prefixes: tuple[str, ...] = ("",)) -> dict[str, Tensor]:
    return {k: p for k, p in params.items() if p.requires_grad and k.startswith(prefixes)}


# ------------------------------------------------------------------ layers

def linear(x: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    return T.matmul(x, params[prefix + ".W"]) + params[prefix + ".b"]


def mlp(x: Tensor, params: dict[str, Tensor], prefix: str, act=T.relu, final_act: bool = False) -> Tensor:
    layer = 0
    while f"{prefix}.l{layer + 1}.W" in params:
        x = act(linear(x, params, f"{prefix}.l{layer}"))
        layer += 1
    x = linear(x, params, f"{prefix}.l{layer}")
    return act(x) if final_act else x


def radial_basis(distance: np.ndarray, count: int, cutoff: float, p: int = 5) -> np.ndarray:
    """Gaussian bumps on [0, cutoff] times a smooth polynomial envelope (zero at cutoff)."""
    centers = np.linspace(0.0, cutoff, count)
    width = cutoff / max(count - 1, 1)
    x = np.clip(distance / cutoff, 0.0, 1.0)
    env = (1.0 - (p + 1) * (p + 2) / 2 * x**p + p * (p + 2) * x ** (p + 1)
           - p * (p + 1) / 2 * x ** (p + 2))
    gauss = np.exp(-0.5 * ((distance[:, None] - centers[None, :]) / width) ** 2)
    return gauss * env[:, None]


# ------------------------------------------------------------------ batching

@dataclass(frozen=True, eq=False)
class CrystalFeatures:
    """Per-crystal inputs and pre-training targets, computed once per crystal."""

    crystal: Crystal
    graph: MultiGraph
    six: np.ndarray            # Niggli (a, b, c, alpha, beta, gamma)
    center_dist: np.ndarray    # |x_i - mean(X)| per atom
    direction: np.ndarray
    unit_cell: np.ndarray


def featurize(crystal: Crystal, cfg: ModelConfig) -> CrystalFeatures:
    graph = build_graph(crystal, r_cut=cfg.rbf_cutoff, max_neighbors=cfg.max_neighbors)
    _, six = niggli_reduce(crystal.lattice)
    cart = crystal.cart_coords
    labels = label_edges(crystal, graph)
    return CrystalFeatures(
        crystal=crystal,
        graph=graph,
        six=six.as_array(),
        center_dist=np.linalg.norm(cart - cart.mean(axis=0), axis=1),
        direction=labels.direction,
        unit_cell=labels.unit_cell,
    )


@dataclass(frozen=True, eq=False)
class Batch:
    num_crystals: int
    num_nodes: int
    atoms: np.ndarray
    node_crystal: np.ndarray
    node_offset: np.ndarray    # first node index of each crystal
    src: np.ndarray
    dst: np.ndarray
    edge_crystal: np.ndarray
    distance: np.ndarray
    rbf: np.ndarray
    six: np.ndarray
    center_dist: np.ndarray
    direction: np.ndarray
    unit_cell: np.ndarray


def make_batch(feats: list[CrystalFeatures], cfg: ModelConfig) -> Batch:
    sizes = np.array([f.crystal.num_atoms for f in feats])
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    src = np.concatenate([f.graph.src + o for f, o in zip(feats, offsets)])
    dst = np.concatenate([f.graph.dst + o for f, o in zip(feats, offsets)])
    distance = np.concatenate([f.graph.distance for f in feats])
    return Batch(
        num_crystals=len(feats),
        num_nodes=int(sizes.sum()),
        atoms=np.concatenate([f.crystal.atoms for f in feats]),
        node_crystal=np.repeat(np.arange(len(feats)), sizes),
        node_offset=offsets,
        src=src.astype(np.int64),
        dst=dst.astype(np.int64),
        edge_crystal=np.concatenate(
            [np.full(f.graph.num_edges, b, dtype=np.int64) for b, f in enumerate(feats)]),
        distance=distance,
        rbf=radial_basis(distance, cfg.rbf_count, cfg.rbf_cutoff, cfg.envelope_exponent),
        six=np.stack([f.six for f in feats]),
        center_dist=np.concatenate([f.center_dist for f in feats]),
        direction=np.concatenate([f.direction for f in feats]),
        unit_cell=np.concatenate([f.unit_cell for f in feats]),
    )


# ------------------------------------------------------------------ encoders

def attention_reweight(
    a: Tensor, src: np.ndarray, dst: np.ndarray, num_nodes: int,
    params: dict[str, Tensor], form: str = "neighbor",
) -> tuple[Tensor, Tensor]:
    """Single-head multi-graph attention; returns (reweighted features, edge weights)."""
    d = a.shape[1]
    wa = T.matmul(a, params["encoder.attn.W"])
    score = params["encoder.attn.score"]
    s_src = T.matmul(wa, T.gather_rows(score, np.arange(d)))
    s_dst = T.matmul(wa, T.gather_rows(score, np.arange(d, 2 * d)))
    r = T.gather_rows(s_src, src) + T.gather_rows(s_dst, dst) + params["encoder.attn.score_b"]
    z = T.leaky_relu(r)
    # per-node max shift: softmax is shift-invariant, so a constant shift keeps gradients exact
    shift = np.full((num_nodes, 1), -np.inf)
    np.maximum.at(shift, src, z.data)
    shift[~np.isfinite(shift)] = 0.0
    e = T.exp(z - shift[src])
    denom = T.scatter_add_rows(e, src, num_nodes)
    weights = e / T.gather_rows(denom, src)
    values = T.gather_rows(a, dst if form == "neighbor" else src)
    pooled = T.scatter_add_rows(weights * values, src, num_nodes)
    return linear(pooled, params, "encoder.attn.fc"), T.reshape(weights, (-1,))


def structure_encode(params: dict[str, Tensor], cfg: ModelConfig, batch: Batch) -> Tensor:
    """h_S for every atom in the batch (num_nodes x d_s)."""
    n = batch.num_nodes
    a = T.gather_rows(params["encoder.embedding"], batch.atoms)
    if cfg.use_attention:
        a, _ = attention_reweight(a, batch.src, batch.dst, n, params, cfg.attention_form)
    h = T.swish(linear(a, params, "encoder.input"))
    scale = 1.0 / cfg.max_neighbors
    for layer in range(cfg.mp_layers):
        filt = T.matmul(T.Tensor(batch.rbf), params[f"encoder.mp{layer}.filter.W"])
        msg = T.gather_rows(h, batch.dst) * filt
        agg = T.scatter_add_rows(msg, batch.src, n) * scale
        h = h + T.swish(linear(agg, params, f"encoder.mp{layer}.update"))
    return linear(h, params, "encoder.out")


def lattice_encode(params: dict[str, Tensor], six: np.ndarray) -> Tensor:
    """h_L from Niggli six-parameters (B x 6 -> B x d_l)."""
    return mlp(T.Tensor(np.atleast_2d(six)), params, "encoder.lattice", act=T.swish)


def mutex_views(h_s: Tensor, m_rows: np.ndarray, m_bar_rows: np.ndarray, params) -> tuple[Tensor, Tensor]:
    token = params["mask_token"]
    return T.mask_rows(h_s, m_rows, token), T.mask_rows(h_s, m_bar_rows, token)


# ------------------------------------------------------------------ decoders

def gin(x: Tensor, src: np.ndarray, dst: np.ndarray, num_nodes: int,
        params: dict[str, Tensor], prefix: str, layers: int) -> Tensor:
    """x_i' = MLP(x_i + sum_{edges i->j} x_j); ReLU between layers."""
    for layer in range(layers):
        agg = x + T.scatter_add_rows(T.gather_rows(x, dst), src, num_nodes)
        x = mlp(agg, params, f"{prefix}.gin{layer}")
        if layer < layers - 1:
            x = T.relu(x)
    return x


def decode_atoms(x: Tensor, src, dst, num_nodes, params, cfg: ModelConfig) -> tuple[Tensor, Tensor]:
    """Returns (p_A, 119-way logits)."""
    p_a = gin(x, src, dst, num_nodes, params, "decoder.atom", cfg.decoder_layers)
    return p_a, mlp(p_a, params, "decoder.atom.fc")


def decode_coords(x: Tensor, src, dst, num_nodes, params, cfg: ModelConfig) -> Tensor:
    """Predicted distance of each atom to the Cartesian centroid."""
    p = gin(x, src, dst, num_nodes, params, "decoder.coord", cfg.decoder_layers)
    return T.reshape(mlp(p, params, "decoder.coord.head"), (-1,))


def decode_lattice(h_l: Tensor, params) -> Tensor:
    return mlp(h_l, params, "decoder.lattice.fc")


def pal_heads(p_a: Tensor, src: np.ndarray, dst: np.ndarray, params) -> tuple[Tensor, Tensor, Tensor]:
    """Per-edge (direction logits, unit-cell logits, distance) from [p_A^i || p_A^j]."""
    x = T.concat([T.gather_rows(p_a, src), T.gather_rows(p_a, dst)], axis=1)
    return (
        mlp(x, params, "pal.direction"),
        mlp(x, params, "pal.unit_cell"),
        T.reshape(mlp(x, params, "pal.distance"), (-1,)),
    )


def finetune_head(h_s: Tensor, h_l: Tensor, batch: Batch, params) -> Tensor:
    """Property prediction from [h_L || max-pool(h_S) || mean-pool(h_S)]; returns (B,)."""
    b = batch.num_crystals
    counts = np.bincount(batch.node_crystal, minlength=b).astype(np.float64)[:, None]
    pooled_max = T.segment_max(h_s, batch.node_crystal, b)
    pooled_mean = T.scatter_add_rows(h_s, batch.node_crystal, b) / counts
    x = T.concat([h_l, pooled_max, pooled_mean], axis=1)
    return T.reshape(mlp(x, params, "head.fc"), (-1,))
