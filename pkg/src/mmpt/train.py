"""Pre-training, fine-tuning and evaluation loops."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from mmpt import checkpoint
from mmpt import tensor as T
from mmpt.crystal import Crystal, Dataset
from mmpt.losses import (
    LossReport,
    loss_atom,
    loss_barlow,
    loss_coord,
    loss_direction,
    loss_distance,
    loss_lattice,
    loss_unitcell,
    total_loss,
)
from mmpt.masking import MutexMasks, sample_mutex_masks
from mmpt.model import (
    Batch,
    CrystalFeatures,
    ModelConfig,
    decode_atoms,
    decode_coords,
    decode_lattice,
    featurize,
    finetune_head,
    init_params,
    lattice_encode,
    make_batch,
    mutex_views,
    pal_heads,
    structure_encode,
    trainable,
)
from mmpt.optim import AdamState, adam_step
from mmpt.tensor import Tensor

log = logging.getLogger(__name__)

ABLATION_FLAGS = {
    "no_reconstruction": "MMPT-RE",
    "single_mask": "MMPT-MUTEX",
    "no_bt": "MMPT-CL",
    "no_pimg_attention": "MMPT-PIMG",
    "no_pal": "MMPT-PAL",
}
ENCODER_PREFIXES = ("encoder.",)
HEAD_PREFIXES = ("head.",)


class TrainingError(RuntimeError):
    pass


@dataclass
class RunConfig:
    seed: int = 123
    epochs: int = 50
    batch_size: int = 8
    pretrain_lr: float = 1e-3
    finetune_epochs: int = 60
    finetune_batch_size: int = 8
    finetune_encoder_lr: float = 1e-3
    finetune_head_lr: float = 5e-3
    finetune_weight_decay: float = 0.01
    barlow_lambda: float = 5e-3
    barlow_centered: bool = False
    mask_ratio_mode: str = "half"
    mask_token_mode: str = "learnable"
    no_reconstruction: bool = False
    single_mask: bool = False
    no_bt: bool = False
    no_pimg_attention: bool = False
    no_pal: bool = False
    label_fraction: float = 1.0
    data: str | None = None
    split: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if self.mask_ratio_mode != "half":
            raise ValueError("only mask_ratio_mode 'half' is supported")
        if not 0.0 < self.label_fraction <= 1.0:
            raise ValueError("label_fraction must lie in (0, 1]")
        if self.batch_size < 1 or self.finetune_batch_size < 1:
            raise ValueError("batch sizes must be >= 1")

    def model_config(self) -> ModelConfig:
        return replace(self.model, mask_token_mode=self.mask_token_mode,
                       use_attention=not self.no_pimg_attention)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> RunConfig:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def featurize_all(crystals: list[Crystal], mcfg: ModelConfig) -> list[CrystalFeatures]:
    return [featurize(c, mcfg) for c in crystals]


def _batches(order: np.ndarray, size: int):
    for start in range(0, len(order), size):
        yield order[start:start + size]


# ------------------------------------------------------------------ pre-training

def _split_rows(x: Tensor, n: int) -> tuple[Tensor, Tensor]:
    return T.gather_rows(x, np.arange(n)), T.gather_rows(x, np.arange(n, 2 * n))


def pretrain_losses(
    params: dict[str, Tensor], cfg: RunConfig, batch: Batch, masks: list[MutexMasks],
) -> dict[str, Tensor]:
    """All active loss components for one batch; disabled terms are absent."""
    mcfg = cfg.model_config()
    n, e = batch.num_nodes, len(batch.src)
    h_s = structure_encode(params, mcfg, batch)
    h_l = lattice_encode(params, batch.six)
    m_rows = np.concatenate([mk.m + off for mk, off in zip(masks, batch.node_offset)]).astype(np.int64)
    m_bar_rows = np.concatenate([mk.m_bar + off for mk, off in zip(masks, batch.node_offset)]).astype(np.int64)
    g, g_bar = mutex_views(h_s, m_rows, m_bar_rows, params)
    recon = not cfg.no_reconstruction
    comps: dict[str, Tensor] = {}

    if cfg.single_mask:
        src, dst, nn = batch.src, batch.dst, n
        x = g
    else:
        # decode both views in one pass over a doubled graph
        src = np.concatenate([batch.src, batch.src + n])
        dst = np.concatenate([batch.dst, batch.dst + n])
        nn = 2 * n
        x = T.concat([g, g_bar], axis=0)

    p_a_all, logits_all = decode_atoms(x, src, dst, nn, params, mcfg)
    if cfg.single_mask:
        p_a, p_a_bar, logits, logits_bar = p_a_all, None, logits_all, None
    else:
        p_a, p_a_bar = _split_rows(p_a_all, n)
        logits, logits_bar = _split_rows(logits_all, n)
    m_bar_arg = None if cfg.single_mask else m_bar_rows

    if recon:
        comps["l_A"] = loss_atom(logits, logits_bar, batch.atoms, m_rows, m_bar_arg)
        coords_all = decode_coords(x, src, dst, nn, params, mcfg)
        if cfg.single_mask:
            coords, coords_bar = coords_all, None
        else:
            coords, coords_bar = _split_rows(coords_all, n)
        comps["l_X"] = loss_coord(coords, coords_bar, batch.center_dist, m_rows, m_bar_arg)
        comps["l_L"] = loss_lattice(decode_lattice(h_l, params), batch.six)
    if not cfg.single_mask and not cfg.no_bt:
        comps["l_BT"] = loss_barlow(p_a, p_a_bar, cfg.barlow_lambda, cfg.barlow_centered)
    if not cfg.no_pal:
        die, unit, dis = pal_heads(p_a_all, src, dst, params)
        if cfg.single_mask:
            pairs = [(die, None), (unit, None), (dis, None)]
        else:
            pairs = [_split_rows(die, e), _split_rows(unit, e), _split_rows(dis, e)]
        comps["l_Die"] = loss_direction(*pairs[0], batch.direction)
        comps["l_Unit"] = loss_unitcell(*pairs[1], batch.unit_cell)
        comps["l_Dis"] = loss_distance(*pairs[2], batch.distance)
    return comps


@dataclass
class PretrainResult:
    params: dict[str, Tensor]
    reports: list[LossReport]
    best_epoch: int
    seconds: float


def _param_arrays(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: p.data for k, p in params.items()}


def save_model(path, params: dict[str, Tensor], meta: dict) -> None:
    checkpoint.save(path, _param_arrays(params), meta)


def load_model(path) -> tuple[dict[str, Tensor], dict]:
    arrays, meta = checkpoint.load(path)
    mcfg = ModelConfig.from_dict(meta["model"])
    params = {}
    for k, a in arrays.items():
        trainable_flag = not (k == "mask_token" and mcfg.mask_token_mode == "zero")
        params[k] = Tensor(a, requires_grad=trainable_flag)
    return params, meta


def _save_resume(path, params, opt: AdamState, rng, epoch, best, best_epoch, reports, cfg) -> None:
    arrays = {f"param/{k}": p.data for k, p in params.items()}
    arrays.update({f"adam.m/{k}": v for k, v in opt.m.items()})
    arrays.update({f"adam.v/{k}": v for k, v in opt.v.items()})
    meta = {
        "kind": "pretrain-resume",
        "run": cfg.to_dict(),
        "model": cfg.model_config().to_dict(),
        "epoch": epoch,
        "adam_step": opt.step,
        "rng": rng.bit_generator.state,
        "best_loss": best,
        "best_epoch": best_epoch,
        "reports": [r.as_dict() for r in reports],
    }
    checkpoint.save(path, arrays, meta)


def resume_path_for(out) -> Path:
    return Path(str(out) + ".resume")


def metrics_path_for(out) -> Path:
    return Path(str(out) + ".metrics.csv")


def write_metrics_csv(path, reports: list[LossReport]) -> None:
    lines = ["epoch," + ",".join(LossReport.COLUMNS)]
    for epoch, r in enumerate(reports, 1):
        lines.append(f"{epoch}," + ",".join(repr(float(getattr(r, c))) for c in LossReport.COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def pretrain(
    cfg: RunConfig,
    dataset: Dataset,
    out=None,
    features: list[CrystalFeatures] | None = None,
    resume: bool = False,
    stop_after_epoch: int | None = None,
) -> PretrainResult:
    """Mutex-masked pre-training over ``dataset``'s train split.

    With ``out`` set, the lowest-loss model is written to ``out``, resume
    state to ``out.resume`` and per-epoch losses to ``out.metrics.csv``.
    ``stop_after_epoch`` ends the run early (for resume tests).
    """
    idx = dataset.split.get("train") or list(range(len(dataset)))
    if not idx:
        raise TrainingError("dataset empty")
    mcfg = cfg.model_config()
    if features is None:
        features = featurize_all([dataset.crystals[i] for i in idx], mcfg)
    if len(features) != len(idx):
        raise ValueError("features do not match the training split")

    rng = np.random.default_rng(cfg.seed)
    params = init_params(mcfg, rng)
    opt = AdamState()
    reports: list[LossReport] = []
    best, best_epoch, start_epoch = math.inf, 0, 1
    best_arrays = None

    if resume:
        if out is None:
            raise ValueError("resume requires an output path")
        arrays, meta = checkpoint.load(resume_path_for(out))
        for k, p in params.items():
            p.data = arrays[f"param/{k}"].copy()
        opt.step = meta["adam_step"]
        opt.m = {k[len("adam.m/"):]: v for k, v in arrays.items() if k.startswith("adam.m/")}
        opt.v = {k[len("adam.v/"):]: v for k, v in arrays.items() if k.startswith("adam.v/")}
        rng.bit_generator.state = meta["rng"]
        reports = [LossReport(**r) for r in meta["reports"]]
        best, best_epoch = meta["best_loss"], meta["best_epoch"]
        start_epoch = meta["epoch"] + 1
        if out is not None and Path(out).exists():
            best_arrays = checkpoint.load(out)[0]

    opt_params = trainable(params)
    meta_base = {"kind": "pretrain", "run": cfg.to_dict(), "model": mcfg.to_dict()}
    t0 = time.perf_counter()
    last_epoch = cfg.epochs if stop_after_epoch is None else min(cfg.epochs, stop_after_epoch)
    for epoch in range(start_epoch, last_epoch + 1):
        order = rng.permutation(len(features))
        sums = {c: 0.0 for c in LossReport.COLUMNS if c != "total"}
        n_batches = 0
        for step, chunk in enumerate(_batches(order, cfg.batch_size)):
            feats = [features[i] for i in chunk]
            batch = make_batch(feats, mcfg)
            masks = [sample_mutex_masks(f.crystal.num_atoms, rng) for f in feats]
            for p in opt_params.values():
                p.zero_grad()
            try:
                comps = pretrain_losses(params, cfg, batch, masks)
                loss = total_loss(comps)
                if not isinstance(loss, Tensor) or not loss.requires_grad:
                    raise TrainingError("no active loss terms")
                T.backward(loss)
            except FloatingPointError as exc:
                raise TrainingError(f"NaN/Inf at epoch {epoch} step {step}: {exc}") from None
            if not np.isfinite(loss.item()):
                raise TrainingError(f"NaN loss at epoch {epoch} step {step}")
            adam_step(opt_params, opt, cfg.pretrain_lr)
            for name, value in comps.items():
                sums[name] += float(value.item())
            n_batches += 1
        report = LossReport(**{k: v / n_batches for k, v in sums.items()})
        report.total = float(total_loss(report.as_dict()))
        reports.append(report)
        log.info("epoch %d total %.6f", epoch, report.total)
        if report.total < best:
            best, best_epoch = report.total, epoch
            best_arrays = {k: p.data.copy() for k, p in params.items()}
            if out is not None:
                checkpoint.save(out, best_arrays, {**meta_base, "epoch": epoch, "loss": best})
        if out is not None:
            _save_resume(resume_path_for(out), params, opt, rng, epoch, best, best_epoch, reports, cfg)
            write_metrics_csv(metrics_path_for(out), reports)

    best_params = {k: Tensor(v.copy(), requires_grad=params[k].requires_grad)
                   for k, v in (best_arrays or _param_arrays(params)).items()}
    return PretrainResult(best_params, reports, best_epoch, time.perf_counter() - t0)


# ------------------------------------------------------------------ fine-tuning

@dataclass
class FinetunedModel:
    params: dict[str, Tensor]
    model_config: ModelConfig
    prop: str
    label_mean: float
    label_std: float

    def predict_features(self, feats: list[CrystalFeatures], chunk: int = 64) -> np.ndarray:
        out = []
        with T.no_grad():
            for start in range(0, len(feats), chunk):
                batch = make_batch(feats[start:start + chunk], self.model_config)
                out.append(_forward_property(self.params, self.model_config, batch).data)
        return np.concatenate(out) * self.label_std + self.label_mean

    def predict(self, crystals: list[Crystal]) -> np.ndarray:
        return self.predict_features(featurize_all(list(crystals), self.model_config))

    def save(self, path) -> None:
        meta = {"kind": "finetune", "model": self.model_config.to_dict(), "property": self.prop,
                "label_mean": self.label_mean, "label_std": self.label_std}
        save_model(path, self.params, meta)

    @classmethod
    def load(cls, path) -> FinetunedModel:
        params, meta = load_model(path)
        if meta.get("kind") != "finetune":
            raise checkpoint.CheckpointError("not a fine-tuned checkpoint")
        return cls(params, ModelConfig.from_dict(meta["model"]), meta["property"],
                   meta["label_mean"], meta["label_std"])


def _forward_property(params, mcfg: ModelConfig, batch: Batch) -> Tensor:
    h_s = structure_encode(params, mcfg, batch)
    h_l = lattice_encode(params, batch.six)
    return finetune_head(h_s, h_l, batch, params)


@dataclass
class FinetuneEpoch:
    epoch: int
    train_loss: float
    val_mae: float
    test_mae: float


@dataclass
class FinetuneResult:
    model: FinetunedModel
    history: list[FinetuneEpoch]
    train_indices: list[int]
    best_epoch: int
    seconds: float

    @property
    def best_val_mae(self) -> float:
        return self.history[self.best_epoch - 1].val_mae


def subsample_train(train: list[int], fraction: float, seed: int) -> list[int]:
    """Deterministic ceil(fraction * |train|) subset of the training split."""
    count = math.ceil(fraction * len(train) - 1e-12)
    perm = np.random.default_rng(seed).permutation(len(train))
    return sorted(train[i] for i in perm[:count])


def mae(pred, labels) -> float:
    pred, labels = np.asarray(pred, dtype=np.float64), np.asarray(labels, dtype=np.float64)
    return float(np.mean(np.abs(pred - labels)))


def finetune(
    cfg: RunConfig,
    dataset: Dataset,
    prop: str,
    ckpt=None,
    features: list[CrystalFeatures] | None = None,
) -> FinetuneResult:
    """Train encoder + property head with an L1 loss on standardized labels.

    ``ckpt`` (path or parameter dict) supplies pre-trained encoder weights;
    the head is always freshly initialized.  The returned model holds the
    parameters of the epoch with the lowest validation MAE.
    """
    pre_params, mcfg = None, cfg.model_config()
    if ckpt is not None:
        if isinstance(ckpt, dict):
            pre_params = ckpt
        else:
            pre_params, meta = load_model(ckpt)
            mcfg = ModelConfig.from_dict(meta["model"])
    train_all = dataset.split.get("train", [])
    val, test = dataset.split.get("val", []), dataset.split.get("test", [])
    if not train_all:
        raise TrainingError("empty training split")
    train = subsample_train(train_all, cfg.label_fraction, cfg.seed)
    y_train = dataset.labels(prop, train)
    y_val = dataset.labels(prop, val)
    y_test = dataset.labels(prop, test)
    if features is None:
        features = featurize_all(dataset.crystals, mcfg)

    mu = float(y_train.mean())
    sd = float(y_train.std()) if len(y_train) > 1 and y_train.std() > 1e-12 else 1.0
    rng = np.random.default_rng(cfg.seed)
    params = init_params(mcfg, rng)
    if pre_params is not None:
        for k, p in pre_params.items():
            if k.startswith(ENCODER_PREFIXES):
                params[k].data = p.data.copy()
    enc = trainable(params, ENCODER_PREFIXES)
    head = trainable(params, HEAD_PREFIXES)
    opt_params = {**enc, **head}
    lr = {k: cfg.finetune_encoder_lr for k in enc} | {k: cfg.finetune_head_lr for k in head}
    opt = AdamState()
    model = FinetunedModel(params, mcfg, prop, mu, sd)

    history: list[FinetuneEpoch] = []
    best_val, best_epoch, best_arrays = math.inf, 0, None
    feats_train = [features[i] for i in train]
    y_norm = (y_train - mu) / sd
    t0 = time.perf_counter()
    for epoch in range(1, cfg.finetune_epochs + 1):
        order = rng.permutation(len(train))
        losses = []
        for chunk in _batches(order, cfg.finetune_batch_size):
            batch = make_batch([feats_train[i] for i in chunk], mcfg)
            for p in opt_params.values():
                p.zero_grad()
            pred = _forward_property(params, mcfg, batch)
            loss = T.mean(T.abs_(pred - y_norm[chunk]))
            T.backward(loss)
            adam_step(opt_params, opt, lr, weight_decay=cfg.finetune_weight_decay, decoupled=True)
            losses.append(loss.item())
        val_mae = mae(model.predict_features([features[i] for i in val]), y_val) if val else math.nan
        test_mae = mae(model.predict_features([features[i] for i in test]), y_test) if test else math.nan
        history.append(FinetuneEpoch(epoch, float(np.mean(losses)), val_mae, test_mae))
        score = val_mae if val else float(np.mean(losses))
        if score < best_val:
            best_val, best_epoch = score, epoch
            best_arrays = {k: p.data.copy() for k, p in params.items()}
    for k, a in best_arrays.items():
        params[k].data = a
    return FinetuneResult(model, history, train, best_epoch, time.perf_counter() - t0)


def evaluate(model, dataset: Dataset, split: str, prop: str | None = None) -> float:
    """Mean absolute error of ``model.predict`` over a split."""
    idx = dataset.split.get(split, [])
    if not idx:
        raise ValueError(f"split {split!r} is empty")
    prop = prop or model.prop
    labels = dataset.labels(prop, idx)
    return mae(model.predict([dataset.crystals[i] for i in idx]), labels)
