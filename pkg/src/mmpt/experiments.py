"""Desk-scale experiments: label-fraction sweep and ablation smoke runs."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from mmpt.crystal import Dataset
from mmpt.losses import LossReport
from mmpt.synthetic import SyntheticParams, generate_dataset
from mmpt.train import ABLATION_FLAGS, RunConfig, featurize_all, finetune, pretrain

FRACTIONS = (0.1, 0.5, 1.0)


def pretrain_corpus(count: int = 200, seed: int = 7, perturbation: float = 0.05) -> Dataset:
    """Unlabeled mixed-family corpus with every crystal in the training split."""
    return generate_dataset("mixed", count, seed, SyntheticParams(perturbation=perturbation),
                            split_fractions=(1.0, 0.0, 0.0))


def labeled_corpus(prop: str = "mean_nn_distance", n_train: int = 32, n_val: int = 32,
                   n_test: int = 32, seed: int = 1001, perturbation: float = 0.05) -> Dataset:
    total = n_train + n_val + n_test
    ds = generate_dataset("mixed", total, seed, SyntheticParams(perturbation=perturbation), prop=prop)
    perm = np.random.default_rng(seed).permutation(total).tolist()
    ds.split = {"train": sorted(perm[:n_train]), "val": sorted(perm[n_train:n_train + n_val]),
                "test": sorted(perm[n_train + n_val:])}
    return ds


@dataclass
class SweepRow:
    seed: int
    fraction: float
    n_labels: int
    mae_pretrained: float
    mae_scratch: float
    gap_se: float  # standard error of the paired per-crystal error difference

    @property
    def gap(self) -> float:
        """Scratch minus pre-trained validation MAE; positive favours pre-training."""
        return self.mae_scratch - self.mae_pretrained


def label_fraction_sweep(
    cfg: RunConfig,
    pretrained: dict,
    labeled: Dataset,
    prop: str,
    seeds=(0, 1, 2, 3, 4),
    fractions=FRACTIONS,
) -> list[SweepRow]:
    """Best validation MAE of pre-trained vs from-scratch fine-tuning per (seed, fraction)."""
    feats = featurize_all(labeled.crystals, cfg.model_config())
    val = labeled.split["val"]
    val_feats, y_val = [feats[i] for i in val], labeled.labels(prop, val)
    rows = []
    for seed in seeds:
        for frac in fractions:
            run = replace(cfg, seed=seed, label_fraction=frac)
            pre = finetune(run, labeled, prop, ckpt=pretrained, features=feats)
            scratch = finetune(run, labeled, prop, ckpt=None, features=feats)
            diff = np.abs(scratch.model.predict_features(val_feats) - y_val) - np.abs(
                pre.model.predict_features(val_feats) - y_val)
            se = float(diff.std(ddof=1) / np.sqrt(len(diff))) if len(diff) > 1 else 0.0
            rows.append(SweepRow(seed, frac, len(pre.train_indices), pre.best_val_mae,
                                 scratch.best_val_mae, se))
    return rows


def pretrained_wins(rows: list[SweepRow], fraction: float = 1.0) -> int:
    """Seeds at ``fraction`` where pre-training matches or beats scratch."""
    return sum(r.mae_pretrained <= r.mae_scratch for r in rows if r.fraction == fraction)


def gap_trend_holds(rows: list[SweepRow], seed: int) -> bool:
    """Gap does not grow with the label fraction beyond one combined standard error."""
    seq = sorted((r for r in rows if r.seed == seed), key=lambda r: r.fraction)
    return all(b.gap <= a.gap + float(np.hypot(a.gap_se, b.gap_se)) for a, b in zip(seq, seq[1:]))


def ablation_reports(cfg: RunConfig, dataset: Dataset, epochs: int = 5) -> dict[str, list[LossReport]]:
    """Loss reports for the full model and each single-flag ablation."""
    base = replace(cfg, epochs=epochs)
    out = {"full": pretrain(base, dataset).reports}
    for flag in ABLATION_FLAGS:
        out[flag] = pretrain(replace(base, **{flag: True}), dataset).reports
    return out
