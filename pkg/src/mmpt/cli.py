"""Command-line interface: ``mmpt <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 check-suite failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from mmpt.checkpoint import CheckpointError
from mmpt.crystal import PROPERTY_NAMES, parse_record, save_dataset
from mmpt.errors import DataError
from mmpt.graph import DEFAULT_CUTOFF, DEFAULT_MAX_NEIGHBORS, build_graph
from mmpt.lattice import NiggliDivergenceError, niggli_reduce

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def read_crystals(path) -> list:
    """Records from a JSON object file or newline-delimited JSON."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.strip()
    if not stripped:
        raise DataError(f"{path}: no records")
    try:
        obj = json.loads(stripped)
    except json.JSONDecodeError:
        obj = None
    if isinstance(obj, dict):
        return [parse_record(stripped)]
    lines = [ln for ln in text.splitlines() if ln.strip()]
    out = []
    for lineno, line in enumerate(lines, 1):
        try:
            out.append(parse_record(line))
        except DataError as exc:
            raise type(exc)(f"{path}:{lineno}: {exc}") from None
    return out


def _single_crystal(path):
    records = read_crystals(path)
    if len(records) != 1:
        raise DataError(f"{path}: expected exactly one crystal record, found {len(records)}")
    return records[0][0]


def cmd_gen(args) -> int:
    from mmpt.synthetic import FAMILIES, SyntheticParams, generate_dataset

    if args.family not in FAMILIES + ("mixed",):
        raise UsageError(f"unknown family {args.family!r}; choose from {FAMILIES + ('mixed',)}")
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    species = tuple(s.strip() for s in args.species.split(",")) if args.species else None
    params = SyntheticParams(edge=args.edge, species=species, perturbation=args.perturb)
    try:
        if args.family != "mixed":
            params.validate(args.family)
    except (ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from None
    ds = generate_dataset(args.family, args.count, args.seed, params, prop=args.property)
    save_dataset(args.out, ds)
    return EXIT_OK


def cmd_niggli(args) -> int:
    for crystal, _ in read_crystals(args.inp):
        _, six = niggli_reduce(crystal.lattice)
        print(" ".join(f"{v:.9f}" for v in six.as_array()))
    return EXIT_OK


def cmd_graph(args) -> int:
    if args.cutoff <= 0 or args.max_neighbors < 1:
        raise UsageError("--cutoff must be > 0 and --max-neighbors >= 1")
    graph = build_graph(_single_crystal(args.inp), args.cutoff, args.max_neighbors)
    Path(args.out).write_text(graph.to_json() + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_labels(args) -> int:
    from mmpt.attributes import label_edges

    crystal = _single_crystal(args.inp)
    graph = build_graph(crystal, args.cutoff, args.max_neighbors)
    Path(args.out).write_text(label_edges(crystal, graph).to_csv(graph), encoding="utf-8")
    return EXIT_OK


def _run_config(path, overrides: dict):
    from mmpt.train import RunConfig

    try:
        cfg = RunConfig.from_json(path) if path else RunConfig()
        return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from None


def _load_data(path):
    from mmpt.crystal import load_dataset

    return load_dataset(path)


def cmd_pretrain(args) -> int:
    from mmpt.train import ABLATION_FLAGS, metrics_path_for, pretrain

    flags = {f: True for f in ABLATION_FLAGS if getattr(args, f)}
    cfg = _run_config(args.config, {"epochs": args.epochs, "seed": args.seed, **flags})
    ds = _load_data(args.data)
    result = pretrain(cfg, ds, out=args.out, resume=args.resume)
    last = result.reports[-1]
    print(f"epochs {len(result.reports)}  best epoch {result.best_epoch}  final total {last.total:.6f}  "
          f"({result.seconds:.1f}s)")
    print(f"checkpoint {args.out}  metrics {metrics_path_for(args.out)}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    from mmpt.train import finetune

    cfg = _run_config(args.config, {"label_fraction": args.label_fraction, "seed": args.seed,
                                    "finetune_epochs": args.epochs})
    ds = _load_data(args.data)
    result = finetune(cfg, ds, args.property, ckpt=args.ckpt)
    result.model.save(args.out)
    print("epoch,train_loss,val_mae,test_mae")
    for h in result.history:
        print(f"{h.epoch},{h.train_loss:.6f},{h.val_mae:.6f},{h.test_mae:.6f}")
    print(f"best epoch {result.best_epoch}  labels {len(result.train_indices)}  "
          f"val MAE {result.best_val_mae:.6f}  ({result.seconds:.1f}s)")
    return EXIT_OK


def cmd_eval(args) -> int:
    from mmpt.train import FinetunedModel, evaluate

    model = FinetunedModel.load(args.ckpt)
    ds = _load_data(args.data)
    if not ds.split.get(args.split):
        raise DataError(f"split {args.split!r} is empty")
    print(f"{args.split} MAE {evaluate(model, ds, args.split):.6f}")
    return EXIT_OK


def cmd_check(args) -> int:
    from mmpt.checks import run_suite

    report = run_suite(args.suite, seed=args.seed)
    print("\n".join(report.lines()))
    if not report.passed:
        print("counterexample: " + json.dumps(report.counterexample, default=str))
        return EXIT_CHECK
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    from mmpt.checks import SUITES
    from mmpt.train import ABLATION_FLAGS

    p = _Parser(prog="mmpt", description="Mutex-masked pre-training for periodic crystals")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--family", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--species", help="comma-separated element symbols")
    g.add_argument("--perturb", type=float, default=0.0)
    g.add_argument("--edge", type=float)
    g.add_argument("--property", choices=PROPERTY_NAMES)
    g.set_defaults(func=cmd_gen)

    n = sub.add_parser("niggli", help="print Niggli six-parameters")
    n.add_argument("--in", dest="inp", required=True)
    n.set_defaults(func=cmd_niggli)

    for name, func, help_ in (("graph", cmd_graph, "write the periodic multi-graph as JSON"),
                              ("labels", cmd_labels, "write per-edge attribute labels as CSV")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--in", dest="inp", required=True)
        s.add_argument("--cutoff", type=float, default=DEFAULT_CUTOFF)
        s.add_argument("--max-neighbors", type=int, default=DEFAULT_MAX_NEIGHBORS)
        s.add_argument("--out", required=True)
        s.set_defaults(func=func)

    pt = sub.add_parser("pretrain", help="self-supervised pre-training")
    pt.add_argument("--data", required=True)
    pt.add_argument("--config")
    pt.add_argument("--out", required=True)
    pt.add_argument("--epochs", type=int)
    pt.add_argument("--seed", type=int)
    pt.add_argument("--resume", action="store_true", help="continue from OUT.resume")
    for flag in ABLATION_FLAGS:
        pt.add_argument("--" + flag.replace("_", "-"), dest=flag, action="store_true")
    pt.set_defaults(func=cmd_pretrain)

    ft = sub.add_parser("finetune", help="fine-tune on a property")
    ft.add_argument("--data", required=True)
    ft.add_argument("--property", required=True, choices=PROPERTY_NAMES)
    ft.add_argument("--ckpt")
    ft.add_argument("--label-fraction", type=float)
    ft.add_argument("--config")
    ft.add_argument("--epochs", type=int)
    ft.add_argument("--seed", type=int)
    ft.add_argument("--out", required=True)
    ft.set_defaults(func=cmd_finetune)

    ev = sub.add_parser("eval", help="MAE of a fine-tuned checkpoint")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", default="test", choices=("train", "val", "test"))
    ev.set_defaults(func=cmd_eval)

    ck = sub.add_parser("check", help="run a property suite")
    ck.add_argument("--suite", required=True, choices=SUITES)
    ck.add_argument("--seed", type=int, default=0)
    ck.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    from mmpt.train import TrainingError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mmpt: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, NiggliDivergenceError, TrainingError, OSError) as exc:
        print(f"mmpt: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
