"""Pre-train on 200 synthetic crystals with the default config and print the loss curve."""
import argparse

from mmpt.experiments import pretrain_corpus
from mmpt.train import RunConfig, pretrain


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=200)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=123)
    ap.add_argument("--out", default="pretrain_demo.ckpt")
    args = ap.parse_args()

    res = pretrain(RunConfig(seed=args.seed, epochs=args.epochs), pretrain_corpus(args.count), out=args.out)
    for epoch, r in enumerate(res.reports, 1):
        print(f"epoch {epoch:3d}  total {r.total:.4f}  l_A {r.l_A:.4f}  l_BT {r.l_BT:.4f}  l_Die {r.l_Die:.4f}")
    first, last = res.reports[0].total, res.reports[-1].total
    print(f"final/first = {last / first:.3f}  best epoch {res.best_epoch}  ({res.seconds:.0f}s)  -> {args.out}")


if __name__ == "__main__":
    main()
