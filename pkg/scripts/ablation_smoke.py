"""Five-epoch pre-training for the full model and each single-flag ablation."""
import argparse

from mmpt.experiments import ablation_reports, pretrain_corpus
from mmpt.losses import LossReport
from mmpt.train import ABLATION_FLAGS, RunConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=40)
    ap.add_argument("--epochs", type=int, default=5)
    args = ap.parse_args()

    reports = ablation_reports(RunConfig(), pretrain_corpus(args.count), epochs=args.epochs)
    print("variant," + ",".join(LossReport.COLUMNS))
    for name, reps in reports.items():
        label = ABLATION_FLAGS.get(name, "MMPT")
        print(label + "," + ",".join(f"{v:.4f}" for v in reps[-1].as_dict().values()))


if __name__ == "__main__":
    main()
