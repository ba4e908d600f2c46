#!/usr/bin/env python3
"""Train the probe with each objective on the same folds and tabulate unseen recall."""

import argparse
from pathlib import Path

from visprobe.config import standard_benchmark
from visprobe.experiment import ablate_losses, emit_report
from visprobe.losses import LOSSES


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--losses", default=",".join(LOSSES))
    ap.add_argument("--out", default="runs/loss_ablation.md")
    args = ap.parse_args()

    reports = ablate_losses(standard_benchmark(args.seed), loss_names=args.losses.split(","))
    # weakest first, so the table reads bottom-up to the best objective
    order = sorted(reports.values(), key=lambda r: r.aggregate()["unseen"]["IR@5"][0])
    text = emit_report(order)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(text)
    print(text, end="")


if __name__ == "__main__":
    main()
