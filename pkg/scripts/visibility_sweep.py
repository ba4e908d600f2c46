#!/usr/bin/env python3
"""Unseen-category recall against context visibility on the synthetic benchmark.

Writes a CSV (lambda, ir_at_1, ir_at_5, cr_at_1) and, if matplotlib is
available, a small plot next to it.
"""

import argparse
from pathlib import Path

from visprobe.config import standard_benchmark
from visprobe.experiment import sweep_context_visibility, sweep_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--grid", default="0,0.25,0.5,0.75,1")
    ap.add_argument("--out", default="runs/visibility_sweep.csv")
    args = ap.parse_args()

    grid = [float(x) for x in args.grid.split(",")]
    rows = sweep_context_visibility(standard_benchmark(args.seed), grid=grid)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(sweep_csv(rows))
    print(sweep_csv(rows), end="")

    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return
    fig, ax = plt.subplots(figsize=(4, 3))
    lam = [r["lambda"] for r in rows]
    for key, label in (("ir_at_1", "IR@1"), ("ir_at_5", "IR@5"), ("cr_at_1", "CR@1")):
        ax.plot(lam, [100 * r[key] for r in rows], marker="o", label=label)
    ax.set_xlabel("context visibility")
    ax.set_ylabel("unseen recall (%)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out.with_suffix(".png"), dpi=120)


if __name__ == "__main__":
    main()
