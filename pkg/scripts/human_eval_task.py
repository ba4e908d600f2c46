#!/usr/bin/env python3
"""Build a human-evaluation task from fold 0 of the synthetic benchmark.

Trains the fold-0 probe, then writes items.json (for annotators) and
key.json (answers plus the probe's own choices). Score returned sheets with
``visprobe score-human-eval --key key.json sheet1.json ...``.
"""

import argparse
import json
from pathlib import Path

from visprobe.config import standard_benchmark
from visprobe.experiment import export_human_eval, make_splits, resolve_dataset, run_fold


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--sample-size", type=int, default=100)
    ap.add_argument("--candidates", type=int, default=100)
    ap.add_argument("--out", default="runs/human_eval")
    args = ap.parse_args()

    cfg = standard_benchmark(args.seed)
    ds = resolve_dataset(cfg)
    split = make_splits(ds, cfg)[0]
    params = run_fold(ds, cfg, split, control=False).params
    view, key = export_human_eval(ds, split, params, args.sample_size, args.candidates, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "items.json").write_text(json.dumps(view, indent=1) + "\n")
    (out / "key.json").write_text(json.dumps(key, indent=1, sort_keys=True) + "\n")
    hits = sum(key["model_choices"][i] == a for i, a in key["answers"].items())
    print(f"{len(view['items'])} items -> {out}; probe picks the true patch on {hits}")


if __name__ == "__main__":
    main()
