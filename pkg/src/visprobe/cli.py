"""Command line entry point: ``visprobe <subcommand> ...``.

Every experiment subcommand builds an :class:`ExperimentConfig` from
``--config FILE`` (or the synthetic benchmark with ``--synth``, or defaults)
and then applies any explicit flags on top. Exit status is 0 on success,
1 when the toolkit reports an error or validation finds problems, and 2 on
bad usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import ExperimentConfig, dump_config, load_config, standard_benchmark
from .dataset import load_dataset, validate_dataset
from .errors import ProbeError
from .evaluator import EvalReport, aggregate_folds
from .experiment import (
    ablate_losses,
    control_contrast,
    emit_report,
    evaluate_fold,
    export_human_eval,
    fold_dataset,
    make_splits,
    resolve_dataset,
    run_experiment,
    score_human_eval,
    sweep_context_visibility,
    sweep_csv,
)
from .losses import LOSSES
from .probe import PRECISIONS, load_checkpoint, save_checkpoint, train_probe
from .splits import SplitSpec
from .synthgen import SynthSpec, write_synthetic

log = logging.getLogger("visprobe")


def _ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _add_config_flags(p):
    g = p.add_argument_group("experiment configuration")
    g.add_argument("--config", help="YAML experiment config")
    g.add_argument("--synth", action="store_true", help="use the seeded synthetic benchmark as the dataset")
    g.add_argument("--synth-seed", type=int, help="generator seed for --synth")
    g.add_argument("--lambda", dest="visibility", type=float, help="context visibility for --synth")
    g.add_argument("--dataset", help="dataset directory")
    g.add_argument("--folds", type=int)
    g.add_argument("--n-unseen", type=int)
    g.add_argument("--seen-test", type=int)
    g.add_argument("--unseen-test", type=int)
    g.add_argument("--total-test", type=int)
    g.add_argument("--ks", type=_ints, help="comma-separated, e.g. 1,5,10")
    g.add_argument("--control", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--output-dir")
    g.add_argument("--seed", type=int)
    g.add_argument("--name")
    t = p.add_argument_group("training")
    t.add_argument("--batch-size", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--weight-decay", type=float)
    t.add_argument("--loss", choices=LOSSES)
    t.add_argument("--hidden", type=int)
    t.add_argument("--precision", choices=sorted(PRECISIONS))
    t.add_argument("--train-seed", type=int)


def build_config(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    elif args.synth or not args.dataset:
        cfg = standard_benchmark()
    else:
        cfg = ExperimentConfig()
    if args.dataset:
        cfg = replace(cfg, dataset=args.dataset, synth=None)
    elif args.synth and cfg.synth is None:
        cfg = replace(cfg, synth=SynthSpec(), dataset=None)
    if cfg.synth is not None:
        kw = {}
        if args.synth_seed is not None:
            kw["seed"] = args.synth_seed
        if args.visibility is not None:
            kw["context_visibility"] = args.visibility
        cfg = replace(cfg, synth=cfg.synth.replace(**kw))
    for name in ("folds", "n_unseen", "ks", "control", "output_dir", "seed", "name"):
        val = getattr(args, name)
        if val is not None:
            cfg = replace(cfg, **{name: val})
    sizes = {k: getattr(args, k) for k in ("seen_test", "unseen_test", "total_test") if getattr(args, k) is not None}
    if sizes:
        cfg = replace(cfg, test_sizes=replace(cfg.test_sizes, **sizes))
    train = {k: getattr(args, k) for k in ("batch_size", "epochs", "lr", "weight_decay", "loss", "hidden", "precision")
             if getattr(args, k) is not None}
    if args.train_seed is not None:
        train["seed"] = args.train_seed
    if train:
        cfg = replace(cfg, train=replace(cfg.train, **train))
    return cfg.validate()


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _out_dir(cfg):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_ingest_validate(args):
    ds = load_dataset(args.path, strict=False)
    cats = _ints(args.categories) if args.categories else None
    problems = validate_dataset(ds, cats)
    for v in problems:
        print(f"{v.kind}: {v.message}")
    h = ds.header
    print(f"{args.path}: {h.record_count} records, {len(ds.categories)} categories, d_L={h.d_L}, d_V={h.d_V}, "
          f"{len(problems)} problem(s)")
    return 1 if problems else 0


def cmd_synth(args):
    kw = {k: getattr(args, k) for k in ("n_categories", "instances_per_category", "noise", "adjective_fraction", "seed")
          if getattr(args, k) is not None}
    if args.visibility is not None:
        kw["context_visibility"] = args.visibility
    ds = write_synthetic(SynthSpec(**kw), args.out)
    print(f"wrote {len(ds)} records to {args.out}")
    return 0


def cmd_split(args):
    cfg = build_config(args)
    out = _out_dir(cfg)
    for sp in make_splits(resolve_dataset(cfg), cfg):
        p = out / f"fold_{sp.fold_index}" / "split.json"
        p.parent.mkdir(exist_ok=True)
        sp.save(p)
        print(f"fold {sp.fold_index}: train {len(sp.train_ids)}, val {len(sp.val_ids)}, seen test "
              f"{len(sp.seen_test_ids)}, unseen test {len(sp.unseen_test_ids)}, dropped {len(sp.dropped_ids)} -> {p}")
    return 0


def cmd_train(args):
    cfg = build_config(args)
    split = SplitSpec.load(args.split)
    data, _ = fold_dataset(resolve_dataset(cfg), cfg, split.fold_index, cfg.control)
    params, rep = train_probe(data, split, cfg.train)
    save_checkpoint(params, args.out, cfg.train.digest())
    _write(Path(args.out).with_suffix(".train.json"), json.dumps(rep.to_dict(), indent=1, sort_keys=True) + "\n")
    print(f"trained {rep.steps} steps, final loss {rep.epoch_loss[-1]:.4f}, checkpoint {args.out}")
    return 0


def cmd_eval(args):
    cfg = build_config(args)
    split = SplitSpec.load(args.split)
    params, _ = load_checkpoint(args.checkpoint)
    data, _ = fold_dataset(resolve_dataset(cfg), cfg, split.fold_index, cfg.control)
    metrics, counts = evaluate_fold(params, data, split, cfg.ks)
    report = aggregate_folds([metrics], cfg.ks, cfg.name, [counts])
    if args.out:
        _write(args.out, report.to_json())
    print(emit_report(report), end="")
    return 0


def cmd_run(args):
    cfg = build_config(args)
    manifest, report = run_experiment(cfg)
    print(emit_report(report), end="")
    print(f"artifacts in {cfg.output_dir}")
    return 0


def _emit_many(reports, out, stem):
    _write(out / f"{stem}.json", emit_report(reports, "json"))
    text = emit_report(reports, "markdown")
    _write(out / f"{stem}.md", text)
    print(text, end="")


def cmd_control(args):
    cfg = build_config(args)
    out = _out_dir(cfg)
    _write(out / "config.yaml", dump_config(cfg))
    _emit_many(control_contrast(cfg), out, "control_report")
    return 0


def cmd_ablate_loss(args):
    cfg = build_config(args)
    out = _out_dir(cfg)
    _write(out / "config.yaml", dump_config(cfg))
    names = args.losses.split(",") if args.losses else LOSSES
    _emit_many(list(ablate_losses(cfg, loss_names=names).values()), out, "ablation_report")
    return 0


def cmd_sweep(args):
    cfg = build_config(args) if not args.files else build_config_for_files(args)
    rows = sweep_context_visibility(cfg, grid=args.grid, files=args.files)
    text = sweep_csv(rows)
    path = Path(args.out) if args.out else _out_dir(cfg) / "visibility_sweep.csv"
    _write(path, text)
    print(text, end="")
    return 0


def build_config_for_files(args):
    # each file brings its own data; the rest of the config still applies
    args.dataset = args.files[0]
    return build_config(args)


def cmd_export_human_eval(args):
    cfg = build_config(args)
    split = SplitSpec.load(args.split)
    params = load_checkpoint(args.checkpoint)[0] if args.checkpoint else None
    ds = resolve_dataset(cfg)
    view, key = export_human_eval(ds, split, params, args.sample_size, args.candidate_count, args.sample_seed)
    out = Path(args.out)
    _write(out / "items.json", json.dumps(view, indent=1) + "\n")
    _write(out / "key.json", json.dumps(key, indent=1, sort_keys=True) + "\n")
    print(f"{len(view['items'])} items x {args.candidate_count} candidates -> {out}")
    return 0


def cmd_score_human_eval(args):
    key = json.loads(Path(args.key).read_text())
    sheets = [json.loads(Path(s).read_text()) for s in args.sheets]
    print(json.dumps(score_human_eval(key, sheets), indent=1, sort_keys=True))
    return 0


def cmd_report(args):
    reports = []
    for p in args.reports:
        d = json.loads(Path(p).read_text(encoding="utf-8"))
        reports.extend(EvalReport.from_dict(x) for x in (d if isinstance(d, list) else [d]))
    text = emit_report(reports, args.style, args.group)
    if args.out:
        _write(args.out, text)
    print(text, end="")
    return 0


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="visprobe", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest-validate", help="load a dataset directory and list integrity problems")
    p.add_argument("path")
    p.add_argument("--categories", help="comma-separated category ids that must all be populated")
    p.set_defaults(func=cmd_ingest_validate)

    p = sub.add_parser("synth", help="write a synthetic benchmark dataset")
    p.add_argument("out")
    p.add_argument("--seed", type=int)
    p.add_argument("--lambda", dest="visibility", type=float)
    p.add_argument("--n-categories", type=int)
    p.add_argument("--instances-per-category", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--adjective-fraction", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="write per-fold category splits")
    _add_config_flags(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train one probe on a saved split")
    _add_config_flags(p)
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a saved split")
    _add_config_flags(p)
    p.add_argument("--split", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="write the report JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="full multi-fold protocol with artifacts")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("control", help="probe vs control task on shared folds")
    _add_config_flags(p)
    p.set_defaults(func=cmd_control)

    p = sub.add_parser("ablate-loss", help="compare training objectives on shared folds")
    _add_config_flags(p)
    p.add_argument("--losses", help=f"comma-separated subset of {','.join(LOSSES)}")
    p.set_defaults(func=cmd_ablate_loss)

    p = sub.add_parser("sweep-visibility", help="recall as a function of context visibility")
    _add_config_flags(p)
    p.add_argument("--grid", type=_floats, help="comma-separated visibility values (synthetic data)")
    p.add_argument("--files", nargs="+", help="dataset directories tagged with context_visibility")
    p.add_argument("--out", help="CSV path (default: <output-dir>/visibility_sweep.csv)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-human-eval", help="write an annotation task and its answer key")
    _add_config_flags(p)
    p.add_argument("--split", required=True)
    p.add_argument("--checkpoint", help="also record the probe's own choices in the key")
    p.add_argument("--sample-size", type=int, default=100)
    p.add_argument("--candidate-count", type=int, default=100)
    p.add_argument("--sample-seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_export_human_eval)

    p = sub.add_parser("score-human-eval", help="human IR@1 from filled-in response sheets")
    p.add_argument("--key", required=True)
    p.add_argument("sheets", nargs="+")
    p.set_defaults(func=cmd_score_human_eval)

    p = sub.add_parser("report", help="render saved report JSON as markdown, CSV or JSON")
    p.add_argument("reports", nargs="+")
    p.add_argument("--style", choices=("markdown", "csv", "json"), default="markdown")
    p.add_argument("--group", default="unseen")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ProbeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
