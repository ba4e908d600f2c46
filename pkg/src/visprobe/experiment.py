"""Multi-fold protocol, control/ablation/sweep drivers and human-eval export."""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, dump_config
from .dataset import Dataset, load_dataset, write_dataset
from .errors import ConfigError, ProbeError
from .evaluator import EvalPool, EvalReport, aggregate_folds, fmt_pct, rank_pool, recalls_from_ranks, retrieval_ranks, to_markdown
from .losses import LOSSES
from .probe import ProbeParams, TrainReport, predict, save_checkpoint, train_probe
from .splits import SplitSpec, apply_control_permutation, make_category_splits, make_control_permutation
from .synthgen import generate_synthetic

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ("lambda", "ir_at_1", "ir_at_5", "cr_at_1")


class RunFailed(ProbeError):
    pass


def _derived_seed(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def fold_dataset(dataset: Dataset, cfg: ExperimentConfig, fold: int, control: bool):
    """The data a fold trains and evaluates on: the original or its control view."""
    if not control:
        return dataset, None
    perm = make_control_permutation(dataset.categories, _derived_seed(cfg.seed, fold, 1))
    view = apply_control_permutation(dataset, perm, _derived_seed(cfg.seed, fold, 2))
    return view.dataset, perm


def evaluate_fold(params: ProbeParams, dataset: Dataset, split: SplitSpec, ks) -> tuple[dict, dict]:
    """Recall for unseen and seen test sets plus the adjective breakdown.

    Each test set is its own retrieval pool. Returns ``(metrics, counts)``.
    """
    metrics, counts = {}, {}
    adj_col = dataset.column("adjective_count")
    for group, ids in (("unseen", split.unseen_test_ids), ("seen", split.seen_test_ids)):
        if not ids:
            continue
        idx = dataset.indices(ids)
        pool = EvalPool.from_dataset(dataset, ids)
        usable = [k for k in ks if k <= len(pool)]
        own, cat = retrieval_ranks(predict(params, dataset, idx), ids, pool)
        metrics[group] = recalls_from_ranks(own, cat, usable)
        counts[group] = len(ids)
        has_adj = adj_col[idx] > 0
        for sub, mask in (("adj", has_adj), ("no-adj", ~has_adj)):
            if mask.any():
                metrics[f"{group}/{sub}"] = recalls_from_ranks(own[mask], cat[mask], usable)
                counts[f"{group}/{sub}"] = int(mask.sum())
    return metrics, counts


@dataclass
class FoldResult:
    split: SplitSpec
    params: ProbeParams
    train_report: TrainReport
    metrics: dict
    counts: dict
    permutation: object = None


def run_fold(dataset, cfg: ExperimentConfig, split: SplitSpec, control: bool, train=None) -> FoldResult:
    data, perm = fold_dataset(dataset, cfg, split.fold_index, control)
    train = train or cfg.train
    train = replace(train, seed=train.seed + split.fold_index)
    params, trep = train_probe(data, split, train)
    metrics, counts = evaluate_fold(params, data, split, cfg.ks)
    return FoldResult(split, params, trep, metrics, counts, perm)


def resolve_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.synth is not None:
        return generate_synthetic(cfg.synth)
    return load_dataset(cfg.dataset)


def make_splits(dataset, cfg: ExperimentConfig):
    return make_category_splits(dataset, cfg.folds, cfg.n_unseen, cfg.seed, cfg.test_sizes)


def run_protocol(dataset: Dataset, cfg: ExperimentConfig, control=None, splits=None, train=None, name=None):
    """Train and evaluate every fold in memory. Returns ``(report, fold_results)``.

    Any fold error propagates; :func:`run_experiment` adds per-fold bookkeeping.
    """
    control = cfg.control if control is None else control
    splits = splits if splits is not None else make_splits(dataset, cfg)
    results = [run_fold(dataset, cfg, sp, control, train) for sp in splits]
    report = aggregate_folds([r.metrics for r in results], cfg.ks, name or cfg.name, [r.counts for r in results])
    return report, results


@dataclass
class RunManifest:
    config_digest: str
    toolkit_version: str
    started: str
    finished: str = ""
    folds: list[dict] = field(default_factory=list)
    reports: dict = field(default_factory=dict)
    failed: bool = False

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=1, sort_keys=True) + "\n"


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def run_experiment(cfg: ExperimentConfig, control=None):
    """Full protocol with artifacts on disk.

    Writes ``config.yaml``, per-fold ``fold_<i>/{split.json, probe.ckpt,
    train.json[, control.json]}``, ``report.json``, ``report.md`` and
    ``manifest.json`` under ``cfg.output_dir``. Returns ``(manifest, report)``;
    raises :class:`RunFailed` (after writing the manifest) if any fold failed.
    """
    cfg.validate()
    control = cfg.control if control is None else control
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg.digest(), __version__, _now())
    (out / "config.yaml").write_text(dump_config(cfg))

    dataset = resolve_dataset(cfg)
    if cfg.synth is not None:
        write_dataset(dataset, out / "dataset")
    splits = make_splits(dataset, cfg)

    results = []
    for sp in splits:
        fdir = out / f"fold_{sp.fold_index}"
        fdir.mkdir(exist_ok=True)
        entry = {"fold": sp.fold_index, "split": str(fdir / "split.json")}
        sp.save(fdir / "split.json")
        try:
            res = run_fold(dataset, cfg, sp, control)
        except ProbeError as e:
            log.error("fold %d failed: %s", sp.fold_index, e)
            entry["error"] = f"{type(e).__name__}: {e}"
            manifest.failed = True
            manifest.folds.append(entry)
            continue
        save_checkpoint(res.params, fdir / "probe.ckpt", cfg.train.digest())
        (fdir / "train.json").write_text(json.dumps(res.train_report.to_dict(), indent=1, sort_keys=True) + "\n")
        entry.update(checkpoint=str(fdir / "probe.ckpt"), train_report=str(fdir / "train.json"))
        if res.permutation is not None:
            (fdir / "control.json").write_text(json.dumps(res.permutation.to_dict()) + "\n")
            entry["control"] = str(fdir / "control.json")
        manifest.folds.append(entry)
        results.append(res)

    report = None
    if not manifest.failed:
        name = cfg.name + (" (control)" if control else "")
        report = aggregate_folds([r.metrics for r in results], cfg.ks, name, [r.counts for r in results])
        (out / "report.json").write_text(report.to_json(), encoding="utf-8")
        (out / "report.md").write_text(to_markdown([report]), encoding="utf-8")
        manifest.reports = {"json": str(out / "report.json"), "markdown": str(out / "report.md")}
    manifest.finished = _now()
    (out / "manifest.json").write_text(manifest.to_json())
    if manifest.failed:
        raise RunFailed(f"{sum('error' in f for f in manifest.folds)} fold(s) failed; see {out / 'manifest.json'}")
    return manifest, report


def control_contrast(cfg: ExperimentConfig, dataset=None):
    """Probe and control on identical fold splits. Returns ``[probe, control]`` reports."""
    dataset = dataset if dataset is not None else resolve_dataset(cfg)
    splits = make_splits(dataset, cfg)
    probe, _ = run_protocol(dataset, cfg, control=False, splits=splits, name=cfg.name)
    ctrl, _ = run_protocol(dataset, cfg, control=True, splits=splits, name="Control")
    return [probe, ctrl]


def ablate_losses(cfg: ExperimentConfig, dataset=None, loss_names=LOSSES):
    """One report per training objective, all on the same folds."""
    dataset = dataset if dataset is not None else resolve_dataset(cfg)
    splits = make_splits(dataset, cfg)
    return {
        name: run_protocol(dataset, cfg, splits=splits, train=replace(cfg.train, loss=name), name=name)[0]
        for name in loss_names
    }


def sweep_context_visibility(cfg: ExperimentConfig, grid=None, files=None):
    """Unseen-category recall as a function of context visibility.

    With ``cfg.synth`` each grid value regenerates the benchmark at that
    visibility (all other draws unchanged). With ``files`` each dataset
    directory must carry ``context_visibility`` in its header. Returns rows
    ``{"lambda", "ir_at_1", "ir_at_5", "cr_at_1", "report"}`` in input order.
    """
    points = []
    if files:
        for f in files:
            ds = load_dataset(f)
            if ds.header.context_visibility is None:
                raise ConfigError(f"{f}: header has no context_visibility tag")
            points.append((ds.header.context_visibility, ds))
    elif cfg.synth is not None:
        for lam in grid if grid is not None else (0.0, 0.25, 0.5, 0.75, 1.0):
            points.append((float(lam), generate_synthetic(cfg.synth.replace(context_visibility=float(lam)))))
    else:
        raise ConfigError("sweep needs a synth spec or a list of tagged feature files")
    ks = sorted(set(cfg.ks) | {1, 5})
    run_cfg = replace(cfg, ks=ks)
    rows = []
    for lam, ds in points:
        report, _ = run_protocol(ds, run_cfg, name=f"lambda={lam:g}")
        agg = report.aggregate()["unseen"]
        rows.append({"lambda": lam, "ir_at_1": agg["IR@1"][0], "ir_at_5": agg["IR@5"][0],
                     "cr_at_1": agg["CR@1"][0], "report": report})
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([f"{r['lambda']:g}"] + [f"{r[c]:.6f}" for c in SWEEP_COLUMNS[1:]])
    return buf.getvalue()


def emit_report(reports, style="markdown", group="unseen") -> str:
    """Render reports as markdown, CSV (one row per experiment/group/metric) or JSON."""
    reports = [reports] if isinstance(reports, EvalReport) else list(reports)
    if style == "markdown":
        return to_markdown(reports, group=group)
    if style == "json":
        return json.dumps([r.to_dict() for r in reports], indent=1, sort_keys=True, ensure_ascii=False) + "\n"
    if style == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["experiment", "group", "metric", "mean", "std", "text"])
        for r in reports:
            for g, ms in r.aggregate().items():
                for m, (mean, std) in ms.items():
                    w.writerow([r.name, g, m, f"{mean:.6f}", f"{std:.6f}", fmt_pct(mean, std)])
        return buf.getvalue()
    raise ConfigError(f"unknown report style {style!r}")


def export_human_eval(dataset: Dataset, split: SplitSpec, params: ProbeParams | None,
                      sample_size=100, candidate_count=100, seed=0):
    """Build an annotation task from the unseen test set.

    Returns ``(items, key)``. ``items`` is what annotators see: per item the
    query's category and caption ids and ``candidate_count`` shuffled visual
    record ids. ``key`` holds the true record id per item and, when a probe
    is given, the probe's own top-1 among the same candidates.
    """
    pool_ids = np.asarray(split.unseen_test_ids, dtype=np.int64)
    if not 1 <= sample_size <= len(pool_ids):
        raise ConfigError(f"sample_size {sample_size} must be in [1, {len(pool_ids)}] (unseen test size)")
    if not 1 <= candidate_count <= len(pool_ids):
        raise ConfigError(f"candidate_count {candidate_count} must be in [1, {len(pool_ids)}] (pool size)")
    rng = np.random.default_rng(seed)
    queries = rng.choice(pool_ids, sample_size, replace=False)
    items, answers, model = [], {}, {}
    for n, q in enumerate(queries.tolist()):
        others = pool_ids[pool_ids != q]
        cands = np.concatenate([[q], rng.choice(others, candidate_count - 1, replace=False)])
        cands = rng.permutation(cands)
        rec = dataset.records[int(dataset.indices([q])[0])]
        item_id = f"item{n:04d}"
        items.append({
            "item_id": item_id,
            "category_id": rec.category_id,
            "caption_id": rec.caption_id,
            "token_count": rec.token_count,
            "candidates": [int(c) for c in cands],
        })
        answers[item_id] = int(q)
        if params is not None:
            sub = EvalPool.from_dataset(dataset, cands)
            v_hat = predict(params, dataset, dataset.indices([q]))[0]
            model[item_id] = int(rank_pool(v_hat, sub, 1)[0])
    view = {"format": "visprobe-human-eval", "version": 1, "seed": seed, "items": items}
    key = {"format": "visprobe-human-eval-key", "version": 1, "answers": answers}
    if params is not None:
        key["model_choices"] = model
    return view, key


def score_human_eval(key: dict, sheets) -> dict:
    """Instance recall@1 of filled-in response sheets against the answer key.

    A sheet is ``{"annotator": name, "choices": {item_id: record_id}}``.
    Items a sheet leaves out are not counted.
    """
    answers = key["answers"]
    per_sheet, hits, total = {}, 0, 0
    for i, sheet in enumerate(sheets):
        name = sheet.get("annotator", f"sheet{i}")
        h = n = 0
        for item, choice in sheet.get("choices", {}).items():
            if item not in answers:
                raise ConfigError(f"sheet {name}: unknown item {item}")
            n += 1
            h += int(int(choice) == answers[item])
        per_sheet[name] = {"n": n, "ir_at_1": h / n if n else float("nan")}
        hits += h
        total += n
    out = {"n_annotations": total, "ir_at_1": hits / total if total else float("nan"), "per_sheet": per_sheet}
    if "model_choices" in key:
        mc = key["model_choices"]
        out["model_ir_at_1"] = sum(int(mc[k] == v) for k, v in answers.items()) / len(answers)
    return out
