"""Dot-product retrieval, instance/category recall@k, and fold aggregation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

DEFAULT_COLUMNS = ("IR@1", "IR@5", "CR@1")
GROUPS = ("unseen", "seen", "unseen/adj", "unseen/no-adj", "seen/adj", "seen/no-adj")
_CHUNK = 256


@dataclass
class EvalPool:
    vectors: np.ndarray  # (N, d_V)
    record_ids: np.ndarray
    category_ids: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors)
        self.record_ids = np.asarray(self.record_ids, dtype=np.int64)
        self.category_ids = np.asarray(self.category_ids, dtype=np.int64)
        n = len(self.record_ids)
        if n == 0:
            raise DataError("evaluation pool is empty")
        if self.vectors.shape[0] != n or self.category_ids.shape != (n,):
            raise DataError("pool vectors, record ids and category ids disagree in length")
        if np.unique(self.record_ids).size != n:
            raise DataError("pool record ids are not unique")

    def __len__(self):
        return len(self.record_ids)

    @classmethod
    def from_dataset(cls, ds, record_ids) -> "EvalPool":
        idx = ds.indices(record_ids)
        return cls(ds.vis[idx], ds.column("record_id")[idx], ds.column("category_id")[idx])


def _scores(v_hat, pool):
    return np.asarray(v_hat, dtype=np.float64) @ pool.vectors.astype(np.float64).T


def _order(scores, record_ids):
    # descending score, ties by ascending record id
    ids = np.broadcast_to(record_ids, scores.shape)
    return np.lexsort((ids, -scores), axis=-1)


def rank_pool(v_hat, pool: EvalPool, k: int) -> np.ndarray:
    """Top-k pool record ids for one query vector (or a (Q, d_V) batch)."""
    if not 1 <= k <= len(pool):
        raise ConfigError(f"k={k} must be between 1 and the pool size {len(pool)}")
    v_hat = np.asarray(v_hat)
    single = v_hat.ndim == 1
    order = _order(_scores(np.atleast_2d(v_hat), pool), pool.record_ids)[:, :k]
    top = pool.record_ids[order]
    return top[0] if single else top


def retrieval_ranks(v_hat, query_ids, pool: EvalPool):
    """0-based rank of each query's own vector and of its best same-category vector.

    IR@k is then ``mean(own < k)`` and CR@k ``mean(cat < k)``.
    """
    v_hat = np.atleast_2d(np.asarray(v_hat))
    query_ids = np.asarray(query_ids, dtype=np.int64)
    pos = {int(r): j for j, r in enumerate(pool.record_ids)}
    missing = [int(q) for q in query_ids if int(q) not in pos]
    if missing:
        raise DataError(f"query record_id {missing[0]} is not in the evaluation pool")
    own_idx = np.array([pos[int(q)] for q in query_ids], dtype=np.int64)
    own_cat = pool.category_ids[own_idx]
    own_rank = np.empty(len(query_ids), dtype=np.int64)
    cat_rank = np.empty(len(query_ids), dtype=np.int64)
    for s in range(0, len(query_ids), _CHUNK):
        sl = slice(s, s + _CHUNK)
        order = _order(_scores(v_hat[sl], pool), pool.record_ids)
        own_rank[sl] = np.argmax(order == own_idx[sl, None], axis=1)
        cat_rank[sl] = np.argmax(pool.category_ids[order] == own_cat[sl, None], axis=1)
    return own_rank, cat_rank


def recalls_from_ranks(own_rank, cat_rank, ks) -> dict[str, float]:
    out = {}
    for k in ks:
        out[f"IR@{k}"] = float(np.mean(own_rank < k)) if len(own_rank) else float("nan")
        out[f"CR@{k}"] = float(np.mean(cat_rank < k)) if len(cat_rank) else float("nan")
    return out


def compute_recalls(v_hat, query_ids, pool: EvalPool, ks) -> dict[str, float]:
    """IR@k and CR@k for the given probe outputs against ``pool``."""
    for k in ks:
        if not 1 <= k <= len(pool):
            raise ConfigError(f"k={k} must be between 1 and the pool size {len(pool)}")
    return recalls_from_ranks(*retrieval_ranks(v_hat, query_ids, pool), ks)


@dataclass
class RandomBaseline:
    ir: float
    cr: float
    cr_stderr: float
    trials: int


def expected_random_recall(pool: EvalPool, k: int, trials: int = 10_000, seed: int = 0) -> RandomBaseline:
    """Recall of a ranker that orders the pool uniformly at random.

    IR@k is exactly k/N. CR@k is estimated by Monte Carlo: each trial draws a
    query from the pool and a random top-k set.
    """
    N = len(pool)
    if not 1 <= k <= N:
        raise ConfigError(f"k={k} must be between 1 and the pool size {N}")
    rng = np.random.default_rng(seed)
    cats = pool.category_ids
    queries = rng.integers(N, size=trials)
    hits = np.empty(trials, dtype=bool)
    for t in range(trials):
        top = rng.choice(N, size=k, replace=False)
        hits[t] = np.any(cats[top] == cats[queries[t]])
    p = hits.mean()
    return RandomBaseline(k / N, float(p), float(math.sqrt(p * (1 - p) / trials)), trials)


def mean_std(values) -> tuple[float, float]:
    """Mean and population standard deviation."""
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std())


def fmt_pct(mean: float, std: float) -> str:
    return f"{100 * mean:.1f} ± {100 * std:.1f}"


@dataclass
class EvalReport:
    """Per-fold recall values and their aggregate.

    ``folds[f][group][metric]`` holds fractions in [0, 1]; groups are
    ``unseen``, ``seen`` and their ``/adj`` and ``/no-adj`` breakdowns.
    ``counts[f][group]`` is the number of queries behind each cell.
    """

    name: str
    ks: list[int]
    folds: list[dict[str, dict[str, float]]]
    counts: list[dict[str, int]] = field(default_factory=list)

    @property
    def groups(self) -> list[str]:
        """Groups present (with queries) in every fold."""
        if not self.folds:
            return []
        common = [g for g in GROUPS if all(g in f for f in self.folds)]
        if self.counts:
            common = [g for g in common if all(c.get(g, 0) > 0 for c in self.counts)]
        return common

    def aggregate(self) -> dict[str, dict[str, tuple[float, float]]]:
        out = {}
        for g in self.groups:
            metrics = self.folds[0][g].keys()
            out[g] = {m: mean_std([f[g][m] for f in self.folds]) for m in metrics}
        return out

    def cell(self, group: str, metric: str) -> str:
        return fmt_pct(*self.aggregate()[group][metric])

    def to_dict(self) -> dict:
        agg = self.aggregate()
        return {
            "name": self.name,
            "ks": list(self.ks),
            "n_folds": len(self.folds),
            "folds": self.folds,
            "counts": self.counts,
            "aggregate": {g: {m: {"mean": v[0], "std": v[1], "text": fmt_pct(*v)} for m, v in ms.items()}
                          for g, ms in agg.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, d) -> "EvalReport":
        return cls(d["name"], list(d["ks"]), d["folds"], d.get("counts", []))

    def check(self):
        """Raise if any cell breaks 0 <= IR@k <= CR@k <= 1."""
        for f, fold in enumerate(self.folds):
            for g, ms in fold.items():
                for k in self.ks:
                    ir, cr = ms.get(f"IR@{k}"), ms.get(f"CR@{k}")
                    if ir is None or cr is None or (math.isnan(ir) and math.isnan(cr)):
                        continue
                    if not 0.0 <= ir <= cr <= 1.0:
                        raise DataError(f"fold {f} group {g}: IR@{k}={ir} CR@{k}={cr} violates 0 <= IR <= CR <= 1")
        return self


def aggregate_folds(per_fold, ks, name="probe", counts=None) -> EvalReport:
    """Combine per-fold ``{group: {metric: value}}`` dicts into one report."""
    if not per_fold:
        raise ConfigError("aggregate_folds needs at least one fold")
    return EvalReport(name, list(ks), list(per_fold), list(counts or [])).check()


def to_markdown(reports, group="unseen", columns=DEFAULT_COLUMNS) -> str:
    """Render reports as markdown tables.

    Rows are experiments, columns the requested metrics, cells ``mean ± std``
    in percent. Seen-category and adjective breakdown tables follow when any
    report carries them; absent sections are left out entirely.
    """
    reports = list(reports)
    lines = [_table(reports, group, columns, f"{group.capitalize()} categories")]
    if group != "seen" and any("seen" in r.groups for r in reports):
        seen = [r for r in reports if "seen" in r.groups]
        lines.append(_table(seen, "seen", columns, "Seen categories"))
    adj = [r for r in reports if f"{group}/adj" in r.groups and f"{group}/no-adj" in r.groups]
    if adj:
        out = ["### Adjective breakdown (IR@1, " + group + ")", "",
               "| # | Experiment | With adjective | Without adjective |", "|---|---|---|---|"]
        for i, r in enumerate(adj):
            out.append(f"| {i} | {r.name} | {r.cell(group + '/adj', 'IR@1')} | {r.cell(group + '/no-adj', 'IR@1')} |")
        lines.append("\n".join(out))
    return "\n\n".join(lines) + "\n"


def _table(reports, group, columns, title):
    out = [f"### {title}", "", "| # | Experiment | " + " | ".join(columns) + " |",
           "|---|---|" + "---|" * len(columns)]
    for i, r in enumerate(reports):
        agg = r.aggregate().get(group, {})
        cells = [fmt_pct(*agg[c]) if c in agg else "n/a" for c in columns]
        out.append(f"| {i} | {r.name} | " + " | ".join(cells) + " |")
    return "\n".join(out)
