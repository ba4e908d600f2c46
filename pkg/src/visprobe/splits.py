"""Seen/unseen category folds and the category-permutation control task."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset, DatasetHeader
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class TestSizes:
    """How many records go to the test sets.

    With ``total_test`` the unseen share is proportional to the unseen
    category share, ``round(total_test * n_unseen / n_categories)``; the rest
    is seen test. ``seen_test`` / ``unseen_test`` override either part. The
    validation set always matches the seen test size.
    """

    total_test: int | None = None
    seen_test: int | None = None
    unseen_test: int | None = None

    def resolve(self, n_records: int, n_categories: int, n_unseen: int) -> tuple[int, int]:
        total = self.total_test
        if total is None and (self.seen_test is None or self.unseen_test is None):
            total = round(0.2 * n_records)
        unseen = self.unseen_test
        if unseen is None:
            unseen = round(total * n_unseen / n_categories)
        seen = self.seen_test if self.seen_test is not None else total - unseen
        if seen < 0 or unseen < 1:
            raise ConfigError(f"test sizes resolve to seen={seen}, unseen={unseen}")
        return seen, unseen


@dataclass
class SplitSpec:
    fold_index: int
    seed: int
    seen_categories: list[int]
    unseen_categories: list[int]
    train_ids: list[int]
    val_ids: list[int]
    seen_test_ids: list[int]
    unseen_test_ids: list[int]
    dropped_ids: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d) -> "SplitSpec":
        return cls(**d)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "SplitSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def make_category_splits(dataset: Dataset, n_folds: int, n_unseen: int, seed: int,
                         test_sizes: TestSizes | None = None) -> list[SplitSpec]:
    """Build ``n_folds`` independent seen/unseen partitions of the categories.

    Within a fold, test and validation records never share an image or a
    caption with a training record. Seen records that share an image with a
    test record are used for seen test / validation first; any left over are
    dropped from the fold (listed in ``dropped_ids``).
    """
    test_sizes = test_sizes or TestSizes()
    cats = dataset.categories
    if n_folds < 1:
        raise ConfigError("n_folds must be >= 1")
    if not 1 <= n_unseen < len(cats):
        raise ConfigError(f"n_unseen={n_unseen} must be in [1, {len(cats) - 1}] for {len(cats)} categories")
    n_seen_test, n_unseen_test = test_sizes.resolve(len(dataset), len(cats), n_unseen)
    return [_make_fold(dataset, cats, f, n_unseen, seed, n_seen_test, n_unseen_test) for f in range(n_folds)]


def _make_fold(ds, cats, fold, n_unseen, seed, n_seen_test, n_unseen_test):
    rng = np.random.default_rng([seed, fold])
    cat_col = ds.column("category_id")
    img_col = ds.column("image_id")
    cap_col = ds.column("caption_id")
    rid_col = ds.column("record_id")

    perm = rng.permutation(cats)
    unseen = np.sort(perm[:n_unseen])
    seen = np.sort(perm[n_unseen:])
    is_unseen = np.isin(cat_col, unseen)

    unseen_pool = np.flatnonzero(is_unseen)
    if unseen_pool.size < n_unseen_test:
        raise ConfigError(
            f"fold {fold}: unseen categories hold {unseen_pool.size} records, "
            f"{n_unseen_test} requested (short by {n_unseen_test - unseen_pool.size})"
        )
    unseen_test = np.sort(rng.choice(unseen_pool, n_unseen_test, replace=False))

    held_img = set(img_col[unseen_test].tolist())
    held_cap = set(cap_col[unseen_test].tolist())
    seen_pool = np.flatnonzero(~is_unseen)
    touching = np.array([img_col[j] in held_img or cap_col[j] in held_cap for j in seen_pool], dtype=bool)
    blocked = rng.permutation(seen_pool[touching])
    free = rng.permutation(seen_pool[~touching])
    ordered = np.concatenate([blocked, free])
    need = 2 * n_seen_test
    if ordered.size <= need:
        raise ConfigError(
            f"fold {fold}: seen categories hold {ordered.size} records; "
            f"{need} needed for seen test + validation plus at least one training record"
        )
    seen_test = np.sort(ordered[:n_seen_test])
    val = np.sort(ordered[n_seen_test:need])
    rest = ordered[need:]

    for idx in (seen_test, val):
        held_img.update(img_col[idx].tolist())
        held_cap.update(cap_col[idx].tolist())
    ok = np.array([img_col[j] not in held_img and cap_col[j] not in held_cap for j in rest], dtype=bool)
    train = np.sort(rest[ok])
    dropped = np.sort(np.concatenate([rest[~ok], np.setdiff1d(unseen_pool, unseen_test)]))
    if train.size == 0:
        raise ConfigError(f"fold {fold}: no training records left after holding out test images")

    def ids(idx):
        return rid_col[idx].tolist()

    return SplitSpec(
        fold_index=fold,
        seed=seed,
        seen_categories=seen.tolist(),
        unseen_categories=unseen.tolist(),
        train_ids=ids(train),
        val_ids=ids(val),
        seen_test_ids=ids(seen_test),
        unseen_test_ids=ids(unseen_test),
        dropped_ids=ids(dropped),
    )


@dataclass
class ControlPermutation:
    mapping: dict[int, int]
    seed: int

    def __call__(self, category: int) -> int:
        return self.mapping[category]

    def to_dict(self):
        return {"seed": self.seed, "mapping": [[k, v] for k, v in sorted(self.mapping.items())]}

    @classmethod
    def from_dict(cls, d):
        return cls({int(k): int(v) for k, v in d["mapping"]}, int(d["seed"]))


def make_control_permutation(category_ids, seed: int) -> ControlPermutation:
    """Uniformly random derangement of the categories (no category maps to itself)."""
    cats = np.unique(np.asarray(list(category_ids), dtype=np.int64))
    if cats.size < 2:
        raise ConfigError("a control permutation needs at least 2 categories")
    rng = np.random.default_rng(seed)
    # rejection sampling is uniform over derangements; about e draws expected
    while True:
        p = rng.permutation(cats.size)
        if not np.any(p == np.arange(cats.size)):
            break
    return ControlPermutation({int(a): int(cats[j]) for a, j in zip(cats, p)}, seed)


@dataclass
class ControlView:
    dataset: Dataset
    source_ids: np.ndarray  # record id whose visual vector each record now carries
    permutation: ControlPermutation


def apply_control_permutation(dataset: Dataset, permutation: ControlPermutation, seed: int) -> ControlView:
    """Swap each record's visual vector for one drawn from category f(o).

    Language features are shared with the input, not copied. The result is a
    pure function of (dataset, permutation, seed).
    """
    cat_col = dataset.column("category_id")
    members = {}
    for j, c in enumerate(cat_col.tolist()):
        members.setdefault(c, []).append(j)
    rng = np.random.default_rng(seed)
    src = np.empty(len(dataset), dtype=np.int64)
    for j, o in enumerate(cat_col.tolist()):
        target = permutation.mapping.get(o)
        if target is None:
            raise DataError(f"category {o} is not covered by the control permutation")
        pool = members.get(target)
        if not pool:
            raise DataError(f"control target category f({o}) = {target} has no records")
        src[j] = pool[rng.integers(len(pool))]
    vis = dataset.vis[src]
    vis.flags.writeable = False
    h = dataset.header
    header = DatasetHeader(h.d_L, h.d_V, h.record_count, h.source_tag + "+control", h.context_visibility)
    view = Dataset(header, dataset.records, dataset.lang, vis)
    return ControlView(view, dataset.column("record_id")[src], permutation)
