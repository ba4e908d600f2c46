"""On-disk container for paired (language sequence, visual vector) features.

A dataset is a directory holding three files:

``manifest.json``
    ``{"magic": "XMPB", "version": 1, "d_L", "d_V", "record_count",
    "source_tag", ["context_visibility",] "records": [...]}`` where each
    record is ``{record_id, category_id, image_id, caption_id, token_count,
    adjective_count}``. Blob offsets are implied by record order.
``lang.f32``
    little-endian float32, ``sum(token_count) x d_L``, row-major.
``vis.f32``
    little-endian float32, ``record_count x d_V``, row-major.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, TruncationError

MAGIC = "XMPB"
FORMAT_VERSION = 1
MANIFEST = "manifest.json"
LANG_BLOB = "lang.f32"
VIS_BLOB = "vis.f32"
_LE_F32 = np.dtype("<f4")
_RECORD_KEYS = ("record_id", "category_id", "image_id", "caption_id", "token_count", "adjective_count")


@dataclass(frozen=True)
class DatasetHeader:
    d_L: int
    d_V: int
    record_count: int
    source_tag: str = ""
    context_visibility: float | None = None
    format_version: int = FORMAT_VERSION


@dataclass(frozen=True)
class PairRecord:
    record_id: int
    category_id: int
    image_id: int
    caption_id: int
    token_count: int
    adjective_count: int = 0
    lang_offset: int = 0
    vis_offset: int = 0


@dataclass
class Violation:
    kind: str  # "duplicate" | "extent" | "empty_category" | "record_id" | "non_finite" | "header"
    record_ids: list[int]
    message: str


@dataclass
class Dataset:
    header: DatasetHeader
    records: list[PairRecord]
    lang: np.ndarray  # (sum token_count, d_L) float32
    vis: np.ndarray  # (record_count, d_V) float32
    _cols: dict = field(default=None, init=False, repr=False, compare=False)

    def __len__(self):
        return len(self.records)

    def column(self, name) -> np.ndarray:
        """Record metadata as an int64 array in record order (cached)."""
        if self._cols is None:
            self._cols = {}
        if name not in self._cols:
            self._cols[name] = np.array([getattr(r, name) for r in self.records], dtype=np.int64)
        return self._cols[name]

    @property
    def categories(self) -> np.ndarray:
        return np.unique(self.column("category_id"))

    def indices(self, record_ids) -> np.ndarray:
        """Positions of the given record ids in record order."""
        if self._cols is None or "_index" not in self._cols:
            self.column("record_id")
            self._cols["_index"] = {int(r): j for j, r in enumerate(self._cols["record_id"])}
        index = self._cols["_index"]
        try:
            return np.array([index[int(r)] for r in record_ids], dtype=np.int64)
        except KeyError as e:
            raise DataError(f"unknown record_id {e.args[0]}") from None

    def sequence(self, idx: int) -> np.ndarray:
        r = self.records[idx]
        return self.lang[r.lang_offset:r.lang_offset + r.token_count]

    def padded(self, indices, dtype=np.float32):
        """Left-aligned zero-padded language batch ``(X, lengths)`` for record indices."""
        indices = np.asarray(indices, dtype=np.int64)
        lengths = self.column("token_count")[indices]
        offsets = self.column("lang_offset")[indices]
        T = int(lengths.max()) if indices.size else 0
        steps = np.arange(T)
        rows = offsets[:, None] + np.minimum(steps[None, :], lengths[:, None] - 1)
        X = self.lang[rows].astype(dtype)
        X[steps[None, :] >= lengths[:, None]] = 0.0
        return X, lengths


def build_dataset(meta, lang, vis, source_tag="", context_visibility=None) -> Dataset:
    """Assemble a Dataset from per-record metadata dicts and packed arrays.

    Offsets are filled in from record order; ``lang`` rows must follow the
    same order.
    """
    lang = np.ascontiguousarray(lang, dtype=np.float32)
    vis = np.ascontiguousarray(vis, dtype=np.float32)
    if lang.ndim != 2 or vis.ndim != 2:
        raise FormatError("lang and vis must be 2-D arrays")
    records, off = [], 0
    for j, m in enumerate(meta):
        r = PairRecord(**{k: int(m[k]) for k in _RECORD_KEYS if k in m}, lang_offset=off, vis_offset=j)
        records.append(r)
        off += r.token_count
    header = DatasetHeader(
        d_L=lang.shape[1],
        d_V=vis.shape[1],
        record_count=len(records),
        source_tag=source_tag,
        context_visibility=context_visibility,
    )
    return Dataset(header, records, lang, vis)


def validate_dataset(ds: Dataset, categories=None) -> list[Violation]:
    """List constraint violations; an empty list means the dataset is clean.

    ``categories``, when given, is the expected category set; members with no
    records are reported as empty.
    """
    out = []
    h = ds.header
    if h.d_L < 1 or h.d_V < 1:
        out.append(Violation("header", [], f"feature widths must be positive (d_L={h.d_L}, d_V={h.d_V})"))
    if h.record_count != len(ds.records):
        out.append(Violation("header", [], f"record_count {h.record_count} != {len(ds.records)} records"))
    if h.context_visibility is not None and not 0.0 <= h.context_visibility <= 1.0:
        out.append(Violation("header", [], f"context_visibility {h.context_visibility} outside [0, 1]"))

    ids = [r.record_id for r in ds.records]
    if sorted(ids) != list(range(len(ids))):
        dup = sorted(k for k, n in Counter(ids).items() if n > 1)
        out.append(Violation("record_id", dup, "record ids must be unique and dense 0..N-1"))

    seen = {}
    for r in ds.records:
        key = (r.image_id, r.category_id)
        seen.setdefault(key, []).append(r.record_id)
    for (img, cat), rids in sorted(seen.items()):
        if len(rids) > 1:
            out.append(Violation("duplicate", rids, f"records {rids} share image_id={img}, category_id={cat}"))

    n_lang = ds.lang.shape[0]
    expected = 0
    for j, r in enumerate(ds.records):
        if r.token_count < 1:
            out.append(Violation("extent", [r.record_id], f"record {r.record_id} has token_count {r.token_count} < 1"))
        elif r.lang_offset != expected or r.lang_offset + r.token_count > n_lang:
            have = max(0, min(n_lang - r.lang_offset, r.token_count))
            out.append(Violation(
                "extent", [r.record_id],
                f"record {r.record_id} claims {r.token_count} tokens at offset {r.lang_offset}; "
                f"blob holds {have} (expected offset {expected})",
            ))
        if r.vis_offset != j or j >= ds.vis.shape[0]:
            out.append(Violation("extent", [r.record_id], f"record {r.record_id} has no visual row at {r.vis_offset}"))
        expected += max(r.token_count, 0)
    if expected != n_lang:
        out.append(Violation("extent", [], f"lang blob has {n_lang} rows, records account for {expected}"))
    if ds.lang.shape[1:] != (h.d_L,) or ds.vis.shape[1:] != (h.d_V,):
        out.append(Violation("header", [], "blob widths do not match header d_L / d_V"))
    if ds.vis.shape[0] != len(ds.records):
        out.append(Violation("extent", [], f"vis blob has {ds.vis.shape[0]} rows for {len(ds.records)} records"))

    if categories is not None:
        present = {r.category_id for r in ds.records}
        for c in sorted(set(categories) - present):
            out.append(Violation("empty_category", [], f"category {c} has no records"))

    bad = _non_finite_records(ds)
    if bad:
        out.append(Violation("non_finite", bad, f"non-finite feature values in records {bad}"))
    return out


def _non_finite_records(ds: Dataset) -> list[int]:
    bad = set()
    if ds.vis.size and ds.vis.shape[0] == len(ds.records):
        for j in np.flatnonzero(~np.isfinite(ds.vis).all(axis=1)):
            bad.add(ds.records[j].record_id)
    if ds.lang.size:
        rows = np.flatnonzero(~np.isfinite(ds.lang).all(axis=1))
        if rows.size:
            ends = np.cumsum([r.token_count for r in ds.records])
            for row in rows:
                j = int(np.searchsorted(ends, row, side="right"))
                if j < len(ds.records):
                    bad.add(ds.records[j].record_id)
    return sorted(bad)


def manifest_dict(ds: Dataset) -> dict:
    h = ds.header
    out = {
        "magic": MAGIC,
        "version": h.format_version,
        "d_L": h.d_L,
        "d_V": h.d_V,
        "record_count": h.record_count,
        "source_tag": h.source_tag,
    }
    if h.context_visibility is not None:
        out["context_visibility"] = h.context_visibility
    out["records"] = [{k: getattr(r, k) for k in _RECORD_KEYS} for r in ds.records]
    return out


def write_dataset(ds: Dataset, path) -> Path:
    """Write the three container files into directory ``path``.

    Refuses datasets that fail :func:`validate_dataset`. Output bytes are a
    pure function of the dataset contents.
    """
    problems = validate_dataset(ds)
    if problems:
        raise DataError("refusing to write invalid dataset: " + "; ".join(p.message for p in problems[:5]))
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    text = json.dumps(manifest_dict(ds), indent=1) + "\n"
    (path / MANIFEST).write_text(text, encoding="utf-8")
    (path / LANG_BLOB).write_bytes(ds.lang.astype(_LE_F32).tobytes(order="C"))
    (path / VIS_BLOB).write_bytes(ds.vis.astype(_LE_F32).tobytes(order="C"))
    return path


def load_dataset(path, strict=True) -> Dataset:
    """Load and fully validate a dataset directory. Malformed input is rejected.

    With ``strict=False`` only format and truncation problems raise; content
    violations (duplicates, non-finite values) are left for
    :func:`validate_dataset` to report.
    """
    path = Path(path)
    try:
        man = json.loads((path / MANIFEST).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FormatError(f"{path}: missing {MANIFEST}") from None
    except json.JSONDecodeError as e:
        raise FormatError(f"{path / MANIFEST}: not valid JSON ({e})") from None
    if not isinstance(man, dict) or man.get("magic") != MAGIC:
        raise FormatError(f"{path / MANIFEST}: bad magic {man.get('magic') if isinstance(man, dict) else None!r}")
    if man.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path / MANIFEST}: unsupported version {man.get('version')!r}")
    try:
        d_L, d_V, n = int(man["d_L"]), int(man["d_V"]), int(man["record_count"])
        meta = man["records"]
        if any(set(_RECORD_KEYS) - set(m) for m in meta):
            raise KeyError("record fields")
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path / MANIFEST}: missing or malformed field {e}") from None
    if d_L < 1 or d_V < 1:
        raise FormatError(f"{path / MANIFEST}: feature widths must be positive")
    if n != len(meta):
        raise FormatError(f"{path / MANIFEST}: record_count {n} but {len(meta)} records listed")
    n_tokens = sum(int(m["token_count"]) for m in meta)

    lang_raw = _read_blob(path / LANG_BLOB, 4 * d_L * n_tokens)
    vis_raw = _read_blob(path / VIS_BLOB, 4 * d_V * n)
    lang = np.frombuffer(lang_raw, dtype=_LE_F32).astype(np.float32).reshape(n_tokens, d_L)
    vis = np.frombuffer(vis_raw, dtype=_LE_F32).astype(np.float32).reshape(n, d_V)
    ds = build_dataset(meta, lang, vis, man.get("source_tag", ""), man.get("context_visibility"))

    bad = _non_finite_records(ds) if strict else []
    if bad:
        raise DataError(f"{path}: non-finite feature values in record_id {', '.join(map(str, bad))}")
    problems = [p for p in validate_dataset(ds) if p.kind != "non_finite"] if strict else []
    if problems:
        raise DataError(f"{path}: " + "; ".join(p.message for p in problems[:5]))
    lang.flags.writeable = False
    vis.flags.writeable = False
    return ds


def _read_blob(p: Path, expected: int) -> bytes:
    try:
        raw = p.read_bytes()
    except FileNotFoundError:
        raise FormatError(f"missing blob {p}") from None
    if len(raw) != expected:
        raise TruncationError(f"{p}: {len(raw)} bytes, expected {expected}")
    return raw
