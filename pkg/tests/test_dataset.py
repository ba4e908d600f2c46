import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_dataset
from visprobe.dataset import build_dataset, load_dataset, validate_dataset, write_dataset
from visprobe.errors import DataError, FormatError, TruncationError
from visprobe.synthgen import SynthSpec, generate_synthetic


def assert_same(a, b):
    assert a.header == b.header
    assert a.records == b.records
    assert a.lang.tobytes() == b.lang.tobytes()
    assert a.vis.tobytes() == b.vis.tobytes()


def test_round_trip(tmp_path, small_dataset):
    write_dataset(small_dataset, tmp_path / "d")
    assert_same(load_dataset(tmp_path / "d"), small_dataset)


@given(st.integers(1, 6), st.integers(1, 4), st.integers(1, 5), st.integers(1, 5), st.integers(0, 10**6),
       st.one_of(st.none(), st.floats(0, 1)))
@settings(max_examples=25, deadline=None)
def test_round_trip_property(tmp_path_factory, n_cat, per_cat, d_L, d_V, seed, vis_tag):
    ds = make_dataset(n_cat, per_cat, d_L, d_V, seed, source_tag=f"s{seed}", context_visibility=vis_tag)
    path = tmp_path_factory.mktemp("rt")
    write_dataset(ds, path)
    assert_same(load_dataset(path), ds)


def test_write_is_byte_deterministic(tmp_path, small_dataset):
    write_dataset(small_dataset, tmp_path / "a")
    write_dataset(small_dataset, tmp_path / "b")
    for f in ("manifest.json", "lang.f32", "vis.f32"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_empty_dataset(tmp_path):
    ds = build_dataset([], np.zeros((0, 3)), np.zeros((0, 4)))
    write_dataset(ds, tmp_path / "e")
    man = json.loads((tmp_path / "e" / "manifest.json").read_text())
    assert man["record_count"] == 0 and man["records"] == []
    assert (tmp_path / "e" / "lang.f32").stat().st_size == 0
    assert len(load_dataset(tmp_path / "e")) == 0


def test_blob_sizes_for_synthetic(tmp_path):
    ds = generate_synthetic(SynthSpec(seed=3))
    assert len(ds) == 1000
    write_dataset(ds, tmp_path / "s")
    tokens = sum(r.token_count for r in ds.records)
    assert (tmp_path / "s" / "lang.f32").stat().st_size == 4 * 32 * tokens
    assert (tmp_path / "s" / "vis.f32").stat().st_size == 4 * 48 * 1000


def test_blobs_are_little_endian_float32(tmp_path, small_dataset):
    write_dataset(small_dataset, tmp_path / "d")
    raw = np.fromfile(tmp_path / "d" / "vis.f32", dtype="<f4").reshape(small_dataset.vis.shape)
    assert np.array_equal(raw, small_dataset.vis)


def test_truncated_vis_blob(tmp_path, small_dataset):
    write_dataset(small_dataset, tmp_path / "d")
    p = tmp_path / "d" / "vis.f32"
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(TruncationError):
        load_dataset(tmp_path / "d")


@pytest.mark.parametrize("field,value", [("magic", "XMPC"), ("version", 2)])
def test_bad_magic_or_version(tmp_path, small_dataset, field, value):
    write_dataset(small_dataset, tmp_path / "d")
    p = tmp_path / "d" / "manifest.json"
    man = json.loads(p.read_text())
    man[field] = value
    p.write_text(json.dumps(man))
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "d")


def test_nan_in_visual_vector_names_record(tmp_path, small_dataset):
    write_dataset(small_dataset, tmp_path / "d")
    p = tmp_path / "d" / "vis.f32"
    vis = np.fromfile(p, dtype="<f4").reshape(small_dataset.vis.shape)
    vis[7, 2] = np.nan
    p.write_bytes(vis.astype("<f4").tobytes())
    with pytest.raises(DataError, match=r"record_id 7\b"):
        load_dataset(tmp_path / "d")


def test_loaded_features_are_read_only(tmp_path, small_dataset):
    write_dataset(small_dataset, tmp_path / "d")
    ds = load_dataset(tmp_path / "d")
    with pytest.raises(ValueError):
        ds.vis[0, 0] = 1.0


def test_clean_synthetic_has_no_violations():
    assert validate_dataset(generate_synthetic(SynthSpec(seed=5))) == []


def test_duplicate_image_category_names_both():
    ds = make_dataset()
    meta = [{k: getattr(r, k) for k in ("record_id", "category_id", "image_id", "caption_id", "token_count")}
            for r in ds.records]
    meta[1].update(image_id=3, category_id=5)
    meta[4].update(image_id=3, category_id=5)
    bad = build_dataset(meta, ds.lang, ds.vis)
    dups = [v for v in validate_dataset(bad) if v.kind == "duplicate"]
    assert len(dups) == 1 and sorted(dups[0].record_ids) == [1, 4]


def test_extent_violation():
    d_L = 5
    meta = [{"record_id": 0, "category_id": 0, "image_id": 0, "caption_id": 0, "token_count": 4}]
    bad = build_dataset(meta, np.zeros((3, d_L)), np.zeros((1, 2)))
    ext = [v for v in validate_dataset(bad) if v.kind == "extent"]
    assert ext and 0 in ext[0].record_ids


def test_empty_category_reported():
    ds = make_dataset(n_cat=3)
    v = validate_dataset(ds, categories=[0, 1, 2, 9])
    assert [x.kind for x in v] == ["empty_category"] and "9" in v[0].message


def test_write_refuses_invalid(tmp_path):
    meta = [{"record_id": j, "category_id": 1, "image_id": 0, "caption_id": j, "token_count": 1} for j in range(2)]
    bad = build_dataset(meta, np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(DataError):
        write_dataset(bad, tmp_path / "x")
    assert not (tmp_path / "x" / "manifest.json").exists()


def test_lenient_load_lets_validator_report(tmp_path, small_dataset):
    write_dataset(small_dataset, tmp_path / "d")
    p = tmp_path / "d" / "manifest.json"
    man = json.loads(p.read_text())
    man["records"][2]["image_id"] = man["records"][0]["image_id"]
    man["records"][2]["category_id"] = man["records"][0]["category_id"]
    p.write_text(json.dumps(man))
    with pytest.raises(DataError):
        load_dataset(tmp_path / "d")
    ds = load_dataset(tmp_path / "d", strict=False)
    assert [v.kind for v in validate_dataset(ds)] == ["duplicate"]


def test_padded_batch(small_dataset):
    ds = small_dataset
    X, lengths = ds.padded([0, 5, 2])
    for row, idx in enumerate([0, 5, 2]):
        n = ds.records[idx].token_count
        assert lengths[row] == n
        assert np.array_equal(X[row, :n], ds.sequence(idx))
        assert np.all(X[row, n:] == 0)
