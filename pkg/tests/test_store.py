"""Binary store and interaction-log IO."""

import struct
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dffrec.store import (FeatureStore, InteractionLog, LogError, StoreError,
                          StoreHeader, read_interaction_log, read_store,
                          validate_store, write_interaction_log, write_store)


def make_items(ids, num_layers, dim, seed=0):
    rng = np.random.default_rng(seed)
    return {i: rng.normal(size=(num_layers, dim)).astype(np.float32) for i in ids}


def test_round_trip_bit_exact(tmp_path):
    header = StoreHeader("hidden_state", 3, 5, model_tag="vit-7b L=3 pool=mean")
    items = make_items([7, 1, 42], 3, 5)
    path = tmp_path / "a.dffs"
    write_store(path, header, items)
    store = read_store(path)

    assert store.header == header
    assert list(store.ids) == [1, 7, 42]
    for i in items:
        np.testing.assert_array_equal(store.item_vectors(i), items[i])
    assert store.matrix.dtype == np.float32


def test_write_is_canonical(tmp_path):
    """Same items, any insertion order -> byte-identical file."""
    header = StoreHeader("synthetic", 2, 4)
    items = make_items([3, 1, 2], 2, 4)
    a, b = tmp_path / "a.dffs", tmp_path / "b.dffs"
    write_store(a, header, items)
    write_store(b, header, {k: items[k] for k in [2, 3, 1]})
    assert a.read_bytes() == b.read_bytes()


def test_unicode_model_tag(tmp_path):
    header = StoreHeader("caption", 1, 4, model_tag="llava-1.5 prompt=rec 模型")
    path = tmp_path / "c.dffs"
    write_store(path, header, make_items([1], 1, 4))
    assert read_store(path).header.model_tag == header.model_tag


@settings(max_examples=30, deadline=None)
@given(ids=st.lists(st.integers(min_value=0, max_value=2**62), unique=True,
                    min_size=1, max_size=8),
       num_layers=st.integers(min_value=1, max_value=4),
       dim=st.integers(min_value=1, max_value=6),
       seed=st.integers(min_value=0, max_value=1000))
def test_round_trip_property(ids, num_layers, dim, seed):
    header = StoreHeader("hidden_state", num_layers, dim)
    items = make_items(ids, num_layers, dim, seed)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "p.dffs"
        write_store(path, header, items)
        store = read_store(path)
    assert list(store.ids) == sorted(ids)
    for i in ids:
        np.testing.assert_array_equal(store.item_vectors(i), items[i])


def test_contains_and_missing_lookup(tmp_path):
    path = tmp_path / "a.dffs"
    write_store(path, StoreHeader("synthetic", 1, 2), make_items([5], 1, 2))
    store = read_store(path)
    assert 5 in store and 6 not in store
    with pytest.raises(KeyError, match="item not in store"):
        store.item_vectors(6)


# ------------------------------------------------------------- write failures

def test_write_rejects_empty(tmp_path):
    with pytest.raises(StoreError, match="empty store"):
        write_store(tmp_path / "x.dffs", StoreHeader("synthetic", 1, 2), {})


def test_write_rejects_duplicate_ids(tmp_path):
    items = [(1, np.zeros((1, 2), np.float32)), (1, np.ones((1, 2), np.float32))]
    with pytest.raises(StoreError, match="duplicate item id 1"):
        write_store(tmp_path / "x.dffs", StoreHeader("synthetic", 1, 2), items)


def test_write_rejects_negative_id(tmp_path):
    with pytest.raises(StoreError, match="unsigned"):
        write_store(tmp_path / "x.dffs", StoreHeader("synthetic", 1, 2),
                    {-3: np.zeros((1, 2), np.float32)})


def test_write_rejects_shape_mismatch(tmp_path):
    with pytest.raises(StoreError, match=r"expected shape \(2, 4\)"):
        write_store(tmp_path / "x.dffs", StoreHeader("synthetic", 2, 4),
                    {1: np.zeros((2, 3), np.float32)})


def test_write_rejects_non_finite(tmp_path):
    bad = np.zeros((1, 2), np.float32)
    bad[0, 1] = np.nan
    with pytest.raises(StoreError, match="non-finite"):
        write_store(tmp_path / "x.dffs", StoreHeader("synthetic", 1, 2), {1: bad})


def test_caption_store_must_be_single_layer():
    with pytest.raises(StoreError, match="num_layers == 1"):
        StoreHeader("caption", 2, 4).validate()


def test_unknown_provenance():
    with pytest.raises(StoreError, match="unknown provenance"):
        StoreHeader("magic_beans", 1, 4).validate()


# -------------------------------------------------------------- read failures

def _valid_file(tmp_path, n_items=2, num_layers=1, dim=2):
    path = tmp_path / "v.dffs"
    write_store(path, StoreHeader("synthetic", num_layers, dim),
                make_items(range(1, n_items + 1), num_layers, dim))
    return path


def test_read_truncated_header(tmp_path):
    path = tmp_path / "t.dffs"
    path.write_bytes(b"DFFS\x01")
    with pytest.raises(StoreError, match="truncated header"):
        read_store(path)


def test_read_bad_magic(tmp_path):
    path = _valid_file(tmp_path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(StoreError, match="bad magic"):
        read_store(path)


def test_read_unsupported_version(tmp_path):
    path = _valid_file(tmp_path)
    raw = bytearray(path.read_bytes())
    struct.pack_into("<I", raw, 4, 99)
    path.write_bytes(bytes(raw))
    with pytest.raises(StoreError, match="unsupported version 99"):
        read_store(path)


def test_read_empty_store(tmp_path):
    head = struct.Struct("<4sIIQIII").pack(b"DFFS", 1, 2, 0, 1, 1, 0)
    path = tmp_path / "e.dffs"
    path.write_bytes(head)
    with pytest.raises(StoreError, match="no items"):
        read_store(path)


def test_read_truncated_payload(tmp_path):
    path = _valid_file(tmp_path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(StoreError, match="truncated payload"):
        read_store(path)


def test_read_trailing_garbage(tmp_path):
    path = _valid_file(tmp_path)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(StoreError, match="size disagreement"):
        read_store(path)


def test_read_unsorted_index(tmp_path):
    path = _valid_file(tmp_path, n_items=2)
    raw = bytearray(path.read_bytes())
    idx_start = struct.Struct("<4sIIQIII").size  # empty tag
    id0 = struct.unpack_from("<Q", raw, idx_start)[0]
    id1 = struct.unpack_from("<Q", raw, idx_start + 16)[0]
    struct.pack_into("<Q", raw, idx_start, id1)       # swap ids, keep offsets
    struct.pack_into("<Q", raw, idx_start + 16, id0)
    path.write_bytes(bytes(raw))
    with pytest.raises(StoreError, match="not sorted"):
        read_store(path)


def test_read_bad_offset(tmp_path):
    path = _valid_file(tmp_path, n_items=2)
    raw = bytearray(path.read_bytes())
    idx_start = struct.Struct("<4sIIQIII").size
    offset = struct.unpack_from("<Q", raw, idx_start + 8)[0]
    struct.pack_into("<Q", raw, idx_start + 8, offset + 4)
    path.write_bytes(bytes(raw))
    with pytest.raises(StoreError, match="outside its block"):
        read_store(path)


# ------------------------------------------------------------------ validation

def test_validate_clean(tmp_path):
    path = _valid_file(tmp_path, n_items=3)
    store = read_store(path)
    log = InteractionLog({10: [(1, 0), (2, 1)], 11: [(3, 0)]})
    report = validate_store(store, log)
    assert report.is_clean
    assert report.num_items == 3 and report.num_users == 2 and report.num_events == 3
    assert report.lines()[-1] == "status: clean"


def test_validate_flags_missing_items(tmp_path):
    store = read_store(_valid_file(tmp_path, n_items=2))
    log = InteractionLog({10: [(1, 0), (9, 1), (8, 2)]})
    report = validate_store(store, log)
    assert not report.is_clean
    assert report.missing_items == [8, 9]
    assert any("MISSING from store" in l for l in report.lines())


def test_validate_flags_non_finite():
    # write_store refuses NaN, so build the in-memory view directly
    matrix = np.zeros((2, 1, 2), np.float32)
    matrix[1, 0, 0] = np.inf
    store = FeatureStore(StoreHeader("hidden_state", 1, 2),
                         np.array([4, 9], np.int64), matrix)
    report = validate_store(store)
    assert report.non_finite_items == [9]
    assert not report.is_clean


# ------------------------------------------------------------ interaction log

def test_log_round_trip(tmp_path):
    log = InteractionLog({2: [(5, 100), (3, 105)], 1: [(4, 50)]})
    path = tmp_path / "log.tsv"
    write_interaction_log(path, log)
    back = read_interaction_log(path)
    assert back.users == log.users
    assert back.item_sequence(2) == [5, 3]
    assert back.all_items() == {3, 4, 5}


def test_log_skips_blank_lines(tmp_path):
    path = tmp_path / "log.tsv"
    path.write_text("1\t2\t3\n\n1\t4\t5\n")
    assert read_interaction_log(path).users == {1: [(2, 3), (4, 5)]}


def test_log_field_count_error(tmp_path):
    path = tmp_path / "log.tsv"
    path.write_text("1\t2\n")
    with pytest.raises(LogError, match=r"log\.tsv:1: expected 3"):
        read_interaction_log(path)


def test_log_non_integer_error(tmp_path):
    path = tmp_path / "log.tsv"
    path.write_text("1\ttwo\t3\n")
    with pytest.raises(LogError, match="non-integer"):
        read_interaction_log(path)


def test_log_timestamps_must_not_decrease(tmp_path):
    path = tmp_path / "log.tsv"
    path.write_text("1\t2\t10\n1\t3\t9\n")
    with pytest.raises(LogError, match="timestamp decreases for user 1"):
        read_interaction_log(path)


def test_log_equal_timestamps_ok(tmp_path):
    path = tmp_path / "log.tsv"
    path.write_text("1\t2\t10\n1\t3\t10\n2\t4\t0\n")
    assert read_interaction_log(path).num_events == 3
