"""Cross-component contract: files this package writes, the trainer reads.

The writer here never imports the trainer; these tests do, on purpose,
because the byte format is the interface and someone has to hold both ends.
"""

import subprocess
import sys

import numpy as np
import pytest

from lvlm_extractor import StoreWriteError
from lvlm_extractor.dffs import write_captions_tsv, write_store

from dffrec.store import StoreHeader, read_store
from dffrec.store import write_store as primary_write


def smoke_items(num=5, layers=3, dim=6, seed=0):
    rng = np.random.default_rng(seed)
    return {70 + i: rng.normal(size=(layers, dim)).astype(np.float32)
            for i in range(num)}


def validate_with_primary(path):
    proc = subprocess.run(
        [sys.executable, "-m", "dffrec.cli", "validate", "--store", str(path)],
        capture_output=True, text=True)
    return proc.returncode, proc.stdout + proc.stderr


def test_five_item_round_trip_is_bit_exact(tmp_path):
    items = smoke_items()
    path = tmp_path / "smoke.dffs"
    write_store(path, items, "stub-3x6|prompt=rec:abc|modality=video|pooling=mean")
    store = read_store(path)
    assert list(store.ids) == sorted(items)
    assert store.header.provenance == "hidden_state"
    assert store.header.model_tag.startswith("stub-3x6|prompt=rec:")
    for row, item_id in enumerate(store.ids):
        np.testing.assert_array_equal(store.matrix[row], items[int(item_id)])


def test_emitted_store_passes_primary_validate(tmp_path):
    path = tmp_path / "ok.dffs"
    write_store(path, smoke_items(), "tag")
    code, out = validate_with_primary(path)
    assert code == 0, out
    assert "clean" in out


def test_byte_parity_with_the_primary_writer(tmp_path):
    """Same items, same tag: both writers must emit identical bytes."""
    items = smoke_items(num=4, layers=2, dim=5, seed=3)
    ours = tmp_path / "ours.dffs"
    theirs = tmp_path / "theirs.dffs"
    write_store(ours, items, "parity-check")
    primary_write(theirs, StoreHeader("hidden_state", 2, 5, "parity-check"),
                  items)
    assert ours.read_bytes() == theirs.read_bytes()


def test_caption_store_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    items = {i: rng.normal(size=(1, 8)).astype(np.float32) for i in (4, 9, 2)}
    path = tmp_path / "caps.dffs"
    write_store(path, items, "tag|text_encoder=stub-text-8",
                provenance="caption")
    store = read_store(path)
    assert store.header.provenance == "caption"
    assert store.header.num_layers == 1
    code, out = validate_with_primary(path)
    assert code == 0, out


def test_captions_tsv_is_flat_text(tmp_path):
    path = tmp_path / "caps.captions.tsv"
    write_captions_tsv(path, {7: "one line", 2: "tabs\tand\nnewlines"})
    assert path.read_text(encoding="utf-8") == \
        "2\ttabs and newlines\n7\tone line\n"


def test_writer_rejects_bad_input(tmp_path):
    path = tmp_path / "bad.dffs"
    with pytest.raises(StoreWriteError, match="empty store"):
        write_store(path, {}, "t")
    with pytest.raises(StoreWriteError, match="unsigned"):
        write_store(path, {-1: np.zeros((2, 3), np.float32)}, "t")
    with pytest.raises(StoreWriteError, match="expected shape"):
        write_store(path, {1: np.zeros((2, 3), np.float32),
                           2: np.zeros((2, 4), np.float32)}, "t")
    with pytest.raises(StoreWriteError, match="non-finite"):
        write_store(path, {1: np.full((2, 3), np.nan, np.float32)}, "t")
    with pytest.raises(StoreWriteError, match="one layer"):
        write_store(path, {1: np.zeros((2, 3), np.float32)}, "t",
                    provenance="caption")
    with pytest.raises(StoreWriteError, match="unknown provenance"):
        write_store(path, {1: np.zeros((2, 3), np.float32)}, "t",
                    provenance="synthetic")
