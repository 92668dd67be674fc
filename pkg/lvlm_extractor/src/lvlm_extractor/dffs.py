"""DFFS writing, restated rather than imported.

The binary format is the contract between the extractor and the trainer,
so this module spells the layout out independently; the cross-component
round-trip test is what keeps the two in sync. All integers little-endian:

    magic        4 bytes  b"DFFS"
    version      u32      1
    provenance   u32      0=hidden_state, 1=caption
    num_items    u64
    num_layers   u32      caption stores must have num_layers == 1
    dim          u32
    tag_len      u32      followed by the UTF-8 model tag
    index        num_items * (item_id u64, absolute payload offset u64),
                 sorted by item_id
    payload      per item, num_layers*dim float32, layer-major

Writes are canonical: same items, same bytes.
"""

import struct

import numpy as np

from . import StoreWriteError

MAGIC = b"DFFS"
VERSION = 1
PROVENANCE_CODES = {"hidden_state": 0, "caption": 1}
_HEAD = struct.Struct("<4sIIQIII")
_IDX = struct.Struct("<QQ")


def write_store(path, items: dict, model_tag: str, provenance="hidden_state"):
    """items maps item_id -> (num_layers, dim) float32 array."""
    if provenance not in PROVENANCE_CODES:
        raise StoreWriteError(f"unknown provenance {provenance!r}")
    if not items:
        raise StoreWriteError("refusing to write an empty store")

    ids = sorted(int(i) for i in items)
    if ids[0] < 0:
        raise StoreWriteError(f"item id must be unsigned, got {ids[0]}")
    if len(ids) != len(items):
        raise StoreWriteError("duplicate item ids after int coercion")

    first = np.asarray(items[ids[0]], dtype=np.float32)
    if first.ndim != 2:
        raise StoreWriteError(
            f"item {ids[0]}: expected a (layers, dim) array, got shape {first.shape}")
    num_layers, dim = first.shape
    if provenance == "caption" and num_layers != 1:
        raise StoreWriteError(
            f"caption stores must have one layer, got {num_layers}")

    rows = []
    for item_id in ids:
        arr = np.ascontiguousarray(items[item_id], dtype=np.float32)
        if arr.shape != (num_layers, dim):
            raise StoreWriteError(
                f"item {item_id}: expected shape ({num_layers}, {dim}), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise StoreWriteError(f"item {item_id}: non-finite feature values")
        rows.append(arr)

    tag = model_tag.encode("utf-8")
    head = _HEAD.pack(MAGIC, VERSION, PROVENANCE_CODES[provenance],
                      len(ids), num_layers, dim, len(tag)) + tag
    block = num_layers * dim * 4
    payload_start = len(head) + _IDX.size * len(ids)
    with open(path, "wb") as f:
        f.write(head)
        for i, item_id in enumerate(ids):
            f.write(_IDX.pack(item_id, payload_start + i * block))
        for arr in rows:
            f.write(arr.tobytes())


def write_captions_tsv(path, captions: dict):
    """Audit file beside a caption store: `item_id \\t caption` per line."""
    with open(path, "w", encoding="utf-8") as f:
        for item_id in sorted(captions):
            text = captions[item_id].replace("\t", " ").replace("\n", " ")
            f.write(f"{item_id}\t{text}\n")
