"""Item feature store (DFFS binary format) and interaction-log IO.

DFFS file layout, all integers little-endian:

    magic        4 bytes  b"DFFS"
    version      u32      currently 1
    provenance   u32      0=hidden_state, 1=caption, 2=synthetic
    num_items    u64
    num_layers   u32      L >= 1 (caption stores must have L == 1)
    dim          u32      >= 1
    tag_len      u32      followed by tag_len bytes of UTF-8 model tag
    index        num_items * (item_id u64, offset u64), sorted by item_id;
                 offsets are absolute byte positions of each item's block
    payload      per item, L*dim float32, layer-major

Writing the same items twice yields byte-identical files: items are sorted
by id and every field has one encoding.

The interaction log is line-delimited UTF-8 text, one event per line:

    user_id \t item_id \t timestamp

Timestamps must be non-decreasing within each user.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"DFFS"
VERSION = 1
PROVENANCES = ("hidden_state", "caption", "synthetic")

_HEAD = struct.Struct("<4sIIQIII")
_IDX = struct.Struct("<QQ")


class StoreError(ValueError):
    """Malformed store file or invalid write request."""


class LogError(ValueError):
    """Malformed interaction log."""


@dataclass(frozen=True)
class StoreHeader:
    provenance: str
    num_layers: int
    dim: int
    model_tag: str = ""
    version: int = VERSION

    def validate(self):
        if self.provenance not in PROVENANCES:
            raise StoreError(f"unknown provenance '{self.provenance}' (expected one of {PROVENANCES})")
        if self.num_layers < 1:
            raise StoreError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.dim < 1:
            raise StoreError(f"dim must be >= 1, got {self.dim}")
        if self.provenance == "caption" and self.num_layers != 1:
            raise StoreError(f"caption stores must have num_layers == 1, got {self.num_layers}")


def write_store(path, header: StoreHeader, items):
    """Write item features to a DFFS file.

    items maps item_id -> float32 array of shape (num_layers, dim). Raises
    StoreError on empty input, duplicate ids, shape mismatch, or non-finite
    values.
    """
    header.validate()
    if hasattr(items, "items"):
        pairs = list(items.items())
    else:
        pairs = list(items)
    if not pairs:
        raise StoreError("refusing to write an empty store")
    seen = set()
    rows = []
    for item_id, vec in pairs:
        item_id = int(item_id)
        if item_id < 0:
            raise StoreError(f"item id must be unsigned, got {item_id}")
        if item_id in seen:
            raise StoreError(f"duplicate item id {item_id}")
        seen.add(item_id)
        arr = np.asarray(vec, dtype=np.float32)
        if arr.shape != (header.num_layers, header.dim):
            raise StoreError(
                f"item {item_id}: expected shape ({header.num_layers}, {header.dim}), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise StoreError(f"item {item_id}: non-finite feature values")
        rows.append((item_id, arr))
    rows.sort(key=lambda r: r[0])

    tag = header.model_tag.encode("utf-8")
    head = _HEAD.pack(MAGIC, header.version, PROVENANCES.index(header.provenance),
                      len(rows), header.num_layers, header.dim, len(tag)) + tag
    block = header.num_layers * header.dim * 4
    payload_start = len(head) + _IDX.size * len(rows)
    with open(path, "wb") as f:
        f.write(head)
        for i, (item_id, _) in enumerate(rows):
            f.write(_IDX.pack(item_id, payload_start + i * block))
        for _, arr in rows:
            f.write(arr.tobytes())


class FeatureStore:
    """In-memory view of a DFFS file with O(1) id lookup."""

    def __init__(self, header: StoreHeader, ids, matrix):
        self.header = header
        self.ids = ids                      # sorted int64 array
        self.matrix = matrix                # (num_items, L, dim) float32
        self._row = {int(i): r for r, i in enumerate(ids)}

    @property
    def num_items(self):
        return len(self.ids)

    def __contains__(self, item_id):
        return int(item_id) in self._row

    def item_vectors(self, item_id):
        """(num_layers, dim) float32 for one item; KeyError if absent."""
        row = self._row.get(int(item_id))
        if row is None:
            raise KeyError(f"item not in store: {item_id}")
        return self.matrix[row]


def read_store(path) -> FeatureStore:
    """Parse and verify a DFFS file."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEAD.size:
        raise StoreError(f"{path}: truncated header")
    magic, version, prov, num_items, num_layers, dim, tag_len = _HEAD.unpack_from(raw)
    if magic != MAGIC:
        raise StoreError(f"{path}: bad magic {magic!r}, not a DFFS file")
    if version != VERSION:
        raise StoreError(f"{path}: unsupported version {version} (reader supports {VERSION})")
    if prov >= len(PROVENANCES):
        raise StoreError(f"{path}: unknown provenance code {prov}")
    header = StoreHeader(PROVENANCES[prov], num_layers, dim,
                         raw[_HEAD.size:_HEAD.size + tag_len].decode("utf-8"), version)
    header.validate()
    if num_items < 1:
        raise StoreError(f"{path}: store contains no items")

    idx_start = _HEAD.size + tag_len
    block = num_layers * dim * 4
    payload_start = idx_start + _IDX.size * num_items
    expected = payload_start + num_items * block
    if len(raw) < expected:
        raise StoreError(f"{path}: truncated payload (file {len(raw)} bytes, index implies {expected})")
    if len(raw) > expected:
        raise StoreError(f"{path}: index/payload size disagreement (file {len(raw)} bytes, index implies {expected})")

    ids = np.empty(num_items, dtype=np.int64)
    prev = -1
    for i in range(num_items):
        item_id, offset = _IDX.unpack_from(raw, idx_start + i * _IDX.size)
        if item_id <= prev:
            raise StoreError(f"{path}: index not sorted by unique item id at entry {i}")
        if offset != payload_start + i * block:
            raise StoreError(f"{path}: index offset for item {item_id} points outside its block")
        ids[i] = item_id
        prev = item_id
    matrix = np.frombuffer(raw, dtype="<f4", offset=payload_start,
                           count=num_items * num_layers * dim)
    matrix = matrix.reshape(num_items, num_layers, dim).copy()
    return FeatureStore(header, ids, matrix)


# ------------------------------------------------------------ interaction log

@dataclass
class InteractionLog:
    """Per-user event sequences, insertion-ordered."""

    users: dict[int, list[tuple[int, int]]] = field(default_factory=dict)  # user -> [(item, ts)]

    @property
    def num_users(self):
        return len(self.users)

    @property
    def num_events(self):
        return sum(len(v) for v in self.users.values())

    def item_sequence(self, user):
        return [item for item, _ in self.users[user]]

    def all_items(self):
        out = set()
        for events in self.users.values():
            out.update(item for item, _ in events)
        return out


def write_interaction_log(path, log: InteractionLog):
    with open(path, "w", encoding="utf-8") as f:
        for user, events in log.users.items():
            for item, ts in events:
                f.write(f"{user}\t{item}\t{ts}\n")


def read_interaction_log(path) -> InteractionLog:
    log = InteractionLog()
    last_ts = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise LogError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            try:
                user, item, ts = int(parts[0]), int(parts[1]), int(parts[2])
            except ValueError:
                raise LogError(f"{path}:{lineno}: non-integer field in '{line}'") from None
            if user in last_ts and ts < last_ts[user]:
                raise LogError(f"{path}:{lineno}: timestamp decreases for user {user}")
            last_ts[user] = ts
            log.users.setdefault(user, []).append((item, ts))
    return log


# ----------------------------------------------------------------- validation

@dataclass
class ValidationReport:
    num_items: int
    num_users: int
    num_events: int
    missing_items: list
    non_finite_items: list
    dim_ok: bool = True

    @property
    def is_clean(self):
        return not self.missing_items and not self.non_finite_items and self.dim_ok

    def lines(self):
        out = [
            f"store items:      {self.num_items}",
            f"log users:        {self.num_users}",
            f"log events:       {self.num_events}",
        ]
        if self.missing_items:
            shown = ", ".join(str(i) for i in self.missing_items[:10])
            more = "" if len(self.missing_items) <= 10 else f" (+{len(self.missing_items) - 10} more)"
            out.append(f"MISSING from store: {shown}{more}")
        if self.non_finite_items:
            out.append(f"NON-FINITE features: {self.non_finite_items[:10]}")
        out.append("status: " + ("clean" if self.is_clean else "FAILED"))
        return out


def validate_store(store: FeatureStore, log: InteractionLog | None = None) -> ValidationReport:
    """Coverage and finiteness checks for a store, optionally against a log."""
    bad = np.where(~np.isfinite(store.matrix).all(axis=(1, 2)))[0]
    non_finite = [int(store.ids[i]) for i in bad]
    missing = []
    if log is not None:
        missing = sorted(i for i in log.all_items() if i not in store)
    return ValidationReport(
        num_items=store.num_items,
        num_users=log.num_users if log else 0,
        num_events=log.num_events if log else 0,
        missing_items=missing,
        non_finite_items=non_finite,
    )
