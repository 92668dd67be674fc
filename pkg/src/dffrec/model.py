"""The full recommender: item embedder + sequence backbone + scoring.

Also owns the checkpoint format (magic "DFFC"): a small sorted-key JSON
meta block describing the architecture, followed by named float32 arrays.
Writing is deterministic, so identical training runs produce byte-identical
checkpoints.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import BackboneConfig, SequenceBackbone, sequence_loss
from .fusion import AGGREGATIONS, STRATEGIES, ItemEmbedder
from .optim import ParameterSet
from .store import FeatureStore, StoreError

CKPT_MAGIC = b"DFFC"
CKPT_VERSION = 1


@dataclass
class ModelConfig:
    dim: int = 32
    num_blocks: int = 2
    num_heads: int = 2
    max_seq_len: int = 20
    dropout: float = 0.0
    strategy: str = "fusion"
    aggregation: str = "learned_weights"
    layer_k: int = 1
    scalar_gate: bool = False

    def validate(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy '{self.strategy}'")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation '{self.aggregation}'")
        BackboneConfig(self.dim, self.num_blocks, self.num_heads,
                       self.max_seq_len, self.dropout).validate()


@dataclass
class ItemVocab:
    """Maps raw catalog item ids to contiguous internal indices, 0 = padding."""

    ids: np.ndarray  # sorted raw ids; internal index = position + 1

    def __post_init__(self):
        self._idx = {int(raw): i + 1 for i, raw in enumerate(self.ids)}

    @property
    def size(self):
        return len(self.ids)

    def to_internal(self, raw_items, context=""):
        out = []
        for raw in raw_items:
            idx = self._idx.get(int(raw))
            if idx is None:
                where = f" ({context})" if context else ""
                raise StoreError(f"item {raw} missing from store{where}")
            out.append(idx)
        return out

    def to_raw(self, internal):
        return int(self.ids[internal - 1])


class Recommender:
    def __init__(self, config: ModelConfig, vocab: ItemVocab, num_layers, feat_dim, seed=0):
        config.validate()
        self.config = config
        self.vocab = vocab
        self.num_layers = num_layers
        self.feat_dim = feat_dim
        self.params = ParameterSet()
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9e37]))
        self.embedder = ItemEmbedder(
            self.params, vocab.size, num_layers, feat_dim, config.dim,
            aggregation=config.aggregation, layer_k=config.layer_k,
            strategy=config.strategy, scalar_gate=config.scalar_gate, rng=rng)
        self.backbone = SequenceBackbone(
            self.params,
            BackboneConfig(config.dim, config.num_blocks, config.num_heads,
                           config.max_seq_len, config.dropout),
            rng=rng)

    def attach_store(self, store: FeatureStore):
        if store.header.num_layers != self.num_layers or store.header.dim != self.feat_dim:
            raise StoreError(
                f"model expects features ({self.num_layers}, {self.feat_dim}), "
                f"store has ({store.header.num_layers}, {store.header.dim})")
        bank = np.zeros((self.vocab.size + 1, self.num_layers, self.feat_dim), dtype=np.float32)
        rows = store._row
        for i, raw in enumerate(self.vocab.ids):
            bank[i + 1] = store.matrix[rows[int(raw)]]
        self.embedder.attach_features(bank)

    def batch_loss(self, inputs: np.ndarray, targets: np.ndarray, train_rng=None) -> Tensor:
        """inputs/targets: (B, T) internal indices, 0 = padding."""
        emb = self.embedder.embed(inputs)
        hidden = self.backbone.encode(emb, (inputs != 0).astype(np.float32), train_rng)
        catalog = self.embedder.catalog_embeddings()
        return sequence_loss(hidden, catalog, targets, (targets != 0).astype(np.float32))

    def score_sequences(self, inputs: np.ndarray) -> np.ndarray:
        """Inference scores for the next item after each left-padded row.

        Returns (B, V) scores aligned with internal indices 1..V.
        """
        with ad.no_grad():
            emb = self.embedder.embed(inputs)
            hidden = self.backbone.encode(emb, (inputs != 0).astype(np.float32))
            catalog = self.embedder.catalog_embeddings()
            last = hidden.data[:, -1, :]
            return last @ catalog.data.T

    def layer_weights(self):
        return self.embedder.aggregator.layer_weights()

    # ------------------------------------------------------------ checkpoints

    def meta(self):
        return {
            "version": CKPT_VERSION,
            "dim": self.config.dim,
            "num_blocks": self.config.num_blocks,
            "num_heads": self.config.num_heads,
            "max_seq_len": self.config.max_seq_len,
            "dropout": self.config.dropout,
            "strategy": self.config.strategy,
            "aggregation": self.config.aggregation,
            "layer_k": self.config.layer_k,
            "scalar_gate": self.config.scalar_gate,
            "num_layers": self.num_layers,
            "feat_dim": self.feat_dim,
            "vocab": [int(i) for i in self.vocab.ids],
        }

    def save_checkpoint(self, path, state=None):
        save_checkpoint(path, self.meta(), state or self.params.state_dict())

    @classmethod
    def from_checkpoint(cls, path, seed=0):
        meta, state = load_checkpoint(path)
        config = ModelConfig(
            dim=meta["dim"], num_blocks=meta["num_blocks"], num_heads=meta["num_heads"],
            max_seq_len=meta["max_seq_len"], dropout=meta["dropout"],
            strategy=meta["strategy"], aggregation=meta["aggregation"],
            layer_k=meta["layer_k"], scalar_gate=meta["scalar_gate"])
        vocab = ItemVocab(np.asarray(meta["vocab"], dtype=np.int64))
        model = cls(config, vocab, meta["num_layers"], meta["feat_dim"], seed=seed)
        model.params.load_state_dict(state)
        return model


def save_checkpoint(path, meta: dict, state: dict):
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<II", CKPT_VERSION, len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(state)))
        for name in sorted(state):
            arr = np.ascontiguousarray(state[name], dtype=np.float32)
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, blob_len = struct.unpack_from("<II", raw, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    meta = json.loads(raw[off:off + blob_len].decode("utf-8"))
    off += blob_len
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    state = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", raw, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f4", offset=off, count=size).reshape(shape)
        off += 4 * size
        state[name] = arr.copy()
    return meta, state
