"""Item representation: multi-layer feature aggregation fused with ID embeddings.

Content side: per item the store holds L frozen feature vectors, one per
extractor layer. The aggregator reduces them to a single vector, either by
picking one layer, by uniform averaging, or through a learned softmax over
global layer logits, then applies a shared linear projection into the
embedding space.

ID side: a trainable embedding table, row 0 reserved for padding and held
at zero.

The gate MLP sees [e_id; e_content] and emits a sigmoid gate g, and the
fused row is g*e_id + (1-g)*e_content. Replacement drops the ID path
entirely; id_only drops the content path (the degenerate arm used by the
ablation harness).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .optim import ParameterSet

AGGREGATIONS = ("single_layer", "uniform_average", "learned_weights")
STRATEGIES = ("fusion", "replacement", "id_only")


class LayerAggregator:
    """Collapse (N, L, feat_dim) frozen features to (N, d) trainable output."""

    def __init__(self, params: ParameterSet, num_layers, feat_dim, out_dim,
                 mode="learned_weights", layer_k=1, rng=None, prefix="agg"):
        if mode not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation mode '{mode}' (expected one of {AGGREGATIONS})")
        if num_layers < 1:
            raise ValueError(f"num_layers must be >= 1, got {num_layers}")
        if mode == "single_layer" and not 1 <= layer_k <= num_layers:
            raise ValueError(f"layer_k must be in [1, {num_layers}], got {layer_k}")
        rng = rng or np.random.default_rng(0)
        self.mode = mode
        self.num_layers = num_layers
        self.layer_k = layer_k
        # zero logits: learned weights start exactly uniform
        self.logits = params.add(f"{prefix}.layer_logits", np.zeros(num_layers))
        self.proj_w = params.add(
            f"{prefix}.proj_w",
            rng.normal(0.0, 1.0 / np.sqrt(feat_dim), size=(feat_dim, out_dim)))
        self.proj_b = params.add(f"{prefix}.proj_b", np.zeros(out_dim))

    def layer_weights(self) -> np.ndarray:
        """Current mixing weights over layers (sums to 1)."""
        if self.mode == "single_layer":
            w = np.zeros(self.num_layers, dtype=np.float32)
            w[self.layer_k - 1] = 1.0
            return w
        if self.mode == "uniform_average":
            return np.full(self.num_layers, 1.0 / self.num_layers, dtype=np.float32)
        e = np.exp(self.logits.data - self.logits.data.max())
        return e / e.sum()

    def aggregate(self, feats: Tensor) -> Tensor:
        """feats: (N, L, feat_dim) -> projected (N, d)."""
        if feats.ndim != 3 or feats.shape[1] != self.num_layers:
            raise ShapeError(
                f"aggregate: expected (N, {self.num_layers}, feat_dim), got {feats.shape}")
        if self.mode == "single_layer":
            pooled = ad.index_axis(feats, 1, self.layer_k - 1)
        elif self.mode == "uniform_average":
            pooled = ad.mean(feats, axis=1)
        else:
            alpha = ad.softmax(self.logits, axis=0)
            pooled = ad.sum_(ad.mul(feats, ad.reshape(alpha, (1, self.num_layers, 1))), axis=1)
        return ad.add(ad.matmul(pooled, self.proj_w), self.proj_b)


class FusionGate:
    """Combine ID and content embeddings according to the configured strategy."""

    def __init__(self, params: ParameterSet, dim, strategy="fusion",
                 scalar_gate=False, rng=None, prefix="gate"):
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy '{strategy}' (expected one of {STRATEGIES})")
        rng = rng or np.random.default_rng(0)
        self.strategy = strategy
        self.dim = dim
        self.scalar_gate = scalar_gate
        if strategy == "fusion":
            out = 1 if scalar_gate else dim
            self.w1 = params.add(f"{prefix}.w1", rng.normal(0.0, 1.0 / np.sqrt(2 * dim), size=(2 * dim, dim)))
            self.b1 = params.add(f"{prefix}.b1", np.zeros(dim))
            self.w2 = params.add(f"{prefix}.w2", rng.normal(0.0, 1.0 / np.sqrt(dim), size=(dim, out)))
            self.b2 = params.add(f"{prefix}.b2", np.zeros(out))

    def gate_values(self, e_id: Tensor, e_content: Tensor) -> Tensor:
        hidden = ad.relu(ad.add(ad.matmul(ad.concat([e_id, e_content], axis=-1), self.w1), self.b1))
        return ad.sigmoid(ad.add(ad.matmul(hidden, self.w2), self.b2))

    def fuse(self, e_id: Tensor, e_content: Tensor) -> Tensor:
        if e_id.shape != e_content.shape:
            raise ShapeError(f"fuse: embedding shapes differ: {e_id.shape} vs {e_content.shape}")
        if self.strategy == "replacement":
            return e_content
        if self.strategy == "id_only":
            return e_id
        g = self.gate_values(e_id, e_content)
        return ad.add(ad.mul(g, e_id), ad.mul(ad.sub(1.0, g), e_content))


class ItemEmbedder:
    """Trainable item representation over an internal contiguous vocabulary.

    Internal index 0 is padding; indices 1..V map to catalog items. The
    feature bank is a frozen (V+1, L, feat_dim) array with a zero row 0.
    Padding rows come out exactly zero and contribute no gradient.
    """

    def __init__(self, params: ParameterSet, num_items, num_layers, feat_dim, dim,
                 aggregation="learned_weights", layer_k=1, strategy="fusion",
                 scalar_gate=False, rng=None):
        rng = rng or np.random.default_rng(0)
        self.num_items = num_items
        self.dim = dim
        table = rng.normal(0.0, 0.02, size=(num_items + 1, dim))
        table[0] = 0.0
        self.id_table = params.add("item_emb.table", table)
        self.aggregator = LayerAggregator(
            params, num_layers, feat_dim, dim, mode=aggregation, layer_k=layer_k, rng=rng)
        self.gate = FusionGate(params, dim, strategy=strategy, scalar_gate=scalar_gate, rng=rng)
        self.feature_bank = None

    def attach_features(self, bank: np.ndarray):
        expected = (self.num_items + 1, self.aggregator.num_layers)
        if bank.shape[:2] != expected:
            raise ShapeError(f"feature bank shape {bank.shape} does not start with {expected}")
        self.feature_bank = np.asarray(bank, dtype=np.float32)

    def embed(self, ids: np.ndarray) -> Tensor:
        """ids: int array of any shape -> Tensor (*ids.shape, dim)."""
        ids = np.asarray(ids)
        if self.feature_bank is None and self.gate.strategy != "id_only":
            raise RuntimeError("embed: no feature bank attached")
        flat = ids.reshape(-1)
        e_id = ad.embedding(self.id_table, flat)
        if self.gate.strategy == "id_only":
            fused = e_id
        else:
            feats = Tensor(self.feature_bank[flat])
            e_content = self.aggregator.aggregate(feats)
            fused = self.gate.fuse(e_id, e_content)
        pad_mask = (flat != 0).astype(np.float32)[:, None]
        fused = ad.mul(fused, Tensor(pad_mask))
        return ad.reshape(fused, ids.shape + (self.dim,))

    def catalog_embeddings(self) -> Tensor:
        """Fused embeddings for every real item, shape (V, d), ids 1..V."""
        return self.embed(np.arange(1, self.num_items + 1, dtype=np.int64))
