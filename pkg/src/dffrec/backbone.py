"""Causal self-attention backbone over item embedding sequences.

Pre-norm transformer blocks: x += MHA(LN(x)); x += FFN(LN(x)); final LN.
Sequences are left-padded with index 0; padded positions are masked out of
attention keys and zeroed after every block, and position t can only attend
to positions <= t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .optim import ParameterSet

MASK_BIAS = -1e9


@dataclass
class BackboneConfig:
    dim: int = 32
    num_blocks: int = 2
    num_heads: int = 2
    max_seq_len: int = 20
    dropout: float = 0.0

    def validate(self):
        if self.num_blocks < 1:
            raise ValueError(f"num_blocks must be >= 1, got {self.num_blocks}")
        if self.max_seq_len < 2:
            raise ValueError(f"max_seq_len must be >= 2, got {self.max_seq_len}")
        if self.dim % self.num_heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


class SequenceBackbone:
    def __init__(self, params: ParameterSet, config: BackboneConfig, rng=None):
        config.validate()
        rng = rng or np.random.default_rng(0)
        self.config = config
        d = config.dim
        std = 1.0 / np.sqrt(d)
        self.pos_table = params.add("bb.pos", rng.normal(0.0, 0.02, size=(config.max_seq_len, d)))
        self.blocks = []
        for b in range(config.num_blocks):
            p = f"bb.block{b}"
            blk = {
                "ln1_g": params.add(f"{p}.ln1_g", np.ones(d)),
                "ln1_b": params.add(f"{p}.ln1_b", np.zeros(d)),
                "ln2_g": params.add(f"{p}.ln2_g", np.ones(d)),
                "ln2_b": params.add(f"{p}.ln2_b", np.zeros(d)),
            }
            for name in ("wq", "wk", "wv", "wo"):
                blk[name] = params.add(f"{p}.{name}", rng.normal(0.0, std, size=(d, d)))
                blk[name + "_b"] = params.add(f"{p}.{name}_b", np.zeros(d))
            blk["ffn_w1"] = params.add(f"{p}.ffn_w1", rng.normal(0.0, std, size=(d, d)))
            blk["ffn_b1"] = params.add(f"{p}.ffn_b1", np.zeros(d))
            blk["ffn_w2"] = params.add(f"{p}.ffn_w2", rng.normal(0.0, std, size=(d, d)))
            blk["ffn_b2"] = params.add(f"{p}.ffn_b2", np.zeros(d))
            self.blocks.append(blk)
        self.final_g = params.add("bb.final_g", np.ones(d))
        self.final_b = params.add("bb.final_b", np.zeros(d))

    def _split_heads(self, x: Tensor, batch, seq):
        h = self.config.num_heads
        hd = self.config.dim // h
        return ad.transpose(ad.reshape(x, (batch, seq, h, hd)), (0, 2, 1, 3))

    def encode(self, emb: Tensor, pad_mask: np.ndarray, train_rng=None) -> Tensor:
        """emb: (B, T, d) item embeddings; pad_mask: (B, T) 1.0 at real positions.

        Returns (B, T, d) hidden states; padded rows are zero.
        """
        cfg = self.config
        if emb.ndim != 3 or emb.shape[2] != cfg.dim:
            raise ShapeError(f"encode: expected (B, T, {cfg.dim}), got {emb.shape}")
        batch, seq, _ = emb.shape
        if seq > cfg.max_seq_len:
            raise ShapeError(f"encode: sequence length {seq} exceeds max_seq_len {cfg.max_seq_len}")
        pad_mask = np.asarray(pad_mask, dtype=np.float32)
        if pad_mask.shape != (batch, seq):
            raise ShapeError(f"encode: pad_mask shape {pad_mask.shape} != ({batch}, {seq})")

        drop = cfg.dropout if train_rng is not None else 0.0
        mask3 = Tensor(pad_mask[:, :, None])

        # attention bias: causal upper triangle plus padded keys
        causal = np.triu(np.full((seq, seq), MASK_BIAS, dtype=np.float32), k=1)
        key_pad = (1.0 - pad_mask)[:, None, None, :] * MASK_BIAS
        bias = causal[None, None, :, :] + key_pad

        pos = ad.embedding(self.pos_table, np.arange(seq))
        x = ad.mul(ad.add(emb, pos), mask3)
        for blk in self.blocks:
            h = ad.layer_norm(x, blk["ln1_g"], blk["ln1_b"])
            q = self._split_heads(ad.add(ad.matmul(h, blk["wq"]), blk["wq_b"]), batch, seq)
            k = self._split_heads(ad.add(ad.matmul(h, blk["wk"]), blk["wk_b"]), batch, seq)
            v = self._split_heads(ad.add(ad.matmul(h, blk["wv"]), blk["wv_b"]), batch, seq)
            att = ad.attention(q, k, v, bias)
            att = ad.reshape(ad.transpose(att, (0, 2, 1, 3)), (batch, seq, cfg.dim))
            att = ad.add(ad.matmul(att, blk["wo"]), blk["wo_b"])
            att = ad.dropout(att, drop, train_rng)
            x = ad.mul(ad.add(x, att), mask3)

            h2 = ad.layer_norm(x, blk["ln2_g"], blk["ln2_b"])
            f = ad.relu(ad.add(ad.matmul(h2, blk["ffn_w1"]), blk["ffn_b1"]))
            f = ad.add(ad.matmul(f, blk["ffn_w2"]), blk["ffn_b2"])
            f = ad.dropout(f, drop, train_rng)
            x = ad.mul(ad.add(x, f), mask3)
        return ad.mul(ad.layer_norm(x, self.final_g, self.final_b), mask3)


def score_candidates(hidden: Tensor, candidates: Tensor) -> Tensor:
    """Dot-product scores. hidden (B, d) or (d,), candidates (C, d) -> (B, C) or (C,)."""
    single = hidden.ndim == 1
    h = ad.reshape(hidden, (1, hidden.shape[0])) if single else hidden
    if h.shape[-1] != candidates.shape[-1]:
        raise ShapeError(f"score_candidates: dim mismatch {h.shape} vs {candidates.shape}")
    scores = ad.matmul(h, ad.transpose(candidates))
    return ad.reshape(scores, (candidates.shape[0],)) if single else scores


def sequence_loss(hidden: Tensor, catalog: Tensor, targets: np.ndarray,
                  pad_mask: np.ndarray) -> Tensor:
    """Mean full-softmax cross-entropy over supervised positions.

    hidden (B, T, d); catalog (V, d) fused embeddings of items 1..V;
    targets (B, T) internal item indices (1-based, 0 = padding);
    pad_mask (B, T) 1.0 where a target is supervised.
    """
    batch, seq, d = hidden.shape
    targets = np.asarray(targets)
    pad_mask = np.asarray(pad_mask, dtype=np.float32)
    supervised = float(pad_mask.sum())
    if supervised == 0:
        raise ValueError("sequence_loss: no supervised positions in batch")
    if np.any((targets == 0) & (pad_mask > 0)):
        raise ValueError("sequence_loss: padding target at a supervised position")

    flat = ad.reshape(hidden, (batch * seq, d))
    logits = ad.matmul(flat, ad.transpose(catalog))
    # class index = internal item index - 1; padded rows get weight 0
    classes = np.maximum(targets.reshape(-1) - 1, 0)
    weights = (pad_mask.reshape(-1) / supervised).astype(np.float32)
    return ad.cross_entropy(logits, classes, weights)
