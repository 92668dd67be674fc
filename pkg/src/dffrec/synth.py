"""Synthetic catalog and interaction generator with planted, testable signal.

Content side: topic directions are orthonormal unit vectors; every item
gets a unit-norm content vector dominated by its topic but mixed with a
per-item dash of the other topics, so content distinguishes items within
a topic, not just between topics. Signal layers carry the item's content
vector plus noise_scale worth of Gaussian noise; the remaining layers are
pure noise of matching norm, so nothing identifies them but the signal.

Collaborative side: a per-item popularity offset plus a low-rank
user-by-item interaction, both random functions of raw item id and thus
invisible to the content features.

The next watched item is drawn (without replacement) from a softmax over
content_strength * content affinity + collab_strength * collaborative
affinity, so content-only and id-only models each capture only part of
the planted structure, while their fusion can capture both.

All latent structure derives deterministically from catalog_seed; the seed
arguments below only drive noise and sampling realizations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .store import InteractionLog, StoreHeader

COLLAB_RANK = 4
USER_COLLAB_WEIGHT = 0.5
# off-topic admixture in item/user content vectors, relative to the main topic
TOPIC_MIX = 0.5


@dataclass
class SynthSpec:
    num_users: int = 500
    num_items: int = 200
    num_topics: int = 8
    num_layers: int = 8
    dim: int = 32
    signal_layers: tuple = (4, 5)      # 1-based layer indices
    noise_scale: float = 0.5
    content_strength: float = 4.0
    collab_strength: float = 2.0
    min_len: int = 10
    max_len: int = 30
    catalog_seed: int = 0
    caption_noise: float = 1.5         # noise_scale for the derived L=1 caption view

    def validate(self):
        if self.num_topics < 1 or self.num_items < 1 or self.num_users < 1:
            raise ValueError("num_users, num_items and num_topics must be >= 1")
        if self.dim < self.num_topics:
            raise ValueError(f"dim {self.dim} must be >= num_topics {self.num_topics}")
        if self.num_layers < 1:
            raise ValueError(f"num_layers must be >= 1, got {self.num_layers}")
        bad = [l for l in self.signal_layers if not 1 <= l <= self.num_layers]
        if bad:
            raise ValueError(f"signal_layers {bad} outside [1, {self.num_layers}]")
        if self.content_strength > 0 and not self.signal_layers:
            raise ValueError("content_strength > 0 requires at least one signal layer")
        if self.noise_scale < 0:
            raise ValueError(f"noise_scale must be >= 0, got {self.noise_scale}")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError(f"need 1 <= min_len <= max_len, got {self.min_len}, {self.max_len}")
        if self.max_len + 2 > self.num_items:
            raise ValueError(
                f"max_len {self.max_len} too long for {self.num_items} items "
                "(sequences sample items without replacement)")


@dataclass
class Latents:
    """Planted ground truth, the oracle side of the synth tests."""

    topic_dirs: np.ndarray     # (num_topics, dim), orthonormal rows
    item_topics: np.ndarray    # (num_items,) int, dominant topic per item
    item_vecs: np.ndarray      # (num_items, dim), unit-norm content vectors
    popularity: np.ndarray     # (num_items,)
    item_collab: np.ndarray    # (num_items, COLLAB_RANK)
    user_topics: np.ndarray    # (num_users,) int, dominant preference
    user_vecs: np.ndarray      # (num_users, dim), unit-norm preference vectors
    user_collab: np.ndarray    # (num_users, COLLAB_RANK)

    def affinity_matrix(self, spec: SynthSpec) -> np.ndarray:
        """(num_users, num_items) sampling logits before masking."""
        content = self.user_vecs @ self.item_vecs.T
        collab = (self.popularity[None, :]
                  + USER_COLLAB_WEIGHT * (self.user_collab @ self.item_collab.T)
                  / np.sqrt(COLLAB_RANK))
        return spec.content_strength * content + spec.collab_strength * collab


def _mixed_vectors(rng, topic_dirs, dominant):
    """Unit vectors in topic span: the dominant direction plus TOPIC_MIX of
    random admixture, so vectors sharing a topic still differ."""
    num_topics = topic_dirs.shape[0]
    coef = rng.normal(size=(len(dominant), num_topics)) * (TOPIC_MIX / np.sqrt(num_topics))
    coef[np.arange(len(dominant)), dominant] = 0.0
    vecs = topic_dirs[dominant] + coef @ topic_dirs
    return vecs / np.linalg.norm(vecs, axis=1, keepdims=True)


def planted_latents(spec: SynthSpec) -> Latents:
    """Derive all hidden structure from spec.catalog_seed."""
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence([spec.catalog_seed, 0xca7a]))
    basis, _ = np.linalg.qr(rng.normal(size=(spec.dim, spec.dim)))
    topic_dirs = basis.T[:spec.num_topics]
    item_topics = rng.integers(0, spec.num_topics, size=spec.num_items)
    item_vecs = _mixed_vectors(rng, topic_dirs, item_topics)
    popularity = rng.normal(size=spec.num_items)
    item_collab = rng.normal(size=(spec.num_items, COLLAB_RANK))
    user_topics = rng.integers(0, spec.num_topics, size=spec.num_users)
    user_vecs = _mixed_vectors(rng, topic_dirs, user_topics)
    return Latents(
        topic_dirs=topic_dirs,
        item_topics=item_topics,
        item_vecs=item_vecs,
        popularity=popularity,
        item_collab=item_collab,
        user_topics=user_topics,
        user_vecs=user_vecs,
        user_collab=rng.normal(size=(spec.num_users, COLLAB_RANK)),
    )


def _item_features(spec, latents, rng, layer_set, noise_scale):
    """(num_items, len(layer_set), dim) float32; layer_set is 1-based signal mask."""
    n, d = spec.num_items, spec.dim
    num_layers = len(layer_set)
    feats = np.empty((n, num_layers, d), dtype=np.float64)
    sigma = noise_scale / np.sqrt(d)
    # pure-noise layers match the expected norm of signal layers
    off_sigma = np.sqrt(1.0 + noise_scale ** 2) / np.sqrt(d)
    for col, is_signal in enumerate(layer_set):
        if is_signal:
            feats[:, col, :] = latents.item_vecs + sigma * rng.normal(size=(n, d))
        else:
            feats[:, col, :] = off_sigma * rng.normal(size=(n, d))
    return feats.astype(np.float32)


def generate_catalog(spec: SynthSpec, seed):
    """Returns (header, items dict id -> (L, dim) array).

    Latent structure comes from spec.catalog_seed; `seed` only drives the
    feature-noise realization.
    """
    latents = planted_latents(spec)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xfea7]))
    layer_set = [l in spec.signal_layers for l in range(1, spec.num_layers + 1)]
    feats = _item_features(spec, latents, rng, layer_set, spec.noise_scale)
    header = StoreHeader(
        provenance="synthetic", num_layers=spec.num_layers, dim=spec.dim,
        model_tag=(f"synth topics={spec.num_topics} signal_layers={list(spec.signal_layers)} "
                   f"noise={spec.noise_scale:g} catalog_seed={spec.catalog_seed}"))
    items = {i + 1: feats[i] for i in range(spec.num_items)}
    return header, items


def generate_caption_catalog(spec: SynthSpec, seed):
    """Degraded single-layer view of the same catalog: the topic direction
    seen through caption_noise instead of noise_scale, L = 1."""
    latents = planted_latents(spec)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xcab7]))
    feats = _item_features(spec, latents, rng, [True], spec.caption_noise)
    header = StoreHeader(
        provenance="caption", num_layers=1, dim=spec.dim,
        model_tag=(f"synth-caption topics={spec.num_topics} noise={spec.caption_noise:g} "
                   f"catalog_seed={spec.catalog_seed}"))
    items = {i + 1: feats[i] for i in range(spec.num_items)}
    return header, items


def generate_interactions(spec: SynthSpec, store, seed) -> InteractionLog:
    """Sample per-user watch sequences; timestamps are 0, 1, 2, ...

    `store` (optional) is checked for id coverage so a mismatched catalog
    fails loudly instead of producing silently meaningless data.
    """
    latents = planted_latents(spec)
    if store is not None:
        if store.num_items != spec.num_items:
            raise ValueError(
                f"store has {store.num_items} items, spec requires {spec.num_items}")
        missing = [i for i in range(1, spec.num_items + 1) if i not in store]
        if missing:
            raise ValueError(f"store is missing item ids {missing[:5]}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1096]))
    logits = latents.affinity_matrix(spec)
    log = InteractionLog()
    for user in range(spec.num_users):
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        user_logits = logits[user].copy()
        events = []
        for t in range(length):
            shifted = user_logits - user_logits.max()
            p = np.exp(shifted)
            p /= p.sum()
            item = int(rng.choice(spec.num_items, p=p))
            events.append((item + 1, t))
            user_logits[item] = -np.inf
        log.users[user + 1] = events
    return log
