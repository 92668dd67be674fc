"""Extraction pipelines: manifest in, pooled vectors out.

Two paradigms over the same frozen model. The hidden-state pipeline pools
each decoder layer's token states into one vector per layer and emits an
L-layer store. The caption pipeline generates a description, embeds it
with the text encoder, and emits an L=1 store plus an audit TSV of the
caption texts. Per-item media failures are skipped with a logged reason;
the run continues.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import ManifestError
from .media import load_media
from .prompts import prompt_hash

log = logging.getLogger("lvlm_extractor")

POOLINGS = ("mean", "last")


def pool_tokens(states: np.ndarray, pooling: str) -> np.ndarray:
    """(num_layers, num_tokens, dim) -> (num_layers, dim)."""
    if states.ndim != 3:
        raise ValueError(f"expected (layers, tokens, dim) states, got shape {states.shape}")
    if pooling == "mean":
        return states.mean(axis=1)
    if pooling == "last":
        return states[:, -1, :]
    raise ValueError(f"unknown pooling {pooling!r} (expected one of {POOLINGS})")


def read_manifest(path):
    """TSV rows `item_id \\t media_path`, blank lines skipped."""
    rows, seen = [], set()
    try:
        lines = open(path, encoding="utf-8").read().splitlines()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise ManifestError(
                f"{path}:{lineno}: expected 2 tab-separated fields, got {len(fields)}")
        try:
            item_id = int(fields[0])
        except ValueError:
            raise ManifestError(
                f"{path}:{lineno}: item id {fields[0]!r} is not an integer") from None
        if item_id < 0:
            raise ManifestError(f"{path}:{lineno}: negative item id {item_id}")
        if item_id in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate item id {item_id}")
        seen.add(item_id)
        rows.append((item_id, fields[1]))
    if not rows:
        raise ManifestError(f"manifest {path} has no entries")
    return rows


def model_tag(adapter, prompt_name, prompt_text, modality, pooling):
    """Everything needed to tell two stores apart, in one header string."""
    return (f"{adapter.name}|prompt={prompt_name}:{prompt_hash(prompt_text)}"
            f"|modality={modality}|pooling={pooling}")


@dataclass
class ExtractionResult:
    items: dict                      # item_id -> (num_layers, dim) float32
    skipped: list                    # (item_id, reason)
    captions: dict = field(default_factory=dict)


def _iter_media(manifest, modality, max_frames, skipped):
    for item_id, path in manifest:
        try:
            yield item_id, load_media(modality, path, max_frames)
        except Exception as exc:
            log.warning("skipping item %d: %s", item_id, exc)
            skipped.append((item_id, str(exc)))


def extract_hidden(adapter, manifest, modality, prompt_text, pooling="mean",
                   max_frames=16) -> ExtractionResult:
    """Pool every decoder layer's token states; no text is generated."""
    items, skipped = {}, []
    for item_id, media in _iter_media(manifest, modality, max_frames, skipped):
        states = adapter.hidden_states(prompt_text, media)
        if states.shape[0] != adapter.num_layers or states.shape[2] != adapter.hidden_dim:
            raise ValueError(
                f"adapter {adapter.name} returned shape {states.shape}, expected "
                f"({adapter.num_layers}, tokens, {adapter.hidden_dim})")
        items[item_id] = pool_tokens(states, pooling).astype(np.float32)
    return ExtractionResult(items, skipped)


def extract_captions(adapter, manifest, modality, prompt_text,
                     max_frames=16) -> ExtractionResult:
    """Generate, embed, and keep the caption text for audit.

    Empty generations are retried once, then the item is skipped with a
    logged reason.
    """
    items, skipped, captions = {}, [], {}
    for item_id, media in _iter_media(manifest, modality, max_frames, skipped):
        text = adapter.generate_caption(prompt_text, media).strip()
        if not text:
            log.warning("empty caption for item %d, retrying once", item_id)
            text = adapter.generate_caption(prompt_text, media).strip()
        if not text:
            log.warning("skipping item %d: empty caption after retry", item_id)
            skipped.append((item_id, "empty caption after retry"))
            continue
        vec = np.asarray(adapter.embed_text(text), dtype=np.float32)
        items[item_id] = vec.reshape(1, -1)
        captions[item_id] = text
    return ExtractionResult(items, skipped, captions)
