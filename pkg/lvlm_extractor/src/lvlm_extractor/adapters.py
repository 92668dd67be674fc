"""Model adapters.

A pipeline needs exactly three calls from a model: per-layer token hidden
states for a prompted media item, a generated caption, and a text embedding
for the caption paradigm. `StubModel` implements that surface with
hash-seeded pseudo activations so everything downstream runs offline and
deterministically; `hf.TransformersAdapter` wires the same surface to a
real decoder-layered vision-language model.

Adapters expose `name`, `text_encoder`, `num_layers`, `hidden_dim`, and the
three methods below. Hidden-state extraction must not sample or generate,
so identical inputs give identical vectors.
"""

import hashlib

import numpy as np

from . import ModelError
from .media import MediaItem


def _seeded_rng(*parts: bytes) -> np.random.Generator:
    h = hashlib.sha256()
    for part in parts:
        h.update(len(part).to_bytes(8, "little"))
        h.update(part)
    return np.random.default_rng(int.from_bytes(h.digest()[:8], "little"))


class StubModel:
    """Deterministic offline stand-in with the real adapter surface.

    Same model name, prompt, and media bytes always give bit-identical
    outputs; any change decorrelates them. Useful for pipeline tests, dry
    runs, and generating fixture stores without an accelerator.
    """

    _BITS = (
        ("a street performer", "two cooks", "a drone shot of a coastline",
         "a cat", "a crowd at a night market", "an e-sports commentator"),
        ("demonstrating a trick", "preparing a regional dish",
         "panning over rooftops", "reacting to an unboxing",
         "dancing in sync", "explaining a chart"),
        ("in a fast-cut vlog style", "as a slow cinematic montage",
         "with captions and stickers", "in a single static take",
         "set to trending audio", "in split-screen comparison"),
    )

    def __init__(self, num_layers=8, hidden_dim=32, name=None):
        if num_layers < 1 or hidden_dim < 1:
            raise ModelError(f"bad stub shape {num_layers}x{hidden_dim}")
        self.num_layers = num_layers
        self.hidden_dim = hidden_dim
        self.name = name or f"stub-{num_layers}x{hidden_dim}"
        self.text_encoder = f"stub-text-{hidden_dim}"

    def hidden_states(self, prompt: str, media: MediaItem) -> np.ndarray:
        """(num_layers, num_tokens, hidden_dim) float32; no generation."""
        rng = _seeded_rng(b"hidden", self.name.encode(), prompt.encode(),
                          media.signature())
        tokens = 4 + int(rng.integers(0, 13))
        return rng.normal(size=(self.num_layers, tokens, self.hidden_dim)
                          ).astype(np.float32)

    def generate_caption(self, prompt: str, media: MediaItem) -> str:
        rng = _seeded_rng(b"caption", self.name.encode(), prompt.encode(),
                          media.signature())
        subject, action, style = (bits[rng.integers(len(bits))]
                                  for bits in self._BITS)
        return f"The clip shows {subject} {action}, {style}."

    def embed_text(self, text: str) -> np.ndarray:
        rng = _seeded_rng(b"embed", self.text_encoder.encode(),
                          text.encode("utf-8"))
        return rng.normal(size=self.hidden_dim).astype(np.float32)


def resolve_model(spec: str):
    """Map a --model value to an adapter.

    'stub' and 'stub:<layers>x<dim>' build the offline stand-in;
    'hf:<model id>' loads a transformers checkpoint (heavy, optional).
    """
    if spec == "stub":
        return StubModel()
    if spec.startswith("stub:"):
        shape = spec[len("stub:"):]
        try:
            layers, dim = (int(x) for x in shape.split("x"))
        except ValueError:
            raise ModelError(
                f"bad stub spec {spec!r}; expected stub:<layers>x<dim>") from None
        return StubModel(layers, dim, name=spec)
    if spec.startswith("hf:"):
        from .hf import TransformersAdapter
        return TransformersAdapter(spec[len("hf:"):])
    raise ModelError(
        f"unknown model {spec!r}; expected stub, stub:<L>x<D>, or hf:<model id>")
