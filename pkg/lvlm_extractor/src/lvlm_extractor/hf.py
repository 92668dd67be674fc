"""Transformers-backed adapter.

Wraps any Hugging Face vision-language model whose processor accepts
images plus text and whose forward pass can return hidden states. This is
the production path; it needs `torch` and `transformers` installed, model
weights on disk or a reachable hub, and realistically an accelerator.
Nothing else in the package imports this module, so the offline stub keeps
working without the heavy dependencies.

Memory notes: frames are processed in one forward pass per item. If that
does not fit, lower `--max-frames`; the sampler degrades gracefully.
"""

import numpy as np

from . import ModelError
from .media import MediaItem


def _imports():
    try:
        import torch
        from transformers import AutoModelForVision2Seq, AutoProcessor
    except ImportError as exc:
        raise ModelError(
            "hf: models need torch and transformers installed") from exc
    return torch, AutoModelForVision2Seq, AutoProcessor


class TransformersAdapter:
    def __init__(self, model_id: str, device=None, dtype=None,
                 text_encoder=None):
        torch, auto_model, auto_processor = _imports()
        self._torch = torch
        self.name = f"hf:{model_id}"
        self.device = device or ("cuda" if torch.cuda.is_available() else "cpu")
        self.processor = auto_processor.from_pretrained(model_id)
        self.model = auto_model.from_pretrained(
            model_id, torch_dtype=dtype or torch.float32).to(self.device)
        self.model.eval()
        cfg = self.model.config
        text_cfg = getattr(cfg, "text_config", cfg)
        self.num_layers = int(text_cfg.num_hidden_layers)
        self.hidden_dim = int(text_cfg.hidden_size)
        # caption embeddings default to the same decoder (mean of its last
        # hidden layer over the caption tokens) unless a separate sentence
        # encoder is supplied
        self.text_encoder = text_encoder or f"{self.name}:last-layer-mean"
        self._sentence_encoder = None
        if text_encoder:
            from sentence_transformers import SentenceTransformer
            self._sentence_encoder = SentenceTransformer(text_encoder)

    def _inputs(self, prompt: str, media: MediaItem):
        images = None if media.kind == "title" else list(media.frames)
        text = prompt if media.kind != "title" else f"{prompt}\n{media.text}"
        batch = self.processor(text=text, images=images, return_tensors="pt")
        return {k: v.to(self.device) for k, v in batch.items()}

    def hidden_states(self, prompt: str, media: MediaItem) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            out = self.model(**self._inputs(prompt, media),
                             output_hidden_states=True)
        # hidden_states[0] is the embedding layer; keep the L decoder layers
        layers = out.hidden_states[1:]
        stacked = torch.stack([h[0] for h in layers])      # (L, T, dim)
        return stacked.float().cpu().numpy()

    def generate_caption(self, prompt: str, media: MediaItem) -> str:
        torch = self._torch
        inputs = self._inputs(prompt, media)
        with torch.no_grad():
            ids = self.model.generate(**inputs, max_new_tokens=160,
                                      do_sample=False)
        prompt_len = inputs["input_ids"].shape[1]
        return self.processor.batch_decode(
            ids[:, prompt_len:], skip_special_tokens=True)[0].strip()

    def embed_text(self, text: str) -> np.ndarray:
        if self._sentence_encoder is not None:
            return np.asarray(self._sentence_encoder.encode(text),
                              dtype=np.float32)
        torch = self._torch
        batch = self.processor(text=text, return_tensors="pt")
        batch = {k: v.to(self.device) for k, v in batch.items()}
        with torch.no_grad():
            out = self.model(**batch, output_hidden_states=True)
        return out.hidden_states[-1][0].mean(dim=0).float().cpu().numpy()
