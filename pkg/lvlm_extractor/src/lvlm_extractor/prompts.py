"""Prompt templates.

Two fixed templates plus file-based custom prompts. The recommendation
template frames the input as a micro-video on a social platform and asks
for features useful to a recommender; the plain one only says it is a
video. The difference between the two is itself a documented experiment,
so the texts are frozen here and tests pin them character for character.
"""

import hashlib

from . import PromptError

REC_PROMPT = (
    "You are watching a micro-video on a social media platform. "
    "Please analyze the video content for application in a micro-video "
    "recommendation system. Write one coherent paragraph describing the "
    "scene, people or objects, main actions, and the style or type."
)

PLAIN_PROMPT = (
    "You are watching a video. Write one coherent paragraph describing the "
    "scene, people or objects, main actions, and the style or type."
)

TEMPLATES = {"rec": REC_PROMPT, "plain": PLAIN_PROMPT}


def resolve_prompt(spec: str):
    """Map a --prompt value ('rec', 'plain', 'custom:<file>') to (name, text)."""
    if spec in TEMPLATES:
        return spec, TEMPLATES[spec]
    if spec.startswith("custom:"):
        path = spec[len("custom:"):]
        try:
            with open(path, encoding="utf-8") as f:
                text = f.read().strip()
        except OSError as exc:
            raise PromptError(f"cannot read prompt file {path}: {exc}") from exc
        if not text:
            raise PromptError(f"prompt file {path} is empty")
        return "custom", text
    raise PromptError(
        f"unknown prompt spec {spec!r}; expected rec, plain, or custom:<file>")


def prompt_hash(text: str) -> str:
    """Short stable digest of the prompt, recorded in the model tag."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]
