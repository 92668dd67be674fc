"""Flat key-value run configuration.

Config files are plain text, one `key = value` per line, dotted keys for
sections, '#' comments allowed. Unknown keys are an error: a typo should
fail the run, not silently fall back to a default.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .backbone import BackboneConfig
from .model import ModelConfig
from .synth import SynthSpec
from .training import TrainSchedule


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def _parse_bool(value):
    v = value.strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got '{value}'")


def _parse_tuple(value, cast):
    value = value.strip()
    if not value:
        return ()
    return tuple(cast(part.strip()) for part in value.split(","))


@dataclass
class RunConfig:
    store: str = ""
    caption_store: str = ""
    log: str = ""
    out_dir: str = "runs/out"
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    exclude_seen: bool = True
    cutoffs: tuple = (10, 20)
    synth: SynthSpec = field(default_factory=SynthSpec)


# key -> (target object attr path, parser)
_SCHEMA = {
    "store": ("store", str),
    "caption_store": ("caption_store", str),
    "log": ("log", str),
    "out_dir": ("out_dir", str),
    "seed": ("seed", int),
    "model.dim": ("model.dim", int),
    "model.num_blocks": ("model.num_blocks", int),
    "model.num_heads": ("model.num_heads", int),
    "model.max_seq_len": ("model.max_seq_len", int),
    "model.dropout": ("model.dropout", float),
    "model.strategy": ("model.strategy", str),
    "model.aggregation": ("model.aggregation", str),
    "model.layer_k": ("model.layer_k", int),
    "model.scalar_gate": ("model.scalar_gate", _parse_bool),
    "train.learning_rate": ("schedule.learning_rate", float),
    "train.weight_decay": ("schedule.weight_decay", float),
    "train.batch_size": ("schedule.batch_size", int),
    "train.patience": ("schedule.patience", int),
    "train.max_epochs": ("schedule.max_epochs", int),
    "train.lr_grid": ("schedule.lr_grid", lambda v: _parse_tuple(v, float)),
    "train.dim_grid": ("schedule.dim_grid", lambda v: _parse_tuple(v, int)),
    "eval.exclude_seen": ("exclude_seen", _parse_bool),
    "eval.cutoffs": ("cutoffs", lambda v: _parse_tuple(v, int)),
    "synth.num_users": ("synth.num_users", int),
    "synth.num_items": ("synth.num_items", int),
    "synth.num_topics": ("synth.num_topics", int),
    "synth.num_layers": ("synth.num_layers", int),
    "synth.dim": ("synth.dim", int),
    "synth.signal_layers": ("synth.signal_layers", lambda v: _parse_tuple(v, int)),
    "synth.noise_scale": ("synth.noise_scale", float),
    "synth.content_strength": ("synth.content_strength", float),
    "synth.collab_strength": ("synth.collab_strength", float),
    "synth.min_len": ("synth.min_len", int),
    "synth.max_len": ("synth.max_len", int),
    "synth.catalog_seed": ("synth.catalog_seed", int),
    "synth.caption_noise": ("synth.caption_noise", float),
}


def parse_config_text(text, path="<config>") -> RunConfig:
    config = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split("=", 1))
        entry = _SCHEMA.get(key)
        if entry is None:
            raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
        attr_path, cast = entry
        try:
            parsed = cast(value)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
        target = config
        *parents, leaf = attr_path.split(".")
        for part in parents:
            target = getattr(target, part)
        setattr(target, leaf, parsed)
    return config


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_config_text(text, path)


def default_lines():
    """The full schema with default values, in config-file syntax."""
    config = RunConfig()
    out = []
    for key, (attr_path, _) in _SCHEMA.items():
        target = config
        *parents, leaf = attr_path.split(".")
        for part in parents:
            target = getattr(target, part)
        value = getattr(target, leaf)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        out.append(f"{key} = {value}")
    return out


def validate_run_config(config: RunConfig):
    config.model.validate()
    BackboneConfig(config.model.dim, config.model.num_blocks, config.model.num_heads,
                   config.model.max_seq_len, config.model.dropout).validate()
    if config.schedule.learning_rate < 0:
        raise ConfigError("train.learning_rate must be >= 0")
    if config.schedule.batch_size < 1:
        raise ConfigError("train.batch_size must be >= 1")
    if config.schedule.max_epochs < 1:
        raise ConfigError("train.max_epochs must be >= 1")
    if config.schedule.patience < 1:
        raise ConfigError("train.patience must be >= 1")
    if not config.cutoffs:
        raise ConfigError("eval.cutoffs must not be empty")
