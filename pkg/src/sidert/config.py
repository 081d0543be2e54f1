"""Flat ``key = value`` run configuration shared by config files and CLI flags.

Every key maps to exactly one ``--flag`` (underscores become dashes) and to
one field of the encoder, decoder, loss, augmentation or training config.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional

from .data import AugmentConfig
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .loss import LossConfig
from .model import ModelConfig
from .nn import ConfigError
from .train import TrainConfig


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple:
    return tuple(int(x) for x in s.split(","))


def _floats(s: str) -> tuple:
    return tuple(float(x) for x in s.split(","))


def _size(s: str) -> tuple:
    h, w = s.lower().split("x")
    return int(h), int(w)


def _opt_int(s: str) -> Optional[int]:
    return None if s.strip().lower() in ("", "none", "auto") else int(s)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "auto"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def _fmt_size(v) -> str:
    return f"{v[0]}x{v[1]}"


@dataclass(frozen=True)
class Key:
    section: str
    attr: str
    parse: Callable
    help: str
    fmt: Callable = _fmt


KEYS = {
    # encoder
    "base_channels": Key("encoder", "base_channels", int, "encoder stage-1 width C"),
    "blocks_per_stage": Key("encoder", "blocks_per_stage", _ints, "transformer blocks per stage"),
    "heads_per_stage": Key("encoder", "heads_per_stage", _ints, "attention heads per stage"),
    "patch_size": Key("encoder", "patch_size", int, "patch size (fixed at 4)"),
    "image_size": Key("encoder", "image_size", _size, "positional-embedding grid as HxW pixels", _fmt_size),
    # decoder
    "decoder_channels": Key("decoder", "decoder_channels", _opt_int, "decoder width (auto = C)"),
    "max_depth": Key("decoder", "max_depth", float, "depth cap of the sigmoid head, metres"),
    "attention_temperature": Key("decoder", "attention_temperature_enabled", _bool, "scale CSA logits by 1/sqrt(width)"),
    "use_csa": Key("decoder", "use_csa", _bool, "cross-scale attention on"),
    "use_msr": Key("decoder", "use_msr", _bool, "multi-scale refinement on"),
    # loss
    "lambda": Key("loss", "lam", float, "variance balance of the log loss"),
    "stage_weights": Key("loss", "stage_weights", _floats, "five per-stage loss weights, coarse to fine"),
    "min_valid_depth": Key("loss", "min_valid_depth", float, "ground truth below this is invalid"),
    # augmentation
    "augment": Key("run", "augment", _bool, "apply training augmentation"),
    "crop_h": Key("augment", "crop_h", int, "training crop height"),
    "crop_w": Key("augment", "crop_w", int, "training crop width"),
    "rotate_deg": Key("augment", "rotate_deg", float, "max absolute rotation, degrees"),
    "scale_range": Key("augment", "scale_range", _floats, "scale factor range lo,hi"),
    "flip_prob": Key("augment", "flip_prob", float, "horizontal flip probability"),
    "augment_seed": Key("augment", "seed", int, "augmentation seed, mixed into the run seed"),
    # training
    "lr": Key("train", "lr", float, "AdamW learning rate"),
    "weight_decay": Key("train", "weight_decay", float, "decoupled weight decay"),
    "beta1": Key("train", "beta1", float, "Adam beta1"),
    "beta2": Key("train", "beta2", float, "Adam beta2"),
    "eps": Key("train", "eps", float, "Adam epsilon"),
    "batch_size": Key("train", "batch_size", int, "samples per step"),
    "steps": Key("train", "steps", int, "optimizer steps"),
    "seed": Key("train", "seed", int, "initialisation and sampling seed"),
    "checkpoint_every": Key("train", "checkpoint_every", int, "checkpoint cadence in steps (0 = final only)"),
}


@dataclass(frozen=True)
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    augment_cfg: AugmentConfig = field(default_factory=AugmentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: bool = True

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(self.encoder, self.decoder)

    def get(self, key: str):
        k = KEYS[key]
        return getattr(self, k.attr) if k.section == "run" else getattr(self._section(k.section), k.attr)

    def _section(self, name: str):
        return self.augment_cfg if name == "augment" else getattr(self, name)

    def with_values(self, values: dict) -> "RunConfig":
        """New config with ``values`` (key -> parsed value) applied and validated."""
        unknown = sorted(set(values) - set(KEYS))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        per_section: dict = {}
        top = {}
        for key, v in values.items():
            k = KEYS[key]
            if k.section == "run":
                top[k.attr] = v
            else:
                per_section.setdefault(k.section, {})[k.attr] = v
        kwargs = dict(top)
        for section, changes in per_section.items():
            name = "augment_cfg" if section == "augment" else section
            try:
                kwargs[name] = replace(self._section(section), **changes)
            except (TypeError, ValueError) as exc:
                raise ConfigError(str(exc)) from None
        return replace(self, **kwargs)

    def to_text(self) -> str:
        return "".join(f"{key} = {k.fmt(self.get(key))}\n" for key, k in KEYS.items())


def parse_value(key: str, raw: str):
    if key not in KEYS:
        raise ConfigError(f"unknown config key: {key}")
    try:
        return KEYS[key].parse(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None


def parse_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        values[key] = parse_value(key, raw)
    return values


def load(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``overrides`` (already parsed)."""
    values = parse_text(Path(path).read_text(encoding="utf-8")) if path else {}
    values.update(overrides or {})
    return RunConfig().with_values(values)


def flag(key: str) -> str:
    return "--" + key.replace("_", "-")
