"""AdamW training loop, checkpoints and deterministic resume."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .data import AugmentConfig, DepthSample, augment
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .loss import EmptyMaskError, LossConfig, mss_loss
from .model import ModelConfig, SideRT
from .nn import ConfigError
from .tensor import Tensor, backward, mul, tensor_from_bytes, tensor_to_bytes

logger = logging.getLogger(__name__)

CKPT_MAGIC = b"SRTCKPT1"


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"non-finite gradient in parameter {name}")


class CheckpointError(ValueError):
    """Checkpoint does not match the expected parameter set."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 2
    steps: int = 100
    seed: int = 0
    checkpoint_every: int = 0  # 0: final checkpoint only

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if self.batch_size < 1 or self.steps < 0 or self.checkpoint_every < 0:
            raise ConfigError("batch_size must be positive; steps and checkpoint_every non-negative")


@dataclass
class TrainState:
    step: int
    m: dict
    v: dict
    rng: np.random.Generator
    loss_history: list = field(default_factory=list)

    @classmethod
    def fresh(cls, params: dict, seed) -> "TrainState":
        return cls(
            step=0,
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
            rng=np.random.default_rng(seed),
        )


def adamw_step(params: dict, state: TrainState, cfg: TrainConfig, grads: Optional[dict] = None) -> None:
    """One decoupled-weight-decay Adam update, in place.

    Gradients come from ``grads`` if given, else from each parameter's
    ``.grad`` (a missing gradient counts as zero).
    """
    for name, p in params.items():
        g = grads[name] if grads is not None else p.grad
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for name, p in params.items():
        g = grads[name] if grads is not None else p.grad
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + cfg.eps) + cfg.weight_decay * p.data
        p.data = p.data - cfg.lr * update


def batch_loss(model: SideRT, samples: Sequence[DepthSample], loss_cfg: LossConfig) -> Tensor:
    """Mean of the per-sample multi-stage losses."""
    total = None
    for s in samples:
        term = mss_loss(model(s.image), s.depth, s.mask, loss_cfg)
        total = term if total is None else total + term
    return mul(total, 1.0 / len(samples))


def _draw_batch(dataset, cfg, aug_cfg, rng) -> list:
    idx = rng.choice(len(dataset), size=cfg.batch_size, replace=cfg.batch_size > len(dataset))
    return [augment(dataset[i], aug_cfg, rng) if aug_cfg is not None else dataset[i] for i in idx]


def train(
    model: SideRT,
    dataset: Sequence[DepthSample],
    cfg: TrainConfig,
    aug_cfg: Optional[AugmentConfig] = None,
    loss_cfg: LossConfig = LossConfig(),
    out_dir=None,
    state: Optional[TrainState] = None,
    on_step: Optional[Callable[[int, float], None]] = None,
) -> TrainState:
    """Train until ``state.step == cfg.steps``; resumes if ``state`` is given.

    With ``out_dir`` set, checkpoints are written every ``checkpoint_every``
    steps as ``ckpt_NNNNNN.srtc``, always as ``final.srtc``, and the loss
    history as ``loss.txt``.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    if state is None:
        seed = cfg.seed if aug_cfg is None else [cfg.seed, aug_cfg.seed]
        state = TrainState.fresh(model.params, seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    while state.step < cfg.steps:
        model.zero_grad()
        try:
            loss = batch_loss(model, _draw_batch(dataset, cfg, aug_cfg, state.rng), loss_cfg)
        except EmptyMaskError:
            logger.warning("step %d: empty-mask batch, redrawing", state.step + 1)
            loss = batch_loss(model, _draw_batch(dataset, cfg, aug_cfg, state.rng), loss_cfg)
        backward(loss)
        adamw_step(model.params, state, cfg)
        value = float(loss.data)
        state.loss_history.append(value)
        if on_step is not None:
            on_step(state.step, value)
        if out is not None and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"ckpt_{state.step:06d}.srtc", model, state)
    model.zero_grad()

    if out is not None:
        save_checkpoint(out / "final.srtc", model, state)
        write_loss_history(out / "loss.txt", state.loss_history)
    return state


def write_loss_history(path, history: Sequence[float]) -> None:
    Path(path).write_text("".join(f"{i + 1} {v!r}\n" for i, v in enumerate(history)))


# --- checkpoints -----------------------------------------------------------


def config_to_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)


def config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(EncoderConfig(**d["encoder"]), DecoderConfig(**d["decoder"]))


def save_checkpoint(path, model: SideRT, state: Optional[TrainState] = None) -> None:
    """Write ``SRTCKPT1``, u64 manifest length, JSON manifest, then SRTT tensor blocks.

    The manifest lists every tensor by name, shape and byte offset (relative
    to the start of the tensor section), plus the model config and the
    optimizer step, random state and loss history.
    """
    blobs = []
    entries = []
    offset = 0

    def put(name, arr):
        nonlocal offset
        blob = tensor_to_bytes(arr)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)

    for name, p in model.params.items():
        put(f"param/{name}", p.data)
    meta = {"config": config_to_dict(model.cfg), "tensors": entries}
    if state is not None:
        for name in model.params:
            put(f"adam_m/{name}", state.m[name])
            put(f"adam_v/{name}", state.v[name])
        meta["train"] = {
            "step": state.step,
            "rng": state.rng.bit_generator.state,
            "loss_history": list(state.loss_history),
        }
    manifest = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<Q", len(manifest)) + manifest)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path, expect: Optional[ModelConfig] = None) -> tuple:
    """Returns ``(model, state)``; ``state`` is None for weight-only checkpoints."""
    buf = Path(path).read_bytes()
    if buf[:8] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (n,) = struct.unpack_from("<Q", buf, 8)
    meta = json.loads(buf[16 : 16 + n])
    base = 16 + n
    tensors = {}
    for e in meta["tensors"]:
        t, _ = tensor_from_bytes(buf, base + e["offset"])
        if list(t.shape) != e["shape"]:
            raise CheckpointError(f"tensor {e['name']}: manifest shape {e['shape']} != stored {list(t.shape)}")
        tensors[e["name"]] = t.data

    cfg = config_from_dict(meta["config"])
    if expect is not None and expect != cfg:
        raise CheckpointError(f"checkpoint config {cfg} differs from expected {expect}")
    template = SideRT.init(cfg, seed=0)
    stored = {k[len("param/") :]: v for k, v in tensors.items() if k.startswith("param/")}
    _check_names(template.params, stored)
    params = {k: Tensor(stored[k], requires_grad=True, name=k) for k in template.params}
    model = SideRT(cfg, params)

    state = None
    if "train" in meta:
        tr = meta["train"]
        for prefix in ("adam_m/", "adam_v/"):
            _check_names(template.params, {k[len(prefix) :]: v for k, v in tensors.items() if k.startswith(prefix)}, prefix)
        rng = np.random.default_rng()
        rng.bit_generator.state = tr["rng"]
        state = TrainState(
            step=tr["step"],
            m={k: tensors[f"adam_m/{k}"] for k in template.params},
            v={k: tensors[f"adam_v/{k}"] for k in template.params},
            rng=rng,
            loss_history=list(tr["loss_history"]),
        )
    return model, state


def _check_names(expected: dict, stored: dict, prefix: str = "") -> None:
    missing = [k for k in expected if k not in stored]
    extra = [k for k in stored if k not in expected]
    wrong = [
        f"{prefix}{k}: expected {list(expected[k].shape)}, found {list(stored[k].shape)}"
        for k in expected
        if k in stored and tuple(stored[k].shape) != expected[k].shape
    ]
    problems = []
    if missing:
        problems.append("missing " + ", ".join(prefix + k for k in missing))
    if extra:
        problems.append("unexpected " + ", ".join(prefix + k for k in extra))
    if wrong:
        problems.append("shape mismatch " + "; ".join(wrong))
    if problems:
        raise CheckpointError("; ".join(problems))
