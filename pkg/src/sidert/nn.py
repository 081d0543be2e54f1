"""Parameter-dict helpers shared by the encoder and decoder."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, linear, reshape, transpose


class ConfigError(ValueError):
    """A configuration value violates its documented invariant."""


def add_linear(params: dict, name: str, fan_in: int, fan_out: int, rng: np.random.Generator) -> None:
    bound = 1.0 / np.sqrt(fan_in)
    params[f"{name}.w"] = Tensor(
        rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True, name=f"{name}.w"
    )
    params[f"{name}.b"] = Tensor(np.zeros(fan_out), requires_grad=True, name=f"{name}.b")


def add_layer_norm(params: dict, name: str, width: int) -> None:
    params[f"{name}.g"] = Tensor(np.ones(width), requires_grad=True, name=f"{name}.g")
    params[f"{name}.b"] = Tensor(np.zeros(width), requires_grad=True, name=f"{name}.b")


def apply_linear(params: dict, name: str, x: Tensor) -> Tensor:
    return linear(x, params[f"{name}.w"], params[f"{name}.b"])


def to_tokens(x: Tensor) -> Tensor:
    """``C x H x W`` map to ``(H*W) x C`` tokens, row-major positions."""
    c, h, w = x.shape
    return reshape(transpose(x, (1, 2, 0)), (h * w, c))


def to_map(t: Tensor, h: int, w: int) -> Tensor:
    """Inverse of :func:`to_tokens`."""
    return transpose(reshape(t, (h, w, t.shape[-1])), (2, 0, 1))
