"""Four-stage hierarchical transformer encoder.

Stands in for a pretrained Swin backbone: 4x4 patch embedding, full
self-attention transformer blocks per stage and 2x2 patch merging between
stages. The output pyramid has the usual shapes

    f1: C  x H/4  x W/4
    f2: 2C x H/8  x W/8
    f3: 4C x H/16 x W/16
    f4: 8C x H/32 x W/32
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .nn import ConfigError, add_layer_norm, add_linear, apply_linear, to_map, to_tokens
from .tensor import (
    Tensor,
    add,
    gelu,
    layer_norm,
    matmul,
    reshape,
    resize_bilinear,
    softmax_rows,
    transpose,
)

PATCH = 4
LN_EPS = 1e-5
MLP_RATIO = 4


@dataclass(frozen=True)
class EncoderConfig:
    base_channels: int = 8
    blocks_per_stage: tuple = (1, 1, 1, 1)
    heads_per_stage: tuple = (1, 2, 2, 4)
    patch_size: int = PATCH
    # grid of the learned positional embedding, in input pixels
    image_size: tuple = (32, 64)

    def __post_init__(self):
        object.__setattr__(self, "blocks_per_stage", tuple(int(b) for b in self.blocks_per_stage))
        object.__setattr__(self, "heads_per_stage", tuple(int(h) for h in self.heads_per_stage))
        object.__setattr__(self, "image_size", tuple(int(s) for s in self.image_size))
        if self.patch_size != PATCH:
            raise ConfigError(f"patch_size is fixed at {PATCH}")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be positive")
        if len(self.blocks_per_stage) != 4 or min(self.blocks_per_stage) < 1:
            raise ConfigError("blocks_per_stage needs 4 positive entries")
        if len(self.heads_per_stage) != 4 or min(self.heads_per_stage) < 1:
            raise ConfigError("heads_per_stage needs 4 positive entries")
        for k, heads in enumerate(self.heads_per_stage):
            width = self.stage_channels(k + 1)
            if width % heads:
                raise ConfigError(f"stage {k + 1} width {width} is not divisible by {heads} heads")
        check_divisible(*self.image_size)

    def stage_channels(self, k: int) -> int:
        return self.base_channels * 2 ** (k - 1)


class FeaturePyramid(NamedTuple):
    f1: Tensor
    f2: Tensor
    f3: Tensor
    f4: Tensor


def check_divisible(h: int, w: int) -> None:
    if h % 32 or w % 32 or h < 32 or w < 32:
        raise ConfigError(f"image height and width must be positive multiples of 32, got {h}x{w}")


def pyramid_shapes(h: int, w: int, c: int) -> list:
    return [(c * 2**k, h // (4 * 2**k), w // (4 * 2**k)) for k in range(4)]


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator) -> dict:
    c = cfg.base_channels
    params: dict = {}
    add_linear(params, "enc.patch", 3 * PATCH * PATCH, c, rng)
    gh, gw = cfg.image_size[0] // PATCH, cfg.image_size[1] // PATCH
    params["enc.pos"] = Tensor(np.zeros((c, gh, gw)), requires_grad=True, name="enc.pos")
    for k in range(1, 5):
        width = cfg.stage_channels(k)
        for j in range(cfg.blocks_per_stage[k - 1]):
            p = f"enc.s{k}.b{j}"
            add_layer_norm(params, f"{p}.ln1", width)
            add_linear(params, f"{p}.qkv", width, 3 * width, rng)
            add_linear(params, f"{p}.proj", width, width, rng)
            add_layer_norm(params, f"{p}.ln2", width)
            add_linear(params, f"{p}.fc1", width, MLP_RATIO * width, rng)
            add_linear(params, f"{p}.fc2", MLP_RATIO * width, width, rng)
        if k < 4:
            add_linear(params, f"enc.merge{k}", 4 * width, 2 * width, rng)
    return params


def patch_embed(params: dict, image: Tensor) -> Tensor:
    """Project non-overlapping 4x4 patches to C channels and add positions."""
    _, h, w = image.shape
    check_divisible(h, w)
    gh, gw = h // PATCH, w // PATCH
    patches = reshape(image, (3, gh, PATCH, gw, PATCH))
    patches = reshape(transpose(patches, (1, 3, 0, 2, 4)), (gh * gw, 3 * PATCH * PATCH))
    tokens = apply_linear(params, "enc.patch", patches)
    pos = params["enc.pos"]
    if pos.shape[1:] != (gh, gw):
        pos = resize_bilinear(pos, gh, gw)
    return add(to_map(tokens, gh, gw), pos)


def attention(params: dict, prefix: str, t: Tensor, heads: int) -> Tensor:
    n, c = t.shape
    d = c // heads
    qkv = apply_linear(params, f"{prefix}.qkv", t)
    qkv = transpose(reshape(qkv, (n, 3, heads, d)), (1, 2, 0, 3))
    q, k, v = qkv[0], qkv[1], qkv[2]
    att = softmax_rows(matmul(q, transpose(k, (0, 2, 1))), scale=1.0 / np.sqrt(d))
    out = reshape(transpose(matmul(att, v), (1, 0, 2)), (n, c))
    return apply_linear(params, f"{prefix}.proj", out)


def transformer_block(params: dict, prefix: str, t: Tensor, heads: int) -> Tensor:
    h = layer_norm(t, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"], LN_EPS)
    t = t + attention(params, prefix, h, heads)
    h = layer_norm(t, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"], LN_EPS)
    h = apply_linear(params, f"{prefix}.fc2", gelu(apply_linear(params, f"{prefix}.fc1", h)))
    return t + h


def encoder_stage(params: dict, x: Tensor, stage_index: int, cfg: EncoderConfig) -> Tensor:
    """Run the pre-norm transformer blocks of one stage; shape is preserved."""
    if not 1 <= stage_index <= 4:
        raise ConfigError(f"stage_index must be in 1..4, got {stage_index}")
    _, h, w = x.shape
    t = to_tokens(x)
    for j in range(cfg.blocks_per_stage[stage_index - 1]):
        t = transformer_block(params, f"enc.s{stage_index}.b{j}", t, cfg.heads_per_stage[stage_index - 1])
    return to_map(t, h, w)


def patch_merge(params: dict, x: Tensor, stage_index: int) -> Tensor:
    """Concatenate each 2x2 neighbourhood (4C channels) and project to 2C."""
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ConfigError(f"patch_merge needs even extents, got {h}x{w}")
    t = reshape(x, (c, h // 2, 2, w // 2, 2))
    t = reshape(transpose(t, (1, 3, 2, 4, 0)), ((h // 2) * (w // 2), 4 * c))
    return to_map(apply_linear(params, f"enc.merge{stage_index}", t), h // 2, w // 2)


def encode(params: dict, image: Tensor, cfg: EncoderConfig) -> FeaturePyramid:
    x = patch_embed(params, image)
    feats = []
    for k in range(1, 5):
        x = encoder_stage(params, x, k, cfg)
        feats.append(x)
        if k < 4:
            x = patch_merge(params, x, k)
    return FeaturePyramid(*feats)
