"""Side decoder: cross-scale attention, multi-scale refinement, depth heads.

The decoder runs coarse to fine. Three cross-scale attention (CSA) modules
fuse each pair of adjacent pyramid levels by feature similarity; five
multi-scale refinement (MSR) modules upsample, add the matching CSA output
(if any), refine with a residual MLP and emit a depth map. The last two MSR
modules have no CSA input and lift the prediction to H/2 and H.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .encoder import EncoderConfig, FeaturePyramid
from .nn import ConfigError, add_linear, apply_linear, to_map, to_tokens
from .tensor import (
    DimensionError,
    Tensor,
    bilinear_upsample,
    gelu,
    getitem,
    linear,
    matmul,
    mul,
    sigmoid,
    softmax_rows,
    transpose,
)

N_STAGES = 5


@dataclass(frozen=True)
class DecoderConfig:
    decoder_channels: Optional[int] = None  # defaults to the encoder base width
    max_depth: float = 10.0
    attention_temperature_enabled: bool = False
    use_csa: bool = True
    use_msr: bool = True

    def __post_init__(self):
        if not self.max_depth > 0:
            raise ConfigError(f"max_depth must be positive, got {self.max_depth}")
        if self.decoder_channels is not None and self.decoder_channels < 1:
            raise ConfigError("decoder_channels must be positive")

    def width(self, enc: EncoderConfig) -> int:
        return self.decoder_channels or enc.base_channels


@dataclass
class CsaParams:
    fine_w: Tensor
    fine_b: Tensor
    coarse_w: Tensor
    coarse_b: Tensor

    @classmethod
    def from_dict(cls, params: dict, prefix: str) -> "CsaParams":
        return cls(
            params[f"{prefix}.fine.w"],
            params[f"{prefix}.fine.b"],
            params[f"{prefix}.coarse.w"],
            params[f"{prefix}.coarse.b"],
        )


@dataclass
class MsrParams:
    mlp1_w: Tensor
    mlp1_b: Tensor
    mlp2_w: Tensor
    mlp2_b: Tensor
    head_w: Tensor
    head_b: Tensor

    @classmethod
    def from_dict(cls, params: dict, prefix: str) -> "MsrParams":
        return cls(*(params[f"{prefix}.{n}"] for n in ("mlp1.w", "mlp1.b", "mlp2.w", "mlp2.b", "head.w", "head.b")))


@dataclass
class MultiStagePrediction:
    """Depth maps at H/16, H/8, H/4, H/2 and H, coarse to fine."""

    depths: list
    aux: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.depths)

    def __iter__(self):
        return iter(self.depths)

    def __getitem__(self, k):
        return self.depths[k]

    @property
    def final(self) -> Tensor:
        return self.depths[-1]


def init_decoder(enc: EncoderConfig, cfg: DecoderConfig, rng: np.random.Generator) -> dict:
    cdec = cfg.width(enc)
    params: dict = {}
    for k in (1, 2, 3):
        add_linear(params, f"dec.csa{k}.fine", enc.stage_channels(k), cdec, rng)
        add_linear(params, f"dec.csa{k}.coarse", enc.stage_channels(k + 1), cdec, rng)
    add_linear(params, "dec.top", enc.stage_channels(4), cdec, rng)
    for s in range(N_STAGES):
        add_linear(params, f"dec.msr{s}.mlp1", cdec, cdec, rng)
        add_linear(params, f"dec.msr{s}.mlp2", cdec, cdec, rng)
        add_linear(params, f"dec.msr{s}.head", cdec, 1, rng)
    return params


def csa_forward(
    f_fine: Tensor,
    f_coarse: Tensor,
    p: CsaParams,
    temperature: bool = False,
    return_attention: bool = False,
):
    """Fuse a fine map with the adjacent coarse map: ``Q + softmax(Q K^T) K``.

    Q and K are the two maps projected to a common width and laid out as
    positions x channels, so each fine position attends over every coarse
    position. Returns a ``Cdec x H1 x W1`` map (and the attention matrix when
    ``return_attention`` is set).
    """
    if f_fine.shape[0] != p.fine_w.shape[0] or f_coarse.shape[0] != p.coarse_w.shape[0]:
        raise DimensionError(
            f"csa: inputs {f_fine.shape}, {f_coarse.shape} do not match projections "
            f"{p.fine_w.shape}, {p.coarse_w.shape}"
        )
    if 0 in f_fine.shape[1:] or 0 in f_coarse.shape[1:]:
        raise DimensionError("csa: empty spatial extent")
    _, h1, w1 = f_fine.shape
    q = linear(to_tokens(f_fine), p.fine_w, p.fine_b)
    # coarse tokens in a canonical (lexicographic) order, so any permutation
    # of coarse positions yields bit-identical arithmetic
    tokens = to_tokens(f_coarse)
    order = np.lexsort(tokens.data.T[::-1])
    k = linear(getitem(tokens, order), p.coarse_w, p.coarse_b)
    scale = 1.0 / np.sqrt(q.shape[1]) if temperature else 1.0
    attn = softmax_rows(matmul(q, transpose(k)), scale=scale)
    out = to_map(q + matmul(attn, k), h1, w1)
    if not return_attention:
        return out
    # columns back in the caller's position order
    return out, getitem(attn, (slice(None), np.argsort(order)))


def depth_head(features: Tensor, p: MsrParams, max_depth: float) -> Tensor:
    _, h, w = features.shape
    logits = linear(to_tokens(features), p.head_w, p.head_b)
    return to_map(mul(sigmoid(logits), max_depth), h, w)


def msr_forward(coarse: Tensor, fine_csa: Optional[Tensor], p: MsrParams, max_depth: float):
    """Upsample, add the CSA map if given, refine; returns ``(features, depth)``."""
    s = bilinear_upsample(coarse, 2)
    if fine_csa is not None:
        if fine_csa.shape != s.shape:
            raise DimensionError(f"msr: upsampled coarse {s.shape} does not match fine input {fine_csa.shape}")
        s = s + fine_csa
    _, h, w = s.shape
    t = to_tokens(s)
    t = t + linear(gelu(linear(t, p.mlp1_w, p.mlp1_b)), p.mlp2_w, p.mlp2_b)
    features = to_map(t, h, w)
    return features, depth_head(features, p, max_depth)


def _fused_level(params: dict, pyr: FeaturePyramid, k: int, cfg: DecoderConfig) -> Tensor:
    fine, coarse = pyr[k - 1], pyr[k]
    p = CsaParams.from_dict(params, f"dec.csa{k}")
    if cfg.use_csa:
        return csa_forward(fine, coarse, p, cfg.attention_temperature_enabled)
    # ablation: plain projection of the fine level, no attention term
    _, h, w = fine.shape
    return to_map(linear(to_tokens(fine), p.fine_w, p.fine_b), h, w)


def decode(params: dict, pyr: FeaturePyramid, cfg: DecoderConfig) -> MultiStagePrediction:
    fused = {k: _fused_level(params, pyr, k, cfg) for k in (3, 2, 1)}
    msr = [MsrParams.from_dict(params, f"dec.msr{s}") for s in range(N_STAGES)]
    depths = []
    if cfg.use_msr:
        _, h4, w4 = pyr.f4.shape
        x = to_map(apply_linear(params, "dec.top", to_tokens(pyr.f4)), h4, w4)
        for s, fine in enumerate([fused[3], fused[2], fused[1], None, None]):
            x, d = msr_forward(x, fine, msr[s], cfg.max_depth)
            depths.append(d)
    else:
        # ablation: heads directly on the fused levels, finest prediction upsampled
        for s, k in enumerate((3, 2, 1)):
            depths.append(depth_head(fused[k], msr[s], cfg.max_depth))
        depths.append(bilinear_upsample(depths[-1], 2))
        depths.append(bilinear_upsample(depths[-2], 4))
    return MultiStagePrediction(depths, aux={"fused": fused})


class DegenerateFeatureError(ValueError):
    """The reference feature vector has zero norm."""


def receptive_field_map(features_before, features_after, ref: tuple) -> tuple:
    """Cosine similarity of every position to ``ref``, mapped to [0, 1] by (1 + cos) / 2.

    Returns one ``H x W`` heatmap per input map.
    """
    return _similarity_map(features_before, ref), _similarity_map(features_after, ref)


def _similarity_map(features, ref: tuple) -> np.ndarray:
    f = features.data if isinstance(features, Tensor) else np.asarray(features, dtype=np.float64)
    _, h, w = f.shape
    r, c = ref
    if not (0 <= r < h and 0 <= c < w):
        raise IndexError(f"reference {ref} outside {h}x{w} map")
    v = f[:, r, c]
    vnorm = np.linalg.norm(v)
    if vnorm == 0:
        raise DegenerateFeatureError(f"feature vector at {ref} has zero norm")
    norms = np.linalg.norm(f, axis=0)
    dots = np.tensordot(v, f, axes=(0, 0))
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(norms > 0, dots / (vnorm * norms), 0.0)
    cos = np.clip(cos, -1.0, 1.0)
    cos[r, c] = 1.0
    return (1.0 + cos) / 2.0
