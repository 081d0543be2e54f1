"""Square-root scale-invariant log loss and multi-stage supervision."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .nn import ConfigError
from .tensor import DomainError, Tensor, clamp_min, log, masked_sum, mul, sqrt

logger = logging.getLogger(__name__)

SQRT_EPS = 1e-14


class EmptyMaskError(ValueError):
    """No valid ground-truth pixel is available."""


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.85
    stage_weights: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)
    min_valid_depth: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "stage_weights", tuple(float(w) for w in self.stage_weights))
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if len(self.stage_weights) != 5 or min(self.stage_weights) < 0 or max(self.stage_weights) <= 0:
            raise ConfigError("stage_weights needs 5 non-negative entries with at least one positive")
        if not self.min_valid_depth > 0:
            raise ConfigError("min_valid_depth must be positive")


def _array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def silog_sqrt_loss(pred: Tensor, gt, mask, lam: float = 0.85) -> Tensor:
    """``sqrt(mean(d^2) - lam * mean(d)^2)`` with ``d = log pred - log gt`` on valid pixels.

    The radicand is clamped at zero and smoothed by ``SQRT_EPS`` so the
    gradient stays finite at a perfect fit.
    """
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    gt, m = _array(gt), _array(mask)
    if gt.shape != pred.shape or m.shape != pred.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {m.shape}")
    valid = m != 0
    n = int(valid.sum())
    if n == 0:
        raise EmptyMaskError("no valid pixels")
    if np.any(gt[valid] <= 0):
        idx = tuple(int(i) for i in np.argwhere(valid & (gt <= 0))[0])
        raise DomainError("silog_sqrt_loss", idx, float(gt[idx]))
    log_gt = np.log(np.where(valid, gt, 1.0))
    d = log(pred) - log_gt
    s1 = masked_sum(d * d, valid)
    s2 = masked_sum(d, valid)
    radicand = s1 * (1.0 / n) - s2 * s2 * (lam / n**2)
    return sqrt(clamp_min(radicand, 0.0) + SQRT_EPS)


def downsample_gt(gt, mask, h: int, w: int) -> tuple:
    """Block-average valid ground truth down to ``h x w``.

    A block is valid if it holds at least one valid pixel; invalid blocks get
    depth 1.0 as a placeholder.
    """
    gt, m = _array(gt), _array(mask)
    _, H, W = gt.shape
    if H % h or W % w:
        raise ValueError(f"cannot block-downsample {H}x{W} to {h}x{w}")
    by, bx = H // h, W // w
    valid = (m != 0).astype(np.float64)
    counts = valid.reshape(1, h, by, w, bx).sum(axis=(2, 4))
    sums = (gt * valid).reshape(1, h, by, w, bx).sum(axis=(2, 4))
    mask_out = (counts > 0).astype(np.float64)
    gt_out = np.where(counts > 0, sums / np.maximum(counts, 1), 1.0)
    return gt_out, mask_out


def stage_losses(preds: Sequence[Tensor], gt, mask, lam: float) -> list:
    """Per-stage loss tensors; ``None`` where the downsampled mask is empty."""
    out = []
    for pred in preds:
        _, h, w = pred.shape
        g, m = downsample_gt(gt, mask, h, w)
        if not m.any():
            out.append(None)
            continue
        out.append(silog_sqrt_loss(pred, g, m, lam))
    return out


def mss_loss(preds, gt, mask, cfg: LossConfig = LossConfig()) -> Tensor:
    """Weighted sum of the per-stage losses against the ground-truth pyramid.

    Ground truth below ``cfg.min_valid_depth`` is treated as invalid.
    """
    gt = _array(gt)
    mask = ((_array(mask) != 0) & (gt >= cfg.min_valid_depth)).astype(np.float64)
    terms = stage_losses(list(preds), gt, mask, cfg.lam)
    total: Optional[Tensor] = None
    empty = []
    for k, (w, term) in enumerate(zip(cfg.stage_weights, terms)):
        if term is None:
            empty.append(k)
            continue
        if w == 0:
            continue
        weighted = mul(term, w)
        total = weighted if total is None else total + weighted
    if len(empty) == len(terms):
        raise EmptyMaskError("every supervision stage has an empty mask")
    if empty:
        logger.info("stages %s skipped: empty ground-truth mask", empty)
    if total is None:
        # every positively weighted stage was empty
        return Tensor(0.0)
    return total
