"""Depth evaluation metrics over the valid-pixel set."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

FIELDS = ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3")

# (cap in metres, crop height, crop width); crop None means no crop
PROTOCOLS = {
    "kitti": (80.0, None),
    "nyu": (10.0, (427, 561)),
    "synthetic": (None, None),
}


class EmptyEvalError(ValueError):
    """No valid pixel to evaluate."""


@dataclass(frozen=True)
class MetricReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    n_valid: int

    @property
    def delta(self) -> tuple:
        return (self.delta1, self.delta2, self.delta3)

    def as_dict(self) -> dict:
        return asdict(self)

    def to_lines(self) -> str:
        """``metric=value`` pairs, one per line."""
        return "\n".join(f"{k}={v!r}" for k, v in self.as_dict().items())

    def to_table(self) -> str:
        head = ["AbsRel", "SqRel", "RMSE", "RMSElog", "d1(%)", "d2(%)", "d3(%)", "N"]
        vals = [f"{getattr(self, k):.4f}" for k in FIELDS[:4]]
        vals += [f"{getattr(self, k):.2f}" for k in FIELDS[4:]] + [str(self.n_valid)]
        widths = [max(len(a), len(b)) for a, b in zip(head, vals)]
        return "\n".join(
            "  ".join(s.rjust(wd) for s, wd in zip(row, widths)) for row in (head, vals)
        )


def compute_metrics(pred, gt, mask=None) -> MetricReport:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    valid = np.ones(gt.shape, bool) if mask is None else np.asarray(mask) != 0
    if pred.shape != gt.shape or valid.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {valid.shape}")
    d, ds = pred[valid], gt[valid]
    if d.size == 0:
        raise EmptyEvalError("no valid pixels")
    if np.any(d <= 0) or np.any(ds <= 0):
        raise ValueError("depths must be positive on valid pixels")
    err = ds - d
    ratio = np.maximum(ds / d, d / ds)
    return MetricReport(
        abs_rel=float(np.mean(np.abs(err) / ds)),
        sq_rel=float(np.mean(err**2 / ds)),
        rmse=float(np.sqrt(np.mean(err**2))),
        rmse_log=float(np.sqrt(np.mean((np.log(ds) - np.log(d)) ** 2))),
        delta1=float(100.0 * np.mean(ratio < 1.25)),
        delta2=float(100.0 * np.mean(ratio < 1.25**2)),
        delta3=float(100.0 * np.mean(ratio < 1.25**3)),
        n_valid=int(d.size),
    )


def aggregate(reports: Sequence[MetricReport]) -> MetricReport:
    """Per-image mean of every metric; ``n_valid`` is the total count."""
    if not reports:
        raise ValueError("cannot aggregate an empty list of reports")
    vals = {k: float(np.mean([getattr(r, k) for r in reports])) for k in FIELDS}
    return MetricReport(**vals, n_valid=int(sum(r.n_valid for r in reports)))


def center_crop(x: np.ndarray, ch: int, cw: int) -> np.ndarray:
    h, w = x.shape[-2:]
    if ch > h or cw > w:
        raise ValueError(f"crop {ch}x{cw} larger than image {h}x{w}")
    top, left = (h - ch) // 2, (w - cw) // 2
    return x[..., top : top + ch, left : left + cw]


def eval_protocol(
    pred,
    gt,
    dataset_kind: str = "kitti",
    mask=None,
    cap: Optional[float] = -1.0,
    crop: Optional[tuple] = (-1, -1),
) -> MetricReport:
    """Apply the dataset's depth cap and centre crop, then :func:`compute_metrics`.

    ``cap`` and ``crop`` default to the dataset's policy; pass ``None`` to
    disable either, or an explicit value to override it.
    """
    if dataset_kind not in PROTOCOLS:
        raise ValueError(f"unknown dataset kind {dataset_kind!r}")
    default_cap, default_crop = PROTOCOLS[dataset_kind]
    cap = default_cap if cap == -1.0 else cap
    crop = default_crop if crop == (-1, -1) else crop
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    valid = np.ones(gt.shape, bool) if mask is None else np.asarray(mask) != 0
    valid = valid & (gt > 0)
    if cap is not None:
        valid &= gt <= cap
    if crop is not None:
        pred, gt, valid = (center_crop(a, *crop) for a in (pred, gt, valid))
    return compute_metrics(pred, gt, valid)
