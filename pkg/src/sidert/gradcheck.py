"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import DimensionError, Tensor, backward


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def grad_check(
    f: Callable[[Tensor], Tensor],
    x,
    eps: float = 1e-5,
    indices: Optional[Sequence[tuple]] = None,
) -> float:
    """Max relative error between backprop and central differences of ``f`` at ``x``.

    ``f`` must return a scalar tensor. ``indices`` restricts the comparison to
    a subset of coordinates of ``x`` (all of them by default).
    """
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(base, requires_grad=True)
    out = f(leaf)
    if out.data.size != 1:
        raise DimensionError(f"grad_check needs a scalar function, got shape {out.shape}")
    backward(out)
    analytic_full = leaf.grad if leaf.grad is not None else np.zeros_like(base)

    if indices is None:
        indices = list(np.ndindex(base.shape))
    analytic = np.empty(len(indices))
    numeric = np.empty(len(indices))
    for k, idx in enumerate(indices):
        plus = base.copy()
        plus[idx] += eps
        minus = base.copy()
        minus[idx] -= eps
        fp = float(f(Tensor(plus)).data)
        fm = float(f(Tensor(minus)).data)
        numeric[k] = (fp - fm) / (2 * eps)
        analytic[k] = analytic_full[idx]
    return relative_error(analytic, numeric)


def param_grad_check(
    loss_fn: Callable[[dict], Tensor],
    params: dict,
    coords: Sequence[tuple],
    eps: float = 1e-5,
) -> float:
    """Gradient check on selected ``(param_name, index)`` coordinates of a parameter dict.

    ``loss_fn`` receives the parameter dict and must return a scalar tensor.
    Parameters are temporarily perturbed in place and restored afterwards.
    """
    for p in params.values():
        p.zero_grad()
    backward(loss_fn(params))
    analytic = np.array(
        [params[name].grad[idx] if params[name].grad is not None else 0.0 for name, idx in coords]
    )
    for p in params.values():
        p.zero_grad()

    numeric = np.empty(len(coords))
    for k, (name, idx) in enumerate(coords):
        data = params[name].data
        orig = data[idx]
        data[idx] = orig + eps
        fp = float(loss_fn(params).data)
        data[idx] = orig - eps
        fm = float(loss_fn(params).data)
        data[idx] = orig
        numeric[k] = (fp - fm) / (2 * eps)
    return relative_error(analytic, numeric)


def random_coords(params: dict, n: int, rng: np.random.Generator) -> list:
    """Pick ``n`` distinct parameter coordinates uniformly over all scalars."""
    names = list(params)
    sizes = np.array([params[k].data.size for k in names])
    flat = rng.choice(int(sizes.sum()), size=min(n, int(sizes.sum())), replace=False)
    bounds = np.cumsum(sizes)
    coords = []
    for j in np.sort(flat):
        which = int(np.searchsorted(bounds, j, side="right"))
        local = int(j - (bounds[which - 1] if which else 0))
        coords.append((names[which], np.unravel_index(local, params[names[which]].shape)))
    return coords
