"""Gradient-check suites at op, module and end-to-end scope.

Each check evaluates the finite-difference error at several seeded random
points and reports the worst one.
"""

from __future__ import annotations

from typing import Callable, Iterator

import numpy as np

from . import tensor as T
from .decoder import CsaParams, DecoderConfig, MsrParams, csa_forward, decode, init_decoder, msr_forward
from .encoder import EncoderConfig, encode, encoder_stage, init_encoder, patch_embed, patch_merge
from .gradcheck import grad_check, param_grad_check, random_coords
from .loss import LossConfig, mss_loss, silog_sqrt_loss
from .tensor import Tensor

TOLERANCE = 1e-4
SCOPES = ("op", "module", "e2e")


def _worst(make: Callable[[np.random.Generator], float], points: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    return max(make(rng) for _ in range(points))


def _probe(rng):
    """Scalar probe ``sum(w * y)`` with fixed random weights, so every output entry matters."""
    weights = {}

    def probe(y):
        if y.shape not in weights:
            weights[y.shape] = rng.normal(size=y.shape)
        return T.sum(T.mul(y, weights[y.shape]))

    return probe


def _unary(op, lo=-2.0, hi=2.0, shape=(3, 4)):
    def make(rng):
        x = rng.uniform(lo, hi, size=shape)
        probe = _probe(rng)
        return grad_check(lambda t: probe(op(t)), x)

    return make


def _binary(op, side: int, lo=-2.0, hi=2.0, shape=(3, 4), other_shape=None):
    """Check ``op(x, y)`` w.r.t. ``x`` (side 0) or ``op(y, x)`` w.r.t. ``x`` (side 1).

    The checked operand has ``shape`` for side 0 and ``other_shape`` for side 1.
    """
    other_shape = other_shape or shape

    def make(rng):
        x = rng.uniform(lo, hi, size=shape if side == 0 else other_shape)
        y = rng.uniform(lo, hi, size=other_shape if side == 0 else shape)
        probe = _probe(rng)
        if side == 0:
            return grad_check(lambda t: probe(op(t, y)), x)
        return grad_check(lambda t: probe(op(y, t)), x)

    return make


def op_checks() -> dict:
    mask = (np.arange(12).reshape(3, 4) % 3 != 0).astype(float)
    checks = {
        "add": _binary(T.add, 0),
        "add(broadcast)": _binary(T.add, 1, shape=(3, 4), other_shape=(4,)),
        "sub": _binary(T.sub, 1),
        "mul": _binary(T.mul, 0),
        "mul(broadcast)": _binary(T.mul, 1, shape=(3, 4), other_shape=(3, 1)),
        "div(numerator)": _binary(T.div, 0, lo=0.5, hi=2.0),
        "div(denominator)": _binary(T.div, 1, lo=0.5, hi=2.0),
        "neg": _unary(T.neg),
        "exp": _unary(T.exp),
        "log": _unary(T.log, 0.2, 3.0),
        "sqrt": _unary(T.sqrt, 0.2, 3.0),
        "sigmoid": _unary(T.sigmoid, -4.0, 4.0),
        "gelu": _unary(T.gelu, -3.0, 3.0),
        "clamp_min": _unary(lambda t: T.clamp_min(t, 0.0)),
        "sum(axis)": _unary(lambda t: T.sum(t, 1, keepdims=True), shape=(3, 4)),
        "mean(axis)": _unary(lambda t: T.mean(t, 0), shape=(3, 4)),
        "masked_sum": lambda rng: grad_check(lambda t: T.masked_sum(T.mul(t, t), mask), rng.normal(size=(3, 4))),
        "reshape": _unary(lambda t: T.reshape(t, (4, 3))),
        "transpose": _unary(lambda t: T.transpose(t, (1, 0))),
        "getitem": _unary(lambda t: t[1:, ::2]),
        "matmul(left)": _binary(T.matmul, 0, shape=(3, 4), other_shape=(4, 2)),
        "matmul(right)": _binary(T.matmul, 1, shape=(3, 4), other_shape=(4, 2)),
        "softmax_rows": _unary(T.softmax_rows, -3.0, 3.0, shape=(4, 5)),
        "softmax_rows(scaled)": _unary(lambda t: T.softmax_rows(t, scale=0.5), -3.0, 3.0, shape=(4, 5)),
        "linear(x)": _binary(lambda x, w: T.linear(x, w, np.ones(2)), 0, shape=(3, 4), other_shape=(4, 2)),
        "linear(w)": _binary(lambda w, x: T.linear(x, w, np.ones(2)), 0, shape=(4, 2), other_shape=(3, 4)),
        "linear(b)": _binary(lambda b, x: T.linear(x, np.ones((4, 2)), b), 0, shape=(2,), other_shape=(3, 4)),
        "layer_norm": _unary(lambda t: T.layer_norm(t, np.linspace(0.5, 1.5, 4), np.zeros(4)), shape=(3, 4)),
        "bilinear_upsample": _unary(lambda t: T.bilinear_upsample(t, 2), shape=(2, 3, 4)),
        "resize_bilinear": _unary(lambda t: T.resize_bilinear(t, 5, 3), shape=(2, 3, 4)),
    }
    return checks


def _toy_encoder(rng) -> tuple:
    cfg = EncoderConfig(base_channels=4, heads_per_stage=(1, 2, 2, 4), image_size=(32, 32))
    params = init_encoder(cfg, rng)
    for p in params.values():
        p.data = p.data + rng.normal(scale=0.1, size=p.shape)
    return cfg, params


def module_checks() -> dict:
    def check_patch_embed(rng):
        _, params = _toy_encoder(rng)
        image = rng.uniform(size=(3, 32, 32))
        probe = _probe(rng)
        return grad_check(lambda t: probe(patch_embed(params, t)), image)

    def check_stage(rng):
        cfg, params = _toy_encoder(rng)
        x = rng.normal(size=(8, 4, 4))
        probe = _probe(rng)
        fx = grad_check(lambda t: probe(encoder_stage(params, t, 2, cfg)), x, indices=_sample_idx(x.shape, 10, rng))
        fp = param_grad_check(
            lambda p: probe(encoder_stage(p, Tensor(x), 2, cfg)),
            {k: v for k, v in params.items() if k.startswith("enc.s2.")},
            random_coords({k: v for k, v in params.items() if k.startswith("enc.s2.")}, 8, rng),
        )
        return max(fx, fp)

    def check_merge(rng):
        _, params = _toy_encoder(rng)
        x = rng.normal(size=(4, 8, 8))
        probe = _probe(rng)
        return grad_check(lambda t: probe(patch_merge(params, t, 1)), x)

    def csa_setup(rng):
        p = CsaParams(
            Tensor(rng.normal(scale=0.5, size=(4, 3))),
            Tensor(rng.normal(scale=0.1, size=3)),
            Tensor(rng.normal(scale=0.5, size=(6, 3))),
            Tensor(rng.normal(scale=0.1, size=3)),
        )
        return p, rng.normal(size=(4, 4, 4)), rng.normal(size=(6, 2, 2)), _probe(rng)

    def check_csa_fine(rng):
        p, fine, coarse, probe = csa_setup(rng)
        return grad_check(lambda t: probe(csa_forward(t, coarse, p)), fine)

    def check_csa_coarse(rng):
        p, fine, coarse, probe = csa_setup(rng)
        return grad_check(lambda t: probe(csa_forward(fine, t, p)), coarse)

    def check_csa_params(rng):
        p, fine, coarse, probe = csa_setup(rng)
        errs = []
        for field in ("fine_w", "fine_b", "coarse_w", "coarse_b"):
            def f(t, field=field):
                q = CsaParams(**{**p.__dict__, field: t})
                return probe(csa_forward(fine, coarse, q))
            errs.append(grad_check(f, getattr(p, field)))
        return max(errs)

    def msr_setup(rng):
        p = MsrParams(
            Tensor(rng.normal(scale=0.5, size=(3, 3))),
            Tensor(rng.normal(scale=0.1, size=3)),
            Tensor(rng.normal(scale=0.5, size=(3, 3))),
            Tensor(rng.normal(scale=0.1, size=3)),
            Tensor(rng.normal(scale=0.5, size=(3, 1))),
            Tensor(rng.normal(scale=0.1, size=1)),
        )
        return p, rng.normal(size=(3, 2, 3)), rng.normal(size=(3, 4, 6))

    def msr_probe(rng):
        wf, wd = rng.normal(size=(3, 4, 6)), rng.normal(size=(1, 4, 6))
        return lambda out: T.sum(T.mul(out[0], wf)) + T.sum(T.mul(out[1], wd))

    def check_msr_with_fine(rng):
        p, coarse, fine = msr_setup(rng)
        probe = msr_probe(rng)
        e1 = grad_check(lambda t: probe(msr_forward(t, fine, p, 10.0)), coarse)
        e2 = grad_check(lambda t: probe(msr_forward(coarse, t, p, 10.0)), fine)
        e3 = max(
            grad_check(lambda t, f=f: probe(msr_forward(coarse, fine, MsrParams(**{**p.__dict__, f: t}), 10.0)), getattr(p, f))
            for f in p.__dict__
        )
        return max(e1, e2, e3)

    def check_msr_no_fine(rng):
        p, coarse, _ = msr_setup(rng)
        probe = msr_probe(rng)
        return grad_check(lambda t: probe(msr_forward(t, None, p, 10.0)), coarse)

    def check_silog(rng):
        gt = rng.uniform(1.0, 5.0, size=(1, 4, 5))
        mask = (rng.uniform(size=gt.shape) > 0.3).astype(float)
        mask[0, 0, 0] = 1.0
        pred = rng.uniform(1.0, 5.0, size=gt.shape)
        return grad_check(lambda t: silog_sqrt_loss(t, gt, mask, 0.85), pred)

    def check_mss(rng):
        gt = rng.uniform(1.0, 5.0, size=(1, 16, 16))
        mask = (rng.uniform(size=gt.shape) > 0.2).astype(float)
        sizes = [(1, 1), (2, 2), (4, 4), (8, 8), (16, 16)]
        preds = [rng.uniform(1.0, 5.0, size=(1,) + s) for s in sizes]
        k = int(rng.integers(0, 5))

        def f(t):
            ps = [Tensor(p) for p in preds]
            ps[k] = t
            return mss_loss(ps, gt, mask, LossConfig())

        return grad_check(f, preds[k])

    return {
        "patch_embed": check_patch_embed,
        "encoder_stage": check_stage,
        "patch_merge": check_merge,
        "csa_forward(fine)": check_csa_fine,
        "csa_forward(coarse)": check_csa_coarse,
        "csa_forward(params)": check_csa_params,
        "msr_forward(with csa)": check_msr_with_fine,
        "msr_forward(no csa)": check_msr_no_fine,
        "silog_sqrt_loss": check_silog,
        "mss_loss": check_mss,
    }


def _sample_idx(shape, n, rng):
    flat = rng.choice(int(np.prod(shape)), size=n, replace=False)
    return [np.unravel_index(int(i), shape) for i in flat]


def e2e_checks(n_coords: int = 5) -> dict:
    def check(rng):
        enc_cfg, params = _toy_encoder(rng)
        dec_cfg = DecoderConfig(max_depth=10.0)
        params.update(init_decoder(enc_cfg, dec_cfg, rng))
        image = Tensor(rng.uniform(size=(3, 32, 32)))
        gt = rng.uniform(1.0, 8.0, size=(1, 32, 32))
        mask = (rng.uniform(size=gt.shape) > 0.1).astype(float)

        def loss_fn(p):
            return mss_loss(decode(p, encode(p, image, enc_cfg), dec_cfg), gt, mask, LossConfig())

        return param_grad_check(loss_fn, params, random_coords(params, n_coords, rng))

    return {"encode->decode->mss_loss": check}


def run(scope: str, points: int = 10, seed: int = 0) -> Iterator[tuple]:
    """Yield ``(name, max_relative_error)`` for every check in ``scope``."""
    if scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}; choose from {SCOPES}")
    suite = {"op": op_checks, "module": module_checks, "e2e": e2e_checks}[scope]()
    for i, (name, make) in enumerate(suite.items()):
        yield name, _worst(make, points, seed * 1000 + i)
