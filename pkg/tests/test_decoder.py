import math

import numpy as np
import pytest

from sidert.decoder import (
    CsaParams,
    DecoderConfig,
    DegenerateFeatureError,
    MsrParams,
    csa_forward,
    decode,
    msr_forward,
    receptive_field_map,
)
from sidert.encoder import EncoderConfig
from sidert.gradcheck import grad_check, param_grad_check, random_coords
from sidert.model import ModelConfig, SideRT
from sidert.tensor import DimensionError, Tensor, sum as tsum


def identity_csa(c):
    return CsaParams(Tensor(np.eye(c)), Tensor(np.zeros(c)), Tensor(np.eye(c)), Tensor(np.zeros(c)))


def fmap(vectors, h, w):
    """Channels x H x W map from a list of H*W channel vectors in row-major order."""
    return Tensor(np.asarray(vectors, dtype=np.float64).T.reshape(-1, h, w))


def random_csa(cf, cc, cd, rng):
    return CsaParams(*(Tensor(rng.normal(size=s) * 0.5) for s in ((cf, cd), (cd,), (cc, cd), (cd,))))


def random_msr(c, rng, scale=0.5):
    shapes = ((c, c), (c,), (c, c), (c,), (c, 1), (1,))
    return MsrParams(*(Tensor(rng.normal(size=s) * scale) for s in shapes))


def zero_msr(c):
    shapes = ((c, c), (c,), (c, c), (c,), (c, 1), (1,))
    return MsrParams(*(Tensor(np.zeros(s)) for s in shapes))


def test_csa_hand_example():
    e = math.e
    out, attn = csa_forward(fmap([[1, 0]], 1, 1), fmap([[1, 0], [0, 1]], 1, 2), identity_csa(2), return_attention=True)
    np.testing.assert_allclose(attn.data, [[e / (e + 1), 1 / (e + 1)]], atol=1e-12)
    np.testing.assert_allclose(out.data[:, 0, 0], [1 + e / (e + 1), 1 / (e + 1)], atol=1e-5)
    np.testing.assert_allclose(out.data[:, 0, 0], [1.73106, 0.26894], atol=1e-5)


def test_csa_singleton_is_q_plus_k():
    q, k = [0.3, -1.2, 2.0], [1.5, 0.25, -0.75]
    out = csa_forward(fmap([q], 1, 1), fmap([k], 1, 1), identity_csa(3))
    assert np.array_equal(out.data[:, 0, 0], np.add(q, k))


def test_csa_identical_coarse_features():
    rng = np.random.default_rng(0)
    f = np.array([0.5, -2.0, 1.0])
    fine = Tensor(rng.normal(size=(3, 4, 4)))
    coarse = Tensor(np.broadcast_to(f[:, None, None], (3, 2, 2)).copy())
    out = csa_forward(fine, coarse, identity_csa(3))
    np.testing.assert_allclose(out.data, fine.data + f[:, None, None], atol=1e-12)


def test_csa_temperature_scales_logits():
    rng = np.random.default_rng(1)
    fine, coarse = Tensor(rng.normal(size=(4, 2, 2))), Tensor(rng.normal(size=(4, 1, 1)))
    fine2 = Tensor(rng.normal(size=(4, 2, 2)))
    coarse2 = Tensor(rng.normal(size=(4, 1, 3)))
    _, a_plain = csa_forward(fine2, coarse2, identity_csa(4), return_attention=True)
    _, a_temp = csa_forward(fine2, coarse2, identity_csa(4), temperature=True, return_attention=True)
    logits = fine2.data.reshape(4, -1).T @ coarse2.data.reshape(4, -1)
    z = logits / 2.0
    expected = np.exp(z - z.max(1, keepdims=True))
    np.testing.assert_allclose(a_temp.data, expected / expected.sum(1, keepdims=True), atol=1e-12)
    assert not np.allclose(a_plain.data, a_temp.data)
    assert csa_forward(fine, coarse, identity_csa(4)).shape == (4, 2, 2)


def test_csa_rejects_mismatched_widths():
    with pytest.raises(DimensionError):
        csa_forward(Tensor(np.ones((3, 2, 2))), Tensor(np.ones((4, 1, 1))), identity_csa(3))


def test_csa_gradients():
    rng = np.random.default_rng(2)
    p = random_csa(4, 8, 4, rng)
    fine, coarse = rng.normal(size=(4, 4, 4)), rng.normal(size=(8, 2, 2))
    probe = Tensor(rng.normal(size=(4, 4, 4)))
    assert grad_check(lambda t: tsum(csa_forward(t, Tensor(coarse), p) * probe), fine) < 1e-4
    assert grad_check(lambda t: tsum(csa_forward(Tensor(fine), t, p) * probe), coarse) < 1e-4


def test_msr_constant_coarse_no_fine():
    out, depth = msr_forward(Tensor(np.full((4, 2, 3), 1.7)), None, zero_msr(4), 10.0)
    assert out.shape == (4, 4, 6) and depth.shape == (1, 4, 6)
    np.testing.assert_allclose(out.data, 1.7, atol=1e-14)
    np.testing.assert_array_equal(depth.data, 5.0)


def test_msr_constant_coarse_and_fine():
    out, _ = msr_forward(Tensor(np.full((4, 2, 2), 1.5)), Tensor(np.full((4, 4, 4), -0.25)), zero_msr(4), 10.0)
    np.testing.assert_allclose(out.data, 1.25, atol=1e-14)


def test_msr_shape_mismatch():
    with pytest.raises(DimensionError):
        msr_forward(Tensor(np.ones((4, 2, 2))), Tensor(np.ones((4, 3, 4))), zero_msr(4), 10.0)


def test_msr_gradients_both_branches():
    rng = np.random.default_rng(3)
    p = random_msr(4, rng)
    coarse, fine = rng.normal(size=(4, 2, 2)), rng.normal(size=(4, 4, 4))
    probe_f, probe_d = Tensor(rng.normal(size=(4, 4, 4))), Tensor(rng.normal(size=(1, 4, 4)))

    def loss(c, f):
        feats, depth = msr_forward(c, f, p, 10.0)
        return tsum(feats * probe_f) + tsum(depth * probe_d)

    assert grad_check(lambda t: loss(t, Tensor(fine)), coarse) < 1e-4
    assert grad_check(lambda t: loss(Tensor(coarse), t), fine) < 1e-4
    assert grad_check(lambda t: loss(t, None), coarse) < 1e-4


def toy_model(c=4, seed=0, **dec):
    enc = EncoderConfig(base_channels=c, heads_per_stage=(1, 1, 2, 2), image_size=(64, 64))
    return SideRT.init(ModelConfig(enc, DecoderConfig(**dec)), seed=seed)


def test_decode_shapes_and_range():
    model = toy_model(c=8)
    preds = model(np.random.default_rng(4).uniform(size=(3, 64, 64)))
    assert [p.shape for p in preds] == [(1, 4, 4), (1, 8, 8), (1, 16, 16), (1, 32, 32), (1, 64, 64)]
    for p in preds:
        assert np.all(p.data > 0) and np.all(p.data < 10.0)


@pytest.mark.parametrize("use_csa,use_msr", [(False, False), (True, False), (False, True)])
def test_decode_ablation_paths(use_csa, use_msr):
    model = toy_model(use_csa=use_csa, use_msr=use_msr)
    preds = model(np.random.default_rng(5).uniform(size=(3, 64, 32)))
    assert [p.shape for p in preds] == [(1, 4, 2), (1, 8, 4), (1, 16, 8), (1, 32, 16), (1, 64, 32)]


def test_decode_parameter_gradient():
    model = toy_model()
    img = np.random.default_rng(6).uniform(size=(3, 32, 32))
    probe = Tensor(np.random.default_rng(7).normal(size=(1, 32, 32)))
    dec = {k: v for k, v in model.params.items() if k.startswith("dec.")}
    coords = random_coords(dec, 3, np.random.default_rng(8))
    pyr = model.encode(img)
    err = param_grad_check(lambda _: tsum(decode(model.params, pyr, model.cfg.decoder).final * probe), model.params, coords)
    assert err < 1e-4


def test_receptive_field_examples():
    rng = np.random.default_rng(9)
    f = rng.normal(size=(5, 3, 4))
    before, after = receptive_field_map(f, Tensor(f), (1, 2))
    assert before[1, 2] == 1.0 and after[1, 2] == 1.0
    assert np.all((before >= 0) & (before <= 1))
    ortho = np.zeros((2, 1, 2))
    ortho[0, 0, 0] = 1.0
    ortho[1, 0, 1] = 3.0
    m, _ = receptive_field_map(ortho, ortho, (0, 0))
    np.testing.assert_allclose(m, [[1.0, 0.5]])
    same = np.broadcast_to(np.array([1.0, 2.0])[:, None, None], (2, 3, 3))
    m, _ = receptive_field_map(same, same, (2, 2))
    np.testing.assert_allclose(m, 1.0, atol=1e-15)


def test_receptive_field_errors():
    with pytest.raises(DegenerateFeatureError):
        receptive_field_map(np.zeros((2, 2, 2)), np.ones((2, 2, 2)), (0, 0))
    with pytest.raises(IndexError):
        receptive_field_map(np.ones((2, 2, 2)), np.ones((2, 2, 2)), (2, 0))
