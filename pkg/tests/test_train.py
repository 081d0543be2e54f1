import numpy as np
import pytest

from sidert.data import AugmentConfig, synthetic_dataset
from sidert.decoder import DecoderConfig
from sidert.encoder import EncoderConfig
from sidert.model import ModelConfig, SideRT
from sidert.tensor import Tensor
from sidert.train import (
    CheckpointError,
    NonFiniteGradientError,
    TrainConfig,
    TrainState,
    adamw_step,
    load_checkpoint,
    save_checkpoint,
    train,
)

TINY = ModelConfig(EncoderConfig(base_channels=4, heads_per_stage=(1, 1, 2, 2), image_size=(32, 32)), DecoderConfig())


def scalar_step(theta, g, lr, wd):
    params = {"t": Tensor(np.array([theta]), requires_grad=True)}
    state = TrainState.fresh(params, 0)
    adamw_step(params, state, TrainConfig(lr=lr, weight_decay=wd), grads={"t": np.array([g])})
    return params["t"].data[0]


def test_adamw_scalar_examples():
    assert scalar_step(1.0, 1.0, 0.1, 0.0) == pytest.approx(1 - 0.1 / (1 + 1e-8), abs=1e-15)
    assert scalar_step(1.0, 0.0, 0.1, 0.5) == pytest.approx(0.95, abs=1e-15)
    assert scalar_step(1.0, 0.0, 0.1, 0.0) == 1.0


def test_adamw_missing_gradient_counts_as_zero():
    params = {"a": Tensor(np.ones(3), requires_grad=True)}
    state = TrainState.fresh(params, 0)
    adamw_step(params, state, TrainConfig(weight_decay=0.0))
    np.testing.assert_array_equal(params["a"].data, 1.0)
    assert state.step == 1


def test_adamw_rejects_non_finite():
    params = {"a": Tensor(np.ones(2), requires_grad=True)}
    with pytest.raises(NonFiniteGradientError) as info:
        adamw_step(params, TrainState.fresh(params, 0), TrainConfig(), grads={"a": np.array([1.0, np.nan])})
    assert info.value.name == "a"


def run(tmp_path, steps, name, **kw):
    data = synthetic_dataset(3, 0, 64, 64)
    model = SideRT.init(TINY, seed=0)
    cfg = TrainConfig(steps=steps, **kw)
    aug = AugmentConfig(crop_h=32, crop_w=32)
    state = train(model, data, cfg, aug, out_dir=tmp_path / name)
    return model, state


def test_zero_steps(tmp_path):
    model, state = run(tmp_path, 0, "z")
    assert state.loss_history == [] and state.step == 0
    assert sorted(p.name for p in (tmp_path / "z").iterdir()) == ["final.srtc", "loss.txt"]
    loaded, _ = load_checkpoint(tmp_path / "z" / "final.srtc")
    for k in model.params:
        assert np.array_equal(loaded.params[k].data, SideRT.init(TINY, seed=0).params[k].data)


def test_two_runs_are_bit_identical(tmp_path):
    _, a = run(tmp_path, 4, "a")
    _, b = run(tmp_path, 4, "b")
    assert a.loss_history == b.loss_history
    assert (tmp_path / "a" / "final.srtc").read_bytes() == (tmp_path / "b" / "final.srtc").read_bytes()
    lines = (tmp_path / "a" / "loss.txt").read_text().splitlines()
    assert [float(l.split()[1]) for l in lines] == a.loss_history


def test_resume_matches_straight_run(tmp_path):
    run(tmp_path, 4, "straight", checkpoint_every=2)
    model, state = load_checkpoint(tmp_path / "straight" / "ckpt_000002.srtc")
    assert state.step == 2 and len(state.loss_history) == 2
    train(model, synthetic_dataset(3, 0, 64, 64), TrainConfig(steps=4, checkpoint_every=2),
          AugmentConfig(crop_h=32, crop_w=32), state=state, out_dir=tmp_path / "resumed")
    for name in ("final.srtc", "ckpt_000004.srtc", "loss.txt"):
        assert (tmp_path / "straight" / name).read_bytes() == (tmp_path / "resumed" / name).read_bytes()


def test_checkpoint_round_trip_bytes(tmp_path):
    _, state = run(tmp_path, 2, "r")
    path = tmp_path / "r" / "final.srtc"
    model, state = load_checkpoint(path)
    save_checkpoint(tmp_path / "again.srtc", model, state)
    assert (tmp_path / "again.srtc").read_bytes() == path.read_bytes()
    assert path.read_bytes()[:8] == b"SRTCKPT1"


def test_weights_only_checkpoint(tmp_path):
    model = SideRT.init(TINY, seed=3)
    save_checkpoint(tmp_path / "w.srtc", model)
    loaded, state = load_checkpoint(tmp_path / "w.srtc", expect=TINY)
    assert state is None and loaded.n_params() == model.n_params()


def test_missing_parameter_is_named(tmp_path):
    model = SideRT.init(TINY, seed=0)
    params = dict(model.params)
    del params["dec.msr2.head.w"]
    save_checkpoint(tmp_path / "bad.srtc", SideRT(TINY, params))
    with pytest.raises(CheckpointError, match="dec.msr2.head.w"):
        load_checkpoint(tmp_path / "bad.srtc")


def test_config_mismatch_and_bad_magic(tmp_path):
    save_checkpoint(tmp_path / "m.srtc", SideRT.init(TINY))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "m.srtc", expect=ModelConfig())
    (tmp_path / "x.srtc").write_bytes(b"NOTACKPT" + bytes(8))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x.srtc")


def test_training_reduces_loss():
    data = synthetic_dataset(2, 1, 32, 32)
    model = SideRT.init(TINY, seed=1)
    state = train(model, data, TrainConfig(steps=40, lr=1e-3))
    assert np.mean(state.loss_history[-5:]) < np.mean(state.loss_history[:5])
