import pytest

from sidert import config
from sidert.nn import ConfigError


def test_defaults_round_trip_through_text():
    text = config.RunConfig().to_text()
    assert config.RunConfig().with_values(config.parse_text(text)) == config.RunConfig()
    assert len(text.splitlines()) == len(config.KEYS)


def test_parse_file_with_comments(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# toy run\nbase_channels = 4  # narrow\nheads_per_stage = 1,1,2,2\n\nuse_csa = false\nlambda=1.0\n")
    cfg = config.load(path, {"steps": 7})
    assert cfg.encoder.base_channels == 4 and cfg.encoder.heads_per_stage == (1, 1, 2, 2)
    assert cfg.decoder.use_csa is False and cfg.loss.lam == 1.0 and cfg.train.steps == 7


def test_overrides_beat_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("lr = 0.01\n")
    assert config.load(path, {"lr": 0.5}).train.lr == 0.5


@pytest.mark.parametrize(
    "text",
    ["colour = blue\n", "lr = fast\n", "lr\n", "lr = -1\n", "stage_weights = 1,1\n", "base_channels = 6\nheads_per_stage = 4,1,1,1\n", "image_size = 40x64\n"],
)
def test_invalid_values_are_rejected(text):
    with pytest.raises(ConfigError):
        config.RunConfig().with_values(config.parse_text(text))


def test_flags_are_one_to_one_with_keys():
    flags = [config.flag(k) for k in config.KEYS]
    assert len(set(flags)) == len(flags)
    assert config.flag("weight_decay") == "--weight-decay"


def test_value_formats():
    cfg = config.RunConfig().with_values({"image_size": (64, 128), "decoder_channels": None})
    text = cfg.to_text()
    assert "image_size = 64x128\n" in text and "decoder_channels = auto\n" in text
