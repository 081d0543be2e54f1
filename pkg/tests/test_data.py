import numpy as np
import pytest

from sidert import imageio
from sidert.data import (
    INVALID_FRACTION,
    AugmentConfig,
    DepthSample,
    augment,
    flip,
    generate_scene,
    read_dataset,
    read_sample,
    synthetic_dataset,
    write_dataset,
    write_sample,
)
from sidert.imageio import MagicError, MaxvalError, TruncatedError
from sidert.nn import ConfigError


def test_scene_determinism_and_bounds():
    a, b = generate_scene(7, 32, 64, 3.0), generate_scene(7, 32, 64, 3.0)
    assert a.equals(b)
    assert not a.equals(generate_scene(8, 32, 64, 3.0))
    assert a.image.shape == (3, 32, 64) and a.depth.shape == a.mask.shape == (1, 32, 64)
    assert np.all(a.depth > 0) and np.all(a.depth <= 0.9 * 3.0 + 1e-6)
    assert np.all((a.image >= 0) & (a.image <= 1))


def test_scene_invalid_fraction_is_exact():
    for seed in range(5):
        s = generate_scene(seed, 64, 64, 10.0)
        assert int((s.mask == 0).sum()) == round(INVALID_FRACTION * 64 * 64)
        assert set(np.unique(s.mask)) <= {0.0, 1.0}


def test_identity_augment_is_exact():
    s = generate_scene(1, 32, 64)
    out = augment(s, AugmentConfig.identity(32, 64), np.random.default_rng(0))
    assert out.equals(s)


def test_flip_index_map_and_involution():
    s = generate_scene(2, 32, 64)
    f = flip(s)
    for r, c in [(0, 0), (5, 17), (31, 63)]:
        np.testing.assert_array_equal(f.image[:, r, 63 - c], s.image[:, r, c])
        assert f.depth[0, r, 63 - c] == s.depth[0, r, c]
        assert f.mask[0, r, 63 - c] == s.mask[0, r, c]
    assert flip(f).equals(s)
    forced = AugmentConfig(crop_h=32, crop_w=64, rotate_deg=0.0, scale_range=(1, 1), flip_prob=1.0)
    assert augment(s, forced, np.random.default_rng(0)).equals(f)


def test_augment_crop_shapes_and_determinism():
    s = generate_scene(3, 64, 128)
    cfg = AugmentConfig()
    a = augment(s, cfg, np.random.default_rng(5))
    b = augment(s, cfg, np.random.default_rng(5))
    assert a.equals(b) and a.image.shape == (3, 32, 64)
    assert np.all(a.depth[a.mask > 0] > 0)


def test_augment_scale_divides_depth():
    s = DepthSample(np.zeros((3, 32, 32)), np.full((1, 32, 32), 2.0), np.ones((1, 32, 32)))
    cfg = AugmentConfig(crop_h=32, crop_w=32, rotate_deg=0.0, scale_range=(1.25, 1.25), flip_prob=0.0)
    out = augment(s, cfg, np.random.default_rng(0))
    np.testing.assert_allclose(out.depth, 1.6)


def test_augment_crop_too_large():
    with pytest.raises(ConfigError):
        augment(generate_scene(0, 32, 32), AugmentConfig(crop_h=64, crop_w=32), np.random.default_rng(0))


def test_augment_config_validation():
    with pytest.raises(ConfigError):
        AugmentConfig(flip_prob=1.5)
    with pytest.raises(ConfigError):
        AugmentConfig(scale_range=(1.1, 0.9))


def test_pfm_single_value_bytes():
    buf = imageio.encode_pfm(np.array([[3.5]], dtype=np.float32))
    assert buf.endswith(np.float32(3.5).astype("<f4").tobytes())
    assert len(buf) - buf.index(b"-1.0\n") - len(b"-1.0\n") == 4
    assert imageio.decode_pfm(buf)[0, 0] == 3.5


def test_pfm_row_order():
    depth = np.arange(6, dtype=np.float32).reshape(2, 3)
    buf = imageio.encode_pfm(depth)
    payload = np.frombuffer(buf[-24:], dtype="<f4").reshape(2, 3)
    np.testing.assert_array_equal(payload, depth[::-1])
    np.testing.assert_array_equal(imageio.decode_pfm(buf), depth)


def test_bad_magic_reports_offset_zero():
    with pytest.raises(MagicError) as info:
        imageio.decode_ppm(b"P7\n1 1\n255\n\x00\x00\x00")
    assert info.value.offset == 0
    with pytest.raises(MagicError):
        imageio.decode_pfm(b"PF\n1 1\n-1.0\n" + bytes(12))


def test_truncated_and_maxval():
    with pytest.raises(TruncatedError):
        imageio.decode_pgm(b"P5\n4 4\n255\n" + bytes(10))
    with pytest.raises(MaxvalError):
        imageio.decode_pgm(b"P5\n1 1\n65535\n" + bytes(2))


def test_header_comments_are_skipped():
    assert imageio.decode_pgm(b"P5\n# made by hand\n2 1\n255\n\x07\x09").tolist() == [[7, 9]]


def test_sample_round_trip(tmp_path):
    s = generate_scene(4, 32, 64)
    write_sample(tmp_path, "0000", s)
    assert read_sample(tmp_path, "0000").equals(s)


def test_dataset_layout(tmp_path):
    root = tmp_path / "d"
    ids = write_dataset(root, 4, 9, 32, 32)
    names = sorted(p.name for p in root.iterdir())
    assert len(names) == 13 and "manifest.txt" in names and "0003_mask.pgm" in names
    assert (root / "manifest.txt").read_text().split() == ids
    loaded = read_dataset(root)
    for a, b in zip(loaded, synthetic_dataset(4, 9, 32, 32)):
        assert a.equals(b)
    with pytest.raises(FileExistsError):
        write_dataset(root, 4, 9, 32, 32)
    write_dataset(root, 4, 9, 32, 32, force=True)


def test_dataset_is_byte_identical(tmp_path):
    write_dataset(tmp_path / "a", 3, 5, 32, 32)
    write_dataset(tmp_path / "b", 3, 5, 32, 32)
    for p in (tmp_path / "a").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_dataset_size_must_divide(tmp_path):
    with pytest.raises(ConfigError):
        write_dataset(tmp_path / "d", 1, 0, 48, 48)
