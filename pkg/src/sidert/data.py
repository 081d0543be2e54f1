"""Synthetic depth scenes, augmentation and the on-disk dataset layout.

Scenes are a tilted background plane plus 3 to 8 axis-aligned rectangles at
random depths. Appearance is a fixed function of (object, depth) so depth is
recoverable from the image. Depths are stored at float32 precision and image
values on the 1/255 grid, so PFM/PPM round trips are exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
import numpy as np

from . import imageio
from .encoder import check_divisible
from .nn import ConfigError

INVALID_FRACTION = 0.10
N_RECT = (3, 8)
SNAP = 8  # rectangle corners lie on the stage-2 grid
# Scenes stay well inside the decoder's default 10 m cap; the narrow range
# keeps the 4-pixel-patch upsampling blur at object edges small.
SCENE_MAX_DEPTH = 3.0
# rectangle extents as fractions of the image, before snapping
RECT_H = (0.5, 1.0)
RECT_W = (0.25, 0.5)


@dataclass(frozen=True)
class DepthSample:
    image: np.ndarray  # 3 x H x W in [0, 1]
    depth: np.ndarray  # 1 x H x W metres
    mask: np.ndarray  # 1 x H x W of {0, 1}

    def __post_init__(self):
        _, h, w = self.image.shape
        if self.depth.shape != (1, h, w) or self.mask.shape != (1, h, w):
            raise ValueError(
                f"inconsistent sample shapes: image {self.image.shape}, "
                f"depth {self.depth.shape}, mask {self.mask.shape}"
            )

    @property
    def size(self) -> tuple:
        return self.image.shape[1:]

    def equals(self, other: "DepthSample") -> bool:
        return all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("image", "depth", "mask")
        )


def _palette(n: int) -> np.ndarray:
    """Fixed, well separated hues for object ids 0..n-1."""
    hues = (np.arange(n) * 0.61803398875) % 1.0
    k = (np.array([5.0, 3.0, 1.0])[None, :] + hues[:, None] * 6.0) % 6.0
    return 1.0 - np.clip(np.minimum(k, 4.0 - k), 0.0, 1.0)


PALETTE = _palette(N_RECT[1] + 1)


def render_image(depth: np.ndarray, ids: np.ndarray, max_depth: float) -> np.ndarray:
    """Red carries log-depth shading (near is bright), green/blue the object hue.

    Values are quantised to the 1/255 grid.
    """
    near = 1.0 - np.clip(np.log(depth) / np.log(max_depth), 0.0, 1.0)
    img = np.concatenate([near[None], PALETTE[ids].transpose(2, 0, 1)[:2] * 0.8 + 0.1])
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def generate_scene(seed: int, h: int, w: int, max_depth: float = SCENE_MAX_DEPTH) -> DepthSample:
    check_divisible(h, w)
    rng = np.random.default_rng(seed)
    hi = 0.9 * max_depth
    rows = np.arange(h)[:, None] / max(h - 1, 1)
    cols = np.arange(w)[None, :] / max(w - 1, 1)
    # background plane: far at the top, nearer at the bottom, slight sideways tilt
    far = rng.uniform(0.6, 1.0) * hi
    near = rng.uniform(0.25, 0.5) * far
    tilt = rng.uniform(-0.1, 0.1) * far
    depth = far + (near - far) * rows + tilt * (cols - 0.5)
    depth = np.clip(depth, 1.0, hi)
    ids = np.zeros((h, w), dtype=np.int64)

    n_rect = int(rng.integers(N_RECT[0], N_RECT[1] + 1))
    gh, gw = h // SNAP, w // SNAP
    for k in range(1, n_rect + 1):
        rh = int(rng.integers(max(int(gh * RECT_H[0]), 1), max(int(gh * RECT_H[1]), 1) + 1))
        rw = int(rng.integers(max(int(gw * RECT_W[0]), 1), max(int(gw * RECT_W[1]), 1) + 1))
        top = int(rng.integers(0, gh - rh + 1))
        left = int(rng.integers(0, gw - rw + 1))
        d = rng.uniform(1.0, hi)
        sl = (slice(top * SNAP, (top + rh) * SNAP), slice(left * SNAP, (left + rw) * SNAP))
        depth[sl] = d
        ids[sl] = k

    depth = depth.astype(np.float32).astype(np.float64)
    image = render_image(depth, ids, max_depth)
    mask = np.ones(h * w)
    n_bad = int(round(INVALID_FRACTION * h * w))
    mask[rng.choice(h * w, size=n_bad, replace=False)] = 0.0
    return DepthSample(image, depth[None], mask.reshape(1, h, w))


# --- augmentation ----------------------------------------------------------


@dataclass(frozen=True)
class AugmentConfig:
    crop_h: int = 32
    crop_w: int = 64
    rotate_deg: float = 1.0
    scale_range: tuple = (0.9, 1.1)
    flip_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scale_range", tuple(float(s) for s in self.scale_range))
        lo, hi = self.scale_range
        if self.crop_h < 1 or self.crop_w < 1:
            raise ConfigError("crop extents must be positive")
        if not 0 < lo <= hi:
            raise ConfigError(f"scale_range must satisfy 0 < lo <= hi, got {self.scale_range}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigError("flip_prob must lie in [0, 1]")
        if self.rotate_deg < 0:
            raise ConfigError("rotate_deg must be non-negative")

    @classmethod
    def identity(cls, h: int, w: int) -> "AugmentConfig":
        return cls(crop_h=h, crop_w=w, rotate_deg=0.0, scale_range=(1.0, 1.0), flip_prob=0.0)


def _bilinear_resize(img: np.ndarray, h: int, w: int) -> np.ndarray:
    from .tensor import _interp_matrix

    return _interp_matrix(img.shape[1], h) @ img @ _interp_matrix(img.shape[2], w).T


def _nearest_index(n_in: int, n_out: int) -> np.ndarray:
    src = np.floor((np.arange(n_out) + 0.5) * (n_in / n_out)).astype(int)
    return np.clip(src, 0, n_in - 1)


def _rotate(sample: DepthSample, angle_deg: float) -> DepthSample:
    """Rotate about the image centre; nearest for depth/mask, bilinear for colour."""
    _, h, w = sample.image.shape
    a = np.deg2rad(angle_deg)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    # inverse map: destination pixel -> source coordinate
    sy = np.cos(a) * (yy - cy) - np.sin(a) * (xx - cx) + cy
    sx = np.sin(a) * (yy - cy) + np.cos(a) * (xx - cx) + cx

    ny, nx = np.round(sy).astype(int), np.round(sx).astype(int)
    inside = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
    nyc, nxc = np.clip(ny, 0, h - 1), np.clip(nx, 0, w - 1)
    depth = np.where(inside, sample.depth[0][nyc, nxc], 1.0)
    mask = np.where(inside, sample.mask[0][nyc, nxc], 0.0)

    y0 = np.clip(np.floor(sy).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(sx).astype(int), 0, w - 1)
    y1, x1 = np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1)
    fy = np.clip(sy - y0, 0.0, 1.0)
    fx = np.clip(sx - x0, 0.0, 1.0)
    im = sample.image
    image = (
        im[:, y0, x0] * (1 - fy) * (1 - fx)
        + im[:, y0, x1] * (1 - fy) * fx
        + im[:, y1, x0] * fy * (1 - fx)
        + im[:, y1, x1] * fy * fx
    )
    image = np.where(inside[None], image, 0.0)
    return DepthSample(image, depth[None], mask[None])


def augment(sample: DepthSample, cfg: AugmentConfig, rng: np.random.Generator) -> DepthSample:
    """Random scale, rotation, crop and horizontal flip, in that order.

    The same number of random draws is consumed whatever the outcome, so a
    run's random stream does not depend on earlier augmentation results.
    """
    u_scale, u_rot, u_top, u_left, u_flip = rng.random(5)

    lo, hi = cfg.scale_range
    s = lo + (hi - lo) * u_scale
    image, depth, mask = sample.image, sample.depth, sample.mask
    _, h, w = image.shape
    if s != 1.0:
        nh, nw = int(round(h * s)), int(round(w * s))
        iy, ix = _nearest_index(h, nh), _nearest_index(w, nw)
        image = _bilinear_resize(image, nh, nw)
        # zooming in brings the scene closer
        depth = depth[:, iy][:, :, ix] / s
        mask = mask[:, iy][:, :, ix]
        h, w = nh, nw
    out = DepthSample(image, depth, mask)

    angle = cfg.rotate_deg * (2.0 * u_rot - 1.0)
    if angle != 0.0:
        out = _rotate(out, angle)

    if cfg.crop_h > h or cfg.crop_w > w:
        raise ConfigError(f"crop {cfg.crop_h}x{cfg.crop_w} exceeds scaled extent {h}x{w}")
    top = int(u_top * (h - cfg.crop_h + 1))
    left = int(u_left * (w - cfg.crop_w + 1))
    if (cfg.crop_h, cfg.crop_w) != (h, w):
        sl = (slice(None), slice(top, top + cfg.crop_h), slice(left, left + cfg.crop_w))
        out = DepthSample(out.image[sl], out.depth[sl], out.mask[sl])

    if u_flip < cfg.flip_prob:
        out = flip(out)
    return out


def flip(sample: DepthSample) -> DepthSample:
    """Horizontal mirror of all three planes."""
    return DepthSample(
        sample.image[:, :, ::-1].copy(), sample.depth[:, :, ::-1].copy(), sample.mask[:, :, ::-1].copy()
    )


# --- dataset directory -----------------------------------------------------


def sample_paths(root, sid: str) -> tuple:
    root = Path(root)
    return root / f"{sid}.ppm", root / f"{sid}.pfm", root / f"{sid}_mask.pgm"


def write_sample(root, sid: str, sample: DepthSample) -> None:
    ppm, pfm, pgm = sample_paths(root, sid)
    imageio.write_ppm(ppm, sample.image)
    imageio.write_pfm(pfm, sample.depth[0])
    imageio.write_pgm(pgm, (sample.mask[0] != 0).astype(np.uint8) * 255)


def read_sample(root, sid: str) -> DepthSample:
    ppm, pfm, pgm = sample_paths(root, sid)
    image = imageio.read_ppm(ppm)
    depth = imageio.read_pfm(pfm).astype(np.float64)[None]
    mask = (imageio.read_pgm(pgm) > 127).astype(np.float64)[None]
    return DepthSample(image, depth, mask)


def write_dataset(
    root, count: int, seed: int, h: int, w: int, max_depth: float = SCENE_MAX_DEPTH, force: bool = False
) -> list:
    """Write ``count`` scenes as NNNN.ppm / NNNN.pfm / NNNN_mask.pgm plus manifest.txt."""
    check_divisible(h, w)
    root = Path(root)
    if root.exists() and any(root.iterdir()) and not force:
        raise FileExistsError(f"{root} exists and is not empty")
    root.mkdir(parents=True, exist_ok=True)
    ids = [f"{i:04d}" for i in range(count)]
    for i, sid in enumerate(ids):
        write_sample(root, sid, generate_scene(seed_for(seed, i), h, w, max_depth))
    (root / "manifest.txt").write_text("".join(f"{sid}\n" for sid in ids))
    return ids


def seed_for(seed: int, index: int) -> int:
    """Per-sample seed derived from the dataset seed."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def read_dataset(root) -> list:
    root = Path(root)
    manifest = root / "manifest.txt"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.txt in {root}")
    ids = [line.strip() for line in manifest.read_text().splitlines() if line.strip()]
    return [read_sample(root, sid) for sid in ids]


def synthetic_dataset(count: int, seed: int, h: int, w: int, max_depth: float = SCENE_MAX_DEPTH) -> list:
    """In-memory equivalent of :func:`write_dataset` + :func:`read_dataset`."""
    return [generate_scene(seed_for(seed, i), h, w, max_depth) for i in range(count)]
