"""Binary PPM (P6), PGM (P5) and PFM (Pf) readers and writers.

All readers raise :class:`FormatError` carrying the byte offset of the
problem. PFM is written little-endian (scale -1.0), rows bottom to top.
"""

from __future__ import annotations

import re

import numpy as np


class FormatError(ValueError):
    def __init__(self, kind: str, offset: int, detail: str):
        self.kind = kind
        self.offset = offset
        super().__init__(f"{kind} at byte {offset}: {detail}")


class MagicError(FormatError):
    def __init__(self, offset: int, detail: str):
        super().__init__("magic mismatch", offset, detail)


class TruncatedError(FormatError):
    def __init__(self, offset: int, detail: str):
        super().__init__("truncated payload", offset, detail)


class MaxvalError(FormatError):
    def __init__(self, offset: int, detail: str):
        super().__init__("unsupported maxval", offset, detail)


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _tokens(buf: bytes, n: int, pos: int) -> tuple:
    out = []
    for _ in range(n):
        m = _TOKEN.match(buf, pos)
        if not m:
            raise TruncatedError(pos, "header ended early")
        out.append(m.group(1))
        pos = m.end()
    # exactly one whitespace byte separates header and payload
    if pos >= len(buf):
        raise TruncatedError(pos, "missing payload")
    return out, pos + 1


def _netpbm_read(buf: bytes, magic: bytes, channels: int) -> np.ndarray:
    if buf[:2] != magic:
        raise MagicError(0, f"expected {magic.decode()}, found {buf[:2]!r}")
    (w, h, maxval), pos = _tokens(buf, 3, 2)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise FormatError("bad header", 2, "non-integer field") from None
    if maxval != 255:
        raise MaxvalError(2, f"only maxval 255 is supported, got {maxval}")
    n = w * h * channels
    if len(buf) - pos < n:
        raise TruncatedError(pos, f"need {n} payload bytes, have {len(buf) - pos}")
    arr = np.frombuffer(buf, dtype=np.uint8, count=n, offset=pos)
    return arr.reshape(h, w, channels) if channels > 1 else arr.reshape(h, w)


def _netpbm_bytes(magic: bytes, arr: np.ndarray) -> bytes:
    h, w = arr.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(arr, dtype=np.uint8).tobytes()


def to_uint8(x: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to 0..255 by rounding."""
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_ppm(image: np.ndarray) -> bytes:
    """``image`` is ``3 x H x W`` in [0, 1] or ``H x W x 3`` uint8."""
    if image.dtype != np.uint8:
        image = to_uint8(np.transpose(image, (1, 2, 0)))
    return _netpbm_bytes(b"P6", image)


def decode_ppm(buf: bytes) -> np.ndarray:
    """Returns ``3 x H x W`` floats in [0, 1]."""
    return np.transpose(_netpbm_read(buf, b"P6", 3), (2, 0, 1)).astype(np.float64) / 255.0


def encode_pgm(gray: np.ndarray) -> bytes:
    """``gray`` is ``H x W``: uint8 as-is, floats in [0, 1] scaled to 0..255."""
    if gray.dtype != np.uint8:
        gray = to_uint8(gray)
    return _netpbm_bytes(b"P5", gray)


def decode_pgm(buf: bytes) -> np.ndarray:
    """Returns ``H x W`` uint8."""
    return _netpbm_read(buf, b"P5", 1).copy()


def encode_pfm(depth: np.ndarray) -> bytes:
    """Single-channel PFM, little-endian float32, bottom row first."""
    depth = np.asarray(depth)
    h, w = depth.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode()
    return header + np.ascontiguousarray(depth[::-1], dtype="<f4").tobytes()


def decode_pfm(buf: bytes) -> np.ndarray:
    """Returns ``H x W`` float32 in top-to-bottom row order."""
    if buf[:2] != b"Pf":
        raise MagicError(0, f"expected Pf, found {buf[:2]!r}")
    (w, h, scale), pos = _tokens(buf, 3, 2)
    try:
        w, h, scale = int(w), int(h), float(scale)
    except ValueError:
        raise FormatError("bad header", 2, "malformed dimensions or scale") from None
    dtype = "<f4" if scale < 0 else ">f4"
    n = w * h
    if len(buf) - pos < 4 * n:
        raise TruncatedError(pos, f"need {4 * n} payload bytes, have {len(buf) - pos}")
    arr = np.frombuffer(buf, dtype=dtype, count=n, offset=pos).reshape(h, w)
    return arr[::-1].astype(np.float32)


def _read(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _write(path, data: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(data)


def read_ppm(path) -> np.ndarray:
    return decode_ppm(_read(path))


def write_ppm(path, image: np.ndarray) -> None:
    _write(path, encode_ppm(image))


def read_pgm(path) -> np.ndarray:
    return decode_pgm(_read(path))


def write_pgm(path, gray: np.ndarray) -> None:
    _write(path, encode_pgm(gray))


def read_pfm(path) -> np.ndarray:
    return decode_pfm(_read(path))


def write_pfm(path, depth: np.ndarray) -> None:
    _write(path, encode_pfm(depth))
