"""Binary PPM (P6) and PGM (P5) reading and writing, 8-bit only."""

from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = ["PNMError", "read_ppm", "write_ppm", "read_pgm", "write_pgm", "quantize"]


class PNMError(ValueError):
    """Malformed or truncated PNM file."""


def _parse_header(buf: bytes, magic: bytes) -> tuple[int, int, int, int]:
    if buf[:2] != magic:
        raise PNMError(f"expected magic {magic!r}, got {buf[:2]!r}")
    fields = []
    pos = 2
    n = len(buf)
    while len(fields) < 3:
        # skip whitespace and comments
        while pos < n and (buf[pos:pos + 1].isspace() or buf[pos:pos + 1] == b"#"):
            if buf[pos:pos + 1] == b"#":
                while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and buf[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise PNMError("truncated or malformed header")
        fields.append(int(buf[start:pos]))
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise PNMError("missing whitespace after header")
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise PNMError(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise PNMError(f"only maxval 255 is supported, got {maxval}")
    return width, height, maxval, pos + 1


def quantize(img) -> np.ndarray:
    """Clamp to [0, 1] and map to uint8, rounding half away from zero."""
    a = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(a + 0.5).astype(np.uint8)


def _read(path, magic, channels) -> np.ndarray:
    buf = Path(path).read_bytes()
    width, height, _, offset = _parse_header(buf, magic)
    need = width * height * channels
    payload = buf[offset:offset + need]
    if len(payload) < need:
        raise PNMError(f"truncated payload: {len(payload)} of {need} bytes")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)


def read_ppm(path) -> np.ndarray:
    """Read a P6 file as a float32 array of shape (3, H, W) in [0, 1]."""
    a = _read(path, b"P6", 3)
    return (a.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0))


def write_ppm(img, path) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected a 3 x H x W image, got {img.shape}")
    q = quantize(img).transpose(1, 2, 0)
    h, w = q.shape[:2]
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + q.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a P5 file as a float32 (H, W) array in [0, 1]."""
    return _read(path, b"P5", 1)[:, :, 0].astype(np.float32) / np.float32(255.0)


def write_pgm(img, path) -> None:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"expected an H x W image, got {img.shape}")
    q = quantize(img)
    h, w = q.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + q.tobytes())
