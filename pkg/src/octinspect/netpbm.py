"""Minimal binary netpbm codecs: PGM (P5) read/write, PPM (P6) write."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import IoFailure, UnsupportedFormat

_WHITESPACE = b" \t\r\n\v\f"


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Return ``count`` header tokens and the offset just past the last one."""
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and (data[pos] in _WHITESPACE or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                while pos < n and data[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and data[pos] not in _WHITESPACE and data[pos] != ord("#"):
            pos += 1
        if start == pos:
            raise UnsupportedFormat("truncated netpbm header")
        tokens.append(data[start:pos])
    return tokens, pos


def decode_pgm(data: bytes) -> tuple[np.ndarray, int]:
    """Decode a binary PGM image.

    Returns:
        (pixels, maxval) where pixels has shape (height, width) and dtype
        uint8 (maxval < 256) or uint16.
    """
    if data[:2] != b"P5" or len(data) < 3 or data[2] not in _WHITESPACE:
        raise UnsupportedFormat(f"not a binary PGM (magic {data[:3]!r})")
    tokens, pos = _header_tokens(data[2:], 3)
    pos += 2
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise UnsupportedFormat(f"bad PGM header: {exc}") from None
    if width < 1 or height < 1:
        raise UnsupportedFormat(f"bad PGM dimensions {width}x{height}")
    if not 1 <= maxval <= 65535:
        raise UnsupportedFormat(f"PGM maxval {maxval} outside 1..65535")
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise UnsupportedFormat("missing whitespace after PGM maxval")
    pos += 1
    itemsize = 1 if maxval < 256 else 2
    nbytes = width * height * itemsize
    raster = data[pos:pos + nbytes]
    if len(raster) < nbytes:
        raise UnsupportedFormat(f"PGM raster truncated: {len(raster)} of {nbytes} bytes")
    dtype = np.uint8 if itemsize == 1 else np.dtype(">u2")
    pixels = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    if int(pixels.max()) > maxval:
        raise UnsupportedFormat(f"PGM sample exceeds maxval {maxval}")
    return pixels.astype(np.uint8 if itemsize == 1 else np.uint16), maxval


def read_pgm(path) -> tuple[np.ndarray, int]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    try:
        return decode_pgm(data)
    except UnsupportedFormat as exc:
        raise UnsupportedFormat(f"{path}: {exc}") from None


def encode_pgm(pixels: np.ndarray, maxval: int | None = None) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise ValueError("PGM needs a 2D array")
    if maxval is None:
        maxval = 255 if pixels.dtype == np.uint8 else 65535
    height, width = pixels.shape
    header = b"P5\n%d %d\n%d\n" % (width, height, maxval)
    if maxval < 256:
        return header + pixels.astype(np.uint8).tobytes()
    return header + pixels.astype(">u2").tobytes()


def write_pgm(path, pixels: np.ndarray, maxval: int | None = None) -> None:
    try:
        Path(path).write_bytes(encode_pgm(pixels, maxval))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def encode_ppm(rgb: np.ndarray) -> bytes:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError("PPM needs a (height, width, 3) uint8 array")
    height, width, _ = rgb.shape
    return b"P6\n%d %d\n255\n" % (width, height) + rgb.tobytes()


def write_ppm(path, rgb: np.ndarray) -> None:
    try:
        Path(path).write_bytes(encode_ppm(rgb))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
