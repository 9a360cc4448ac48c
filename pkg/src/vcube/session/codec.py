"""Portrait codec: YCbCr 4:2:0, uniform quantization, DPCM and run-length packing.

Each plane is quantized with step ``q = max(1, round((101 - quality) / 10))``,
differenced along the raster order, zigzag-mapped to unsigned integers and
stored as ``(symbol, run - 1)`` varint pairs. There is no entropy coder.

Plane payload layout: ``width u16 LE | height u16 LE | q u8 | center u8 | body``;
levels are ``round((value - center) / q)`` so that ``center`` decodes exactly.
The color payload holds the Y plane (full size), then Cb and Cr
(``ceil(W/2) x ceil(H/2)``); the alpha payload holds one plane of 8-bit alpha.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import CodecError

_PLANE_HEADER = struct.Struct("<HHBB")


def quant_step(quality: int) -> int:
    if not 1 <= int(quality) <= 100:
        raise ValueError(f"quality {quality} outside 1..100")
    return max(1, int(round((101 - int(quality)) / 10.0)))


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    """Full-range BT.601."""
    r, g, b = (rgb[..., i].astype(np.float64) for i in range(3))
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 + (b - y) / 1.772
    cr = 128.0 + (r - y) / 1.402
    return np.stack([y, cb, cr], axis=-1)


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[..., 0], ycc[..., 1] - 128.0, ycc[..., 2] - 128.0
    r = y + 1.402 * cr
    b = y + 1.772 * cb
    g = (y - 0.299 * r - 0.114 * b) / 0.587
    return np.stack([r, g, b], axis=-1)


def subsample2(plane: np.ndarray) -> np.ndarray:
    """2x2 box average; odd edges are replicated."""
    H, W = plane.shape
    p = np.pad(plane, ((0, H % 2), (0, W % 2)), mode="edge")
    return p.reshape(p.shape[0] // 2, 2, p.shape[1] // 2, 2).mean(axis=(1, 3))


def upsample2(plane: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    return np.repeat(np.repeat(plane, 2, axis=0), 2, axis=1)[: shape[0], : shape[1]]


# ---------------------------------------------------------------- varints and runs

def _put_varint(out: bytearray, n: int) -> None:
    while n >= 0x80:
        out.append((n & 0x7F) | 0x80)
        n >>= 7
    out.append(n)


def _get_varint(buf: bytes, pos: int) -> tuple[int, int]:
    n = shift = 0
    while True:
        if pos >= len(buf):
            raise CodecError("truncated varint")
        b = buf[pos]
        pos += 1
        n |= (b & 0x7F) << shift
        if b < 0x80:
            return n, pos
        shift += 7


def _zigzag(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, 2 * x, -2 * x - 1)


def _unzigzag(z: np.ndarray) -> np.ndarray:
    return np.where(z % 2 == 0, z // 2, -(z + 1) // 2)


def rle_encode(symbols: np.ndarray) -> bytes:
    s = np.asarray(symbols, dtype=np.int64).ravel()
    out = bytearray()
    if s.size == 0:
        return bytes(out)
    starts = np.flatnonzero(np.concatenate([[True], s[1:] != s[:-1]]))
    lengths = np.diff(np.append(starts, s.size))
    for v, n in zip(s[starts].tolist(), lengths.tolist()):
        _put_varint(out, v)
        _put_varint(out, n - 1)
    return bytes(out)


def rle_decode(buf: bytes, count: int, pos: int = 0) -> tuple[np.ndarray, int]:
    vals, runs = [], []
    total = 0
    while total < count:
        v, pos = _get_varint(buf, pos)
        n, pos = _get_varint(buf, pos)
        vals.append(v)
        runs.append(n + 1)
        total += n + 1
    if total != count:
        raise CodecError("run lengths overflow the plane")
    return np.repeat(np.asarray(vals, dtype=np.int64), runs), pos


# ---------------------------------------------------------------- planes

def encode_plane(plane: np.ndarray, q: int, center: int = 0) -> bytes:
    """Quantize a 0..255 plane with step ``q`` around ``center`` and pack it."""
    H, W = plane.shape
    x = np.clip(np.asarray(plane, dtype=np.float64), 0.0, 255.0) - center
    levels = np.rint(x / q).astype(np.int64).ravel()
    resid = np.diff(levels, prepend=0)
    return _PLANE_HEADER.pack(W, H, q, center) + rle_encode(_zigzag(resid))


def decode_plane(buf: bytes, pos: int = 0) -> tuple[np.ndarray, int]:
    if len(buf) - pos < _PLANE_HEADER.size:
        raise CodecError("truncated plane header")
    W, H, q, center = _PLANE_HEADER.unpack_from(buf, pos)
    if q < 1:
        raise CodecError("zero quantization step")
    z, pos = rle_decode(buf, W * H, pos + _PLANE_HEADER.size)
    levels = np.cumsum(_unzigzag(z))
    return (levels * q + center).astype(np.float64).reshape(H, W), pos


def encode_color(rgb: np.ndarray, quality: int) -> bytes:
    q = quant_step(quality)
    ycc = rgb_to_ycbcr(np.asarray(rgb, dtype=np.float64))
    return (encode_plane(ycc[..., 0], q) + encode_plane(subsample2(ycc[..., 1]), q, 128)
            + encode_plane(subsample2(ycc[..., 2]), q, 128))


def decode_color(buf: bytes) -> np.ndarray:
    y, pos = decode_plane(buf)
    cb, pos = decode_plane(buf, pos)
    cr, pos = decode_plane(buf, pos)
    if pos != len(buf):
        raise CodecError("trailing bytes in color payload")
    ycc = np.stack([y, upsample2(cb, y.shape), upsample2(cr, y.shape)], axis=-1)
    return np.clip(np.rint(ycbcr_to_rgb(ycc)), 0, 255).astype(np.uint8)


def encode_alpha(alpha8: np.ndarray, quality: int) -> bytes:
    return encode_plane(np.asarray(alpha8, dtype=np.float64), quant_step(quality))


def decode_alpha(buf: bytes) -> np.ndarray:
    a, pos = decode_plane(buf)
    if pos != len(buf):
        raise CodecError("trailing bytes in alpha payload")
    return np.clip(a, 0, 255).astype(np.uint8)
