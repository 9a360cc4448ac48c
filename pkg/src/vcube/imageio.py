"""Plain file formats for frames, depth, masks, portraits and cost volumes.

* PPM (P6) for 8-bit RGB, PGM (P5) for 8-bit masks.
* PFM for float depth: ``Pf`` header, scale ``-1.0`` (little endian), rows
  stored bottom to top as float32.
* PNG (via Pillow) for portraits and composited screens.
* Volume container: 16-byte header ``b"VCVL" | H u32 | W u32 | N u32``
  (little endian), then float32 data in ``(N, H, W)`` order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import CodecError

VOLUME_MAGIC = b"VCVL"
_VOLUME_HEADER = struct.Struct("<4sIII")


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(buf) and (buf[pos:pos + 1].isspace() or buf[pos:pos + 1] == b"#"):
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            pos += 1
    start = pos
    while pos < len(buf) and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise CodecError("truncated netpbm header")
    return buf[start:pos], pos


def _write_netpbm(path, magic: bytes, data: np.ndarray) -> None:
    H, W = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (W, H))
        fh.write(np.ascontiguousarray(data, dtype=np.uint8).tobytes())


def _read_netpbm(path, magic: bytes, channels: int) -> np.ndarray:
    buf = Path(path).read_bytes()
    tok, pos = _read_token(buf, 0)
    if tok != magic:
        raise CodecError(f"expected {magic!r}, found {tok!r}")
    w, pos = _read_token(buf, pos)
    h, pos = _read_token(buf, pos)
    mx, pos = _read_token(buf, pos)
    W, H, M = int(w), int(h), int(mx)
    if M != 255:
        raise CodecError("only 8-bit netpbm is supported")
    pos += 1
    n = W * H * channels
    if len(buf) - pos < n:
        raise CodecError("truncated netpbm payload")
    arr = np.frombuffer(buf, dtype=np.uint8, count=n, offset=pos)
    return arr.reshape((H, W, channels) if channels > 1 else (H, W)).copy()


def write_ppm(path, rgb: np.ndarray) -> None:
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("PPM needs an (H, W, 3) array")
    _write_netpbm(path, b"P6", rgb)


def read_ppm(path) -> np.ndarray:
    return _read_netpbm(path, b"P6", 3)


def write_pgm(path, gray: np.ndarray) -> None:
    """8-bit gray; boolean masks are stored as 0/255."""
    g = np.asarray(gray)
    if g.dtype == bool:
        g = g.astype(np.uint8) * 255
    _write_netpbm(path, b"P5", g)


def read_pgm(path) -> np.ndarray:
    return _read_netpbm(path, b"P5", 1)


def write_pfm(path, image: np.ndarray) -> None:
    img = np.asarray(image, dtype="<f4")
    if img.ndim == 2:
        magic = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"PF"
    else:
        raise ValueError("PFM needs (H, W) or (H, W, 3)")
    H, W = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n-1.0\n" % (W, H))
        fh.write(np.ascontiguousarray(img[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    magic, pos = _read_token(buf, 0)
    if magic not in (b"Pf", b"PF"):
        raise CodecError(f"not a PFM file ({magic!r})")
    w, pos = _read_token(buf, pos)
    h, pos = _read_token(buf, pos)
    sc, pos = _read_token(buf, pos)
    pos += 1
    W, H, scale = int(w), int(h), float(sc)
    ch = 1 if magic == b"Pf" else 3
    dt = "<f4" if scale < 0 else ">f4"
    n = W * H * ch
    if len(buf) - pos < 4 * n:
        raise CodecError("truncated PFM payload")
    arr = np.frombuffer(buf, dtype=dt, count=n, offset=pos).astype(np.float32)
    arr = arr.reshape((H, W) if ch == 1 else (H, W, 3))
    return arr[::-1].copy()


def write_png(path, image: np.ndarray) -> None:
    """8-bit gray, RGB or RGBA. Written without timestamps, so output is byte-stable."""
    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8)).save(path, format="PNG", optimize=False)


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im).copy()


def write_portrait(stem, portrait) -> tuple[Path, Path]:
    """Portrait as ``<stem>_color.png`` (premultiplied) and ``<stem>_alpha.png``."""
    color, alpha = portrait.to_uint8()
    stem = Path(stem)
    cp, ap = stem.with_name(stem.name + "_color.png"), stem.with_name(stem.name + "_alpha.png")
    write_png(cp, color)
    write_png(ap, alpha)
    return cp, ap


def read_portrait(stem, **kw):
    from .lumi_render import PortraitFrame

    stem = Path(stem)
    color = read_png(stem.with_name(stem.name + "_color.png"))
    alpha = read_png(stem.with_name(stem.name + "_alpha.png"))
    return PortraitFrame.from_uint8(color, alpha, **kw)


def write_volume(path, volume: np.ndarray) -> None:
    vol = np.asarray(volume, dtype="<f4")
    if vol.ndim != 3:
        raise ValueError("volume must be (N, H, W)")
    N, H, W = vol.shape
    with open(path, "wb") as fh:
        fh.write(_VOLUME_HEADER.pack(VOLUME_MAGIC, H, W, N))
        fh.write(np.ascontiguousarray(vol).tobytes())


def read_volume(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < _VOLUME_HEADER.size:
        raise CodecError("truncated volume header")
    magic, H, W, N = _VOLUME_HEADER.unpack_from(buf)
    if magic != VOLUME_MAGIC:
        raise CodecError(f"bad volume magic {magic!r}")
    if len(buf) != _VOLUME_HEADER.size + 4 * N * H * W:
        raise CodecError("volume size mismatch")
    return np.frombuffer(buf, dtype="<f4", offset=_VOLUME_HEADER.size).reshape(N, H, W).copy()
