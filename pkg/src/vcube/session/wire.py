"""Binary wire format for one portrait frame.

Header (35 bytes, little endian)::

    magic      4s   b"VCPF"
    version    B    1
    cube id    H
    frame      I
    viewpoint  3f   float32 x, y, z
    color len  I
    alpha len  I
    crc32      I    over the preceding 31 bytes

followed by the color payload and the alpha payload.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from ..errors import CodecError
from ..lumi_render import PortraitFrame
from .codec import decode_alpha, decode_color, encode_alpha, encode_color

MAGIC = b"VCPF"
VERSION = 1
_BODY = struct.Struct("<4sBHI3fII")
_CRC = struct.Struct("<I")
HEADER_SIZE = _BODY.size + _CRC.size


@dataclass(frozen=True, eq=False)
class WireFrame:
    cube_id: int
    frame_index: int
    viewpoint: np.ndarray  # float32 on the wire
    color: bytes
    alpha: bytes

    def header(self) -> bytes:
        vp = np.asarray(self.viewpoint, dtype=np.float32)
        body = _BODY.pack(MAGIC, VERSION, self.cube_id, self.frame_index, *vp.tolist(),
                          len(self.color), len(self.alpha))
        return body + _CRC.pack(zlib.crc32(body))

    def to_bytes(self) -> bytes:
        return self.header() + self.color + self.alpha

    @property
    def payload_bytes(self) -> int:
        return len(self.color) + len(self.alpha)

    @property
    def size(self) -> int:
        return HEADER_SIZE + self.payload_bytes

    @classmethod
    def from_bytes(cls, buf: bytes) -> WireFrame:
        if len(buf) < HEADER_SIZE:
            raise CodecError("truncated header")
        body = buf[: _BODY.size]
        (crc,) = _CRC.unpack_from(buf, _BODY.size)
        if zlib.crc32(body) != crc:
            raise CodecError("header checksum mismatch")
        magic, version, cube, frame, x, y, z, nc, na = _BODY.unpack(body)
        if magic != MAGIC:
            raise CodecError(f"bad magic {magic!r}")
        if version != VERSION:
            raise CodecError(f"unsupported version {version}")
        if len(buf) != HEADER_SIZE + nc + na:
            raise CodecError("payload length mismatch")
        color = bytes(buf[HEADER_SIZE : HEADER_SIZE + nc])
        alpha = bytes(buf[HEADER_SIZE + nc :])
        return cls(cube, frame, np.array([x, y, z], dtype=np.float32), color, alpha)


def encode_portrait(frame: PortraitFrame, quality: int = 90) -> WireFrame:
    color, alpha = frame.to_uint8()
    return WireFrame(int(frame.source_cube), int(frame.frame_index),
                     np.asarray(frame.viewpoint, dtype=np.float32),
                     encode_color(color, quality), encode_alpha(alpha, quality))


def decode_portrait(wire: WireFrame | bytes) -> PortraitFrame:
    if isinstance(wire, (bytes, bytearray)):
        wire = WireFrame.from_bytes(bytes(wire))
    color = decode_color(wire.color)
    alpha = decode_alpha(wire.alpha)
    if color.shape[:2] != alpha.shape:
        raise CodecError("color and alpha planes differ in size")
    return PortraitFrame.from_uint8(color, alpha, source_cube=wire.cube_id,
                                    viewpoint=wire.viewpoint.astype(np.float64), frame_index=wire.frame_index)
