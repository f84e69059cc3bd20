"""Container for one compressed image.

Layout (all integers big-endian)::

    offset  size  field
    0       4     magic b"FATC"
    4       1     version (1)
    5       1     entropy mode: 0 = hyperprior only, 1 = T-CA
    6       4     image height H (u32)
    10      4     image width W (u32)
    14      1     lambda index (u8)
    15      8     model config hash
    23      1     segment count S
    24      ...   S segments, each a u32 length followed by that many bytes

Segment 0 holds the hyper-latent; segments 1..S-1 hold the latent slices in
coding order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

MAGIC = b"FATC"
VERSION = 1
MODES = {"hyperprior": 0, "tca": 1}
_HEADER = struct.Struct(">4sBBIIB8sB")
_LENGTH = struct.Struct(">I")


class FormatError(ValueError):
    """Malformed, truncated or unsupported container."""


@dataclass
class Bitstream:
    height: int
    width: int
    lambda_index: int
    config_hash: bytes
    mode: str = "tca"
    segments: list = field(default_factory=list)

    @property
    def payload_bytes(self) -> int:
        """Range-coded bytes only (no header, no length fields)."""
        return sum(len(s) for s in self.segments)

    def to_bytes(self) -> bytes:
        if self.mode not in MODES:
            raise FormatError(f"unknown entropy mode {self.mode!r}")
        if len(self.config_hash) != 8:
            raise FormatError("config hash must be 8 bytes")
        if not 0 <= self.lambda_index < 256 or len(self.segments) > 255:
            raise FormatError("lambda index and segment count must fit one byte")
        parts = [_HEADER.pack(MAGIC, VERSION, MODES[self.mode], self.height, self.width,
                              self.lambda_index, self.config_hash, len(self.segments))]
        for seg in self.segments:
            parts.append(_LENGTH.pack(len(seg)))
            parts.append(bytes(seg))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        if len(data) < _HEADER.size:
            raise FormatError(f"stream of {len(data)} bytes is shorter than the {_HEADER.size}-byte header")
        magic, version, mode, H, W, lam, chash, count = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r} at byte 0")
        if version != VERSION:
            raise FormatError(f"unsupported version {version} at byte 4")
        names = {v: k for k, v in MODES.items()}
        if mode not in names:
            raise FormatError(f"unknown entropy mode {mode} at byte 5")
        pos = _HEADER.size
        segments = []
        for i in range(count):
            if pos + _LENGTH.size > len(data):
                raise FormatError(f"truncated before length of segment {i} at byte {pos}")
            (n,) = _LENGTH.unpack_from(data, pos)
            pos += _LENGTH.size
            if pos + n > len(data):
                raise FormatError(f"segment {i} needs {n} bytes at byte {pos}, only {len(data) - pos} left")
            segments.append(bytes(data[pos:pos + n]))
            pos += n
        if pos != len(data):
            raise FormatError(f"{len(data) - pos} trailing bytes after the last segment")
        return cls(H, W, lam, chash, names[mode], segments)
