"""Binary clip container.

Layout, all little-endian:

    magic    8 bytes  b"TVCLIP01"
    dtype    u8       0 = uint8, 1 = float32
    channels u8       always 3
    frames   u32
    height   u32
    width    u32
    payload  frames * 3 * height * width elements, frame-major
             (frame 0 as a (3, H, W) C-order block, then frame 1, ...)
    crc      u32      CRC32 of every preceding byte

float32 payloads must lie in [-1, 1]. A uint8 clip can be normalized to
that range on read via v / 127.5 - 1 (0 -> -1, 255 -> +1).
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

MAGIC = b"TVCLIP01"
_HEADER = struct.Struct("<8sBB3I")
_DTYPES = {0: np.dtype(np.uint8), 1: np.dtype(np.float32)}
_CODES = {v: k for k, v in _DTYPES.items()}


class ClipError(Exception):
    """Base class for container failures."""


class ClipFormatError(ClipError):
    """Bad magic, unknown dtype, or malformed structure."""


class ClipTruncationError(ClipError):
    """File ends before the declared payload and checksum."""


class ClipCRCError(ClipError):
    """Checksum mismatch; the payload bytes are corrupt."""


@dataclass
class Clip:
    """One video clip, channel-major in memory: (3, T, H, W)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 4 or arr.shape[0] != 3:
            raise ClipFormatError(f"clip data must be (3, T, H, W), got {arr.shape}")
        if arr.dtype not in _CODES:
            raise ClipFormatError(f"clip dtype must be uint8 or float32, got {arr.dtype}")
        if arr.dtype == np.float32 and arr.size:
            lo, hi = float(arr.min()), float(arr.max())
            if lo < -1.0 or hi > 1.0:
                raise ClipFormatError(f"float clip values outside [-1, 1]: [{lo}, {hi}]")
        self.data = np.ascontiguousarray(arr)

    @property
    def frames(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def to_float(self) -> "Clip":
        """uint8 -> float32 in [-1, 1]; float clips pass through."""
        if self.data.dtype == np.float32:
            return self
        return Clip(self.data.astype(np.float32) / 127.5 - 1.0)


def write_clip(path, clip) -> None:
    """Serialize a Clip (or raw (3,T,H,W) array) with trailing CRC."""
    if not isinstance(clip, Clip):
        clip = Clip(np.asarray(clip))
    t, h, w = clip.frames, clip.height, clip.width
    header = _HEADER.pack(MAGIC, _CODES[clip.dtype], 3, t, h, w)
    payload = np.ascontiguousarray(clip.data.transpose(1, 0, 2, 3)).tobytes()
    body = header + payload
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))


def read_clip(path, normalize: bool = False) -> Clip:
    """Parse and verify a clip file; optionally normalize uint8 to float."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise ClipTruncationError(f"file is {len(blob)} bytes, shorter than the header")
    magic, code, channels, t, h, w = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ClipFormatError(f"bad magic {magic!r}")
    if code not in _DTYPES:
        raise ClipFormatError(f"unknown dtype code {code}")
    if channels != 3:
        raise ClipFormatError(f"expected 3 channels, got {channels}")
    dtype = _DTYPES[code]
    payload_len = 3 * t * h * w * dtype.itemsize
    total = _HEADER.size + payload_len + 4
    if len(blob) < total:
        raise ClipTruncationError(f"need {total} bytes, file has {len(blob)}")
    if len(blob) > total:
        raise ClipFormatError(f"{len(blob) - total} trailing bytes after checksum")
    (stored_crc,) = struct.unpack_from("<I", blob, total - 4)
    if zlib.crc32(blob[:total - 4]) != stored_crc:
        raise ClipCRCError("checksum mismatch")
    flat = np.frombuffer(blob, dtype, count=3 * t * h * w, offset=_HEADER.size)
    clip = Clip(flat.reshape(t, 3, h, w).transpose(1, 0, 2, 3).copy())
    return clip.to_float() if normalize else clip
