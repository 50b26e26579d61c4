"""Little-endian binary primitives shared by the artifact file formats.

All persisted artifacts (catalogs, embedding packs, quantizer models,
recommender models) use the same building blocks: a 4/5-byte ASCII magic,
a u16 format version, length-prefixed UTF-8 strings, and raw little-endian
scalars. Keeping the codecs here makes the formats trivially symmetric.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np


class FormatError(ValueError):
    """Raised when a binary artifact is malformed or has the wrong magic."""


def write_magic(fh: BinaryIO, magic: str, version: int) -> None:
    fh.write(magic.encode("ascii"))
    fh.write(struct.pack("<H", version))


def read_magic(fh: BinaryIO, magic: str) -> int:
    raw = fh.read(len(magic))
    if raw != magic.encode("ascii"):
        raise FormatError(f"bad magic: expected {magic!r}, got {raw!r}")
    return read_u16(fh)


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(raw)}")
    return raw


def write_u8(fh: BinaryIO, value: int) -> None:
    fh.write(struct.pack("<B", value))


def read_u8(fh: BinaryIO) -> int:
    return struct.unpack("<B", _read_exact(fh, 1))[0]


def write_u16(fh: BinaryIO, value: int) -> None:
    fh.write(struct.pack("<H", value))


def read_u16(fh: BinaryIO) -> int:
    return struct.unpack("<H", _read_exact(fh, 2))[0]


def write_u32(fh: BinaryIO, value: int) -> None:
    fh.write(struct.pack("<I", value))


def read_u32(fh: BinaryIO) -> int:
    return struct.unpack("<I", _read_exact(fh, 4))[0]


def write_u64(fh: BinaryIO, value: int) -> None:
    fh.write(struct.pack("<Q", value))


def read_u64(fh: BinaryIO) -> int:
    return struct.unpack("<Q", _read_exact(fh, 8))[0]


def write_i64(fh: BinaryIO, value: int) -> None:
    fh.write(struct.pack("<q", value))


def read_i64(fh: BinaryIO) -> int:
    return struct.unpack("<q", _read_exact(fh, 8))[0]


def write_f64(fh: BinaryIO, value: float) -> None:
    fh.write(struct.pack("<d", value))


def read_f64(fh: BinaryIO) -> float:
    return struct.unpack("<d", _read_exact(fh, 8))[0]


def write_str(fh: BinaryIO, text: str) -> None:
    data = text.encode("utf-8")
    if len(data) > 0xFFFF:
        raise FormatError(f"string too long for u16 length prefix ({len(data)} bytes)")
    fh.write(struct.pack("<H", len(data)))
    fh.write(data)


def read_str(fh: BinaryIO) -> str:
    n = read_u16(fh)
    return _read_exact(fh, n).decode("utf-8")


def write_long_str(fh: BinaryIO, text: str) -> None:
    data = text.encode("utf-8")
    fh.write(struct.pack("<I", len(data)))
    fh.write(data)


def read_long_str(fh: BinaryIO) -> str:
    n = read_u32(fh)
    return _read_exact(fh, n).decode("utf-8")


def write_f32_array(fh: BinaryIO, array: np.ndarray) -> None:
    data = np.ascontiguousarray(array, dtype="<f4")
    fh.write(data.tobytes())


def read_f32_array(fh: BinaryIO, shape: tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    raw = _read_exact(fh, 4 * count)
    return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


def write_f64_array(fh: BinaryIO, array: np.ndarray) -> None:
    data = np.ascontiguousarray(array, dtype="<f8")
    fh.write(data.tobytes())


def read_f64_array(fh: BinaryIO, shape: tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    raw = _read_exact(fh, 8 * count)
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
