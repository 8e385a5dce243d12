"""Binary file formats: native float images (``CWIM``) and named-tensor checkpoints (``CWCK``).

Both formats are little-endian, carry a version field and end in a CRC32 of
every preceding byte.  Readers verify magic, version, declared sizes and the
CRC before returning anything.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Mapping

import numpy as np

IMAGE_MAGIC = b"CWIM"
CHECKPOINT_MAGIC = b"CWCK"
VERSION = 1
MAX_PIXELS = 1 << 28


class FormatError(ValueError):
    """A file failed structural validation (magic, version, size, CRC)."""


def _crc(buf: bytes) -> bytes:
    return struct.pack("<I", zlib.crc32(buf) & 0xFFFFFFFF)


def _check_crc(buf: bytes, what: str) -> bytes:
    if len(buf) < 8:
        raise FormatError(f"{what}: truncated file ({len(buf)} bytes)")
    body, tail = buf[:-4], buf[-4:]
    if _crc(body) != tail:
        raise FormatError(f"{what}: CRC mismatch (file corrupted or truncated)")
    return body


# ---------------------------------------------------------------------- images
def encode_image(image: np.ndarray) -> bytes:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got {img.shape}")
    h, w, c = img.shape
    head = IMAGE_MAGIC + struct.pack("<IIII", VERSION, h, w, c)
    body = head + np.ascontiguousarray(img, dtype="<f4").tobytes()
    return body + _crc(body)


def decode_image(buf: bytes, what: str = "image") -> np.ndarray:
    if len(buf) < 4 or buf[:4] != IMAGE_MAGIC:
        raise FormatError(f"{what}: bad magic {buf[:4]!r}, expected {IMAGE_MAGIC!r}")
    if len(buf) < 24:
        raise FormatError(f"{what}: truncated header")
    version, h, w, c = struct.unpack_from("<IIII", buf, 4)
    if version != VERSION:
        raise FormatError(f"{what}: unsupported version {version}")
    if c != 3:
        raise FormatError(f"{what}: expected 3 channels, header says {c}")
    if h == 0 or w == 0 or h * w > MAX_PIXELS:
        raise FormatError(f"{what}: dimension overflow ({h}x{w})")
    expected = 20 + h * w * c * 4 + 4
    if len(buf) < expected:
        raise FormatError(f"{what}: truncated payload ({len(buf)} of {expected} bytes)")
    if len(buf) > expected:
        raise FormatError(f"{what}: {len(buf) - expected} trailing bytes")
    body = _check_crc(buf, what)
    return np.frombuffer(body, dtype="<f4", offset=20).reshape(h, w, c).astype(np.float32)


def write_rif(image: np.ndarray, path) -> None:
    Path(path).write_bytes(encode_image(image))


def read_rif(path) -> np.ndarray:
    return decode_image(Path(path).read_bytes(), str(path))


# ----------------------------------------------------------------- checkpoints
def encode_tensors(tensors: Mapping[str, np.ndarray], metadata: dict | None = None) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise ValueError(f"tensor {name!r}: name or rank too large to encode")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(meta)) + meta)
    body = b"".join(parts)
    return body + _crc(body)


class _Reader:
    def __init__(self, buf: bytes, what: str):
        self.buf, self.pos, self.what = buf, 0, what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.what}: truncated file")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_tensors(buf: bytes, what: str = "checkpoint") -> tuple[dict[str, np.ndarray], dict]:
    if len(buf) < 4 or buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{what}: bad magic {buf[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    # walk the structure first so a cut-off file reports "truncated", not a CRC error
    r = _Reader(buf, what)
    r.take(4)
    version, count = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"{what}: unsupported version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I")
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        if size > MAX_PIXELS:
            raise FormatError(f"{what}: tensor {name!r} dimension overflow {shape}")
        data = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape)
        if name in tensors:
            raise FormatError(f"{what}: duplicate tensor name {name!r}")
        tensors[name] = data.astype(np.float32)
    (mlen,) = r.unpack("<I")
    meta_raw = r.take(mlen)
    r.take(4)
    if r.pos != len(buf):
        raise FormatError(f"{what}: {len(buf) - r.pos} trailing bytes")
    _check_crc(buf, what)
    try:
        metadata = json.loads(meta_raw.decode("utf-8"))
    except ValueError as exc:
        raise FormatError(f"{what}: unreadable metadata ({exc})") from exc
    return tensors, metadata


def write_tensors(path, tensors: Mapping[str, np.ndarray], metadata: dict | None = None) -> None:
    Path(path).write_bytes(encode_tensors(tensors, metadata))


def read_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    return decode_tensors(Path(path).read_bytes(), str(path))


def file_crc(path) -> str:
    return f"{zlib.crc32(Path(path).read_bytes()) & 0xFFFFFFFF:08x}"
