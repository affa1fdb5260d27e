"""AMGT tensor files and named-tensor checkpoint archives.

AMGT layout (little endian): b"AMGT", u32 version (=1), u32 ndim,
ndim x u32 extents, then the float32 payload in row-major order.
An archive is a plain concatenation of records
``u32 name_length | utf-8 name | AMGT blob``.
"""

from __future__ import annotations

import hashlib
import io
import struct
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

MAGIC = b"AMGT"
VERSION = 1


class FormatError(ValueError):
    pass


def encode_tensor(arr) -> bytes:
    a = np.asarray(arr, dtype="<f4", order="C")
    head = MAGIC + struct.pack("<II", VERSION, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + a.tobytes()


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError("truncated AMGT data")
    return buf


def read_tensor_from(fh: BinaryIO) -> np.ndarray:
    if _read_exact(fh, 4) != MAGIC:
        raise FormatError("bad magic, not an AMGT tensor")
    version, ndim = struct.unpack("<II", _read_exact(fh, 8))
    if version != VERSION:
        raise FormatError(f"unsupported AMGT version {version}")
    shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4")
    return data.reshape(shape).astype(np.float32)


def decode_tensor(blob: bytes) -> np.ndarray:
    return read_tensor_from(io.BytesIO(blob))


def save_tensor(path, arr) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor_from(fh)


def save_archive(path, tensors: Mapping[str, np.ndarray]) -> str:
    """Write records in the mapping's order; return the sha256 of the file."""
    chunks = []
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw + encode_tensor(arr))
    payload = b"".join(chunks)
    Path(path).write_bytes(payload)
    return hashlib.sha256(payload).hexdigest()


def load_archive(path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise FormatError("truncated archive record")
            (n,) = struct.unpack("<I", head)
            name = _read_exact(fh, n).decode("utf-8")
            if name in out:
                raise FormatError(f"duplicate record {name!r}")
            out[name] = read_tensor_from(fh)
    return out


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
