"""Binary tensor containers and model checkpoints.

Container layout, all little-endian:

    magic "MACC" | u32 version | u32 tensor count | entries ...
    entry: u32 name length | name bytes (UTF-8) | u32 rank
           | rank * u64 dims | float64 values, C order

Round trips are bit exact. A model checkpoint is a text header (key=value
lines between a banner and an END line) followed by one container.
"""
from __future__ import annotations

import io
import struct
from os import PathLike
from typing import Mapping

import numpy as np

from .errors import DataError

MAGIC = b"MACC"
FORMAT_VERSION = 1
CHECKPOINT_BANNER = b"SPKFUSE-CHECKPOINT v1"
_END = b"\nEND\n"


def _pack_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    buf.write(struct.pack("<I", len(tensors)))
    for name, value in tensors.items():
        # tobytes(order="C") serializes any layout; 0-d keeps rank 0
        arr = np.asarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<Q", dim))
        buf.write(arr.tobytes(order="C"))
    return buf.getvalue()


def _unpack_tensors(blob: bytes, origin: str) -> dict[str, np.ndarray]:
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise DataError(f"{origin}: truncated tensor container")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise DataError(f"{origin}: bad magic, not a tensor container")
    (version,) = struct.unpack("<I", take(4))
    if version != FORMAT_VERSION:
        raise DataError(f"{origin}: unsupported container version {version}")
    (count,) = struct.unpack("<I", take(4))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank)) if rank else ()
        size = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(take(8 * size), dtype="<f8").reshape(dims)
        out[name] = arr.astype(np.float64, copy=True)
    if pos != len(view):
        raise DataError(f"{origin}: {len(view) - pos} trailing bytes in container")
    return out


def save_tensors(path: str | PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(_pack_tensors(tensors))


def load_tensors(path: str | PathLike) -> dict[str, np.ndarray]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise DataError(f"cannot read tensor file {path}: {e}") from e
    return _unpack_tensors(blob, str(path))


def save_checkpoint(path: str | PathLike, tensors: Mapping[str, np.ndarray],
                    header: Mapping[str, str]) -> None:
    """Write a model checkpoint: text header, END marker, tensor container."""
    lines = [CHECKPOINT_BANNER.decode()]
    for key in sorted(header):
        value = str(header[key])
        if "\n" in key or "\n" in value:
            raise DataError("header keys and values must be single line")
        lines.append(f"{key}={value}")
    text = "\n".join(lines).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(text)
        fh.write(_END)
        fh.write(_pack_tensors(tensors))


def load_checkpoint(path: str | PathLike) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    cut = blob.find(_END)
    if cut < 0 or not blob.startswith(CHECKPOINT_BANNER):
        raise DataError(f"{path}: not a model checkpoint")
    header_text = blob[:cut].decode("utf-8")
    header: dict[str, str] = {}
    for line in header_text.splitlines()[1:]:
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}: malformed header line {line!r}")
        key, value = line.split("=", 1)
        header[key] = value
    tensors = _unpack_tensors(blob[cut + len(_END):], str(path))
    return tensors, header
