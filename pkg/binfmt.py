"""
binfmt.py - Little-endian binary containers.

BDNA1 (raw image dump):
    b"BDNA1" | u32 channels | u32 height | u32 width | channels·height·width bytes

BWTS1 (named float64 tensors: checkpoints and precomputed features):
    b"BWTS1" | u32 count
    name table   count × (u32 byte length | UTF-8 name)
    shape table  count × (u32 ndim | ndim × u32 dims)
    payload      every tensor's float64 values, row-major, in table order
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from constants import CHECKPOINT_MAGIC, RAW_IMAGE_MAGIC
from errors import FormatError


# ---------------------------------------------------------------------------
# BDNA1
# ---------------------------------------------------------------------------

def write_raw_image(path: str | Path, pixels: np.ndarray):
    if pixels.dtype != np.uint8 or pixels.ndim != 3:
        raise FormatError(f"raw dump expects uint8 (C, H, W), got {pixels.dtype} {pixels.shape}")
    c, h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(RAW_IMAGE_MAGIC)
        fh.write(struct.pack("<III", c, h, w))
        fh.write(np.ascontiguousarray(pixels).tobytes())


def read_raw_image(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    head = len(RAW_IMAGE_MAGIC)
    if data[:head] != RAW_IMAGE_MAGIC:
        raise FormatError(f"{path}: not a BDNA1 file")
    if len(data) < head + 12:
        raise FormatError(f"{path}: truncated header")
    c, h, w = struct.unpack_from("<III", data, head)
    body = data[head + 12:]
    if len(body) != c * h * w:
        raise FormatError(f"{path}: expected {c * h * w} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(c, h, w).copy()


# ---------------------------------------------------------------------------
# BWTS1
# ---------------------------------------------------------------------------

def save_tensors(path: str | Path, tensors: Mapping[str, np.ndarray]):
    names  = list(tensors)
    arrays = [np.asarray(tensors[n], dtype="<f8").copy(order="C") for n in names]
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        for arr in arrays:
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for arr in arrays:
            fh.write(arr.tobytes())


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    pos  = len(CHECKPOINT_MAGIC)
    if data[:pos] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a BWTS1 file")

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise FormatError(f"{path}: truncated table")
        values = struct.unpack_from(fmt, data, pos)
        pos += size
        return values

    (count,) = take("<I")
    names = []
    for _ in range(count):
        (length,) = take("<I")
        if pos + length > len(data):
            raise FormatError(f"{path}: truncated name table")
        try:
            names.append(data[pos:pos + length].decode("utf-8"))
        except UnicodeDecodeError:
            raise FormatError(f"{path}: tensor name {len(names)} is not valid UTF-8") from None
        pos += length
    shapes = []
    for _ in range(count):
        (ndim,) = take("<I")
        shapes.append(take(f"<{ndim}I") if ndim else ())

    tensors: dict[str, np.ndarray] = {}
    for name, shape in zip(names, shapes):
        n = int(np.prod(shape, dtype=np.int64))
        end = pos + 8 * n
        if end > len(data):
            raise FormatError(f"{path}: payload too short for '{name}'")
        tensors[name] = np.frombuffer(data[pos:end], dtype="<f8").reshape(shape).astype(np.float64)
        pos = end
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    return tensors
