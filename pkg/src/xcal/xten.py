"""XTEN binary tensor container.

Layout (all little-endian)::

    b"XTEN" | u8 version=1 | u8 dtype code | u8 rank | u8 pad=0 | rank * u32 dims | payload

dtype codes: 0 = float32, 1 = uint8, 2 = int32.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import DataError

MAGIC = b"XTEN"
VERSION = 1

DTYPE_NAMES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1"), "i32": np.dtype("<i4")}
CODE_DTYPES = {0: DTYPE_NAMES["f32"], 1: DTYPE_NAMES["u8"], 2: DTYPE_NAMES["i32"]}
_KIND_CODES = {("f", 4): 0, ("u", 1): 1, ("i", 4): 2}
_CODE_NAMES = {0: "f32", 1: "u8", 2: "i32"}


def dtype_code(dtype) -> int:
    dt = np.dtype(dtype)
    try:
        return _KIND_CODES[(dt.kind, dt.itemsize)]
    except KeyError:
        raise DataError(f"unsupported dtype {dt}") from None


def dtype_name(dtype) -> str:
    return _CODE_NAMES[dtype_code(dtype)]


def _canonical(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        arr = arr.astype("<f4", copy=False)
    elif arr.dtype == np.uint8:
        pass
    elif arr.dtype.kind in "iu":
        arr = arr.astype("<i4", copy=False)
    else:
        raise DataError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > 255:
        raise DataError("rank exceeds 255")
    if any(d < 1 for d in arr.shape):
        raise DataError(f"XTEN dims must be positive, got {arr.shape}")
    return np.ascontiguousarray(arr)


def encode(arr: np.ndarray) -> bytes:
    """Serialize an array to XTEN bytes (floats become f32, ints i32)."""
    arr = _canonical(arr)
    code = dtype_code(arr.dtype)
    header = MAGIC + struct.pack("<BBBB", VERSION, code, arr.ndim, 0)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise DataError("not an XTEN container (bad magic)")
    version, code, rank, pad = struct.unpack_from("<BBBB", buf, 4)
    if version != VERSION:
        raise DataError(f"unsupported XTEN version {version}")
    if code not in CODE_DTYPES:
        raise DataError(f"unknown XTEN dtype code {code}")
    if pad != 0:
        raise DataError("XTEN padding byte must be zero")
    off = 8 + 4 * rank
    if len(buf) < off:
        raise DataError("truncated XTEN header")
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    dtype = CODE_DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(buf) - off != count * dtype.itemsize:
        raise DataError(
            f"XTEN payload is {len(buf) - off} bytes, expected {count * dtype.itemsize}"
        )
    return np.frombuffer(buf, dtype=dtype, count=count, offset=off).reshape(dims).copy()


def save(path: str | os.PathLike, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(arr))


def load(path: str | os.PathLike) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    try:
        return decode(buf)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc
