"""Self-describing little-endian tensor files.

Layout::

    b"TNSR" | version u8 = 1 | dtype u8 | rank u8 | reserved u8 = 0
    | rank × u32 dims | row-major payload | u32 manifest length | JSON manifest

dtype 1 is 32-bit float; dtype 2 (64-bit float) is accepted for
verification dumps.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TNSR"
VERSION = 1
MAX_RANK = 8
_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_OF = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class TensorFileError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def encode_tensor(array, manifest: dict | None = None) -> bytes:
    arr = np.asarray(getattr(array, "data", array))
    if arr.dtype not in _CODE_OF:
        arr = arr.astype(np.float32)
    if arr.ndim > MAX_RANK:
        raise ValueError(f"rank {arr.ndim} exceeds the maximum of {MAX_RANK}")
    code = _CODE_OF[arr.dtype]
    header = MAGIC + struct.pack("<BBBB", VERSION, code, arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes()
    meta = json.dumps(manifest or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return header + dims + payload + struct.pack("<I", len(meta)) + meta


def decode_tensor(buf: bytes) -> tuple[np.ndarray, dict]:
    if len(buf) < 8:
        raise TensorFileError("truncated header", len(buf))
    if buf[:4] != MAGIC:
        raise TensorFileError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}", 0)
    version, code, rank, _ = struct.unpack_from("<BBBB", buf, 4)
    if version != VERSION:
        raise TensorFileError(f"unsupported version {version}", 4)
    if code not in _CODES:
        raise TensorFileError(f"unknown dtype code {code}", 5)
    if rank > MAX_RANK:
        raise TensorFileError(f"rank {rank} exceeds {MAX_RANK}", 6)
    offset = 8
    if len(buf) < offset + 4 * rank:
        raise TensorFileError("truncated dims section", len(buf))
    dims = struct.unpack_from(f"<{rank}I", buf, offset)
    offset += 4 * rank
    dtype = _CODES[code]
    nbytes = int(np.prod(dims, dtype=object)) * dtype.itemsize
    if nbytes > len(buf) - offset:
        raise TensorFileError(f"payload of {nbytes} bytes for dims {list(dims)} exceeds the file", offset)
    arr = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset).reshape(dims)
    offset += nbytes
    if len(buf) < offset + 4:
        raise TensorFileError("missing manifest length", offset)
    (meta_len,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    if len(buf) < offset + meta_len:
        raise TensorFileError("truncated manifest", offset)
    try:
        manifest = json.loads(buf[offset : offset + meta_len].decode("utf-8")) if meta_len else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TensorFileError(f"manifest is not valid JSON: {exc}", offset) from exc
    return arr.astype(dtype.newbyteorder("="), copy=True), manifest


def write_tensor_file(path, array, manifest: dict | None = None) -> None:
    Path(path).write_bytes(encode_tensor(array, manifest))


def read_tensor_file(path, with_manifest: bool = False):
    arr, manifest = decode_tensor(Path(path).read_bytes())
    return (arr, manifest) if with_manifest else arr
