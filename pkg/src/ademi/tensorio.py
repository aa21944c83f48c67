"""Binary tensor files and flat key=value manifests.

Record layout (little-endian):

    b"AMIT" | version u8 | dtype u8 | ndim u8 | dims u64 x ndim | row-major payload

dtype codes: 0 = float64, 1 = complex128, 2 = int64. A file may hold several
records back to back (checkpoints do this; the manifest names them).
"""
from __future__ import annotations

import hashlib
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import DomainError

MAGIC = b"AMIT"
VERSION = 1
DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<c16"), 2: np.dtype("<i8")}
CODES = {np.dtype("float64"): 0, np.dtype("complex128"): 1, np.dtype("int64"): 2}


def _code(arr: np.ndarray) -> int:
    try:
        return CODES[arr.dtype]
    except KeyError:
        raise DomainError(f"unsupported dtype {arr.dtype}; use float64, complex128 or int64")


def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype.kind == "b" or (arr.dtype.kind in "iu" and arr.dtype != np.int64):
        arr = arr.astype(np.int64)
    code = _code(arr)
    if arr.ndim > 255:
        raise DomainError("too many dimensions")
    head = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()


def decode_tensors(buf: bytes) -> list:
    out, pos = [], 0
    while pos < len(buf):
        if buf[pos:pos + 4] != MAGIC:
            raise DomainError(f"bad magic at byte {pos}")
        version, code, ndim = struct.unpack_from("<BBB", buf, pos + 4)
        if version != VERSION:
            raise DomainError(f"unsupported tensor format version {version}")
        if code not in DTYPES:
            raise DomainError(f"unknown dtype code {code}")
        pos += 7
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        dt = DTYPES[code]
        n = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if pos + n > len(buf):
            raise DomainError("truncated tensor payload")
        out.append(np.frombuffer(buf, dtype=dt, count=n // dt.itemsize, offset=pos).reshape(shape).copy())
        pos += n
    return out


def save_tensor(path, arr):
    Path(path).write_bytes(encode_tensor(arr))


def load_tensor(path) -> np.ndarray:
    tensors = decode_tensors(Path(path).read_bytes())
    if len(tensors) != 1:
        raise DomainError(f"{path}: expected one tensor, found {len(tensors)}")
    return tensors[0]


def write_manifest(path, entries: dict):
    lines = []
    for k, v in entries.items():
        if "=" in str(k) or "\n" in str(k) or "\n" in str(v):
            raise DomainError(f"manifest entry {k!r} not representable")
        lines.append(f"{k}={v}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    out = OrderedDict()
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DomainError(f"{path}: malformed manifest line {line!r}")
        out[key.strip()] = value.strip()
    return out


def manifest_path(bin_path) -> Path:
    return Path(bin_path).with_suffix(".manifest")


def save_checkpoint(path, tensors: dict, meta: dict | None = None):
    """Named tensors in one file; names and shapes go to the sibling manifest."""
    path = Path(path)
    blob = b"".join(encode_tensor(v) for v in tensors.values())
    path.write_bytes(blob)
    entries = OrderedDict(meta or {})
    entries["tensor.count"] = len(tensors)
    for i, (name, v) in enumerate(tensors.items()):
        entries[f"tensor.{i}.name"] = name
        entries[f"tensor.{i}.shape"] = "x".join(map(str, np.shape(v)))
    entries["sha256"] = sha256(blob)
    write_manifest(manifest_path(path), entries)


def load_checkpoint(path):
    path = Path(path)
    blob = path.read_bytes()
    man = read_manifest(manifest_path(path))
    if "sha256" in man and man["sha256"] != sha256(blob):
        raise DomainError(f"{path}: checksum mismatch")
    arrays = decode_tensors(blob)
    if int(man["tensor.count"]) != len(arrays):
        raise DomainError(f"{path}: manifest lists {man['tensor.count']} tensors, file has {len(arrays)}")
    named = OrderedDict((man[f"tensor.{i}.name"], a) for i, a in enumerate(arrays))
    return named, man


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_sha256(path) -> str:
    return sha256(Path(path).read_bytes())
