"""Named-tensor binary container used for datasets, predictions and checkpoints.

Layout (all integers little-endian)::

    b"AVPT"  magic
    u32      format version
    u32      header length in bytes
    header   canonical JSON: {"meta": {...}, "tensors": [{"name", "shape", "dtype"}, ...]}
    payload  tensors in header order, 32-bit little-endian values ("f32" or "i32")

Headers are serialised with sorted keys and fixed separators so that a
load -> save cycle reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = b"AVPT"
VERSION = 1
_DTYPES = {"f32": np.dtype("<f4"), "i32": np.dtype("<i4")}


class ContainerError(ValueError):
    """Malformed, truncated or incompatible container file."""


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def _dtype_code(arr: np.ndarray) -> str:
    if np.issubdtype(arr.dtype, np.floating):
        return "f32"
    if np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool:
        return "i32"
    raise ContainerError(f"unsupported dtype {arr.dtype}")


def dumps(tensors: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> bytes:
    entries, chunks = [], []
    for name, value in tensors.items():
        arr = np.asarray(value)
        code = _dtype_code(arr)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": code})
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    header = canonical_json({"meta": dict(meta or {}), "tensors": entries})
    return b"".join([MAGIC, struct.pack("<II", VERSION, len(header)), header, *chunks])


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise ContainerError("not a tensor container (bad magic or too short)")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    end = 12 + header_len
    if len(blob) < end:
        raise ContainerError("truncated header")
    try:
        header = json.loads(blob[12:end].decode("utf-8"))
        entries = header["tensors"]
        meta = header["meta"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ContainerError(f"corrupt header: {exc}") from exc
    tensors: dict[str, np.ndarray] = {}
    offset = end
    for entry in entries:
        try:
            dtype = _DTYPES[entry["dtype"]]
            shape = tuple(int(n) for n in entry["shape"])
            name = entry["name"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ContainerError(f"corrupt tensor entry {entry!r}") from exc
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if offset + nbytes > len(blob):
            raise ContainerError(f"truncated payload for tensor {name!r}")
        tensors[name] = np.frombuffer(blob, dtype=dtype, count=nbytes // dtype.itemsize,
                                      offset=offset).reshape(shape).astype(dtype.newbyteorder("="))
        offset += nbytes
    if offset != len(blob):
        raise ContainerError(f"{len(blob) - offset} trailing bytes after payload")
    return tensors, meta


def save(path: str | Path, tensors: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, meta))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    return loads(Path(path).read_bytes())
