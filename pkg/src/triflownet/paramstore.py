"""Flat parameter store and its bit-exact binary container.

Checkpoints are written as: an 8-byte magic, a little-endian uint64 header
length, a UTF-8 JSON header (tensor metadata plus an arbitrary ``meta``
object such as the model config), then the raw little-endian C-order tensor
bytes in header order. No timestamps or other nondeterministic content, so
identical stores produce identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterator, Mapping, Optional

import numpy as np

MAGIC = b"TFNSTORE"
FORMAT_VERSION = 1

_SUPPORTED_DTYPES = {
    "float64", "float32", "float16", "int64", "int32", "int16", "int8",
    "uint8", "bool",
}


class CheckpointError(ValueError):
    """Raised when a checkpoint file cannot be read or written."""


class ParamStore:
    """Ordered flat map from hierarchical path strings to numpy arrays."""

    def __init__(self, tensors: Optional[Mapping[str, np.ndarray]] = None,
                 meta: Optional[dict] = None):
        self._tensors: dict[str, np.ndarray] = {}
        self.meta: dict = dict(meta) if meta else {}
        if tensors:
            for key, value in tensors.items():
                self[key] = value

    def __setitem__(self, key: str, value: np.ndarray) -> None:
        arr = np.asarray(value)
        if arr.dtype.name not in _SUPPORTED_DTYPES:
            raise CheckpointError(f"unsupported dtype {arr.dtype.name!r} for key {key!r}")
        # ascontiguousarray promotes 0-d arrays to 1-d; keep the true shape.
        self._tensors[key] = np.ascontiguousarray(arr).reshape(arr.shape)

    def __getitem__(self, key: str) -> np.ndarray:
        return self._tensors[key]

    def __contains__(self, key: str) -> bool:
        return key in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def keys(self):
        return self._tensors.keys()

    def items(self):
        return self._tensors.items()

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: tuple(v.shape) for k, v in self._tensors.items()}

    def allclose(self, other: "ParamStore", exact: bool = True) -> bool:
        if set(self.keys()) != set(other.keys()):
            return False
        for key, value in self.items():
            o = other[key]
            if value.shape != o.shape or value.dtype != o.dtype:
                return False
            if exact:
                if value.tobytes() != o.tobytes():
                    return False
            elif not np.allclose(value, o):
                return False
        return True


def _little_endian(arr: np.ndarray) -> np.ndarray:
    if arr.dtype.byteorder == ">":
        return arr.astype(arr.dtype.newbyteorder("<"))
    return arr


def save_params(store: ParamStore, path: str | Path) -> None:
    """Serialize a store; sorted keys so equal stores give identical bytes."""
    if len(store) == 0:
        raise CheckpointError("empty parameter store")
    entries = []
    buffers = []
    for key in sorted(store.keys()):
        arr = _little_endian(store[key])
        raw = arr.tobytes()
        entries.append({
            "key": key,
            "dtype": arr.dtype.name,
            "shape": list(arr.shape),
            "nbytes": len(raw),
        })
        buffers.append(raw)
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "meta": store.meta, "tensors": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in buffers:
            fh.write(raw)


def load_params(path: str | Path) -> ParamStore:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < len(MAGIC) + 8:
        raise CheckpointError(f"checkpoint {path} is truncated")
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"checkpoint {path} has a bad magic header")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    header_end = 16 + header_len
    if len(blob) < header_end:
        raise CheckpointError(f"checkpoint {path} header is truncated")
    try:
        header = json.loads(blob[16:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"checkpoint {path} header is not valid JSON: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has unsupported format_version {header.get('format_version')!r}")

    store = ParamStore(meta=header.get("meta", {}))
    offset = header_end
    for entry in header.get("tensors", []):
        key = entry.get("key", "<missing key>")
        dtype = entry.get("dtype")
        if dtype not in _SUPPORTED_DTYPES:
            raise CheckpointError(f"unsupported dtype {dtype!r} for key {key!r}")
        shape = tuple(int(s) for s in entry.get("shape", []))
        nbytes = int(entry.get("nbytes", -1))
        expected = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype).itemsize
        if nbytes != expected:
            raise CheckpointError(
                f"size mismatch for key {key!r}: header says {nbytes}, shape implies {expected}")
        if offset + nbytes > len(blob):
            raise CheckpointError(f"payload truncated while reading key {key!r}")
        arr = np.frombuffer(blob[offset:offset + nbytes],
                            dtype=np.dtype(dtype).newbyteorder("<")).reshape(shape)
        store[key] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"checkpoint {path} has {len(blob) - offset} trailing bytes")
    if len(store) == 0:
        raise CheckpointError("empty parameter store")
    return store
