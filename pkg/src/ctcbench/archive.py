"""Portable named-tensor container for checkpoints and pretrained weights.

File layout (documented so archives are portable across implementations):

    bytes 0..7    magic ``CTCBWA01``
    bytes 8..15   little-endian uint64: byte length L of the JSON index
    bytes 16..16+L UTF-8 JSON: {"format_version": 1, "tensors": {name:
                  {"dtype": "<f4", "shape": [...], "offset": o, "nbytes": b}}}
    remainder     raw little-endian tensor payloads, offsets relative to the
                  end of the index, stored in C order

Tensor names are arbitrary UTF-8 strings; dtypes are numpy dtype strings and
must be little-endian.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CTCBWA01"
FORMAT_VERSION = 1


class ArchiveError(ValueError):
    pass


class WeightArchive:
    def __init__(self, format_version: int = FORMAT_VERSION):
        self.format_version = format_version
        self._tensors: dict[str, np.ndarray] = {}

    def add(self, name: str, array: np.ndarray) -> None:
        arr = np.ascontiguousarray(array)
        if arr.dtype.kind not in "fiu":
            raise ArchiveError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        self._tensors[name] = arr.astype(arr.dtype.newbyteorder("<"), copy=False)

    def get(self, name: str) -> np.ndarray:
        if name not in self._tensors:
            raise ArchiveError(f"archive has no tensor {name!r}")
        return self._tensors[name]

    def names(self) -> list[str]:
        return list(self._tensors)

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def save(self, path: str | Path) -> None:
        index = {"format_version": self.format_version, "tensors": {}}
        offset = 0
        payloads = []
        for name, arr in self._tensors.items():
            raw = arr.tobytes(order="C")
            index["tensors"][name] = {
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
            payloads.append(raw)
            offset += len(raw)
        index_bytes = json.dumps(index, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(index_bytes)))
            fh.write(index_bytes)
            for raw in payloads:
                fh.write(raw)

    @classmethod
    def load(cls, path: str | Path) -> "WeightArchive":
        data = Path(path).read_bytes()
        if data[:8] != MAGIC:
            raise ArchiveError(f"{path}: not a weight archive (bad magic)")
        (index_len,) = struct.unpack("<Q", data[8:16])
        try:
            index = json.loads(data[16 : 16 + index_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ArchiveError(f"{path}: corrupt index: {exc}")
        if index.get("format_version") != FORMAT_VERSION:
            raise ArchiveError(f"{path}: unsupported format_version {index.get('format_version')}")
        base = 16 + index_len
        archive = cls()
        for name, meta in index["tensors"].items():
            dtype = np.dtype(meta["dtype"])
            if dtype.byteorder == ">":
                raise ArchiveError(f"{path}: tensor {name!r} is big-endian")
            start = base + meta["offset"]
            raw = data[start : start + meta["nbytes"]]
            if len(raw) != meta["nbytes"]:
                raise ArchiveError(f"{path}: tensor {name!r} payload truncated")
            arr = np.frombuffer(raw, dtype=dtype).reshape(meta["shape"]).copy()
            archive.add(name, arr)
        return archive
