"""Versioned binary checkpoint: a JSON header followed by raw named arrays.

Layout::

    MAGIC (8 bytes) | version (uint32 LE) | header length (uint64 LE) | header JSON
    | array bytes, concatenated in header order, C-contiguous little-endian

The header records each array's name, dtype, shape and byte length, a digest
of the configuration and a SHA-256 of the array payload. Nothing
time-dependent is written, so equal state gives equal bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from .errors import DataError

MAGIC = b"BMCKPT\x00\x01"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointVersionError(DataError):
    pass


def config_digest(configs: dict) -> str:
    return hashlib.sha256(json.dumps(configs, sort_keys=True).encode()).hexdigest()


@dataclass
class Checkpoint:
    configs: dict
    arrays: Dict[str, np.ndarray]
    state: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        entries: List[dict] = []
        chunks: List[bytes] = []
        for name in sorted(self.arrays):
            arr = np.asarray(self.arrays[name], order="C")
            dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
            raw = arr.astype(dtype, copy=False).tobytes()
            entries.append({"name": name, "dtype": dtype.str, "shape": list(arr.shape), "nbytes": len(raw)})
            chunks.append(raw)
        payload = b"".join(chunks)
        header = {
            "configs": self.configs,
            "config_digest": config_digest(self.configs),
            "state": self.state,
            "arrays": entries,
            "payload_sha256": hashlib.sha256(payload).hexdigest(),
        }
        head = json.dumps(header, sort_keys=True).encode()
        return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + payload

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if len(blob) < _PREFIX.size:
            raise DataError("checkpoint is truncated (no header)")
        magic, version, head_len = _PREFIX.unpack_from(blob)
        if magic != MAGIC:
            raise DataError("not a checkpoint file (bad magic)")
        if version != VERSION:
            raise CheckpointVersionError(f"checkpoint format version {version} is not supported (expected {VERSION})")
        start = _PREFIX.size
        try:
            header = json.loads(blob[start:start + head_len].decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"checkpoint header is corrupt: {exc}") from None
        payload = blob[start + head_len:]
        if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
            raise DataError("checkpoint payload checksum mismatch (truncated or corrupt file)")
        if config_digest(header["configs"]) != header.get("config_digest"):
            raise DataError("checkpoint config digest mismatch")
        arrays = {}
        offset = 0
        for entry in header["arrays"]:
            n = entry["nbytes"]
            arr = np.frombuffer(payload[offset:offset + n], dtype=np.dtype(entry["dtype"]))
            arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
            offset += n
        return cls(header["configs"], arrays, header.get("state", {}))

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Checkpoint":
        try:
            blob = Path(path).read_bytes()
        except OSError as exc:
            raise DataError(f"cannot read checkpoint {path}: {exc}") from None
        return cls.from_bytes(blob)

    def __eq__(self, other) -> bool:
        return isinstance(other, Checkpoint) and self.to_bytes() == other.to_bytes()
