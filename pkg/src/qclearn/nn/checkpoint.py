"""Binary checkpoint files.

Layout (little-endian)::

    b"QCNN" | u32 version | u32 len | JSON {"config", "metadata"}
    repeated: u16 len | name | u8 dtype | u8 rank | u32 dims[rank] | raw values
    u32 CRC-32 of everything above
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigMismatch, CorruptCheckpoint, VersionMismatch
from .model import ModelConfig, ScalableCNN, parameter_names

MAGIC = b"QCNN"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_DTYPE_CODES = {np.dtype("float64"): 0, np.dtype("float32"): 1}


@dataclass
class ModelCheckpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @classmethod
    def from_model(cls, model: ScalableCNN, metadata: dict | None = None) -> "ModelCheckpoint":
        params, buffers = model.state()
        return cls(model.config, params, buffers, dict(metadata or {}))

    def model(self) -> ScalableCNN:
        return ScalableCNN(self.config, {k: v.copy() for k, v in self.params.items()},
                           {k: v.copy() for k, v in self.buffers.items()})


def to_bytes(ckpt: ModelCheckpoint) -> bytes:
    blob = json.dumps({"config": ckpt.config.to_json(), "metadata": ckpt.metadata},
                      sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", ckpt.version), struct.pack("<I", len(blob)), blob]
    for name, arr in list(ckpt.params.items()) + list(ckpt.buffers.items()):
        dt = np.dtype(arr.dtype)
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<BB", _DTYPE_CODES[dt], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dt.newbyteorder("<")).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def from_bytes(data: bytes, n_qubits: int | None = None) -> ModelCheckpoint:
    if len(data) < 16 or data[:4] != MAGIC:
        raise CorruptCheckpoint("not a QCNN checkpoint")
    body, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) != crc:
        raise CorruptCheckpoint("checksum mismatch (truncated or corrupted file)")
    version, blob_len = struct.unpack_from("<II", body, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint format {version}, expected {FORMAT_VERSION}")
    pos = 12 + blob_len
    header = json.loads(body[12:pos].decode("utf-8"))
    config = ModelConfig.from_json(header["config"])
    tensors: dict[str, np.ndarray] = {}
    try:
        while pos < len(body):
            (name_len,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + name_len].decode("utf-8")
            pos += name_len
            code, rank = struct.unpack_from("<BB", body, pos)
            pos += 2
            dims = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            dt = _DTYPES[code]
            count = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(body, dtype=dt, count=count, offset=pos).reshape(dims)
            pos += count * dt.itemsize
            tensors[name] = arr.astype(dt.newbyteorder("="))
    except (struct.error, KeyError, ValueError) as exc:
        raise CorruptCheckpoint(f"malformed tensor record: {exc}") from None
    names = parameter_names(config)
    missing = [k for k in names if k not in tensors]
    if missing:
        raise CorruptCheckpoint(f"missing tensors: {missing[:3]}")
    params = {k: tensors[k] for k in names}
    buffers = {k: v for k, v in tensors.items() if k not in params}
    if n_qubits is not None and not config.scalable and config.n_outputs != n_qubits:
        raise ConfigMismatch(
            f"checkpoint predicts {config.n_outputs} qubits; requested N={n_qubits}")
    return ModelCheckpoint(config, params, buffers, header.get("metadata", {}), version)


def save_checkpoint(model: ScalableCNN | ModelCheckpoint, path: str | os.PathLike,
                    metadata: dict | None = None) -> Path:
    ckpt = model if isinstance(model, ModelCheckpoint) else ModelCheckpoint.from_model(model, metadata)
    if metadata is not None and isinstance(model, ModelCheckpoint):
        ckpt.metadata.update(metadata)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | os.PathLike, n_qubits: int | None = None) -> ModelCheckpoint:
    return from_bytes(Path(path).read_bytes(), n_qubits)
