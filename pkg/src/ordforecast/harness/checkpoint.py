"""Binary model checkpoints.

Layout::

    b"ORDFCKPT"            8-byte magic
    uint32 LE              format version
    uint64 LE              header length H
    H bytes                UTF-8 JSON header (manifest, config, quantizer, meta)
    payload                float64 LE, every tensor flattened row-major in manifest order
    32 bytes               SHA-256 of everything above

Loading verifies the checksum before building any model, so a truncated
or corrupted file never yields a partial model.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..quantizer import OrdinalQuantizer
from ..seq2seq import TENSOR_NAMES, Seq2SeqModel, TrainingConfig

__all__ = ["FORMAT_VERSION", "CheckpointError", "ModelCheckpoint", "save_checkpoint",
           "load_checkpoint", "read_checkpoint", "file_sha256"]

MAGIC = b"ORDFCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(DataError):
    pass


@dataclass
class ModelCheckpoint:
    version: int
    manifest: list
    payload: np.ndarray
    config: TrainingConfig
    quantizer: OrdinalQuantizer | None
    meta: dict

    def to_model(self) -> Seq2SeqModel:
        tensors, pos = {}, 0
        for entry in self.manifest:
            size = int(np.prod(entry["shape"], dtype=np.int64))
            tensors[entry["name"]] = self.payload[pos:pos + size].reshape(entry["shape"]).copy()
            pos += size
        return Seq2SeqModel.from_tensors(tensors, self.quantizer, self.config, self.meta)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def save_checkpoint(model: Seq2SeqModel, path, version=FORMAT_VERSION):
    path = Path(path)
    t = model.tensors()
    manifest = [{"name": k, "shape": list(t[k].shape)} for k in TENSOR_NAMES]
    header = {
        "manifest": manifest,
        "config": model.config.to_dict(),
        "quantizer": None if model.quantizer is None else model.quantizer.to_dict(),
        "meta": model.meta,
    }
    hbytes = json.dumps(header, sort_keys=True, default=_json_default).encode()
    payload = np.concatenate([np.ascontiguousarray(t[k], dtype="<f8").ravel() for k in TENSOR_NAMES])
    body = _PREFIX.pack(MAGIC, version, len(hbytes)) + hbytes + payload.tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(body + hashlib.sha256(body).digest())
    tmp.replace(path)
    return path


def read_checkpoint(path) -> ModelCheckpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if len(raw) < _PREFIX.size + 32 or raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupted)")
    _, version, hlen = _PREFIX.unpack_from(body)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    header = json.loads(body[_PREFIX.size:_PREFIX.size + hlen])
    payload = np.frombuffer(body[_PREFIX.size + hlen:], dtype="<f8").astype(np.float64)
    expected = sum(int(np.prod(e["shape"], dtype=np.int64)) for e in header["manifest"])
    if payload.size != expected:
        raise CheckpointError(f"{path}: payload has {payload.size} values, manifest expects {expected}")
    q = header.get("quantizer")
    return ModelCheckpoint(
        version, header["manifest"], payload, TrainingConfig.from_dict(header["config"]),
        None if q is None else OrdinalQuantizer.from_dict(q), header.get("meta", {}),
    )


def load_checkpoint(path) -> Seq2SeqModel:
    return read_checkpoint(path).to_model()


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
