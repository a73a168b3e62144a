"""Checkpoint archive.

Layout (little-endian)::

    0..3     b"MRC1"
    4..11    uint64 header length H
    12..     H bytes of UTF-8 JSON header
    12+H..   tensor payloads, float64 little-endian, row-major, back to back

The header holds ``model`` (ModelConfig fields), ``rbf`` (RbfConfig fields),
``epoch``, ``rng_state`` (JSON object), ``extra`` (free-form metrics) and
``tensors``: a list of ``{"name", "shape", "offset", "nbytes"}`` where
offset counts from the start of the payload region. Parameter tensors are
named ``param/<name>``; optimizer tensors ``optim/m/<name>``,
``optim/v/<name>`` and ``optim/step`` (0-d).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadMagic, CheckpointError, TruncatedFile
from .model import ModelConfig, MambaRate, parameter_shapes
from .rbf import RbfConfig

MAGIC = b"MRC1"
_PREFIX = struct.Struct("<4sQ")


@dataclass
class ModelCheckpoint:
    config: ModelConfig
    parameters: dict[str, np.ndarray]
    optimizer_state: dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)
    epoch: int = 0
    rbf: RbfConfig = field(default_factory=RbfConfig)
    extra: dict = field(default_factory=dict)

    def model(self) -> MambaRate:
        return MambaRate(self.config, self.parameters)


def save_checkpoint(path: str | Path, ckpt: ModelCheckpoint) -> None:
    tensors = [(f"param/{k}", v) for k, v in ckpt.parameters.items()]
    tensors += [(f"optim/{k}", v) for k, v in ckpt.optimizer_state.items()]
    entries, payloads, offset = [], [], 0
    for name, value in tensors:
        raw = np.ascontiguousarray(value, dtype="<f8").tobytes()
        entries.append({
            "name": name, "shape": list(np.shape(value)), "offset": offset, "nbytes": len(raw),
        })
        payloads.append(raw)
        offset += len(raw)
    header = {
        "format": "MRC1",
        "model": ckpt.config.to_dict(),
        "rbf": ckpt.rbf.to_dict(),
        "epoch": int(ckpt.epoch),
        "rng_state": ckpt.rng_state,
        "extra": ckpt.extra,
        "tensors": entries,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, len(blob)))
        f.write(blob)
        for raw in payloads:
            f.write(raw)


def read_header(buf: bytes, path: str | Path = "<bytes>") -> tuple[dict, int]:
    if len(buf) < _PREFIX.size:
        raise TruncatedFile(f"{path}: too short for a checkpoint")
    magic, hlen = _PREFIX.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagic(f"{path}: magic {magic!r}, expected {MAGIC!r}")
    start = _PREFIX.size + hlen
    if len(buf) < start:
        raise TruncatedFile(f"{path}: header truncated")
    return json.loads(buf[_PREFIX.size : start].decode("utf-8")), start


def load_checkpoint(path: str | Path) -> ModelCheckpoint:
    path = Path(path)
    buf = path.read_bytes()
    header, base = read_header(buf, path)
    try:
        cfg = ModelConfig(**header["model"])
        rbf = RbfConfig(**header["rbf"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad config in header ({exc})") from None
    params, optim = {}, {}
    for entry in header["tensors"]:
        lo = base + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(buf):
            raise TruncatedFile(f"{path}: tensor {entry['name']} runs past end of file")
        value = np.frombuffer(buf[lo:hi], dtype="<f8").astype(np.float64)
        value = value.reshape(entry["shape"])
        kind, name = entry["name"].split("/", 1)
        (params if kind == "param" else optim)[name] = value
    expected = parameter_shapes(cfg)
    if set(params) != set(expected):
        raise CheckpointError(f"{path}: parameter names do not match the config")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise CheckpointError(f"{path}: {name} has shape {params[name].shape}, want {shape}")
    return ModelCheckpoint(
        config=cfg,
        parameters=params,
        optimizer_state=optim,
        rng_state=header.get("rng_state", {}),
        epoch=int(header.get("epoch", 0)),
        rbf=rbf,
        extra=header.get("extra", {}),
    )
