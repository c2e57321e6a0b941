"""Checkpoint container.

Layout, all integers little-endian::

    b"CNMTCKPT"                 8-byte magic
    uint32 format version       currently 1
    uint32 header length N
    N bytes UTF-8 JSON header   (sorted keys, no whitespace)
    float64 arrays              params, then Adam m, then Adam v, each in
                                PARAM_ORDER, C order, shapes listed in the header

The header holds the model config and its hash, the optimizer step, the LR
warm-up origin and schedule, the dropout RNG state (hex), the data cursor, and
a free-form ``meta`` object used by the harness for provenance.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import torch

from ..errors import IncompatibleArtifactError
from .model import DTYPE, PARAM_ORDER, ModelConfig, param_shapes
from .optim import DataCursor, TrainState

MAGIC = b"CNMTCKPT"
VERSION = 1


def _to_bytes(t: torch.Tensor) -> bytes:
    return np.ascontiguousarray(t.detach().numpy(), dtype="<f8").tobytes()


def checkpoint_bytes(state: TrainState, cfg: ModelConfig, meta: dict[str, Any] | None = None) -> bytes:
    header = {
        "model_config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "step": state.step,
        "lr_origin": state.lr_origin,
        "peak_lr": state.peak_lr,
        "warmup_steps": state.warmup_steps,
        "dropout_rng": bytes(state.dropout_rng.get_state().numpy()).hex(),
        "data": {"seed": state.data.seed, "ids_digest": state.data.ids_digest,
                 "epoch": state.data.epoch, "index": state.data.index},
        "arrays": [[name, list(state.params[name].shape)] for name in PARAM_ORDER],
        "meta": meta or {},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(head)), head]
    for group in (state.params, state.m, state.v):
        parts.extend(_to_bytes(group[name]) for name in PARAM_ORDER)
    return b"".join(parts)


def save_checkpoint(state: TrainState, cfg: ModelConfig, path, meta: dict[str, Any] | None = None) -> Path:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(state, cfg, meta))
    tmp.replace(path)
    return path


def read_header(path) -> dict[str, Any]:
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise IncompatibleArtifactError(f"{path} is not a checkpoint file")
        version, n = struct.unpack("<II", f.read(8))
        if version != VERSION:
            raise IncompatibleArtifactError(f"{path}: unsupported checkpoint version {version}")
        return json.loads(f.read(n).decode("utf-8"))


def load_checkpoint(path, expected: ModelConfig | None = None) -> tuple[TrainState, ModelConfig, dict]:
    """Load a checkpoint; refuse it if its config hash differs from ``expected``."""
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise IncompatibleArtifactError(f"{path} is not a checkpoint file")
    version, n = struct.unpack("<II", raw[len(MAGIC):len(MAGIC) + 8])
    if version != VERSION:
        raise IncompatibleArtifactError(f"{path}: unsupported checkpoint version {version}")
    offset = len(MAGIC) + 8
    header = json.loads(raw[offset:offset + n].decode("utf-8"))
    offset += n
    cfg = ModelConfig(**header["model_config"])
    if cfg.hash() != header["config_hash"]:
        raise IncompatibleArtifactError(f"{path}: stored config hash does not match stored config")
    if expected is not None and expected.hash() != cfg.hash():
        raise IncompatibleArtifactError(
            f"{path} was written for model config {cfg.hash()}, expected {expected.hash()}")
    shapes = param_shapes(cfg)
    groups = []
    for _ in range(3):
        group = {}
        for name in PARAM_ORDER:
            shape = shapes[name]
            count = int(np.prod(shape))
            arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
            group[name] = torch.from_numpy(arr.copy()).to(DTYPE)
            offset += 8 * count
        groups.append(group)
    if offset != len(raw):
        raise IncompatibleArtifactError(f"{path}: {len(raw) - offset} trailing bytes")
    gen = torch.Generator()
    gen.set_state(torch.tensor(list(bytes.fromhex(header["dropout_rng"])), dtype=torch.uint8))
    state = TrainState(
        params=groups[0], m=groups[1], v=groups[2],
        step=header["step"], lr_origin=header["lr_origin"],
        peak_lr=header["peak_lr"], warmup_steps=header["warmup_steps"],
        dropout_rng=gen, data=DataCursor(**header["data"]),
    )
    return state, cfg, header["meta"]


def average_checkpoints(paths: Sequence) -> dict[str, torch.Tensor]:
    """Elementwise mean of the parameters of compatible checkpoints."""
    if not paths:
        raise ValueError("average_checkpoints needs at least one checkpoint")
    first, cfg, _ = load_checkpoint(paths[0])
    total = {k: v.clone() for k, v in first.params.items()}
    for p in paths[1:]:
        state, _, _ = load_checkpoint(p, expected=cfg)
        for k in total:
            total[k] += state.params[k]
    return {k: v / len(paths) for k, v in total.items()}
