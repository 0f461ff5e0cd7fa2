"""Versioned checkpoint container.

Layout (all integers little-endian)::

    b"APCK"            4-byte magic
    uint32 version     currently 1
    uint32 header_len  length of the JSON header in bytes
    header             UTF-8 JSON, keys sorted, no whitespace
    payload            tensors back to back as little-endian float32

The header holds ``model_config``, ``vocab`` (tokenizer vocabulary in id
order), free-form ``meta`` and ``tensors``: a list of ``{name, shape,
offset, nbytes}`` with offsets relative to the start of the payload.
"""
from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig
from .model import ActionPose
from .text import Tokenizer, SPECIALS

MAGIC = b"APCK"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


class CheckpointError(ValueError):
    pass


def to_bytes(model: ActionPose, tokenizer: Tokenizer, meta: dict | None = None) -> bytes:
    tensors, chunks, offset = [], [], 0
    for name, t in model.state_dict().items():
        arr = np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f4")
        raw = arr.tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "format": "actionpose-checkpoint",
        "model_config": dataclasses.asdict(model.cfg),
        "vocab": tokenizer.vocab,
        "meta": meta or {},
        "tensors": tensors,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + b"".join(chunks)


def save_checkpoint(path: str | Path, model: ActionPose, tokenizer: Tokenizer, meta: dict | None = None) -> None:
    Path(path).write_bytes(to_bytes(model, tokenizer, meta))


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, torch.Tensor]]:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated file")
    magic, version, n = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not an actionpose checkpoint")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[_PREFIX.size:_PREFIX.size + n])
    base = _PREFIX.size + n
    state = {}
    for t in header["tensors"]:
        arr = np.frombuffer(raw, dtype="<f4", count=t["nbytes"] // 4, offset=base + t["offset"])
        state[t["name"]] = torch.from_numpy(arr.astype(np.float32).reshape(t["shape"]))
    return header, state


def load_state(model: ActionPose, state: dict[str, torch.Tensor]) -> None:
    """Strict load that names every missing, unexpected or mis-shaped tensor."""
    own = model.state_dict()
    missing = sorted(set(own) - set(state))
    extra = sorted(set(state) - set(own))
    shape = sorted(k for k in set(own) & set(state) if tuple(own[k].shape) != tuple(state[k].shape))
    if missing or extra or shape:
        parts = []
        if missing:
            parts.append(f"missing: {', '.join(missing)}")
        if extra:
            parts.append(f"unexpected: {', '.join(extra)}")
        if shape:
            parts.append(f"shape mismatch: {', '.join(shape)}")
        raise CheckpointError("incompatible checkpoint; " + "; ".join(parts))
    model.load_state_dict(state)


def load_checkpoint(path: str | Path, model_config: ModelConfig | None = None):
    """Returns (model, tokenizer, meta). If ``model_config`` is given the
    checkpoint must be compatible with it."""
    header, state = read_checkpoint(path)
    cfg = model_config or ModelConfig(**header["model_config"])
    model = ActionPose(cfg)
    load_state(model, state)
    vocab = header["vocab"]
    if tuple(vocab[: len(SPECIALS)]) != SPECIALS:
        raise CheckpointError(f"{path}: vocabulary does not start with the special tokens")
    return model, Tokenizer(vocab[len(SPECIALS):]), header.get("meta", {})
