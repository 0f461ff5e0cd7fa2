"""Seeded input corruptions for masked motion pretraining.

Masked entries are encoded as (0, 0, 0). Every function is a pure function
of its inputs and seed, and each masking call returns a
:class:`CorruptionRecord` that is enough to replay it bit for bit.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Any

import numpy as np

from .skeleton import PART_NAMES, PoseSeq2D, part_joints

MODES = ("joint_frame", "body_part", "time_window")
MODE_PROBS = (0.5, 0.25, 0.25)
OUTLIER_RANGE = 0.3
CONFIDENCE_FLOOR = 1e-6
_SIDECAR_MAGIC = b"APCR"
_SIDECAR_HEAD = struct.Struct("<4sBBBxqIII")


@dataclass
class CorruptionConfig:
    joint_ratio: float = 0.05
    frame_ratio: float = 0.15
    T1: int = 30
    T2: int = 80
    sigma: float = 0.01
    outlier_prob: float = 0.02
    mode_probs: tuple[float, float, float] = MODE_PROBS


@dataclass
class CorruptionRecord:
    mode: str
    masked_entries: np.ndarray  # (T, J) bool
    noise_applied: bool
    seed: int
    params: dict[str, Any] = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, CorruptionRecord):
            return NotImplemented
        return (
            self.mode == other.mode
            and self.noise_applied == other.noise_applied
            and self.seed == other.seed
            and self.params == other.params
            and np.array_equal(self.masked_entries, other.masked_entries)
        )

    def to_bytes(self) -> bytes:
        """Compact sidecar: fixed header, JSON params, packed mask bits."""
        params = json.dumps(self.params, sort_keys=True).encode()
        T, J = self.masked_entries.shape
        head = _SIDECAR_HEAD.pack(_SIDECAR_MAGIC, 1, MODES.index(self.mode), int(self.noise_applied),
                                  self.seed, T, J, len(params))
        return head + params + np.packbits(self.masked_entries.ravel()).tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "CorruptionRecord":
        magic, version, mode, noise, seed, T, J, n = _SIDECAR_HEAD.unpack_from(raw)
        if magic != _SIDECAR_MAGIC or version != 1:
            raise ValueError("not a corruption record sidecar")
        off = _SIDECAR_HEAD.size
        params = json.loads(raw[off:off + n].decode())
        bits = np.frombuffer(raw, dtype=np.uint8, offset=off + n)
        mask = np.unpackbits(bits, count=T * J).astype(bool).reshape(T, J)
        return cls(MODES[mode], mask, bool(noise), seed, params)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "CorruptionRecord":
        return cls.from_bytes(Path(path).read_bytes())


def round_half_up(ratio: float, n: int) -> int:
    """round(ratio * n) with halves rounded up, on the decimal value of ratio."""
    return int((Decimal(repr(float(ratio))) * n).to_integral_value(rounding=ROUND_HALF_UP))


def _masked(data: np.ndarray) -> np.ndarray:
    return data[..., 2] == 0


def _apply_mask(seq2d: PoseSeq2D, mask: np.ndarray) -> PoseSeq2D:
    out = seq2d.data.copy()
    out[mask] = 0.0
    return seq2d.replace(out)


def mask_joint_frame(seq2d: PoseSeq2D, joint_ratio: float, frame_ratio: float, seed: int):
    """Zero ``round(frame_ratio*T)`` whole frames, then
    ``round(joint_ratio*T_remaining*J)`` single joints of the other frames."""
    for name, r in (("joint_ratio", joint_ratio), ("frame_ratio", frame_ratio)):
        if not 0.0 <= r < 1.0:
            raise ValueError(f"{name} must be in [0, 1), got {r}")
    T, J = seq2d.data.shape[:2]
    rng = np.random.default_rng(seed)
    n_frames = round_half_up(frame_ratio, T)
    frames = rng.choice(T, n_frames, replace=False)
    mask = np.zeros((T, J), dtype=bool)
    mask[frames] = True
    remaining = np.flatnonzero(~mask.ravel())
    n_joints = round_half_up(joint_ratio, (T - n_frames) * J)
    mask.ravel()[rng.choice(remaining, n_joints, replace=False)] = True
    out = _apply_mask(seq2d, mask)
    params = {"joint_ratio": joint_ratio, "frame_ratio": frame_ratio}
    return out, CorruptionRecord("joint_frame", _masked(out.data), False, int(seed), params)


def mask_body_part(seq2d: PoseSeq2D, seed: int):
    rng = np.random.default_rng(seed)
    part = PART_NAMES[int(rng.integers(len(PART_NAMES)))]
    mask = np.zeros(seq2d.data.shape[:2], dtype=bool)
    mask[:, sorted(part_joints(seq2d.layout, part))] = True
    out = _apply_mask(seq2d, mask)
    return out, CorruptionRecord("body_part", _masked(out.data), False, int(seed), {"part_name": part})


def mask_time_window(seq2d: PoseSeq2D, T1: int, T2: int, seed: int):
    """Zero a window of length L ~ U{T1..T2} starting at U{0..T-L}."""
    T = seq2d.num_frames
    if not 2 <= T1 <= T2:
        raise ValueError(f"need 2 <= T1 <= T2, got T1={T1}, T2={T2}")
    if T2 >= T:
        raise ValueError(f"T2={T2} must be smaller than the sequence length {T}")
    rng = np.random.default_rng(seed)
    length = int(rng.integers(T1, T2 + 1))
    start = int(rng.integers(0, T - length + 1))
    mask = np.zeros(seq2d.data.shape[:2], dtype=bool)
    mask[start:start + length] = True
    out = _apply_mask(seq2d, mask)
    params = {"T1": T1, "T2": T2, "window_start": start, "window_len": length}
    return out, CorruptionRecord("time_window", _masked(out.data), False, int(seed), params)


def add_noise(seq2d: PoseSeq2D, sigma: float, outlier_prob: float, seed: int) -> PoseSeq2D:
    """Gaussian jitter with occasional uniform outliers on visible entries.

    Confidence is scaled by exp(-|noise| / sigma), floored at
    ``CONFIDENCE_FLOOR`` so a visible joint never looks masked.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0 and outlier_prob == 0:
        return seq2d.replace(seq2d.data.copy())
    rng = np.random.default_rng(seed)
    shape = seq2d.data.shape[:2] + (2,)
    noise = rng.normal(0.0, sigma, size=shape) if sigma > 0 else np.zeros(shape)
    outlier = rng.random(shape[:2]) < outlier_prob
    uniform = rng.uniform(-OUTLIER_RANGE, OUTLIER_RANGE, size=shape)
    noise = np.where(outlier[..., None], uniform, noise)
    visible = ~_masked(seq2d.data)
    out = seq2d.data.copy()
    out[..., :2] += np.where(visible[..., None], noise, 0.0)
    mag = np.linalg.norm(noise, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        atten = np.exp(-mag / sigma) if sigma > 0 else np.where(mag > 0, 0.0, 1.0)
    conf = np.clip(out[..., 2] * atten, CONFIDENCE_FLOOR, 1.0)
    out[..., 2] = np.where(visible, conf, 0.0)
    return seq2d.replace(out)


def schedule_corruption(seq2d: PoseSeq2D, seed: int, config: CorruptionConfig | None = None):
    """Pick one masking mode (50/25/25 by default), apply it, then add noise."""
    config = config or CorruptionConfig()
    rng = np.random.default_rng(seed)
    u = rng.random()
    mask_seed, noise_seed = (int(s) for s in rng.integers(2**31, size=2))
    cum = np.cumsum(config.mode_probs)
    mode = MODES[int(np.searchsorted(cum, u, side="right"))] if u < cum[-1] else MODES[-1]

    if mode == "joint_frame":
        out, rec = mask_joint_frame(seq2d, config.joint_ratio, config.frame_ratio, mask_seed)
    elif mode == "body_part":
        out, rec = mask_body_part(seq2d, mask_seed)
    else:
        out, rec = mask_time_window(seq2d, config.T1, config.T2, mask_seed)
    out = add_noise(out, config.sigma, config.outlier_prob, noise_seed)
    params = dict(rec.params, mask_seed=mask_seed, noise_seed=noise_seed,
                  sigma=config.sigma, outlier_prob=config.outlier_prob)
    noisy = config.sigma > 0 or config.outlier_prob > 0
    return out, CorruptionRecord(mode, _masked(out.data), noisy, int(seed), params)


def replay(seq2d: PoseSeq2D, record: CorruptionRecord) -> PoseSeq2D:
    """Re-apply the corruption described by ``record`` to a clean input."""
    p = record.params
    scheduled = "mask_seed" in p
    seed = p["mask_seed"] if scheduled else record.seed
    if record.mode == "joint_frame":
        out, _ = mask_joint_frame(seq2d, p["joint_ratio"], p["frame_ratio"], seed)
    elif record.mode == "body_part":
        out, _ = mask_body_part(seq2d, seed)
    else:
        out, _ = mask_time_window(seq2d, p["T1"], p["T2"], seed)
    if scheduled:
        out = add_noise(out, p["sigma"], p["outlier_prob"], p["noise_seed"])
    return out
