"""Training objectives: temperature softmax over text candidates, focal-KL
alignment loss, 3D reconstruction, velocity and the weighted total."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import torch

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass
class LossConfig:
    tau: float = 0.1
    K: int = 16
    gamma: float = 2.0
    lambda_3d: float = 1.0
    lambda_v: float = 0.5
    epsilon_smooth: float = 0.0
    reduction: str = "mean"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.lambda_3d < 0 or self.lambda_v < 0:
            raise ValueError("loss weights must be >= 0")
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")


def similarity_softmax(h_p: torch.Tensor, h_w: torch.Tensor, tau: float) -> torch.Tensor:
    """Softmax of h_p . h_w / tau over candidates.

    h_p is (..., D) and h_w is (..., K+1, D); returns (..., K+1).
    """
    if h_w.shape[-2] == 0:
        raise ValueError("need at least one candidate")
    logits = torch.einsum("...d,...kd->...k", h_p, h_w) / tau
    return torch.softmax(logits, dim=-1)


def focal_kl_loss(s: torch.Tensor, y: torch.Tensor, gamma: float = 2.0, reduction: str = "mean") -> torch.Tensor:
    """sum_i (1 - s_i)^gamma * y_i * log(y_i / s_i) per anchor, reduced over anchors.

    Terms with y_i = 0 contribute zero. Probabilities below ``PROB_FLOOR``
    are clamped before the log and a warning is logged.
    """
    if s.shape != y.shape:
        raise ValueError(f"shape mismatch: s {tuple(s.shape)} vs y {tuple(y.shape)}")
    if bool(((s < PROB_FLOOR) & (y > 0)).any()):
        logger.warning("focal_kl_loss: probability below %g clamped", PROB_FLOOR)
    s_c = s.clamp_min(PROB_FLOOR)
    pos = y > 0
    y_safe = torch.where(pos, y, torch.ones_like(y))
    terms = torch.where(pos, (1 - s) ** gamma * y * (torch.log(y_safe) - torch.log(s_c)), torch.zeros_like(s))
    per_anchor = terms.sum(dim=-1)
    return _reduce(per_anchor, reduction)


def loss_3d(x_hat: torch.Tensor, x: torch.Tensor, reduction: str = "sum") -> torch.Tensor:
    """Per-joint Euclidean distance, summed (or averaged) over all joints of
    all frames and samples."""
    if x_hat.shape != x.shape:
        raise ValueError(f"shape mismatch: {tuple(x_hat.shape)} vs {tuple(x.shape)}")
    return _reduce(torch.linalg.vector_norm(x_hat - x, dim=-1), reduction)


def loss_velocity(x_hat: torch.Tensor, x: torch.Tensor, reduction: str = "sum") -> torch.Tensor:
    """:func:`loss_3d` on first temporal differences; time is axis -3."""
    if x_hat.shape != x.shape:
        raise ValueError(f"shape mismatch: {tuple(x_hat.shape)} vs {tuple(x.shape)}")
    if x.dim() < 3 or x.shape[-3] < 2:
        raise ValueError("velocity loss needs at least 2 frames")
    return loss_3d(torch.diff(x_hat, dim=-3), torch.diff(x, dim=-3), reduction)


def total_pretrain_loss(con, l3d, lv, config: LossConfig):
    return con + config.lambda_3d * l3d + config.lambda_v * lv


def _reduce(t: torch.Tensor, reduction: str) -> torch.Tensor:
    if reduction == "mean":
        return t.mean()
    if reduction == "sum":
        return t.sum()
    raise ValueError(f"unknown reduction {reduction!r}")
