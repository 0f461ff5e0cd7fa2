"""3D pose evaluation: MPJPE, Procrustes-aligned MPJPE, PCK and AUC.

All functions take arrays of shape (..., J, 3) in millimetres; leading axes
are flattened into frames.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

PCK_THRESHOLD_MM = 150.0
AUC_THRESHOLDS_MM = np.arange(0.0, 151.0, 5.0)
COLLINEAR_TOL = 1e-9
REPORT_KEYS = ("mpjpe_mm", "p_mpjpe_mm", "pck_percent", "auc_percent", "num_clips", "num_frames")


def _frames(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 2 or a.shape[-1] != 3:
        raise ValueError(f"expected (..., J, 3), got {a.shape}")
    return a.reshape(-1, a.shape[-2], 3)


def _check(pred, gt):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    return _frames(pred), _frames(gt)


def joint_errors(pred, gt) -> np.ndarray:
    pred, gt = _check(pred, gt)
    return np.linalg.norm(pred - gt, axis=-1)


def mpjpe(pred, gt) -> float:
    return float(joint_errors(pred, gt).mean())


def procrustes_align(pred, gt):
    """Per-frame similarity transform of ``pred`` onto ``gt``.

    Rotation is restricted to det = +1. Frames where either point set is
    (near) collinear get translation-only alignment. Returns the aligned
    prediction (F, J, 3) and a boolean array marking those fallback frames.
    """
    pred, gt = _check(pred, gt)
    mu_p = pred.mean(axis=1, keepdims=True)
    mu_g = gt.mean(axis=1, keepdims=True)
    p0, g0 = pred - mu_p, gt - mu_g

    cov = np.einsum("fji,fjk->fik", g0, p0)
    U, S, Vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(U @ Vt))
    d[d == 0] = 1.0
    D = np.zeros_like(cov)
    D[:, 0, 0] = 1.0
    D[:, 1, 1] = 1.0
    D[:, 2, 2] = d
    R = U @ D @ Vt  # maps centred pred onto centred gt
    var_p = (p0 ** 2).sum(axis=(1, 2))
    trace = (S * np.diagonal(D, axis1=1, axis2=2)).sum(axis=1)

    sv_p = np.linalg.svd(p0, compute_uv=False)
    sv_g = np.linalg.svd(g0, compute_uv=False)
    degenerate = (sv_p[:, 1] <= COLLINEAR_TOL * np.maximum(sv_p[:, 0], 1e-300)) | (
        sv_g[:, 1] <= COLLINEAR_TOL * np.maximum(sv_g[:, 0], 1e-300)
    )
    scale = np.where(degenerate, 1.0, trace / np.where(var_p > 0, var_p, 1.0))
    R[degenerate] = np.eye(3)
    if degenerate.any():
        logger.warning("procrustes: %d collinear frame(s) aligned by translation only", int(degenerate.sum()))
    aligned = scale[:, None, None] * np.einsum("fik,fjk->fji", R, p0) + mu_g
    return aligned, degenerate


def p_mpjpe(pred, gt) -> float:
    aligned, _ = procrustes_align(pred, gt)
    return mpjpe(aligned, _frames(gt))


def pck(pred, gt, threshold_mm: float = PCK_THRESHOLD_MM) -> float:
    """Percentage of joints whose error is at most ``threshold_mm``.

    Inclusive so a perfect prediction scores at the 0 mm threshold too.
    """
    return float((joint_errors(pred, gt) <= threshold_mm).mean() * 100.0)


def auc(pred, gt, thresholds=AUC_THRESHOLDS_MM) -> float:
    err = joint_errors(pred, gt)
    return float(np.mean([(err <= t).mean() for t in thresholds]) * 100.0)


def pck_curve(pred, gt, thresholds=AUC_THRESHOLDS_MM) -> np.ndarray:
    err = joint_errors(pred, gt)
    return np.array([(err <= t).mean() * 100.0 for t in thresholds])


@dataclass
class EvalReport:
    mpjpe_mm: float
    p_mpjpe_mm: float
    pck_percent: float
    auc_percent: float
    num_clips: int = 0
    num_frames: int = 0
    per_clip: list[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in REPORT_KEYS}

    def to_text(self) -> str:
        lines = [
            f"MPJPE (mm): {self.mpjpe_mm:.4f}",
            f"P-MPJPE (mm): {self.p_mpjpe_mm:.4f}",
            f"PCK@150mm (%): {self.pck_percent:.4f}",
            f"AUC 0-150mm (%): {self.auc_percent:.4f}",
            f"clips: {self.num_clips}",
            f"frames: {self.num_frames}",
        ]
        return "\n".join(lines) + "\n"

    def to_kv(self) -> str:
        return "".join(f"{k}\t{_fmt(v)}\n" for k, v in self.as_dict().items())

    @classmethod
    def from_kv(cls, text: str) -> "EvalReport":
        vals = dict(line.split("\t", 1) for line in text.splitlines() if line)
        return cls(**{k: (int(vals[k]) if k.startswith("num_") else float(vals[k])) for k in REPORT_KEYS})


def _fmt(v) -> str:
    return str(v) if isinstance(v, int) else repr(float(v))


def evaluate_predictions(preds, gts, clip_ids=None) -> EvalReport:
    """Metric suite over root-centred (F, J, 3) prediction/ground-truth pairs.

    ``preds`` and ``gts`` are lists with one array per clip.
    """
    if len(preds) != len(gts):
        raise ValueError("preds and gts must have the same number of clips")
    clip_ids = clip_ids or [str(i) for i in range(len(preds))]
    per_clip = []
    for cid, p, g in zip(clip_ids, preds, gts):
        per_clip.append({"clip_id": cid, "frames": len(_frames(g)), "mpjpe_mm": mpjpe(p, g),
                         "p_mpjpe_mm": p_mpjpe(p, g)})
    P = np.concatenate([_frames(p) for p in preds])
    G = np.concatenate([_frames(g) for g in gts])
    return EvalReport(mpjpe(P, G), p_mpjpe(P, G), pck(P, G), auc(P, G), len(preds), len(P), per_clip)
