"""Straightforward float64 reference implementations used as test oracles.

Written with plain loops over Python floats so they share no code path with
the vectorised torch implementations under test.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def softmax_sim(h_p, h_w, tau):
    logits = [sum(a * b for a, b in zip(h_p, w)) / tau for w in h_w]
    m = max(logits)
    e = [math.exp(v - m) for v in logits]
    z = sum(e)
    return [v / z for v in e]


def focal_kl(s, y, gamma):
    total = 0.0
    for si, yi in zip(s, y):
        if yi > 0:
            total += (1.0 - si) ** gamma * yi * math.log(yi / si)
    return total


def l3d(pred, gt):
    """Sum of per-joint Euclidean distances; arrays (..., J, 3)."""
    p = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    g = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    return sum(math.sqrt(sum((a - b) ** 2 for a, b in zip(pr, gr))) for pr, gr in zip(p, g))


def lvel(pred, gt):
    """Velocity loss for a single (T, J, 3) sequence."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    total = 0.0
    for t in range(1, p.shape[0]):
        for j in range(p.shape[1]):
            d = (p[t, j] - p[t - 1, j]) - (g[t, j] - g[t - 1, j])
            total += math.sqrt(float(d @ d))
    return total


def total_loss(con, a, b, lam3, lamv):
    return con + lam3 * a + lamv * b


def rotation(axis_angle) -> np.ndarray:
    """Rodrigues formula."""
    v = np.asarray(axis_angle, dtype=np.float64)
    th = float(np.linalg.norm(v))
    if th < 1e-15:
        return np.eye(3)
    k = v / th
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(th) * K + (1 - math.cos(th)) * K @ K


def brute_force_p_mpjpe(pred, gt, steps: int = 12) -> float:
    """P-MPJPE for one frame by direct search over proper rotations.

    The squared alignment error is minimised over a dense axis-angle grid and
    polished with Nelder-Mead; for a fixed rotation the best translation and
    scale have closed forms. The mean joint distance at the optimum is returned.
    """
    from scipy.optimize import minimize

    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    P, G = pred - pred.mean(0), gt - gt.mean(0)

    def fit(v):
        rp = P @ rotation(v).T
        sc = max(float((rp * G).sum()) / float((rp * rp).sum()), 0.0)
        return sc * rp

    def sq(v):
        return float(((fit(v) - G) ** 2).sum())

    grid = np.linspace(-math.pi, math.pi, steps, endpoint=False)
    starts = sorted(itertools.product(grid, grid, grid), key=sq)[:4]
    best = min((minimize(sq, np.array(x0), method="Nelder-Mead",
                         options={"xatol": 1e-13, "fatol": 1e-16, "maxiter": 20000, "maxfev": 20000})
                for x0 in starts), key=lambda r: r.fun)
    return float(np.linalg.norm(fit(best.x) - G, axis=1).mean())


def p_mpjpe_with_reflection(pred, gt) -> float:
    """Orthogonal Procrustes allowing improper rotations (det = -1)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    P, G = pred - pred.mean(0), gt - gt.mean(0)
    U, S, Vt = np.linalg.svd(G.T @ P)
    R = U @ Vt
    sc = S.sum() / (P * P).sum()
    return float(np.linalg.norm(sc * P @ R.T - G, axis=1).mean())
