"""Training objective terms evaluated as plain scalars."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

BCE_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0  # occupancy
    lambda2: float = 1.0  # height
    lambda3: float = 1.0  # flow

    def __post_init__(self):
        ws = (self.lambda1, self.lambda2, self.lambda3)
        if min(ws) < 0 or max(ws) <= 0:
            raise ValueError("loss weights must be non-negative with at least one positive")


def bce_loss(pred_prob: np.ndarray, gt: np.ndarray, eps: float = BCE_EPS) -> float:
    """Mean binary cross-entropy with probabilities clamped to [eps, 1 - eps]."""
    p = np.asarray(pred_prob, dtype=float)
    y = np.asarray(gt, dtype=float)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {y.shape}")
    p = np.clip(p, eps, 1 - eps)
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p))))


def smooth_l1_loss(pred: np.ndarray, gt: np.ndarray, valid_mask: Optional[np.ndarray] = None,
                   beta: float = 1.0) -> float:
    """Mean smooth-L1 over masked cells; 0.0 when the mask selects nothing.

    For flow fields pass ``(2, H, W)`` arrays with an ``(H, W)`` mask; the mask
    is broadcast over the leading component axis.
    """
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if beta <= 0:
        raise ValueError("beta must be positive")
    if valid_mask is None:
        valid_mask = np.ones(pred.shape, dtype=bool)
    mask = np.broadcast_to(np.asarray(valid_mask, dtype=bool), pred.shape)
    d = np.abs(pred[mask] - gt[mask])
    if d.size == 0:
        return 0.0
    per = np.where(d < beta, 0.5 * d * d / beta, d - 0.5 * beta)
    return float(per.mean())


def total_loss(per_frame_losses: Sequence[Tuple[float, float, float]], w: LossWeights = LossWeights()) -> float:
    if len(per_frame_losses) == 0:
        raise ValueError("no frames")
    s = sum(w.lambda1 * o + w.lambda2 * h + w.lambda3 * f for o, h, f in per_frame_losses)
    return s / len(per_frame_losses)
