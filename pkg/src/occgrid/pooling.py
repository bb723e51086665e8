"""Vertical feature pooling and BEV warping into the present frame.

Feature volumes are ``(c, h, w, l)`` arrays, BEV features ``(c, h, w)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import Pose2D, VoxelConfig, axis_centers, coord_to_cell


@dataclass(frozen=True)
class PoolWeights:
    alpha_avg: float = 1.0
    alpha_max: float = 1.0

    def __post_init__(self):
        if self.alpha_avg < 0 or self.alpha_max < 0:
            raise ValueError("pooling weights must be non-negative")
        if not self.alpha_avg + self.alpha_max > 0:
            raise ValueError("at least one pooling weight must be positive")

    def normalized(self):
        s = self.alpha_avg + self.alpha_max
        return self.alpha_avg / s, self.alpha_max / s


def _check_volume(vol):
    vol = np.asarray(vol)
    if vol.ndim != 4 or vol.shape[3] < 1:
        raise ValueError(f"expected a (c, h, w, l) volume with l >= 1, got {vol.shape}")
    return vol


def avg_pool_z(vol: np.ndarray) -> np.ndarray:
    return _check_volume(vol).mean(axis=3)


def max_pool_z(vol: np.ndarray) -> np.ndarray:
    return _check_volume(vol).max(axis=3)


def adaptive_dual_pool(vol: np.ndarray, w: PoolWeights) -> np.ndarray:
    """Convex blend of average and max pooling along z.

    Degenerate weights return the corresponding single pooling result
    unchanged, so ``PoolWeights(1, 0)`` is exactly :func:`avg_pool_z`.
    """
    a_avg, a_max = w.normalized()
    if a_max == 0:
        return avg_pool_z(vol)
    if a_avg == 0:
        return max_pool_z(vol)
    avg, mx = avg_pool_z(vol), max_pool_z(vol)
    # avg + a_max * (max - avg) keeps the result inside [avg, max] under rounding.
    return np.clip(avg + a_max * (mx - avg), avg, mx)


def warp_to_present(grid: np.ndarray, pose: Pose2D, cfg: VoxelConfig) -> np.ndarray:
    """Resample a BEV grid from its own frame into the present frame.

    Works on ``(h, w)`` grids (occupancy, instance ids) and ``(c, h, w)``
    features.  Nearest-neighbour sampling; cells whose source falls outside
    the lattice become zero.
    """
    grid = np.asarray(grid)
    if pose.is_identity:
        return grid.copy()
    h, w = cfg.bev_dims
    if grid.shape[-2:] != (h, w):
        raise ValueError(f"grid spatial shape {grid.shape[-2:]} != config {h, w}")
    xs, ys, _ = axis_centers(cfg)
    sx, sy = pose.apply_inverse(xs[:, None], ys[None, :])
    si = coord_to_cell(sx, cfg.x_min, cfg.resolution)
    sj = coord_to_cell(sy, cfg.y_min, cfg.resolution)
    valid = (si >= 0) & (si < h) & (sj >= 0) & (sj < w)
    out = np.zeros_like(grid)
    out[..., valid] = grid[..., si[valid], sj[valid]]
    return out


def aggregate_frames(feats: Sequence[np.ndarray], poses: Sequence[Pose2D], cfg: VoxelConfig) -> np.ndarray:
    """Warp per-frame BEV features (oldest first) to the present and stack them on a time axis."""
    if len(feats) != len(poses):
        raise ValueError(f"{len(feats)} feature frames but {len(poses)} poses")
    if not feats:
        raise ValueError("no frames to aggregate")
    return np.stack([warp_to_present(f, p, cfg) for f, p in zip(feats, poses)])
