"""Ground-truth labels from oriented 3D boxes.

Pipeline per frame: boxes -> inflated voxel occupancy -> BEV occupancy and
column heights -> fine-grained occupancy lifted back from (BEV, height).
Backward centripetal flow is derived from consecutive BEV instance maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .grid import Box3D, HeightMap, VoxelConfig, axis_centers, coord_to_cell

# Inclusive-face slack for the center-in-box test, in meters.
BOX_EPS = 1e-9


def _index_range(lo, hi, axis_lo, res, n):
    a = max(int(coord_to_cell(lo, axis_lo, res)), 0)
    b = min(int(coord_to_cell(hi, axis_lo, res)) + 1, n)
    return a, b


def _footprint(box: Box3D, cfg: VoxelConfig):
    """Index window and BEV membership mask for one box's footprint."""
    h, w, _ = cfg.dims
    xs, ys, _ = axis_centers(cfg)
    cx, cy, _ = box.center
    half_l, half_w = box.size[0] / 2, box.size[1] / 2
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    ex = abs(c) * half_l + abs(s) * half_w
    ey = abs(s) * half_l + abs(c) * half_w
    i0, i1 = _index_range(cx - ex - cfg.resolution, cx + ex + cfg.resolution, cfg.x_min, cfg.resolution, h)
    j0, j1 = _index_range(cy - ey - cfg.resolution, cy + ey + cfg.resolution, cfg.y_min, cfg.resolution, w)
    if i0 >= i1 or j0 >= j1:
        return None
    dx = xs[i0:i1, None] - cx
    dy = ys[None, j0:j1] - cy
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    inside = (np.abs(lx) <= half_l + BOX_EPS) & (np.abs(ly) <= half_w + BOX_EPS)
    return (i0, i1, j0, j1), inside


def _z_mask(box: Box3D, cfg: VoxelConfig) -> np.ndarray:
    zs = axis_centers(cfg)[2]
    return np.abs(zs - box.center[2]) <= box.size[2] / 2 + BOX_EPS


def rasterize_boxes_3d(boxes: Sequence[Box3D], cfg: VoxelConfig) -> np.ndarray:
    """Mark every voxel whose center lies inside at least one box (faces inclusive)."""
    occ = np.zeros(cfg.dims, dtype=bool)
    for box in boxes:
        fp = _footprint(box, cfg)
        if fp is None:
            continue
        (i0, i1, j0, j1), inside = fp
        zmask = _z_mask(box, cfg)
        occ[i0:i1, j0:j1, :] |= inside[:, :, None] & zmask[None, None, :]
    return occ


def rasterize_instances_bev(boxes: Sequence[Box3D], cfg: VoxelConfig) -> np.ndarray:
    """BEV instance ids from box footprints; overlaps go to the smaller id."""
    inst = np.zeros(cfg.bev_dims, dtype=np.uint32)
    # Paint larger ids first so smaller ids overwrite them.
    for box in sorted(boxes, key=lambda b: -b.instance_id):
        fp = _footprint(box, cfg)
        if fp is None:
            continue
        (i0, i1, j0, j1), inside = fp
        inst[i0:i1, j0:j1][inside] = box.instance_id
    return inst


def compress_to_bev(occ: np.ndarray) -> np.ndarray:
    return np.asarray(occ, dtype=bool).any(axis=2)


def extract_heights(occ: np.ndarray, cfg: VoxelConfig) -> HeightMap:
    """Top-face height of the highest occupied voxel in every column."""
    occ = np.asarray(occ, dtype=bool)
    defined = occ.any(axis=2)
    l = occ.shape[2]
    k_max = l - 1 - np.argmax(occ[:, :, ::-1], axis=2)
    values = np.where(defined, cfg.z_min + (k_max + 1) * cfg.resolution, 0.0)
    return HeightMap(values, defined)


def height_to_top_index(heights, cfg: VoxelConfig) -> np.ndarray:
    l = cfg.dims[2]
    k_top = np.round((np.asarray(heights, dtype=float) - cfg.z_min) / cfg.resolution).astype(np.int64) - 1
    return np.clip(k_top, 0, l - 1)


def fill_columns(bev: np.ndarray, k_top: np.ndarray, depth: int, base: int = 0) -> np.ndarray:
    k = np.arange(depth)
    return bev[:, :, None] & (k[None, None, :] >= base) & (k[None, None, :] <= k_top[:, :, None])


def build_fine_grained(bev: np.ndarray, heights: HeightMap, cfg: VoxelConfig, base: int = 0) -> np.ndarray:
    """Lift BEV occupancy to voxels, filling each occupied column from ``base`` up to its height.

    Raises ValueError when the height map is not defined exactly on ``bev``.
    """
    bev = np.asarray(bev, dtype=bool)
    if bev.shape != heights.shape:
        raise ValueError(f"bev shape {bev.shape} != heights shape {heights.shape}")
    if np.any(bev & ~heights.defined):
        raise ValueError("occupied BEV cell without a defined height")
    if np.any(heights.defined & ~bev):
        raise ValueError("height defined on a free BEV cell")
    k_top = height_to_top_index(np.where(heights.defined, heights.values, cfg.z_min), cfg)
    return fill_columns(bev, k_top, cfg.dims[2], base)


def instance_centroids(inst: np.ndarray) -> dict:
    """Mean (row, col) of the pixels of every nonzero id."""
    inst = np.asarray(inst)
    rows, cols = np.nonzero(inst)
    ids = inst[rows, cols]
    out = {}
    if ids.size == 0:
        return out
    uniq, inv, counts = np.unique(ids, return_inverse=True, return_counts=True)
    sr = np.bincount(inv, weights=rows)
    sc = np.bincount(inv, weights=cols)
    for n, m in enumerate(uniq):
        out[int(m)] = (sr[n] / counts[n], sc[n] / counts[n])
    return out


def gt_backward_flow(inst_t: np.ndarray, inst_prev: np.ndarray) -> np.ndarray:
    """Flow from every instance pixel at t to its instance centroid at t-1.

    Background pixels and instances missing at t-1 get a zero vector.
    """
    inst_t = np.asarray(inst_t)
    flow = np.zeros((2,) + inst_t.shape)
    centroids = instance_centroids(inst_prev)
    rows, cols = np.indices(inst_t.shape)
    for m, (cr, cc) in centroids.items():
        sel = inst_t == m
        flow[0][sel] = cr - rows[sel]
        flow[1][sel] = cc - cols[sel]
    return flow


@dataclass(eq=False)
class LabeledFrame:
    occ_bb: np.ndarray
    occ_bev: np.ndarray
    heights: HeightMap
    occ_fg: np.ndarray
    instances: np.ndarray

    def check(self) -> None:
        if not np.array_equal(self.occ_bev, self.occ_bb.any(axis=2)):
            raise ValueError("occ_bev is not the column-wise OR of occ_bb")
        if not np.array_equal(self.heights.defined, self.occ_bev):
            raise ValueError("heights are not defined exactly on occ_bev")
        if np.any(self.occ_fg & ~self.occ_bb):
            raise ValueError("occ_fg exceeds occ_bb")


@dataclass(eq=False)
class LabeledSequence:
    frames: List[LabeledFrame]  # t = -n_past .. n_future
    flows: List[np.ndarray]  # t = 0 .. n_future
    boxes: List[List[Box3D]]
    n_past: int
    n_future: int
    cfg: VoxelConfig = field(default_factory=VoxelConfig.nuscenes)

    def __post_init__(self):
        n = self.n_past + self.n_future + 1
        if len(self.frames) != n or len(self.boxes) != n:
            raise ValueError(f"expected {n} frames, got {len(self.frames)}")
        if len(self.flows) != self.n_future + 1:
            raise ValueError(f"expected {self.n_future + 1} flows, got {len(self.flows)}")

    def frame(self, t: int) -> LabeledFrame:
        return self.frames[t + self.n_past]

    def boxes_at(self, t: int) -> List[Box3D]:
        return self.boxes[t + self.n_past]

    @property
    def future(self) -> List[LabeledFrame]:
        """Frames t = 0 .. n_future."""
        return self.frames[self.n_past:]


def label_frame(boxes: Sequence[Box3D], cfg: VoxelConfig) -> LabeledFrame:
    occ_bb = rasterize_boxes_3d(boxes, cfg)
    occ_bev = compress_to_bev(occ_bb)
    heights = extract_heights(occ_bb, cfg)
    # Bottom-filled lift, clipped to the box envelope for boxes not resting on the grid floor.
    occ_fg = build_fine_grained(occ_bev, heights, cfg) & occ_bb
    return LabeledFrame(occ_bb, occ_bev, heights, occ_fg, rasterize_instances_bev(boxes, cfg))


def generate_labels(boxes_per_frame: Sequence[Sequence[Box3D]], cfg: VoxelConfig,
                    n_past: int, n_future: int) -> LabeledSequence:
    n = n_past + n_future + 1
    if len(boxes_per_frame) != n:
        raise ValueError(f"expected {n} frames of boxes (n_past={n_past}, n_future={n_future}), "
                         f"got {len(boxes_per_frame)}")
    frames = [label_frame(b, cfg) for b in boxes_per_frame]
    flows = []
    for t in range(n_future + 1):
        cur = frames[n_past + t].instances
        if n_past + t == 0:
            flows.append(np.zeros((2,) + cur.shape))
        else:
            flows.append(gt_backward_flow(cur, frames[n_past + t - 1].instances))
    return LabeledSequence(frames, flows, [list(b) for b in boxes_per_frame], n_past, n_future, cfg)
