"""Instance-aware refinement of forecast BEV occupancy.

Instance centers are taken at t=-1 by non-maximum suppression, then carried
forward one frame at a time: every occupied pixel follows its predicted
backward flow to a landing point and inherits the id of the nearest center of
the previous frame.  Pixels that reach no center are dropped, and the
surviving mask gates the initial occupancy before height lifting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .grid import HeightMap, VoxelConfig
from .labelgen import fill_columns, height_to_top_index, instance_centroids


@dataclass(frozen=True)
class InstanceCenter:
    position: tuple  # (row, col); fractional for centroids
    score: float
    instance_id: int


@dataclass(frozen=True)
class NMSParams:
    threshold: float = 0.5
    radius: int = 2

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError("NMS threshold must be in (0, 1)")
        if self.radius < 1:
            raise ValueError("NMS radius must be >= 1")


@dataclass(frozen=True)
class RefineParams:
    nms: NMSParams = field(default_factory=NMSParams)
    binarize_threshold: float = 0.5
    # Landing points farther than this (in cells) from every center are dropped.
    max_center_distance: float = 2.0

    @classmethod
    def from_dict(cls, d: dict) -> "RefineParams":
        nms = NMSParams(**d.get("nms", {}))
        return cls(nms, float(d.get("binarize_threshold", 0.5)),
                   float(d.get("max_center_distance", 2.0)))

    def to_dict(self) -> dict:
        return {"nms": {"threshold": self.nms.threshold, "radius": self.nms.radius},
                "binarize_threshold": self.binarize_threshold,
                "max_center_distance": self.max_center_distance}


@dataclass(eq=False)
class ForecastBundle:
    """Network-style outputs for t = 0 .. n_future."""

    occ_prob: List[np.ndarray]
    flow: List[np.ndarray]
    heights: List[np.ndarray]

    def __post_init__(self):
        if not (len(self.occ_prob) == len(self.flow) == len(self.heights)):
            raise ValueError("occupancy, flow and height sequences differ in length")
        for p in self.occ_prob:
            if np.any(p < 0) or np.any(p > 1):
                raise ValueError("occupancy probabilities must lie in [0, 1]")

    def __len__(self):
        return len(self.occ_prob)


def extract_centers_nms(seg_prob: np.ndarray, threshold: float = 0.5, radius: int = 2) -> List[InstanceCenter]:
    """Local maxima of ``seg_prob`` above ``threshold``.

    A cell is kept if it beats every other cell within Chebyshev distance
    ``radius - 1``; an equal neighbour only loses to the lexicographically
    smaller position.  Ids run 1, 2, ... by descending score, then position.
    """
    p = np.asarray(seg_prob, dtype=float)
    h, w = p.shape
    keep = p >= threshold
    r = radius - 1
    pad = np.pad(p, r, constant_values=-np.inf)
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            if di == 0 and dj == 0:
                continue
            q = pad[r + di:r + di + h, r + dj:r + dj + w]
            # Neighbour earlier in row-major order wins ties.
            earlier = (di, dj) < (0, 0)
            keep &= (p > q) if earlier else (p >= q)
    rows, cols = np.nonzero(keep)
    order = sorted(zip(-p[rows, cols], rows, cols))
    return [InstanceCenter((int(i), int(j)), float(-s), n + 1) for n, (s, i, j) in enumerate(order)]


def round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def associate_step(centers_prev: Sequence[InstanceCenter], prev_ids: Optional[np.ndarray],
                   flow_t: np.ndarray, occ_t: np.ndarray,
                   max_center_distance: Optional[float] = None) -> np.ndarray:
    """Assign ids at frame t by following backward flow to the previous centers.

    ``prev_ids`` is only used to validate the grid shape.  With
    ``max_center_distance=None`` every in-grid landing point gets an id.
    """
    occ_t = np.asarray(occ_t, dtype=bool)
    h, w = occ_t.shape
    if flow_t.shape != (2, h, w) or (prev_ids is not None and prev_ids.shape != (h, w)):
        raise ValueError("flow, occupancy and previous instance map disagree in shape")
    out = np.zeros((h, w), dtype=np.uint32)
    if not centers_prev:
        return out
    rows, cols = np.nonzero(occ_t)
    qr = round_half_away(rows + flow_t[0, rows, cols])
    qc = round_half_away(cols + flow_t[1, rows, cols])
    inside = (qr >= 0) & (qr < h) & (qc >= 0) & (qc < w)
    rows, cols, qr, qc = rows[inside], cols[inside], qr[inside], qc[inside]

    ordered = sorted(centers_prev, key=lambda c: c.instance_id)
    cpos = np.array([c.position for c in ordered], dtype=float)
    cids = np.array([c.instance_id for c in ordered], dtype=np.uint32)
    d2 = (qr[:, None] - cpos[None, :, 0]) ** 2 + (qc[:, None] - cpos[None, :, 1]) ** 2
    # argmin returns the first minimum, i.e. the smallest id on ties.
    best = np.argmin(d2, axis=1)
    ok = np.ones(best.shape, dtype=bool)
    if max_center_distance is not None:
        ok = d2[np.arange(best.size), best] <= max_center_distance ** 2
    out[rows[ok], cols[ok]] = cids[best[ok]]
    return out


def centers_from_instances(inst: np.ndarray) -> List[InstanceCenter]:
    return [InstanceCenter(pos, 1.0, m) for m, pos in sorted(instance_centroids(inst).items())]


def clip_mask(m: np.ndarray) -> np.ndarray:
    return np.minimum(np.asarray(m), 1).astype(bool)


def refine_occupancy(initial: np.ndarray, mask: np.ndarray, binarize_threshold: float = 0.5) -> np.ndarray:
    initial = np.asarray(initial)
    if initial.shape != mask.shape:
        raise ValueError(f"shape mismatch {initial.shape} vs {mask.shape}")
    return (initial >= binarize_threshold) & np.asarray(mask, dtype=bool)


def lift_to_3d(bev: np.ndarray, heights, cfg: VoxelConfig) -> np.ndarray:
    """Fill occupied columns from the grid floor up to the (clamped) predicted height."""
    bev = np.asarray(bev, dtype=bool)
    if isinstance(heights, HeightMap):
        heights = np.where(heights.defined, heights.values, np.nan)
    heights = np.asarray(heights, dtype=float)
    if heights.shape != bev.shape:
        raise ValueError(f"shape mismatch {bev.shape} vs {heights.shape}")
    # Clamp into (z_min, z_max]; anything at or below the floor keeps one voxel.
    h = np.clip(np.nan_to_num(heights, nan=cfg.z_min), cfg.z_min + cfg.resolution, cfg.z_max)
    return fill_columns(bev, height_to_top_index(h, cfg), cfg.dims[2])


@dataclass(eq=False)
class RefineResult:
    occ_2d: List[np.ndarray]
    instances: List[np.ndarray]
    occ_3d: List[np.ndarray]
    centers: List[InstanceCenter]


def refine_sequence(bundle: ForecastBundle, seg_prob_prev: np.ndarray, cfg: VoxelConfig,
                    params: RefineParams = RefineParams()) -> RefineResult:
    centers0 = extract_centers_nms(seg_prob_prev, params.nms.threshold, params.nms.radius)
    centers = centers0
    prev = None
    out2d, outinst, out3d = [], [], []
    for prob, flow, heights in zip(bundle.occ_prob, bundle.flow, bundle.heights):
        occ = np.asarray(prob) >= params.binarize_threshold
        inst = associate_step(centers, prev, np.asarray(flow, dtype=float), occ,
                              params.max_center_distance)
        refined = refine_occupancy(prob, clip_mask(inst), params.binarize_threshold)
        out2d.append(refined)
        outinst.append(inst)
        out3d.append(lift_to_3d(refined, heights, cfg))
        centers = centers_from_instances(inst)
        prev = inst
    return RefineResult(out2d, outinst, out3d, centers0)
