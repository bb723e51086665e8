"""Voxel lattice, grid containers and world/index conversion.

Grids are plain numpy arrays with fixed conventions:

=================  ==============  =========  ===============================
name               shape           dtype      meaning
=================  ==============  =========  ===============================
Occupancy3D        (H, W, L)       bool       voxel occupied
BevOccupancy       (H, W)          bool       BEV cell occupied
FlowField          (2, H, W)       float      (d_row, d_col) in grid cells
InstanceMap        (H, W)          integer    instance id, 0 = background
HeightMap          (H, W)          float      see :class:`HeightMap`
=================  ==============  =========  ===============================

Axis ``i`` follows x, ``j`` follows y and ``k`` follows z.  Voxel intervals are
half-open, ``[lo, hi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

# Relative slack used to snap coordinates that sit on a voxel face.
_FACE_SNAP = 1e-9


@dataclass(frozen=True)
class VoxelConfig:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float
    resolution: float

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        for lo, hi, axis in self._spans():
            cells = (hi - lo) / self.resolution
            if not hi > lo:
                raise ValueError(f"{axis} extent is empty: [{lo}, {hi})")
            if abs(cells - round(cells)) > _FACE_SNAP * max(1.0, abs(cells)):
                raise ValueError(
                    f"{axis} span {hi - lo} is not a multiple of resolution {self.resolution}"
                )

    def _spans(self):
        return (
            (self.x_min, self.x_max, "x"),
            (self.y_min, self.y_max, "y"),
            (self.z_min, self.z_max, "z"),
        )

    @classmethod
    def nuscenes(cls) -> "VoxelConfig":
        """The +-51.2 m, [-5, 3] m, 0.2 m lattice used for nuScenes-scale scenes."""
        return cls(-51.2, 51.2, -51.2, 51.2, -5.0, 3.0, 0.2)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(round((hi - lo) / self.resolution)) for lo, hi, _ in self._spans())

    @property
    def bev_dims(self) -> Tuple[int, int]:
        return self.dims[:2]

    @property
    def mins(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.z_min])

    def to_dict(self) -> dict:
        return {
            "x_min": self.x_min, "x_max": self.x_max,
            "y_min": self.y_min, "y_max": self.y_max,
            "z_min": self.z_min, "z_max": self.z_max,
            "resolution": self.resolution,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VoxelConfig":
        return cls(**{k: float(d[k]) for k in
                      ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max", "resolution")})


def coord_to_cell(coord, lo: float, resolution: float):
    """Floor a metric coordinate to a cell index along one axis.

    Values within a relative 1e-9 of a voxel face are snapped onto it first, so
    that a face belongs to the higher-index voxel despite round-off.
    """
    v = (np.asarray(coord, dtype=float) - lo) / resolution
    r = np.round(v)
    v = np.where(np.abs(v - r) <= _FACE_SNAP * np.maximum(1.0, np.abs(v)), r, v)
    return np.floor(v).astype(np.int64)


def world_to_index(p: Sequence[float], cfg: VoxelConfig) -> Optional[Tuple[int, int, int]]:
    """Return the voxel containing ``p`` or None when ``p`` is out of range."""
    idx = []
    for c, (lo, _, _), n in zip(p, cfg._spans(), cfg.dims):
        i = int(coord_to_cell(c, lo, cfg.resolution))
        if not 0 <= i < n:
            return None
        idx.append(i)
    return tuple(idx)


def index_to_center(idx: Sequence[int], cfg: VoxelConfig) -> Tuple[float, float, float]:
    for i, n in zip(idx, cfg.dims):
        if not 0 <= i < n:
            raise IndexError(f"voxel index {tuple(idx)} outside dims {cfg.dims}")
    return tuple(lo + (i + 0.5) * cfg.resolution for i, (lo, _, _) in zip(idx, cfg._spans()))


def axis_centers(cfg: VoxelConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Voxel-center coordinates along x, y and z."""
    h, w, l = cfg.dims
    r = cfg.resolution
    return (
        cfg.x_min + (np.arange(h) + 0.5) * r,
        cfg.y_min + (np.arange(w) + 0.5) * r,
        cfg.z_min + (np.arange(l) + 0.5) * r,
    )


def normalize_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = math.remainder(a, 2 * math.pi)
    return math.pi if a == -math.pi else a


@dataclass(frozen=True)
class Box3D:
    center: Tuple[float, float, float]
    size: Tuple[float, float, float]  # length (along heading), width, height
    yaw: float
    instance_id: int

    def __post_init__(self):
        if any(not s > 0 for s in self.size):
            raise ValueError(f"box size must be positive, got {self.size}")
        if int(self.instance_id) < 1:
            raise ValueError(f"instance_id must be >= 1, got {self.instance_id}")

    def to_dict(self) -> dict:
        return {"center": list(self.center), "size": list(self.size),
                "yaw": self.yaw, "instance_id": int(self.instance_id)}

    @classmethod
    def from_dict(cls, d: dict) -> "Box3D":
        return cls(tuple(float(v) for v in d["center"]), tuple(float(v) for v in d["size"]),
                   float(d["yaw"]), int(d["instance_id"]))


@dataclass(frozen=True)
class Pose2D:
    """Planar rigid transform taking a frame's coordinates into the present frame."""

    tx: float = 0.0
    ty: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))

    @property
    def is_identity(self) -> bool:
        return self.tx == 0 and self.ty == 0 and self.yaw == 0

    def apply(self, x, y):
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return c * x - s * y + self.tx, s * x + c * y + self.ty

    def apply_inverse(self, x, y):
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        dx, dy = np.subtract(x, self.tx), np.subtract(y, self.ty)
        return c * dx + s * dy, -s * dx + c * dy

    def to_dict(self) -> dict:
        return {"tx": self.tx, "ty": self.ty, "yaw": self.yaw}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose2D":
        return cls(float(d["tx"]), float(d["ty"]), float(d["yaw"]))


@dataclass(frozen=True, eq=False)
class HeightMap:
    """Per-column object height in meters with an explicit "undefined" mask.

    ``values`` is only meaningful where ``defined`` is True; elsewhere it holds
    0.0 and must not be read.
    """

    values: np.ndarray
    defined: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.defined.shape:
            raise ValueError("values and defined mask differ in shape")

    @classmethod
    def undefined(cls, shape) -> "HeightMap":
        return cls(np.zeros(shape), np.zeros(shape, dtype=bool))

    @property
    def shape(self):
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, HeightMap):
            return NotImplemented
        return (np.array_equal(self.defined, other.defined)
                and np.array_equal(self.values[self.defined], other.values[other.defined]))

    def check(self, cfg: VoxelConfig, bev: Optional[np.ndarray] = None) -> None:
        """Raise ValueError if heights leave (z_min, z_max] or disagree with ``bev``."""
        v = self.values[self.defined]
        if np.any(v <= cfg.z_min) or np.any(v > cfg.z_max + _FACE_SNAP):
            raise ValueError("height outside (z_min, z_max]")
        if bev is not None and not np.array_equal(self.defined, np.asarray(bev, dtype=bool)):
            raise ValueError("height map defined set differs from BEV occupancy")

    def to_nan_array(self, dtype=np.float32) -> np.ndarray:
        return np.where(self.defined, self.values, np.nan).astype(dtype)

    @classmethod
    def from_nan_array(cls, a: np.ndarray) -> "HeightMap":
        a = np.asarray(a, dtype=float)
        defined = ~np.isnan(a)
        return cls(np.where(defined, a, 0.0), defined)


def check_flow(flow: np.ndarray) -> None:
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ValueError(f"flow must have shape (2, H, W), got {flow.shape}")
    if not np.all(np.isfinite(flow)):
        raise ValueError("flow contains non-finite values")
    if np.any(np.hypot(flow[0], flow[1]) > max(flow.shape[1:])):
        raise ValueError("flow magnitude exceeds grid size")
