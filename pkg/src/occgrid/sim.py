"""Deterministic kinematic scenes and controllable corruption of their labels.

Random draws come from numpy's PCG64 generator seeded with the scene or corruption seed.
Draw order is fixed: frames in time order, and within a frame occupancy
flips (row-major), flow noise, then height noise; spurious blobs last.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .grid import Box3D, Pose2D, VoxelConfig
from .labelgen import LabeledSequence, instance_centroids
from .refine import ForecastBundle

log = logging.getLogger(__name__)

# Pseudo-probabilities standing in for confident network outputs.
P_FREE, P_OCC = 0.1, 0.9
BLOB_SIZE = 3


@dataclass(frozen=True)
class ActorSpec:
    box: Box3D
    velocity: Tuple[float, float] = (0.0, 0.0)
    yaw_rate: float = 0.0

    def to_dict(self) -> dict:
        return {"box": self.box.to_dict(), "velocity": list(self.velocity), "yaw_rate": self.yaw_rate}

    @classmethod
    def from_dict(cls, d: dict) -> "ActorSpec":
        return cls(Box3D.from_dict(d["box"]), tuple(float(v) for v in d.get("velocity", (0, 0))),
                   float(d.get("yaw_rate", 0.0)))


@dataclass(frozen=True)
class SceneSpec:
    actors: Tuple[ActorSpec, ...] = ()
    ego_velocity: Tuple[float, float] = (0.0, 0.0)
    frame_dt: float = 0.5
    n_past: int = 2
    n_future: int = 4
    cfg: VoxelConfig = field(default_factory=VoxelConfig.nuscenes)
    seed: int = 0

    def __post_init__(self):
        if not self.frame_dt > 0:
            raise ValueError("frame_dt must be positive")
        if self.n_past < 0 or self.n_future < 0:
            raise ValueError("n_past and n_future must be non-negative")
        for a in self.actors:
            if not all(math.isfinite(v) for v in (*a.velocity, a.yaw_rate)):
                raise ValueError("actor kinematics must be finite")

    @property
    def times(self) -> range:
        return range(-self.n_past, self.n_future + 1)

    def to_dict(self) -> dict:
        return {"actors": [a.to_dict() for a in self.actors], "ego_velocity": list(self.ego_velocity),
                "frame_dt": self.frame_dt, "n_past": self.n_past, "n_future": self.n_future,
                "voxel_config": self.cfg.to_dict(), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        cfg = VoxelConfig.from_dict(d["voxel_config"]) if "voxel_config" in d else VoxelConfig.nuscenes()
        kw = dict(ego_velocity=tuple(float(v) for v in d.get("ego_velocity", (0, 0))),
                  frame_dt=float(d.get("frame_dt", 0.5)), n_past=int(d.get("n_past", 2)),
                  n_future=int(d.get("n_future", 4)), cfg=cfg, seed=int(d.get("seed", 0)))
        if "actors" in d:
            return cls(actors=tuple(ActorSpec.from_dict(a) for a in d["actors"]), **kw)
        return random_scene(n_actors=int(d.get("n_actors", 4)), **kw)


@dataclass(frozen=True)
class CorruptionSpec:
    occ_flip_rate: float = 0.0
    flow_noise_sigma: float = 0.0
    height_noise_sigma: float = 0.0
    spurious_blob_count: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.occ_flip_rate <= 1:
            raise ValueError("occ_flip_rate must be in [0, 1]")
        if self.flow_noise_sigma < 0 or self.height_noise_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")
        if self.spurious_blob_count < 0:
            raise ValueError("spurious_blob_count must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "CorruptionSpec":
        return cls(float(d.get("occ_flip_rate", 0)), float(d.get("flow_noise_sigma", 0)),
                   float(d.get("height_noise_sigma", 0)), int(d.get("spurious_blob_count", 0)),
                   int(d.get("seed", 0)))

    def to_dict(self) -> dict:
        return {"occ_flip_rate": self.occ_flip_rate, "flow_noise_sigma": self.flow_noise_sigma,
                "height_noise_sigma": self.height_noise_sigma,
                "spurious_blob_count": self.spurious_blob_count, "seed": self.seed}


def generate_scene(spec: SceneSpec) -> Tuple[List[List[Box3D]], List[Pose2D]]:
    """Integrate every actor over all frames.

    Boxes are expressed in the present (t=0) frame.  The pose of frame t
    carries that frame's ego coordinates into the present frame.
    """
    boxes, poses = [], []
    for t in spec.times:
        dt = t * spec.frame_dt
        frame = []
        for a in spec.actors:
            x, y, z = a.box.center
            frame.append(Box3D((x + a.velocity[0] * dt, y + a.velocity[1] * dt, z), a.box.size,
                               a.box.yaw + a.yaw_rate * dt, a.box.instance_id))
        boxes.append(frame)
        poses.append(Pose2D(spec.ego_velocity[0] * dt, spec.ego_velocity[1] * dt, 0.0))
    return boxes, poses


# Length, width, height ranges (m) of the random actor classes.
_ACTOR_SIZES = (((3.8, 5.0), (1.7, 2.1), (1.4, 2.0)),
                ((0.6, 0.9), (0.6, 0.9), (1.6, 1.9)),
                ((1.6, 2.2), (0.6, 0.9), (1.2, 1.6)))


def random_scene(n_actors: int = 4, cfg: VoxelConfig = None, seed: int = 0, n_past: int = 2,
                 n_future: int = 4, frame_dt: float = 0.5, ego_velocity=(0.0, 0.0),
                 max_speed: float = 4.0, margin: float = 1.0) -> SceneSpec:
    """Random grounded actors that stay inside the lattice and never overlap.

    Actors whose whole trajectory cannot be placed after 200 tries are omitted.
    """
    cfg = cfg or VoxelConfig.nuscenes()
    rng = np.random.default_rng(seed)
    times = np.arange(-n_past, n_future + 1) * frame_dt
    actors: List[ActorSpec] = []
    tracks = []  # (xy trajectory, bounding radius)
    for n in range(n_actors):
        for _ in range(200):
            cls = _ACTOR_SIZES[rng.integers(len(_ACTOR_SIZES))]
            size = tuple(float(rng.uniform(*r)) for r in cls)
            size = (size[0], size[1], min(size[2], cfg.z_max - cfg.z_min))
            yaw = float(rng.uniform(-math.pi, math.pi))
            speed = float(rng.uniform(0, max_speed))
            vel = (speed * math.cos(yaw), speed * math.sin(yaw))
            radius = 0.5 * math.hypot(size[0], size[1])
            cx = float(rng.uniform(cfg.x_min, cfg.x_max))
            cy = float(rng.uniform(cfg.y_min, cfg.y_max))
            traj = np.stack([cx + vel[0] * times, cy + vel[1] * times], axis=1)
            lo = radius + margin
            if (traj[:, 0].min() < cfg.x_min + lo or traj[:, 0].max() > cfg.x_max - lo
                    or traj[:, 1].min() < cfg.y_min + lo or traj[:, 1].max() > cfg.y_max - lo):
                continue
            if any(np.min(np.hypot(*(traj - tr).T)) < radius + r + margin for tr, r in tracks):
                continue
            box = Box3D((cx, cy, cfg.z_min + size[2] / 2), size, yaw, n + 1)
            actors.append(ActorSpec(box, vel, 0.0))
            tracks.append((traj, radius))
            break
    return SceneSpec(tuple(actors), tuple(ego_velocity), frame_dt, n_past, n_future, cfg, seed)


def centerness_map(inst: np.ndarray, sigma: float = 2.0) -> np.ndarray:
    """Gaussian heat map peaking at every instance centroid (max over instances)."""
    out = np.zeros(inst.shape)
    rows = np.arange(inst.shape[0])[:, None]
    cols = np.arange(inst.shape[1])[None, :]
    for _, (cr, cc) in sorted(instance_centroids(inst).items()):
        g = np.exp(-((rows - cr) ** 2 + (cols - cc) ** 2) / (2 * sigma ** 2))
        np.maximum(out, g, out=out)
    return out


def corrupt_predictions(gt: LabeledSequence, c: CorruptionSpec,
                        center_sigma: float = 2.0) -> Tuple[ForecastBundle, np.ndarray]:
    """Turn ground truth into pseudo network outputs for t = 0 .. n_future.

    Returns the bundle and a centerness map at t=-1 (all zero when the
    sequence has no past frame).  Occupancy becomes {0.1, 0.9} after random
    flips; flow and heights get additive Gaussian noise; free cells predict
    the grid floor as height.
    """
    cfg = gt.cfg
    rng = np.random.default_rng(c.seed)
    probs, flows, heights = [], [], []
    for t in range(gt.n_future + 1):
        f = gt.frame(t)
        occ = f.occ_bev ^ (rng.random(f.occ_bev.shape) < c.occ_flip_rate)
        probs.append(np.where(occ, P_OCC, P_FREE))
        flows.append(gt.flows[t] + c.flow_noise_sigma * rng.standard_normal(gt.flows[t].shape))
        h = np.where(f.heights.defined, f.heights.values, cfg.z_min)
        heights.append(h + c.height_noise_sigma * rng.standard_normal(h.shape))
    blob_height = min(cfg.z_min + 1.6, cfg.z_max)
    hh, ww = cfg.bev_dims
    for _ in range(c.spurious_blob_count):
        t = int(rng.integers(gt.n_future + 1))
        bev = gt.frame(t).occ_bev
        for _ in range(1000):
            r = int(rng.integers(hh - BLOB_SIZE + 1))
            q = int(rng.integers(ww - BLOB_SIZE + 1))
            win = (slice(r, r + BLOB_SIZE), slice(q, q + BLOB_SIZE))
            if not bev[win].any() and not (probs[t][win] >= 0.5).any():
                probs[t][win] = P_OCC
                heights[t][win] = blob_height
                break
        else:
            log.warning("no free %dx%d spot for a spurious blob at t=%d", BLOB_SIZE, BLOB_SIZE, t)
    if gt.n_past >= 1:
        seg_prev = centerness_map(gt.frame(-1).instances, center_sigma)
    else:
        seg_prev = np.zeros(cfg.bev_dims)
    return ForecastBundle(probs, flows, heights), seg_prev
