"""On-disk directory layouts for labels, forecast bundles and refinement output.

Each directory holds time-stacked SGRD grids plus one JSON sidecar.
"""

from __future__ import annotations

import json
import os
from typing import List, Tuple

import numpy as np

from .grid import Box3D, HeightMap, Pose2D, VoxelConfig
from .gridfile import GridData, GridFormatError, read_grid, write_grid
from .labelgen import LabeledFrame, LabeledSequence
from .refine import ForecastBundle, RefineParams, RefineResult

SEQUENCE_JSON = "sequence.json"
BUNDLE_JSON = "bundle.json"
REFINE_JSON = "refine.json"


def dump_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def load_json(path):
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise GridFormatError(f"{path}: invalid JSON: {e}") from e


def _write(dirname, name, data, axes, cfg, meta=None):
    write_grid(os.path.join(dirname, name + ".sgrd"), GridData(np.asarray(data), axes, cfg, meta or {}))


def _read(dirname, name) -> np.ndarray:
    path = os.path.join(dirname, name + ".sgrd")
    if not os.path.exists(path):
        raise GridFormatError(f"missing grid file {path}")
    return read_grid(path).data


def boxes_to_json(boxes_per_frame) -> list:
    return [[b.to_dict() for b in frame] for frame in boxes_per_frame]


def boxes_from_json(frames) -> List[List[Box3D]]:
    return [[Box3D.from_dict(b) for b in frame] for frame in frames]


def save_sequence(seq: LabeledSequence, dirname) -> List[str]:
    os.makedirs(dirname, exist_ok=True)
    cfg = seq.cfg
    fr = seq.frames
    _write(dirname, "occ_bb", np.stack([f.occ_bb for f in fr]).astype(np.uint8), ["t", "h", "w", "l"], cfg)
    _write(dirname, "occ_fg", np.stack([f.occ_fg for f in fr]).astype(np.uint8), ["t", "h", "w", "l"], cfg)
    _write(dirname, "occ_bev", np.stack([f.occ_bev for f in fr]).astype(np.uint8), ["t", "h", "w"], cfg)
    _write(dirname, "heights", np.stack([f.heights.to_nan_array() for f in fr]), ["t", "h", "w"], cfg,
           {"undefined": "nan"})
    _write(dirname, "instances", np.stack([f.instances for f in fr]).astype(np.uint32), ["t", "h", "w"], cfg)
    _write(dirname, "flow", np.stack(seq.flows).astype(np.float32), ["t", "c", "h", "w"], cfg)
    dump_json(os.path.join(dirname, SEQUENCE_JSON), {
        "n_past": seq.n_past, "n_future": seq.n_future, "voxel_config": cfg.to_dict(),
        "times": list(range(-seq.n_past, seq.n_future + 1)), "boxes": boxes_to_json(seq.boxes),
    })
    return [SEQUENCE_JSON] + [n + ".sgrd" for n in ("occ_bb", "occ_fg", "occ_bev", "heights", "instances", "flow")]


def load_sequence(dirname) -> LabeledSequence:
    meta = load_json(os.path.join(dirname, SEQUENCE_JSON))
    cfg = VoxelConfig.from_dict(meta["voxel_config"])
    bb, fg, bev = (_read(dirname, n).astype(bool) for n in ("occ_bb", "occ_fg", "occ_bev"))
    heights = _read(dirname, "heights")
    inst = _read(dirname, "instances")
    flow = _read(dirname, "flow").astype(float)
    frames = [LabeledFrame(bb[i], bev[i], HeightMap.from_nan_array(heights[i]), fg[i], inst[i])
              for i in range(bb.shape[0])]
    return LabeledSequence(frames, list(flow), boxes_from_json(meta["boxes"]),
                           int(meta["n_past"]), int(meta["n_future"]), cfg)


def save_bundle(bundle: ForecastBundle, seg_prev: np.ndarray, cfg: VoxelConfig, dirname) -> None:
    os.makedirs(dirname, exist_ok=True)
    _write(dirname, "occ_prob", np.stack(bundle.occ_prob).astype(np.float32), ["t", "h", "w"], cfg)
    _write(dirname, "flow", np.stack(bundle.flow).astype(np.float32), ["t", "c", "h", "w"], cfg)
    _write(dirname, "heights", np.stack(bundle.heights).astype(np.float32), ["t", "h", "w"], cfg)
    _write(dirname, "seg_prob_prev", np.asarray(seg_prev, dtype=np.float32), ["h", "w"], cfg)
    dump_json(os.path.join(dirname, BUNDLE_JSON), {"n_future": len(bundle) - 1, "voxel_config": cfg.to_dict()})


def load_bundle(dirname) -> Tuple[ForecastBundle, np.ndarray, VoxelConfig]:
    meta = load_json(os.path.join(dirname, BUNDLE_JSON))
    cfg = VoxelConfig.from_dict(meta["voxel_config"])
    prob = _read(dirname, "occ_prob").astype(float)
    flow = _read(dirname, "flow").astype(float)
    heights = _read(dirname, "heights").astype(float)
    seg = _read(dirname, "seg_prob_prev").astype(float)
    return ForecastBundle(list(prob), list(flow), list(heights)), seg, cfg


def save_refined(res: RefineResult, params: RefineParams, cfg: VoxelConfig, dirname) -> None:
    os.makedirs(dirname, exist_ok=True)
    _write(dirname, "occ_2d", np.stack(res.occ_2d).astype(np.uint8), ["t", "h", "w"], cfg)
    _write(dirname, "instances", np.stack(res.instances).astype(np.uint32), ["t", "h", "w"], cfg)
    _write(dirname, "occ_3d", np.stack(res.occ_3d).astype(np.uint8), ["t", "h", "w", "l"], cfg)
    dump_json(os.path.join(dirname, REFINE_JSON), {
        "n_future": len(res.occ_2d) - 1, "voxel_config": cfg.to_dict(), "params": params.to_dict(),
        "centers": [{"position": list(c.position), "score": c.score, "instance_id": c.instance_id}
                    for c in res.centers],
    })


def load_refined(dirname):
    """Return (occ_2d, instances, occ_3d) stacks; occ_2d is None if absent."""
    path2d = os.path.join(dirname, "occ_2d.sgrd")
    occ_2d = read_grid(path2d).data.astype(bool) if os.path.exists(path2d) else None
    return occ_2d, _read(dirname, "instances"), _read(dirname, "occ_3d").astype(bool)


def save_poses(poses: List[Pose2D], path) -> None:
    dump_json(path, [p.to_dict() for p in poses])
