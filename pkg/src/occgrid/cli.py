"""Command-line entry point: ``occgrid <subcommand>``.

Exit codes: 0 success, 1 usage error, 2 file format error, 3 invariant
violation (for example grids of mismatched size).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .grid import VoxelConfig
from .gridfile import DTYPES, GridFormatError, read_grid
from .labelgen import generate_labels
from .layout import (boxes_from_json, boxes_to_json, dump_json, load_bundle, load_json, load_refined,
                     load_sequence, save_bundle, save_poses, save_refined, save_sequence)
from .metrics import CIOU_LITERAL, CIOU_UNION, EvalWindow, evaluate_sequence
from .refine import RefineParams, refine_sequence
from .sim import CorruptionSpec, SceneSpec, corrupt_predictions, generate_scene

log = logging.getLogger("occgrid")

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_INVARIANT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dir_digests(dirname, prefix):
    out = {}
    for name in sorted(os.listdir(dirname)):
        path = os.path.join(dirname, name)
        if os.path.isfile(path):
            out[f"{prefix}/{name}"] = _sha256(path)
    return out


def _require_dir(path, what):
    if not os.path.isdir(path):
        raise UsageError(f"{what} directory not found: {path}")


def _require_file(path, what):
    if not os.path.isfile(path):
        raise UsageError(f"{what} file not found: {path}")


def cmd_simulate(args):
    _require_file(args.spec, "spec")
    raw = load_json(args.spec)
    spec = SceneSpec.from_dict(raw)
    corruption = CorruptionSpec.from_dict(raw.get("corruption", {}))
    boxes, poses = generate_scene(spec)
    seq = generate_labels(boxes, spec.cfg, spec.n_past, spec.n_future)
    bundle, seg_prev = corrupt_predictions(seq, corruption)
    os.makedirs(args.out, exist_ok=True)
    dump_json(os.path.join(args.out, "scene.json"), {**spec.to_dict(), "corruption": corruption.to_dict()})
    dump_json(os.path.join(args.out, "boxes.json"), {"frames": boxes_to_json(boxes)})
    save_poses(poses, os.path.join(args.out, "poses.json"))
    save_sequence(seq, os.path.join(args.out, "gt"))
    save_bundle(bundle, seg_prev, spec.cfg, os.path.join(args.out, "pred"))
    log.info("wrote %d frames to %s", len(boxes), args.out)
    return EXIT_OK


def cmd_gen_labels(args):
    _require_file(args.boxes, "boxes")
    _require_file(args.config, "config")
    raw = load_json(args.boxes)
    frames = raw["frames"] if isinstance(raw, dict) else raw
    conf = load_json(args.config)
    cfg = VoxelConfig.from_dict(conf.get("voxel_config", conf))
    n_past = int(conf.get("n_past", 2))
    n_future = int(conf.get("n_future", len(frames) - n_past - 1))
    seq = generate_labels(boxes_from_json(frames), cfg, n_past, n_future)
    save_sequence(seq, args.out)
    return EXIT_OK


def cmd_refine(args):
    _require_dir(args.pred, "prediction")
    bundle, seg_prev, cfg = load_bundle(args.pred)
    params = RefineParams()
    if args.config:
        _require_file(args.config, "config")
        conf = load_json(args.config)
        params = RefineParams.from_dict(conf.get("refine", conf))
        if "voxel_config" in conf:
            cfg = VoxelConfig.from_dict(conf["voxel_config"])
    res = refine_sequence(bundle, seg_prev, cfg, params)
    save_refined(res, params, cfg, args.out)
    return EXIT_OK


def _clean(v):
    if isinstance(v, float) and not np.isfinite(v):
        return None
    return v


def write_frames_csv(rows, path):
    keys = list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: "" if r[k] is None else r[k] for k in keys})


def cmd_evaluate(args):
    _require_dir(args.gt, "ground-truth")
    _require_dir(args.pred, "prediction")
    gt = load_sequence(args.gt)
    occ_2d, inst, occ_3d = load_refined(args.pred)
    if occ_3d.shape[0] != gt.n_future + 1:
        raise ValueError(f"prediction has {occ_3d.shape[0]} frames, ground truth {gt.n_future + 1}")
    report = evaluate_sequence(gt, list(occ_3d), list(inst), fmt=args.format,
                               pred_2d_seq=None if occ_2d is None else list(occ_2d),
                               match_threshold=args.match_threshold, ciou_mode=args.ciou_mode)
    rd = report.to_dict()
    win = EvalWindow.named(args.window, gt.n_future)
    key = {"current": "c", "future": "f", "all": "tilde"}[args.window]
    doc = {
        "tool": {"name": "occgrid", "version": __version__},
        "metrics": {k: _clean(rd[k]) for k in ("iou_c", "iou_f", "iou_tilde", "ciou_c", "ciou_f",
                                                "ciou_tilde", "vpq_bb", "vpq_fg")},
        "selected": {"window": args.window, "range": None if win is None else [win.t_start, win.t_end],
                     "iou": rd[f"iou_{key}"], "ciou": rd[f"ciou_{key}"]},
        "format": report.format,
        "ciou_mode": report.ciou_mode,
        "match_threshold": args.match_threshold,
        "windows": rd["windows"],
        "ciou_skipped": rd["ciou_skipped"],
        "iou_bb": rd["iou_bb"], "iou_fg": rd["iou_fg"], "iou_2d": rd["iou_2d"],
        "per_frame": rd["per_frame"],
        "inputs": {**_dir_digests(args.gt, "gt"), **_dir_digests(args.pred, "pred")},
        "generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    stem = os.path.splitext(args.out)[0]
    write_frames_csv(report.per_frame, stem + "_frames.csv")
    if not args.no_figures:
        from .plotting import write_report_figures

        pred_bev = occ_2d if occ_2d is not None else occ_3d.any(axis=3)
        write_report_figures(report, [f.occ_bev for f in gt.future], pred_bev, stem + "_figures")
    for k, v in doc["metrics"].items():
        print(f"{k}\t{'n/a' if v is None else f'{v:.6f}'}")
    return EXIT_OK


def cmd_inspect(args):
    _require_file(args.file, "grid")
    g = read_grid(args.file)
    print(f"dtype: {g.dtype_name}")
    print(f"shape: {list(g.data.shape)}")
    print(f"axes: {g.axes}")
    print(f"voxel_config: {json.dumps(g.voxel_config.to_dict()) if g.voxel_config else None}")
    if g.meta:
        print(f"meta: {json.dumps(g.meta, sort_keys=True)}")
    d = g.data
    print(f"payload_bytes: {d.size * DTYPES[g.dtype_name].itemsize}")
    if g.dtype_name == "f32":
        finite = d[np.isfinite(d)]
        print(f"nan: {int(np.isnan(d).sum())}")
        if finite.size:
            print(f"min: {finite.min():.6g}  max: {finite.max():.6g}  mean: {finite.mean():.6g}")
    else:
        print(f"nonzero: {int(np.count_nonzero(d))} / {d.size}")
        if g.dtype_name == "u32":
            print(f"distinct_ids: {len(np.unique(d[d != 0]))}")
    return EXIT_OK


def build_parser():
    p = _Parser(prog="occgrid", description="Decoupled occupancy labels, refinement and metrics.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate a scene, its labels and corrupted predictions")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("gen-labels", help="generate labels from per-frame boxes")
    s.add_argument("--boxes", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_labels)

    s = sub.add_parser("refine", help="refine a forecast bundle")
    s.add_argument("--pred", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("evaluate", help="score refined predictions against labels")
    s.add_argument("--gt", required=True)
    s.add_argument("--pred", required=True)
    s.add_argument("--window", choices=("current", "future", "all"), default="all")
    s.add_argument("--format", choices=("bb", "fg"), default="fg")
    s.add_argument("--out", required=True)
    s.add_argument("--match-threshold", type=float, default=0.5)
    s.add_argument("--ciou-mode", choices=(CIOU_LITERAL, CIOU_UNION), default=CIOU_LITERAL)
    s.add_argument("--no-figures", action="store_true", help="skip the PNG figures")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("inspect", help="print a grid file header and summary")
    s.add_argument("file")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"occgrid: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (GridFormatError, KeyError, TypeError) as e:
        print(f"occgrid: format error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except ValueError as e:
        print(f"occgrid: invariant violation: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
