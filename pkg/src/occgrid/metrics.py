"""Occupancy forecasting metrics: windowed IoU, conditional IoU and video panoptic quality.

All sequences are indexed by forecast time, element ``t`` holding frame
``t = 0 .. n_future``.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .grid import Box3D, VoxelConfig
from .labelgen import LabeledSequence, rasterize_boxes_3d

log = logging.getLogger(__name__)

CIOU_LITERAL = "literal"
CIOU_UNION = "union"


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int
    fp_in_box: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn, self.fp_in_box) < 0:
            raise ValueError("confusion counts must be non-negative")
        if self.fp_in_box > self.fp:
            raise ValueError("fp_in_box cannot exceed fp")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class EvalWindow:
    t_start: int
    t_end: int

    def __post_init__(self):
        if self.t_start > self.t_end or self.t_start < 0:
            raise ValueError(f"invalid window [{self.t_start}, {self.t_end}]")

    @property
    def n_all(self) -> int:
        return self.t_end - self.t_start + 1

    @property
    def frames(self) -> range:
        return range(self.t_start, self.t_end + 1)

    @classmethod
    def named(cls, name: str, n_future: int) -> Optional["EvalWindow"]:
        """``current`` is t=0, ``future`` t=1..n_future, ``all`` t=0..n_future."""
        if name == "current":
            return cls(0, 0)
        if name == "future":
            return cls(1, n_future) if n_future >= 1 else None
        if name == "all":
            return cls(0, n_future)
        raise ValueError(f"unknown window {name!r}")


WINDOW_NAMES = ("current", "future", "all")


def worker_count() -> int:
    """Thread cap from ``OCCGRID_THREADS`` (0 or unset = one per CPU)."""
    try:
        n = int(os.environ.get("OCCGRID_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def _map_frames(fn, items):
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(n) as pool:
        return list(pool.map(fn, items))


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"grid shape mismatch: {a.shape} vs {b.shape}")


def confusion(gt: np.ndarray, pred: np.ndarray, boxes: Sequence[Box3D] = (),
              cfg: Optional[VoxelConfig] = None, box_mask: Optional[np.ndarray] = None) -> ConfusionCounts:
    """Voxel tallies; ``fp_in_box`` counts false positives whose centers lie in a box.

    Pass a precomputed ``box_mask`` to skip rasterizing ``boxes``.
    """
    gt = np.asarray(gt, dtype=bool)
    pred = np.asarray(pred, dtype=bool)
    _check_same_shape(gt, pred)
    tp = int(np.count_nonzero(gt & pred))
    n_gt = int(np.count_nonzero(gt))
    n_pred = int(np.count_nonzero(pred))
    fp = n_pred - tp
    fn = n_gt - tp
    fp_in_box = 0
    if box_mask is None and boxes:
        if cfg is None:
            raise ValueError("cfg is required to rasterize boxes")
        box_mask = rasterize_boxes_3d(boxes, cfg)
    if box_mask is not None:
        _check_same_shape(gt, box_mask)
        fp_in_box = int(np.count_nonzero(pred & ~gt & box_mask))
    return ConfusionCounts(tp, fp, fn, gt.size - tp - fp - fn, fp_in_box)


def frame_iou(c: ConfusionCounts) -> float:
    union = c.tp + c.fp + c.fn
    return 1.0 if union == 0 else c.tp / union


def frame_ciou(c: ConfusionCounts, mode: str = CIOU_LITERAL) -> Optional[float]:
    """Conditional IoU of one frame; None when the ratio is undefined."""
    num = c.tp + c.fp_in_box
    if mode == CIOU_LITERAL:
        den = c.tp + c.fn + (c.fp - c.fp_in_box)
    elif mode == CIOU_UNION:
        den = c.tp + c.fn + c.fp
    else:
        raise ValueError(f"unknown C-IoU mode {mode!r}")
    if den == 0:
        return 1.0 if num == 0 else None
    return num / den


def _check_window(seq, window: EvalWindow):
    if window.t_end >= len(seq):
        raise ValueError(f"window [{window.t_start}, {window.t_end}] exceeds sequence of {len(seq)} frames")


def iou_window(gt_seq: Sequence[np.ndarray], pred_seq: Sequence[np.ndarray], window: EvalWindow) -> float:
    _check_window(gt_seq, window)
    _check_window(pred_seq, window)
    return sum(frame_iou(confusion(gt_seq[t], pred_seq[t])) for t in window.frames) / window.n_all


@dataclass
class WindowScore:
    value: Optional[float]
    skipped: int = 0


def _mean_skipping(values) -> WindowScore:
    kept = [v for v in values if v is not None]
    skipped = len(values) - len(kept)
    if skipped:
        log.warning("C-IoU undefined on %d frame(s); skipped", skipped)
    return WindowScore(sum(kept) / len(kept) if kept else None, skipped)


def c_iou_window(gt_fg_seq: Sequence[np.ndarray], pred_seq: Sequence[np.ndarray],
                 boxes_per_frame: Sequence[Sequence[Box3D]], window: EvalWindow,
                 cfg: VoxelConfig, mode: str = CIOU_LITERAL) -> WindowScore:
    """Mean per-frame conditional IoU over ``window``.

    Frames where the ratio is undefined (nothing to score against but false
    positives inside boxes) are left out of the mean and counted in
    ``WindowScore.skipped``.
    """
    _check_window(gt_fg_seq, window)
    _check_window(pred_seq, window)
    vals = [frame_ciou(confusion(gt_fg_seq[t], pred_seq[t], boxes_per_frame[t], cfg), mode)
            for t in window.frames]
    return _mean_skipping(vals)


@dataclass
class FrameMatch:
    tp: int
    fp: int
    fn: int
    iou_sum: float

    @property
    def quality(self) -> float:
        den = self.tp + 0.5 * self.fp + 0.5 * self.fn
        return 1.0 if den == 0 else self.iou_sum / den


def _instance_overlaps(gt: np.ndarray, pred: np.ndarray):
    """Ids, sizes and pairwise intersections of two labelled volumes."""
    gt = np.asarray(gt).ravel()
    pred = np.asarray(pred).ravel()
    nz = (gt != 0) | (pred != 0)
    g, p = gt[nz], pred[nz]
    gids, ginv = np.unique(g, return_inverse=True)
    pids, pinv = np.unique(p, return_inverse=True)
    inter = np.bincount(ginv * len(pids) + pinv, minlength=len(gids) * len(pids)).reshape(len(gids), len(pids))
    gsize = inter.sum(axis=1)
    psize = inter.sum(axis=0)
    # Drop the background row/column.
    gk = gids != 0
    pk = pids != 0
    return gids[gk], pids[pk], gsize[gk], psize[pk], inter[np.ix_(gk, pk)]


def vpq(gt_inst_seq: Sequence[np.ndarray], pred_inst_seq: Sequence[np.ndarray], window: EvalWindow,
        match_threshold: float = 0.5, normalize: bool = True) -> float:
    """Video panoptic quality over ``window``.

    A prediction counts as a true positive in a frame when its IoU with a
    ground-truth instance exceeds ``match_threshold`` and the pairing agrees
    with every earlier pairing of either id.  With ``normalize=False`` the
    per-frame terms are summed instead of averaged.
    """
    if not 0 < match_threshold < 1:
        raise ValueError("match_threshold must be in (0, 1)")
    _check_window(gt_inst_seq, window)
    _check_window(pred_inst_seq, window)
    frames = vpq_frames(gt_inst_seq, pred_inst_seq, window, match_threshold)
    total = sum(f.quality for f in frames)
    return total / window.n_all if normalize else total


def vpq_frames(gt_inst_seq, pred_inst_seq, window: EvalWindow, match_threshold: float = 0.5) -> List[FrameMatch]:
    overlaps = _map_frames(lambda t: _instance_overlaps(gt_inst_seq[t], pred_inst_seq[t]), list(window.frames))
    gt_to_pred: Dict[int, int] = {}
    pred_to_gt: Dict[int, int] = {}
    out = []
    for gids, pids, gsize, psize, inter in overlaps:
        union = gsize[:, None] + psize[None, :] - inter
        iou = np.where(union > 0, inter / np.maximum(union, 1), 0.0)
        tp, iou_sum = 0, 0.0
        matched_g, matched_p = set(), set()
        # IoU above 0.5 pairs each id at most once, so greedy order does not matter there.
        for gi, pi in sorted(zip(*np.nonzero(iou > match_threshold)), key=lambda ij: -iou[ij]):
            if gi in matched_g or pi in matched_p:
                continue
            g, p = int(gids[gi]), int(pids[pi])
            if gt_to_pred.get(g, p) != p or pred_to_gt.get(p, g) != g:
                continue
            gt_to_pred[g] = p
            pred_to_gt[p] = g
            matched_g.add(gi)
            matched_p.add(pi)
            tp += 1
            iou_sum += float(iou[gi, pi])
        out.append(FrameMatch(tp, len(pids) - tp, len(gids) - tp, iou_sum))
    return out


def lift_instances(occ_3d: np.ndarray, inst_2d: np.ndarray) -> np.ndarray:
    """Label occupied voxels with the instance id of their BEV column."""
    return np.where(np.asarray(occ_3d, dtype=bool), np.asarray(inst_2d, dtype=np.uint32)[:, :, None], 0)


@dataclass
class MetricsReport:
    iou_c: Optional[float]
    iou_f: Optional[float]
    iou_tilde: Optional[float]
    ciou_c: Optional[float]
    ciou_f: Optional[float]
    ciou_tilde: Optional[float]
    vpq_bb: float
    vpq_fg: float
    format: str = "fg"
    ciou_mode: str = CIOU_LITERAL
    iou_bb: Dict[str, Optional[float]] = field(default_factory=dict)
    iou_fg: Dict[str, Optional[float]] = field(default_factory=dict)
    iou_2d: Dict[str, Optional[float]] = field(default_factory=dict)
    ciou_skipped: Dict[str, int] = field(default_factory=dict)
    windows: Dict[str, Optional[List[int]]] = field(default_factory=dict)
    per_frame: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_sequence(gt: LabeledSequence, pred_3d_seq: Sequence[np.ndarray],
                      pred_inst_seq: Sequence[np.ndarray], fmt: str = "fg",
                      pred_2d_seq: Optional[Sequence[np.ndarray]] = None,
                      match_threshold: float = 0.5, ciou_mode: str = CIOU_LITERAL) -> MetricsReport:
    """Score a forecast for t = 0 .. n_future against labelled ground truth.

    ``pred_inst_seq`` may hold BEV instance maps (lifted through
    ``pred_3d_seq``) or 3D instance volumes.  ``fmt`` picks which ground
    truth (``bb`` or ``fg``) fills the headline ``iou_*`` fields; both are
    always reported.
    """
    if fmt not in ("bb", "fg"):
        raise ValueError(f"format must be 'bb' or 'fg', got {fmt!r}")
    n = gt.n_future + 1
    if len(pred_3d_seq) != n or len(pred_inst_seq) != n:
        raise ValueError(f"expected {n} predicted frames")
    gtf = gt.future
    cfg = gt.cfg
    for t in range(n):
        _check_same_shape(gtf[t].occ_bb, np.asarray(pred_3d_seq[t]))
        if pred_2d_seq is not None:
            _check_same_shape(gtf[t].occ_bev, np.asarray(pred_2d_seq[t]))

    def frame_stats(t):
        f = gtf[t]
        pred = np.asarray(pred_3d_seq[t], dtype=bool)
        box_mask = rasterize_boxes_3d(gt.boxes_at(t), cfg)
        row = {"t": t}
        c_bb = confusion(f.occ_bb, pred)
        c_fg = confusion(f.occ_fg, pred, box_mask=box_mask)
        row["iou_bb"] = frame_iou(c_bb)
        row["iou_fg"] = frame_iou(c_fg)
        row["ciou"] = frame_ciou(c_fg, ciou_mode)
        row.update(tp=c_fg.tp, fp=c_fg.fp, fn=c_fg.fn, fp_in_box=c_fg.fp_in_box)
        if pred_2d_seq is not None:
            row["iou_2d"] = frame_iou(confusion(f.occ_bev, pred_2d_seq[t]))
        return row

    rows = _map_frames(frame_stats, list(range(n)))

    windows = {name: EvalWindow.named(name, gt.n_future) for name in WINDOW_NAMES}

    def window_mean(key):
        out = {}
        for name, w in windows.items():
            out[name] = None if w is None else sum(rows[t][key] for t in w.frames) / w.n_all
        return out

    iou_bb, iou_fg = window_mean("iou_bb"), window_mean("iou_fg")
    iou_2d = window_mean("iou_2d") if pred_2d_seq is not None else {}
    ciou, skipped = {}, {}
    for name, w in windows.items():
        if w is None:
            ciou[name], skipped[name] = None, 0
            continue
        s = _mean_skipping([rows[t]["ciou"] for t in w.frames])
        ciou[name], skipped[name] = s.value, s.skipped

    inst_pred = [np.asarray(p) for p in pred_inst_seq]
    if inst_pred[0].ndim == 2:
        inst_pred = [lift_instances(o, m) for o, m in zip(pred_3d_seq, inst_pred)]
    all_w = windows["all"]
    inst_bb = [lift_instances(f.occ_bb, f.instances) for f in gtf]
    inst_fg = [lift_instances(f.occ_fg, f.instances) for f in gtf]
    q_bb = vpq_frames(inst_bb, inst_pred, all_w, match_threshold)
    q_fg = vpq_frames(inst_fg, inst_pred, all_w, match_threshold)
    for t in range(n):
        rows[t]["vpq_bb"] = q_bb[t].quality
        rows[t]["vpq_fg"] = q_fg[t].quality

    head = iou_bb if fmt == "bb" else iou_fg
    return MetricsReport(
        iou_c=head["current"], iou_f=head["future"], iou_tilde=head["all"],
        ciou_c=ciou["current"], ciou_f=ciou["future"], ciou_tilde=ciou["all"],
        vpq_bb=sum(q.quality for q in q_bb) / n, vpq_fg=sum(q.quality for q in q_fg) / n,
        format=fmt, ciou_mode=ciou_mode,
        iou_bb=iou_bb, iou_fg=iou_fg, iou_2d=iou_2d, ciou_skipped=skipped,
        windows={k: None if w is None else [w.t_start, w.t_end] for k, w in windows.items()},
        per_frame=rows,
    )
