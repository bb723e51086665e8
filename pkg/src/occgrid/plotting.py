"""Figures written next to evaluation reports."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402

_DPI = 120
# Strip the software/date tags so reruns produce identical files.
_PNG_META = {"Software": None}

# free, TP, FP, FN
_CONFUSION_CMAP = ListedColormap(["#ffffff", "#2ca02c", "#d62728", "#1f77b4"])


def _save(fig, path):
    fig.savefig(path, dpi=_DPI, bbox_inches="tight", metadata=_PNG_META)
    plt.close(fig)


def plot_per_frame(rows, path, title=None):
    """Per-frame IoU / C-IoU / VPQ curves over forecast time."""
    ts = [r["t"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for key, label in (("iou_bb", "IoU (bb)"), ("iou_fg", "IoU (fg)"), ("ciou", "C-IoU"),
                       ("vpq_fg", "VPQ (fg)"), ("iou_2d", "IoU (2D)")):
        if key in rows[0]:
            vals = [np.nan if r[key] is None else r[key] for r in rows]
            ax.plot(ts, vals, marker="o", label=label)
    ax.set_xlabel("forecast frame t")
    ax.set_ylabel("score")
    ax.set_ylim(-0.02, max(1.02, ax.get_ylim()[1]))
    ax.set_xticks(ts)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8, frameon=False)
    if title:
        ax.set_title(title)
    _save(fig, path)


def confusion_image(gt_bev, pred_bev):
    gt_bev = np.asarray(gt_bev, dtype=bool)
    pred_bev = np.asarray(pred_bev, dtype=bool)
    img = np.zeros(gt_bev.shape, dtype=np.uint8)
    img[gt_bev & pred_bev] = 1
    img[~gt_bev & pred_bev] = 2
    img[gt_bev & ~pred_bev] = 3
    return img


def plot_bev_confusion(gt_bev, pred_bev, path, title=None):
    """BEV map colouring true positives, false positives and misses."""
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(confusion_image(gt_bev, pred_bev), cmap=_CONFUSION_CMAP, vmin=0, vmax=3,
              interpolation="nearest", origin="lower")
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title, fontsize=9)
    _save(fig, path)


def write_report_figures(report, gt_bev_seq, pred_bev_seq, outdir):
    os.makedirs(outdir, exist_ok=True)
    paths = [os.path.join(outdir, "per_frame.png")]
    plot_per_frame(report.per_frame, paths[0], title=f"format={report.format}")
    for t, (g, p) in enumerate(zip(gt_bev_seq, pred_bev_seq)):
        path = os.path.join(outdir, f"bev_t{t}.png")
        plot_bev_confusion(g, p, path, title=f"t={t}  green TP / red FP / blue FN")
        paths.append(path)
    return paths
