"""Segmentation quality metrics over binary masks.

All metrics live in [0, 1]. Dataset-level numbers are macro averages (mean
of per-image values) except weighted coverage, which weights each image's
IoU by its ground-truth area.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy import ndimage

__all__ = ["MetricReport", "f1_iou", "wcov", "boundf", "evaluate_masks",
           "report_csv", "report_table"]


@dataclass(frozen=True)
class MetricReport:
    f1: float
    miou: float
    wcov: float
    boundf: float

    def __post_init__(self):
        for name in ("f1", "miou", "wcov", "boundf"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"MetricReport: {name}={v} outside [0, 1]")


def _as_binary(mask: np.ndarray, what: str) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError(f"{what}: expected a 2D mask, got shape {m.shape}")
    if m.dtype == bool:
        return m
    vals = np.unique(m)
    if not np.isin(vals, (0, 1)).all():
        raise ValueError(f"{what}: mask is not binary (values {vals[:5]}...)")
    return m.astype(bool)


def f1_iou(pred: np.ndarray, gt: np.ndarray) -> Tuple[float, float]:
    """Pixelwise F1 and intersection-over-union; two empty masks score 1."""
    p = _as_binary(pred, "f1_iou")
    g = _as_binary(gt, "f1_iou")
    if p.shape != g.shape:
        raise ValueError(f"f1_iou: shape mismatch {p.shape} vs {g.shape}")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    if tp + fp + fn == 0:
        return 1.0, 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn), tp / (tp + fp + fn)


def wcov(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray]) -> float:
    """Ground-truth-area-weighted mean IoU over matched mask pairs."""
    if len(preds) != len(gts):
        raise ValueError(f"wcov: {len(preds)} predictions vs {len(gts)} ground truths")
    if not gts:
        raise ValueError("wcov: empty ground-truth set")
    total = 0.0
    weighted = 0.0
    for pred, gt in zip(preds, gts):
        g = _as_binary(gt, "wcov")
        area = float(np.count_nonzero(g))
        _, iou = f1_iou(pred, gt)
        total += area
        weighted += area * iou
    if total == 0.0:
        raise ValueError("wcov: total ground-truth area is zero")
    return weighted / total


_CROSS = ndimage.generate_binary_structure(2, 1)


def boundary(mask: np.ndarray) -> np.ndarray:
    """Boundary pixels: the mask minus its 1-pixel 4-connected erosion."""
    m = _as_binary(mask, "boundary")
    return m & ~ndimage.binary_erosion(m, structure=_CROSS, border_value=0)


def boundf(pred: np.ndarray, gt: np.ndarray,
           thresholds: Sequence[int] = (1, 2, 3, 4, 5)) -> float:
    """Boundary F1 averaged over pixel-distance thresholds.

    For each threshold d, a boundary pixel counts as matched when the
    nearest boundary pixel of the other mask lies within Euclidean
    distance d. Both boundaries empty scores 1; exactly one empty scores 0.
    """
    pb = boundary(pred)
    gb = boundary(gt)
    if pb.shape != gb.shape:
        raise ValueError(f"boundf: shape mismatch {pb.shape} vs {gb.shape}")
    np_, ng = int(pb.sum()), int(gb.sum())
    if np_ == 0 and ng == 0:
        return 1.0
    if np_ == 0 or ng == 0:
        return 0.0
    dist_to_g = ndimage.distance_transform_edt(~gb)
    dist_to_p = ndimage.distance_transform_edt(~pb)
    pred_dists = dist_to_g[pb]
    gt_dists = dist_to_p[gb]
    score = 0.0
    for d in thresholds:
        precision = float((pred_dists <= d).mean())
        recall = float((gt_dists <= d).mean())
        if precision + recall > 0.0:
            score += 2.0 * precision * recall / (precision + recall)
    return score / len(thresholds)


def evaluate_masks(preds: Sequence[np.ndarray],
                   gts: Sequence[np.ndarray]) -> MetricReport:
    """Macro-averaged report over matched mask lists (wcov is area-weighted)."""
    if len(preds) != len(gts):
        raise ValueError(f"evaluate_masks: {len(preds)} predictions vs {len(gts)} ground truths")
    if not preds:
        raise ValueError("evaluate_masks: empty mask lists")
    f1s, ious, bfs = [], [], []
    for pred, gt in zip(preds, gts):
        f1, iou = f1_iou(pred, gt)
        f1s.append(f1)
        ious.append(iou)
        bfs.append(boundf(pred, gt))
    return MetricReport(f1=float(np.mean(f1s)), miou=float(np.mean(ious)),
                        wcov=wcov(preds, gts), boundf=float(np.mean(bfs)))


def report_csv(report: MetricReport) -> str:
    return ("f1,miou,wcov,boundf\n"
            f"{report.f1:.6f},{report.miou:.6f},{report.wcov:.6f},{report.boundf:.6f}\n")


def report_table(report: MetricReport) -> str:
    buf = io.StringIO()
    buf.write(f"{'metric':<8}{'value':>10}\n")
    for name in ("f1", "miou", "wcov", "boundf"):
        buf.write(f"{name:<8}{getattr(report, name):>10.4f}\n")
    return buf.getvalue()
