"""Segmentation metrics: confusion matrices, IoU and pseudo-label quality."""

from __future__ import annotations

import numpy as np

from .tensor_io import UNLABELED


def _pair(gt, pred):
    g = np.asarray(gt)
    p = np.asarray(pred)
    if g.shape != p.shape:
        raise ValueError(f"label maps differ in size: {g.shape} vs {p.shape}")
    return g, p


def confusion(gt, pred, num_classes=20):
    """(N+1) x (N+1) counts, rows ground truth, columns prediction.

    Pixels whose ground truth is 255 are skipped. Predictions must be total.
    """
    g, p = _pair(gt, pred)
    if np.any(p == UNLABELED):
        raise ValueError("predictions contain unlabeled (255) pixels")
    k = num_classes + 1
    mask = g != UNLABELED
    gv = g[mask].astype(np.int64)
    pv = p[mask].astype(np.int64)
    if gv.size and (gv.max() >= k or pv.max() >= k or gv.min() < 0 or pv.min() < 0):
        raise ValueError(f"labels must lie in 0..{num_classes}")
    return np.bincount(gv * k + pv, minlength=k * k).reshape(k, k)


def miou(cm):
    """Mean IoU and the per-class IoUs (NaN where a class is absent from both maps)."""
    m = np.asarray(cm, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or np.any(m < 0):
        raise ValueError("confusion matrix must be square and nonnegative")
    tp = np.diag(m)
    denom = m.sum(axis=0) + m.sum(axis=1) - tp
    ious = np.full(len(tp), np.nan)
    ok = denom > 0
    if not np.any(ok):
        raise ValueError("no class appears in either ground truth or prediction")
    ious[ok] = tp[ok] / denom[ok]
    return float(ious[ok].mean()), ious


def pseudo_label_report(pseudo, gt):
    """Coverage and precision of a partial label map against ground truth.

    ``precision`` is None when no labeled pixel has a known ground truth.
    """
    p, g = _pair(pseudo, gt)
    labeled = p != UNLABELED
    judged = labeled & (g != UNLABELED)
    correct = judged & (p == g)
    n_judged = int(judged.sum())
    per_class = {}
    for c in np.unique(p[labeled]).tolist():
        sel = p == c
        n_sel = int((sel & (g != UNLABELED)).sum())
        per_class[int(c)] = {
            "labeled": int(sel.sum()),
            "ratio": float(sel.sum() / p.size),
            "precision": float((sel & correct).sum() / n_sel) if n_sel else None,
        }
    return {
        "pixels": int(p.size),
        "labeled": int(labeled.sum()),
        "labeled_ratio": float(labeled.sum() / p.size),
        "precision": float(correct.sum() / n_judged) if n_judged else None,
        "per_class": per_class,
    }


def format_iou_table(ious, mean, names=None):
    lines = [f"{'class':>8}  {'IoU':>11}"]
    for c, v in enumerate(ious):
        label = names[c] if names else str(c)
        cell = "-" if np.isnan(v) else f"{v:.9g}"
        lines.append(f"{label:>8}  {cell:>11}")
    lines.append(f"{'mIoU':>8}  {mean:>11.9g}")
    return "\n".join(lines)
