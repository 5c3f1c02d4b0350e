"""Segmentation evaluation metrics: Dice overlap and Hausdorff distance.

Both operate on integer class masks.  Per the usual segmentation protocol the
per-class scores cover foreground classes only (class 0 is background) unless
``include_background`` is set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def dsc(pred: np.ndarray, gt: np.ndarray, class_id: int) -> float:
    """2|P&G| / (|P|+|G|); 1.0 when both masks are empty (convention)."""
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    p = pred == class_id
    g = gt == class_id
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / denom


def _directed_min_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """For each point of a, the Euclidean distance to the nearest point of b."""
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1)).min(axis=1)


def hausdorff(pred: np.ndarray, gt: np.ndarray, class_id: int,
              percentile: float | None = None) -> float | None:
    """Symmetric Hausdorff distance between foreground pixel sets.

    Exact brute force over pixel coordinates.  Returns None when either mask
    is empty for the class.  ``percentile`` (e.g. 95) replaces the max of
    each directed distance set with that percentile (HD95 variant).
    """
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    p = np.argwhere(pred == class_id).astype(np.float64)
    g = np.argwhere(gt == class_id).astype(np.float64)
    if len(p) == 0 or len(g) == 0:
        return None
    d_pg = _directed_min_dists(p, g)
    d_gp = _directed_min_dists(g, p)
    if percentile is None:
        return float(max(d_pg.max(), d_gp.max()))
    return float(max(np.percentile(d_pg, percentile),
                     np.percentile(d_gp, percentile)))


@dataclass
class MetricReport:
    class_ids: list[int]
    per_class_dsc: list[float]
    mean_dsc: float
    per_class_hd: list[float | None]
    mean_hd: float | None

    def csv_cells(self) -> list[str]:
        cells = [f"{self.mean_dsc:.6f}"]
        cells += [f"{d:.6f}" for d in self.per_class_dsc]
        cells.append("" if self.mean_hd is None else f"{self.mean_hd:.6f}")
        return cells


def evaluate_masks(preds: list[np.ndarray], gts: list[np.ndarray],
                   num_classes: int, include_background: bool = False,
                   hd_percentile: float | None = None) -> MetricReport:
    """Average per-class DSC/HD over paired prediction and truth masks.

    HD for a class averages over samples where both masks are non-empty; if
    no sample defines it the per-class entry (and possibly the mean) is None.
    """
    first = 0 if include_background else 1
    class_ids = list(range(first, num_classes))
    dsc_acc: list[list[float]] = [[] for _ in class_ids]
    hd_acc: list[list[float]] = [[] for _ in class_ids]
    for pred, gt in zip(preds, gts):
        for idx, cid in enumerate(class_ids):
            dsc_acc[idx].append(dsc(pred, gt, cid))
            hd = hausdorff(pred, gt, cid, percentile=hd_percentile)
            if hd is not None:
                hd_acc[idx].append(hd)
    per_dsc = [float(np.mean(v)) for v in dsc_acc]
    per_hd = [float(np.mean(v)) if v else None for v in hd_acc]
    defined = [h for h in per_hd if h is not None]
    return MetricReport(
        class_ids=class_ids,
        per_class_dsc=per_dsc,
        mean_dsc=float(np.mean(per_dsc)) if per_dsc else 1.0,
        per_class_hd=per_hd,
        mean_hd=float(np.mean(defined)) if defined else None,
    )
