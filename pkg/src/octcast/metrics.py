"""Trajectory and hotspot metrics: ADE, FDE, min-of-K, SIM, AUC-Judd, NSS."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import AllZero, EmptyGroundTruth, NoVisibleGroundTruth, ShapeMismatch
from .geometry import HandTrajectory

STD_EPS = 1e-12


def _check_pair(pred: HandTrajectory, gt: HandTrajectory):
    if pred.horizon != gt.horizon:
        raise ShapeMismatch(f"horizons differ: {pred.horizon} vs {gt.horizon}")


def ade(pred: HandTrajectory, gt: HandTrajectory) -> float:
    """Mean L2 distance over the (step, hand) pairs visible in ``gt``."""
    _check_pair(pred, gt)
    if not gt.visible.any():
        raise NoVisibleGroundTruth("ground truth has no visible hand")
    d = np.linalg.norm(pred.points - gt.points, axis=-1)
    return float(d[gt.visible].mean())


def fde(pred: HandTrajectory, gt: HandTrajectory) -> float:
    """Mean L2 distance over the hands visible in ``gt`` at the last step."""
    _check_pair(pred, gt)
    vis = gt.visible[-1]
    if not vis.any():
        raise NoVisibleGroundTruth("no visible hand at the final step")
    d = np.linalg.norm(pred.points[-1] - gt.points[-1], axis=-1)
    return float(d[vis].mean())


def min_of_k(samples: Sequence[HandTrajectory], gt: HandTrajectory, metric: Callable = ade) -> float:
    if len(samples) == 0:
        raise ValueError("need at least one sample")
    return min(metric(s, gt) for s in samples)


def normalize_heatmap(raw, target: tuple[int, int]) -> np.ndarray:
    """Block-mean downsample to ``target`` and rescale to sum 1.

    When the input size is not a multiple of the target, the map is padded by
    edge replication up to the next multiple before pooling.
    """
    raw = np.asarray(raw, float)
    if raw.ndim != 2:
        raise ShapeMismatch("heatmap must be 2-D")
    if (raw < 0).any():
        raise ValueError("heatmap must be nonnegative")
    th, tw = target
    bh, bw = -(-raw.shape[0] // th), -(-raw.shape[1] // tw)
    pad = ((0, bh * th - raw.shape[0]), (0, bw * tw - raw.shape[1]))
    if any(p[1] for p in pad):
        raw = np.pad(raw, pad, mode="edge")
    pooled = raw.reshape(th, bh, tw, bw).mean(axis=(1, 3))
    total = pooled.sum()
    if total <= 0:
        raise AllZero("heatmap is all zero")
    return pooled / total


def sim(p, q) -> float:
    p, q = np.asarray(p, float), np.asarray(q, float)
    if p.shape != q.shape:
        raise ShapeMismatch(f"heatmap shapes differ: {p.shape} vs {q.shape}")
    return float(np.minimum(p, q).sum())


def points_to_cells(points, grid: tuple[int, int]) -> list[tuple[int, int]]:
    """Normalized (x, y) points -> (row, col) cells of an (H, W) grid."""
    h, w = grid
    pts = np.asarray(points, float).reshape(-1, 2)
    cols = np.clip(np.floor(pts[:, 0] * w).astype(int), 0, w - 1)
    rows = np.clip(np.floor(pts[:, 1] * h).astype(int), 0, h - 1)
    return list(zip(rows.tolist(), cols.tolist()))


def _gt_mask(shape, cells) -> np.ndarray:
    if len(cells) == 0:
        raise EmptyGroundTruth("no ground-truth locations")
    mask = np.zeros(shape, bool)
    for r, c in cells:
        if not (0 <= r < shape[0] and 0 <= c < shape[1]):
            raise ValueError(f"cell {(r, c)} outside grid {shape}")
        mask[r, c] = True
    return mask


def auc_judd(p, gt_cells) -> float:
    """AUC-Judd: thresholds are the map values at the ground-truth cells.

    For each threshold the true-positive rate is the fraction of ground-truth
    cells at or above it and the false-positive rate the fraction of other
    cells at or above it; the curve is closed with (0, 0) and (1, 1) and
    integrated with the trapezoid rule. Repeated cells count once.
    """
    p = np.asarray(p, float)
    mask = _gt_mask(p.shape, gt_cells)
    s = p.ravel()
    fix = mask.ravel()
    n_fix = fix.sum()
    n_other = s.size - n_fix
    thresholds = np.unique(s[fix])[::-1]
    gt_vals = np.sort(s[fix])
    other_vals = np.sort(s[~fix])
    tp = 1.0 - np.searchsorted(gt_vals, thresholds, side="left") / n_fix
    if n_other:
        fp = 1.0 - np.searchsorted(other_vals, thresholds, side="left") / n_other
    else:
        fp = np.zeros_like(tp)
    tp = np.concatenate([[0.0], tp, [1.0]])
    fp = np.concatenate([[0.0], fp, [1.0]])
    return float(np.trapezoid(tp, fp))


def nss(p, gt_cells) -> float:
    """Mean z-score of the map at the ground-truth cells (population std).
    A constant map scores 0. Repeated cells count once."""
    p = np.asarray(p, float)
    mask = _gt_mask(p.shape, gt_cells)
    std = p.std()
    if std < STD_EPS:
        return 0.0
    z = (p - p.mean()) / std
    return float(z[mask].mean())
