"""Brute-force reference implementations used as test oracles."""
import math

import numpy as np


def ade_loop(pred, gt, visible):
    total, count = 0.0, 0
    for t in range(len(gt)):
        for s in range(2):
            if visible[t][s]:
                total += math.hypot(pred[t][s][0] - gt[t][s][0], pred[t][s][1] - gt[t][s][1])
                count += 1
    return total / count


def fde_loop(pred, gt, visible):
    t = len(gt) - 1
    d = [math.hypot(pred[t][s][0] - gt[t][s][0], pred[t][s][1] - gt[t][s][1]) for s in range(2) if visible[t][s]]
    return sum(d) / len(d)


def sim_loop(p, q):
    return sum(min(a, b) for a, b in zip(np.ravel(p), np.ravel(q)))


def auc_judd_loop(p, cells):
    """Exhaustive threshold sweep over the map values at the ground-truth cells."""
    h, w = p.shape
    gt = set(cells)
    others = [(r, c) for r in range(h) for c in range(w) if (r, c) not in gt]
    thresholds = sorted({p[r][c] for r, c in gt}, reverse=True)
    xs, ys = [0.0], [0.0]
    for th in thresholds:
        tp = sum(1 for r, c in gt if p[r][c] >= th) / len(gt)
        fp = sum(1 for r, c in others if p[r][c] >= th) / len(others) if others else 0.0
        xs.append(fp)
        ys.append(tp)
    xs.append(1.0)
    ys.append(1.0)
    return sum((xs[i + 1] - xs[i]) * (ys[i + 1] + ys[i]) / 2 for i in range(len(xs) - 1))


def nss_loop(p, cells):
    vals = [v for v in np.ravel(p)]
    n = len(vals)
    mean = sum(vals) / n
    std = math.sqrt(sum((v - mean) ** 2 for v in vals) / n)
    if std < 1e-12:
        return 0.0
    gt = set(cells)
    return sum((p[r][c] - mean) / std for r, c in gt) / len(gt)


def gaussian_map_loop(points, sigma, grid):
    h, w = grid
    out = np.zeros(grid)
    for r in range(h):
        for c in range(w):
            x, y = (c + 0.5) / w, (r + 0.5) / h
            out[r, c] = sum(math.exp(-((x - px) ** 2 + (y - py) ** 2) / (2 * sigma**2)) for px, py in points)
    return out / out.sum()


def pool_loop(raw, target):
    th, tw = target
    h, w = raw.shape
    bh, bw = -(-h // th), -(-w // tw)
    out = np.zeros(target)
    for r in range(th):
        for c in range(tw):
            vals = [raw[min(r * bh + i, h - 1), min(c * bw + j, w - 1)] for i in range(bh) for j in range(bw)]
            out[r, c] = sum(vals) / len(vals)
    return out / out.sum()
