"""Reference implementations written independently of the package code."""

import math
from itertools import product

import numpy as np


def pixel_iou(a, b):
    """IoU of two integer boxes by counting unit pixels on a canvas."""
    size = int(max(a[2], a[3], b[2], b[3])) + 1
    ma = np.zeros((size, size), dtype=bool)
    mb = np.zeros((size, size), dtype=bool)
    ma[int(a[1]):int(a[3]), int(a[0]):int(a[2])] = True
    mb[int(b[1]):int(b[3]), int(b[0]):int(b[2])] = True
    union = np.logical_or(ma, mb).sum()
    return np.logical_and(ma, mb).sum() / union if union else 0.0


def brute_recall(predictions, gts, k, thr):
    hits = 0
    for preds, gt in zip(predictions, gts):
        ok = False
        for p in list(preds)[:k]:
            for g in gt:
                ix = max(0.0, min(p[2], g[2]) - max(p[0], g[0]))
                iy = max(0.0, min(p[3], g[3]) - max(p[1], g[1]))
                inter = ix * iy
                union = (p[2] - p[0]) * (p[3] - p[1]) + (g[2] - g[0]) * (g[3] - g[1]) - inter
                if inter / union > thr:
                    ok = True
        hits += ok
    return hits / len(predictions) if predictions else 0.0


def cell_mask(box, w, h, L):
    """Cells whose square ``[c, c+1) x [r, r+1)`` in grid units meets the scaled box interior."""
    m = np.zeros((L, L), dtype=np.uint8)
    x0, y0, x1, y1 = box[0] * L / w, box[1] * L / h, box[2] * L / w, box[3] * L / h
    for r, c in product(range(L), range(L)):
        if c < x1 and c + 1 > x0 and r < y1 and r + 1 > y0:
            m[r, c] = 1
    return m


def product_score(c_s, c_o, p, tau):
    return c_s * c_o * p if p >= tau else c_s * c_o


def best_pair(cs, co, P, tau):
    """Brute-force argmax with ties broken by (subject index, object index)."""
    best = None
    for i, j in product(range(len(cs)), range(len(co))):
        s = product_score(cs[i], co[j], P[i, j], tau)
        if best is None or s > best[0]:
            best = (s, i, j)
    return best


def relation_rules(a, b, image_w, image_h):
    """Geometric predicates re-derived from their definitions, keyed by name."""
    acx, acy = (a[0] + a[2]) / 2, (a[1] + a[3]) / 2
    bcx, bcy = (b[0] + b[2]) / 2, (b[1] + b[3]) / 2
    dist = math.hypot(acx - bcx, acy - bcy)
    diag = math.hypot(image_w, image_h)
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return {
        "left_of": acx < bcx - 10,
        "above": acy < bcy - 10,
        "inside": a[0] >= b[0] and a[1] >= b[1] and a[2] <= b[2] and a[3] <= b[3],
        "near": dist < 0.25 * diag,
        "larger_than": area_a > 1.5 * area_b,
        "overlaps": min(a[2], b[2]) > max(a[0], b[0]) and min(a[3], b[3]) > max(a[1], b[1]),
        "right_of": acx > bcx + 10,
        "below": acy > bcy + 10,
        "smaller_than": 1.5 * area_a < area_b,
        "far_from": dist > 0.5 * diag,
    }


def central_difference(f, x, h=1e-5):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g
