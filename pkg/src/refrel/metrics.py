"""Heatmap mean IoU and box recall@k for role-separate localization."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .boxes import as_boxes, box_iou, pairwise_iou
from .errors import ShapeMismatchError

SCHEMA_VERSION = 1

__all__ = [
    "MetricsConfig",
    "box_iou",
    "box_to_mask",
    "heatmap_iou",
    "mean_iou_report",
    "recall_at_k",
    "role_report",
]


@dataclass(frozen=True)
class MetricsConfig:
    heatmap_size: int = 14
    recall_iou_threshold: float = 0.5
    recall_ranks: tuple = (1, 5, 50)

    def __post_init__(self):
        if self.heatmap_size < 1:
            raise ValueError("heatmap_size must be >= 1")
        if not 0.0 < self.recall_iou_threshold < 1.0:
            raise ValueError("recall_iou_threshold must lie in (0, 1)")


def box_to_mask(box, image_w, image_h, L=14):
    """Binary ``L x L`` mask of the cells a box touches after rescaling to the grid.

    Columns ``floor(x_min L / w) .. ceil(x_max L / w) - 1`` (rows likewise)
    are set, so any cell the box overlaps is included.
    """
    x0, y0, x1, y1 = box
    c0 = max(0, math.floor(x0 * L / image_w))
    c1 = min(L, math.ceil(x1 * L / image_w))
    r0 = max(0, math.floor(y0 * L / image_h))
    r1 = min(L, math.ceil(y1 * L / image_h))
    mask = np.zeros((L, L), dtype=np.uint8)
    mask[r0:r1, c0:c1] = 1
    return mask


def heatmap_iou(pred, gt):
    """Cellwise IoU of two binary masks; two empty masks count as a perfect match."""
    pred = np.asarray(pred) > 0
    gt = np.asarray(gt) > 0
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def recall_at_k(predictions, gts, k, iou_thr=0.5):
    """Share of queries with a top-``k`` box whose IoU with some gt box exceeds ``iou_thr``.

    ``predictions[q]`` is the ranked box list of query ``q``; ``gts[q]`` its
    ground-truth boxes. The comparison is strict.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(predictions) != len(gts):
        raise ShapeMismatchError("predictions and ground truth cover different query counts")
    if not predictions:
        return 0.0
    hits = 0
    for pred, gt in zip(predictions, gts):
        top = as_boxes(list(pred)[:k])
        if len(top) and (pairwise_iou(top, as_boxes(gt)) > iou_thr).any():
            hits += 1
    return hits / len(predictions)


def gt_union_mask(gt_boxes, image_w, image_h, L=14):
    mask = np.zeros((L, L), dtype=np.uint8)
    for b in gt_boxes:
        mask |= box_to_mask(b, image_w, image_h, L)
    return mask


def mean_iou_report(predictions, gts, image_dims, L=14):
    """Mean heatmap IoU of each query's top-1 box against the union of its gt boxes.

    ``image_dims`` is a single ``(w, h)`` or one per query.
    """
    if not predictions:
        return 0.0
    if len(image_dims) == 2 and np.isscalar(image_dims[0]):
        image_dims = [image_dims] * len(predictions)
    vals = []
    for pred, gt, (w, h) in zip(predictions, gts, image_dims):
        top = list(pred)[0]
        vals.append(heatmap_iou(box_to_mask(top, w, h, L), gt_union_mask(gt, w, h, L)))
    return float(np.mean(vals))


def role_report(predictions, gts, image_dims, config=MetricsConfig()):
    """``mean_iou``, ``r@k`` for every configured rank and ``query_count`` for one role."""
    out = {"mean_iou": mean_iou_report(predictions, gts, image_dims, config.heatmap_size)}
    for k in config.recall_ranks:
        out[f"r@{k}"] = recall_at_k(predictions, gts, k, config.recall_iou_threshold)
    out["query_count"] = len(predictions)
    return out
