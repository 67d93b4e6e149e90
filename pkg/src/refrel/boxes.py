"""Axis-aligned box primitives: IoU, spatial features, offset codec, NMS.

Boxes are ``(x_min, y_min, x_max, y_max)`` in continuous pixel coordinates.
Integer box ``(x0, y0, x1, y1)`` covers pixel columns ``x0 .. x1 - 1``, so its
area is ``(x1 - x0) * (y1 - y0)`` with no +1 term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidRegionError, ShapeMismatchError


@dataclass(frozen=True)
class Box:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InvalidRegionError(f"degenerate box {tuple(self)}")

    def __iter__(self):
        return iter((self.x_min, self.y_min, self.x_max, self.y_max))

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    @property
    def area(self):
        return self.width * self.height

    @property
    def center(self):
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def to_array(self):
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max], dtype=np.float64)

    def to_list(self):
        return [float(v) for v in self]

    @classmethod
    def from_array(cls, a):
        x0, y0, x1, y1 = (float(v) for v in a)
        return cls(x0, y0, x1, y1)

    def clip(self, image_w, image_h):
        return Box(
            min(max(self.x_min, 0.0), image_w),
            min(max(self.y_min, 0.0), image_h),
            min(max(self.x_max, 0.0), image_w),
            min(max(self.y_max, 0.0), image_h),
        )


def as_boxes(boxes):
    """Stack a Box, a sequence of Boxes, or an array into an ``(n, 4)`` float array."""
    if isinstance(boxes, Box):
        return boxes.to_array()[None, :]
    if isinstance(boxes, np.ndarray):
        arr = boxes.astype(np.float64, copy=False)
    else:
        boxes = list(boxes)
        if not boxes:
            return np.zeros((0, 4))
        arr = np.array([list(b) for b in boxes], dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[-1] != 4:
        raise ShapeMismatchError(f"boxes must have 4 coordinates, got shape {arr.shape}")
    return arr


def box_iou(a, b):
    """Intersection over union of two boxes; 0 when they do not overlap."""
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return float(inter / union)


def pairwise_iou(a, b):
    """IoU matrix of shape ``(len(a), len(b))``."""
    a = as_boxes(a)
    b = as_boxes(b)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union


def spatial_feature_of(box, image_w, image_h):
    """``[x_min/w, y_min/h, x_max/w, y_max/h, box_area/image_area]``."""
    x0, y0, x1, y1 = box
    return np.array(
        [x0 / image_w, y0 / image_h, x1 / image_w, y1 / image_h,
         (x1 - x0) * (y1 - y0) / (image_w * image_h)],
        dtype=np.float64,
    )


def spatial_features(boxes, image_w, image_h):
    b = as_boxes(boxes)
    area = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1]) / (image_w * image_h)
    scale = np.array([image_w, image_h, image_w, image_h], dtype=np.float64)
    return np.concatenate([b / scale, area[:, None]], axis=1)


def _center_size(b):
    w = b[..., 2] - b[..., 0]
    h = b[..., 3] - b[..., 1]
    return b[..., 0] + 0.5 * w, b[..., 1] + 0.5 * h, w, h


def encode_offsets(anchor, target):
    """Regression target ``[dx/w_a, dy/h_a, log(w/w_a), log(h/h_a)]`` (center/size form)."""
    a = np.asarray(list(anchor) if isinstance(anchor, Box) else anchor, dtype=np.float64)
    t = np.asarray(list(target) if isinstance(target, Box) else target, dtype=np.float64)
    xa, ya, wa, ha = _center_size(a)
    x, y, w, h = _center_size(t)
    if np.any(wa <= 0) or np.any(ha <= 0) or np.any(w <= 0) or np.any(h <= 0):
        raise InvalidRegionError("boxes must have positive width and height")
    return np.stack([(x - xa) / wa, (y - ya) / ha, np.log(w / wa), np.log(h / ha)], axis=-1)


def decode_offsets(anchor, t, image_size=None):
    """Inverse of :func:`encode_offsets`; clipped to ``image_size=(w, h)`` if given.

    Accepts a single anchor/offset pair or stacked ``(n, 4)`` arrays and
    returns the same layout as a float array.
    """
    a = np.asarray(list(anchor) if isinstance(anchor, Box) else anchor, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    xa, ya, wa, ha = _center_size(a)
    x = t[..., 0] * wa + xa
    y = t[..., 1] * ha + ya
    w = np.exp(t[..., 2]) * wa
    h = np.exp(t[..., 3]) * ha
    out = np.stack([x - 0.5 * w, y - 0.5 * h, x + 0.5 * w, y + 0.5 * h], axis=-1)
    if image_size is not None:
        out = clip_boxes(out, *image_size)
    return out


def clip_boxes(boxes, image_w, image_h, min_size=1.0):
    """Clip to the image and keep at least ``min_size`` pixels per side."""
    b = np.array(boxes, dtype=np.float64, copy=True)
    b[..., 0::2] = np.clip(b[..., 0::2], 0.0, image_w)
    b[..., 1::2] = np.clip(b[..., 1::2], 0.0, image_h)
    for lo, hi, lim in ((0, 2, image_w), (1, 3, image_h)):
        short = b[..., hi] - b[..., lo] < min_size
        if np.any(short):
            mid = 0.5 * (b[..., lo] + b[..., hi])
            start = np.clip(mid - 0.5 * min_size, 0.0, lim - min_size)
            b[..., lo] = np.where(short, start, b[..., lo])
            b[..., hi] = np.where(short, start + min_size, b[..., hi])
    return b


def nms(boxes, scores, threshold=0.5):
    """Greedy non-maximum suppression.

    Returns kept indices in descending-score order; equal scores are visited
    in ascending index order. A box is dropped when its IoU with an already
    kept box exceeds ``threshold``.
    """
    boxes = as_boxes(boxes)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    iou = pairwise_iou(boxes, boxes)
    suppressed = np.zeros(len(boxes), dtype=bool)
    keep = []
    for i in order:
        if suppressed[i]:
            continue
        keep.append(int(i))
        suppressed |= iou[i] > threshold
    return keep


def box_center_distance(a, b):
    (ax, ay), (bx, by) = Box.from_array(list(a)).center, Box.from_array(list(b)).center
    return math.hypot(ax - bx, ay - by)
