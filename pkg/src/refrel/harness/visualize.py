"""Pixmap renderings of predictions: ground truth in blue, top-1 boxes in green."""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path

import numpy as np

from ..scene_synth import PREDICATE_NAMES
from .dataset_io import write_ppm

log = logging.getLogger("refrel")

BLUE = (0, 0, 255)
GREEN = (0, 255, 0)


def outline_pixels(box, width, height, scale=1):
    """``(rows, cols)`` of the one-pixel outline of ``box`` on a ``scale``-times enlarged canvas."""
    W, H = width * scale, height * scale
    x0 = min(max(int(math.floor(box[0] * scale)), 0), W - 1)
    y0 = min(max(int(math.floor(box[1] * scale)), 0), H - 1)
    x1 = min(max(int(math.ceil(box[2] * scale)) - 1, x0), W - 1)
    y1 = min(max(int(math.ceil(box[3] * scale)) - 1, y0), H - 1)
    cols = np.arange(x0, x1 + 1)
    rows = np.arange(y0, y1 + 1)
    r = np.concatenate([np.full_like(cols, y0), np.full_like(cols, y1), rows, rows])
    c = np.concatenate([cols, cols, np.full_like(rows, x0), np.full_like(rows, x1)])
    return r, c


def draw_boxes(image, boxes, color, scale=1):
    h, w = image.shape[0] // scale, image.shape[1] // scale
    for b in boxes:
        r, c = outline_pixels(b, w, h, scale)
        image[r, c] = color
    return image


def render_prediction(raster, gt_boxes, pred_boxes, scale=4):
    """Upscaled uint8 canvas with gt outlines first and predictions drawn over them."""
    img = np.round(np.asarray(raster) * 255.0).astype(np.uint8)
    img = np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)
    draw_boxes(img, gt_boxes, BLUE, scale)
    draw_boxes(img, pred_boxes, GREEN, scale)
    return img


def caption(record, predicate_names=PREDICATE_NAMES):
    s, p, o = record["triple"]
    name = predicate_names[p] if p < len(predicate_names) else f"pred{p}"
    return f"query {record['query_id']}: <cat{s}, {name}, cat{o}> mode={record['mode']}"


def cmd_visualize(dataset, predictions_path, out_dir, n, scale=4):
    """Render up to ``n`` predictions (both roles side by side); returns the written paths."""
    records = [json.loads(line) for line in Path(predictions_path).read_text().splitlines() if line]
    if n < 0:
        raise ValueError("n must be >= 0")
    if n > len(records):
        log.warning("requested %d renderings but only %d predictions exist; rendering all", n, len(records))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    queries = {q.query_id: q for q in dataset.queries}
    written = []
    for rec in records[:n]:
        q = queries[rec["query_id"]]
        raster = dataset.scenes[rec["scene_id"]].raster
        panels = []
        for role in ("subject", "object"):
            gt = q.gt_subject_boxes if role == "subject" else q.gt_object_boxes
            top = [rec[role][0]["box"]] if rec[role] else []
            panels.append(render_prediction(raster, [list(b) for b in gt], top, scale))
        gap = np.full((panels[0].shape[0], scale, 3), 255, dtype=np.uint8)
        canvas = np.concatenate([panels[0], gap, panels[1]], axis=1)
        path = out_dir / f"query_{rec['query_id']:06d}_{rec['mode']}.ppm"
        text = caption(rec)
        write_ppm(path, canvas, comment=text)
        path.with_suffix(".txt").write_text(text + "\n")
        written.append(path)
    return written
