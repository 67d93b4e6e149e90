"""Predicate training-pair cache: ``<stem>.jsonl`` index plus ``<stem>.bin`` float sidecar.

Each JSONL line carries a sample's provenance, label, scene, boxes and
categories together with the row offset of its data in the sidecar. The
sidecar stores, per sample, the subject map, the object map and the two
pooled vectors as little-endian float64 (so reloaded samples are bit-exact).
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from ..boxes import Box
from ..predicate import PairSample


def save_pair_samples(stem, samples):
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    lines, chunks, offset = [], [], 0
    for s in samples:
        parts = [s.subject_map, s.object_map, s.subject_vector, s.object_vector]
        flat = np.concatenate([np.asarray(p, dtype="<f8").ravel() for p in parts])
        lines.append(json.dumps({
            "offset": offset,
            "map_shape": list(s.subject_map.shape),
            "label": [int(v) for v in s.label_vector],
            "provenance": s.provenance,
            "scene_id": s.scene_id,
            "subject_box": list(s.subject_box),
            "object_box": list(s.object_box),
            "subject_category": s.subject_category,
            "object_category": s.object_category,
        }, sort_keys=True))
        chunks.append(flat.tobytes())
        offset += flat.size
    _atomic(stem.with_suffix(".bin"), b"".join(chunks))
    _atomic(stem.with_suffix(".jsonl"), "".join(line + "\n" for line in lines).encode())


def load_pair_samples(stem):
    stem = Path(stem)
    flat = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8")
    out = []
    for line in stem.with_suffix(".jsonl").read_text().splitlines():
        r = json.loads(line)
        shape = tuple(r["map_shape"])
        m = int(np.prod(shape))
        d = shape[-1]
        o = r["offset"]
        block = flat[o:o + 2 * m + 2 * d]
        out.append(PairSample(
            block[:m].reshape(shape), block[m:2 * m].reshape(shape),
            np.asarray(r["label"], dtype=np.float64), r["provenance"], r["scene_id"],
            Box(*r["subject_box"]), Box(*r["object_box"]),
            block[2 * m:2 * m + d], block[2 * m + d:], r["subject_category"], r["object_category"],
        ))
    return out


def pair_cache_exists(stem):
    stem = Path(stem)
    return stem.with_suffix(".bin").exists() and stem.with_suffix(".jsonl").exists()


def _atomic(path, data):
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
