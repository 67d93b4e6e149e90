"""Dataset directory format.

::

    spec.json            DatasetSpec fields, split sizes and scene-id split
    scenes.jsonl         one scene per line; raster stored as rasters/<id>.ppm
    queries.jsonl        one query per line
    proposals.bin        little-endian float32 rows [x0, y0, x1, y1, f_0 .. f_{D-1}]
    proposals.index.json per-scene row offset and count into proposals.bin

Reading a directory back gives a :class:`~refrel.scene_synth.Dataset` equal
to the one that was written.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from ..boxes import Box
from ..errors import RefrelError
from ..scene_synth import (
    Dataset,
    DatasetSpec,
    Entity,
    ProposalSet,
    Query,
    RegionFeaturizer,
    Scene,
)
from .config import write_json_atomic

FORMAT = "refrel-dataset-v1"


class DatasetFormatError(RefrelError, ValueError):
    category = "dataset_format"


def write_ppm(path, image, comment=None):
    """Binary P6 pixmap from an ``(H, W, 3)`` uint8 array, with an optional header comment line."""
    img = np.ascontiguousarray(image, dtype=np.uint8)
    h, w, _ = img.shape
    note = "" if comment is None else "# " + " ".join(str(comment).split()) + "\n"
    _atomic_bytes(path, f"P6\n{note}{w} {h}\n255\n".encode() + img.tobytes())


def read_ppm(path):
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P6" or fields[3] != b"255":
        raise DatasetFormatError(f"{path}: only 8-bit binary P6 pixmaps are supported")
    w, h = int(fields[1]), int(fields[2])
    pos += 1  # single whitespace after maxval
    return np.frombuffer(data[pos:pos + w * h * 3], dtype=np.uint8).reshape(h, w, 3).copy()


def _atomic_bytes(path, data):
    path = Path(path)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _scene_record(scene, split):
    return {
        "id": scene.id,
        "split": split,
        "raster": f"rasters/{scene.id:06d}.ppm",
        "entities": [
            {
                "category_id": e.category_id,
                "box": list(e.box),
                "color": list(e.color),
                "shape_kind": e.shape_kind,
            }
            for e in scene.entities
        ],
        "relations": [list(r) for r in scene.relations],
    }


def _query_record(q):
    return {
        "query_id": q.query_id,
        "scene_id": q.scene_id,
        "subject_category": q.subject_category,
        "predicate_id": q.predicate_id,
        "object_category": q.object_category,
        "gt_subject_boxes": [list(b) for b in q.gt_subject_boxes],
        "gt_object_boxes": [list(b) for b in q.gt_object_boxes],
        "subject_entities": list(q.subject_entities),
        "object_entities": list(q.object_entities),
        "pairs": [list(p) for p in q.pairs],
    }


def write_dataset(dataset, directory):
    d = Path(directory)
    (d / "rasters").mkdir(parents=True, exist_ok=True)
    split = {i: "train" for i in dataset.train_ids}
    split.update({i: "test" for i in dataset.test_ids})
    ids = sorted(dataset.scenes)

    lines = []
    for i in ids:
        scene = dataset.scenes[i]
        rec = _scene_record(scene, split[i])
        write_ppm(d / rec["raster"], np.round(scene.raster * 255.0).astype(np.uint8))
        lines.append(json.dumps(rec, sort_keys=True))
    _atomic_bytes(d / "scenes.jsonl", ("\n".join(lines) + "\n").encode())

    lines = [json.dumps(_query_record(q), sort_keys=True) for q in dataset.queries]
    _atomic_bytes(d / "queries.jsonl", ("\n".join(lines) + "\n").encode() if lines else b"")

    index, chunks, offset = [], [], 0
    for i in ids:
        p = dataset.proposals[i]
        rows = np.concatenate([p.boxes, p.feature_vectors], axis=1).astype("<f4")
        chunks.append(rows.tobytes())
        index.append({"scene_id": i, "offset": offset, "count": len(rows)})
        offset += len(rows)
    _atomic_bytes(d / "proposals.bin", b"".join(chunks))
    write_json_atomic(d / "proposals.index.json", {
        "dtype": "<f4",
        "row_width": 4 + dataset.spec.feature_dim,
        "scenes": index,
    })
    write_json_atomic(d / "spec.json", {
        "format": FORMAT,
        "spec": {k: getattr(dataset.spec, k) for k in DatasetSpec.__dataclass_fields__},
        "train_ids": list(dataset.train_ids),
        "test_ids": list(dataset.test_ids),
        "stats": dataset.stats(),
    })
    return d


def read_dataset(directory):
    d = Path(directory)
    if not (d / "spec.json").exists():
        raise FileNotFoundError(f"no dataset at {d} (missing spec.json)")
    meta = json.loads((d / "spec.json").read_text())
    if meta.get("format") != FORMAT:
        raise DatasetFormatError(f"{d}/spec.json: unsupported format {meta.get('format')!r}")
    spec = DatasetSpec(**meta["spec"])

    scenes = {}
    for line in (d / "scenes.jsonl").read_text().splitlines():
        rec = json.loads(line)
        entities = tuple(
            Entity(e["category_id"], Box(*e["box"]), tuple(e["color"]), e["shape_kind"]) for e in rec["entities"]
        )
        raster = read_ppm(d / rec["raster"]).astype(np.float64) / 255.0
        scenes[rec["id"]] = Scene(rec["id"], entities, tuple(tuple(r) for r in rec["relations"]), raster)

    queries = []
    for line in (d / "queries.jsonl").read_text().splitlines():
        rec = json.loads(line)
        queries.append(Query(
            query_id=rec["query_id"],
            scene_id=rec["scene_id"],
            subject_category=rec["subject_category"],
            predicate_id=rec["predicate_id"],
            object_category=rec["object_category"],
            gt_subject_boxes=tuple(Box(*b) for b in rec["gt_subject_boxes"]),
            gt_object_boxes=tuple(Box(*b) for b in rec["gt_object_boxes"]),
            subject_entities=tuple(rec["subject_entities"]),
            object_entities=tuple(rec["object_entities"]),
            pairs=tuple(tuple(p) for p in rec["pairs"]),
        ))

    index = json.loads((d / "proposals.index.json").read_text())
    width = index["row_width"]
    flat = np.frombuffer((d / "proposals.bin").read_bytes(), dtype="<f4").astype(np.float64)
    rows = flat.reshape(-1, width)
    proposals = {}
    size = (spec.image_width, spec.image_height)
    for entry in index["scenes"]:
        sid = entry["scene_id"]
        block = rows[entry["offset"]:entry["offset"] + entry["count"]]
        featurizer = RegionFeaturizer(scenes[sid], grid=spec.grid_size)
        proposals[sid] = ProposalSet(sid, block[:, :4].copy(), block[:, 4:].copy(), size, featurizer)
    return Dataset(spec, scenes, queries, proposals, list(meta["train_ids"]), list(meta["test_ids"]))
