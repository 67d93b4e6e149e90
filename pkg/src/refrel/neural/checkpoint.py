"""Parameter checkpoints: ``<stem>.bin`` (little-endian float64) + ``<stem>.json`` manifest."""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np


def save_params(stem, params, metadata=None):
    """Write every array in ``params`` (name -> ndarray) in insertion order."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    chunks = []
    for name, arr in params.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.size
    manifest = {"format": "refrel-params-v1", "dtype": "<f8", "tensors": entries,
                "metadata": metadata or {}}
    _atomic_write(stem.with_suffix(".bin"), b"".join(chunks))
    _atomic_write(stem.with_suffix(".json"), (json.dumps(manifest, indent=1, sort_keys=True) + "\n").encode())


def load_params(stem):
    """Return ``(params, metadata)``; arrays are writable float64 copies."""
    stem = Path(stem)
    manifest = json.loads(stem.with_suffix(".json").read_text())
    flat = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8")
    params = {}
    for e in manifest["tensors"]:
        size = int(np.prod(e["shape"], dtype=np.int64))
        params[e["name"]] = flat[e["offset"]:e["offset"] + size].reshape(e["shape"]).astype(np.float64)
    return params, manifest.get("metadata", {})


def checkpoint_exists(stem):
    stem = Path(stem)
    return stem.with_suffix(".bin").exists() and stem.with_suffix(".json").exists()


def _atomic_write(path, data):
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
