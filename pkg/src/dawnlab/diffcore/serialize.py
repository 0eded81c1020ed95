"""Checkpoint format: a flat little-endian float64 blob plus a JSON manifest.

``<stem>.bin`` holds every array back to back; ``<stem>.json`` lists
``{"name", "shape", "offset"}`` per array (offset in elements) so the blob
can be read without this package.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def save_params(stem, groups: dict[str, dict[str, np.ndarray]], meta: dict | None = None) -> None:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for group, params in groups.items():
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype="<f8")
            entries.append({"group": group, "name": name, "shape": list(arr.shape), "offset": offset})
            chunks.append(arr.ravel())
            offset += arr.size
    blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f8")
    stem.with_suffix(".bin").write_bytes(blob.astype("<f8").tobytes())
    manifest = {"dtype": "<f8", "count": int(offset), "arrays": entries, "meta": meta or {}}
    stem.with_suffix(".json").write_text(json.dumps(manifest, indent=1))


def load_params(stem) -> tuple[dict[str, dict[str, np.ndarray]], dict]:
    stem = Path(stem)
    manifest = json.loads(stem.with_suffix(".json").read_text())
    blob = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8")
    groups: dict[str, dict[str, np.ndarray]] = {}
    for e in manifest["arrays"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = blob[e["offset"]: e["offset"] + n].reshape(e["shape"]).astype(np.float64)
        groups.setdefault(e["group"], {})[e["name"]] = arr
    return groups, manifest.get("meta", {})
