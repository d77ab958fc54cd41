"""Checkpoints: a JSON manifest plus a little-endian float64 blob.

``save_checkpoint("run/model", ...)`` writes ``run/model.json`` and
``run/model.bin``.  Arrays round-trip bit-exactly.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "redeeg-checkpoint-1"


def _paths(prefix):
    prefix = Path(prefix)
    if prefix.suffix in (".json", ".bin"):
        prefix = prefix.with_suffix("")
    return prefix.with_name(prefix.name + ".json"), prefix.with_name(prefix.name + ".bin")


def save_checkpoint(prefix, arrays, meta=None, optimizer_step=0):
    """Write named arrays (ordered as given) and JSON-serializable metadata."""
    jpath, bpath = _paths(prefix)
    entries, offset = [], 0
    with open(bpath, "wb") as fh:
        for name, arr in arrays.items():
            a = np.asarray(arr, dtype="<f8")
            fh.write(a.tobytes())
            entries.append({"name": name, "shape": list(a.shape), "offset": offset})
            offset += a.size
    doc = {"format": FORMAT, "optimizer_step": int(optimizer_step),
           "entries": entries, "meta": meta or {}}
    jpath.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return jpath, bpath


def load_checkpoint(prefix):
    """Return ``(arrays, meta, optimizer_step)``."""
    jpath, bpath = _paths(prefix)
    doc = json.loads(jpath.read_text())
    if doc.get("format") != FORMAT:
        raise ValueError(f"{jpath}: unknown checkpoint format {doc.get('format')!r}")
    blob = np.fromfile(bpath, dtype="<f8")
    arrays = {}
    for e in doc["entries"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        chunk = blob[e["offset"]:e["offset"] + n]
        if chunk.size != n:
            raise ValueError(f"{bpath}: truncated at entry {e['name']!r}")
        arrays[e["name"]] = chunk.reshape(e["shape"]).astype(np.float64)
    return arrays, doc["meta"], doc["optimizer_step"]
