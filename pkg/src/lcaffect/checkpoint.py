"""Named-tensor checkpoint archive.

A checkpoint file is a compact JSON manifest line

    {"version": 1, "tensors": [{"name", "shape", "offset", "len"}, ...],
     "config": {...}}

terminated by a single newline, followed by a contiguous little-endian
32-bit-float payload. Offsets and lengths are element counts into the
payload, so the file is bit-exact for a given (tensors, config) input.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError

VERSION = 1


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], config: dict) -> None:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        entries.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "len": arr.size}
        )
        chunks.append(arr.tobytes())
        offset += arr.size
    manifest = {"version": VERSION, "tensors": entries, "config": config}
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        header = fh.readline()
        payload = fh.read()
    try:
        manifest = json.loads(header.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: bad checkpoint manifest: {exc}") from exc
    if manifest.get("version") != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {manifest.get('version')}")
    flat = np.frombuffer(payload, dtype="<f4")
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        lo, n = entry["offset"], entry["len"]
        if lo + n > flat.size:
            raise DataError(f"{path}: tensor {entry['name']} overruns payload")
        tensors[entry["name"]] = flat[lo:lo + n].reshape(entry["shape"]).copy()
    return tensors, manifest.get("config", {})
