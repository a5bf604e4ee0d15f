"""Reader/writer for the LCAF binary frame-feature file.

Layout (little-endian throughout):
    magic  "LCAF"            4 bytes
    u32    version (= 1)
    u32    n_frames
    u32    dim
    u32    frames_per_second * 1000
    f32    n_frames * dim values, row-major by frame
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"LCAF"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


@dataclass
class FrameFile:
    features: np.ndarray  # [n_frames, dim] float32
    fps: float

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def write_frames(path: str | Path, features: np.ndarray, fps: float) -> None:
    features = np.ascontiguousarray(features, dtype="<f4")
    if features.ndim != 2:
        raise DataError(f"frame features must be 2-D, got shape {features.shape}")
    n, dim = features.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, dim, round(fps * 1000)))
        fh.write(features.tobytes())


def read_frames(path: str | Path) -> FrameFile:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated LCAF header")
    magic, version, n, dim, fps_k = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DataError(f"{path}: unsupported LCAF version {version}")
    payload = raw[_HEADER.size:]
    expected = n * dim * 4
    if len(payload) != expected:
        raise DataError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    feats = np.frombuffer(payload, dtype="<f4").reshape(n, dim).copy()
    return FrameFile(features=feats, fps=fps_k / 1000.0)


def frame_row_at(frames: FrameFile, time_s: float) -> np.ndarray:
    """Frame feature row covering timestamp `time_s` (floor rule, edge-clamped)."""
    idx = int(np.floor(time_s * frames.fps))
    idx = min(max(idx, 0), frames.n_frames - 1)
    return frames.features[idx]
