"""Metric depth maps with validity masks, and their two on-disk formats:
16-bit PGM in millimeters (0 = invalid) and raw little-endian f32 with an
8-byte width/height header.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np


@dataclass
class DepthMap:
    depth: np.ndarray  # (H, W) meters
    valid: np.ndarray  # (H, W) bool

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.depth.shape != self.valid.shape or self.depth.ndim != 2:
            raise ValueError("depth and valid must share an (H, W) shape")

    @property
    def shape(self):
        return self.depth.shape

    @classmethod
    def invalid(cls, height, width) -> "DepthMap":
        return cls(np.zeros((height, width)), np.zeros((height, width), dtype=bool))


def save_pgm(dm: DepthMap, path):
    """16-bit big-endian PGM, depth in millimeters, 0 marks invalid."""
    h, w = dm.shape
    mm = np.round(dm.depth * 1000.0)
    mm = np.clip(mm, 0, 65535).astype(np.uint16)
    mm[~dm.valid] = 0
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(mm.astype(">u2").tobytes())


def load_pgm(path) -> DepthMap:
    with open(path, "rb") as f:
        data = f.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h = (int(x) for x in parts[1].split())
    maxval = int(parts[2])
    if maxval != 65535:
        raise ValueError("expected 16-bit PGM")
    mm = np.frombuffer(parts[3][: 2 * w * h], dtype=">u2").reshape(h, w)
    valid = mm > 0
    return DepthMap(mm.astype(np.float64) / 1000.0, valid)


def save_f32(dm: DepthMap, path):
    """Raw little-endian f32 depths, invalid pixels stored as 0, after a
    u32 width, u32 height header."""
    h, w = dm.shape
    depth = np.where(dm.valid, dm.depth, 0.0).astype("<f4")
    with open(path, "wb") as f:
        f.write(struct.pack("<II", w, h))
        f.write(depth.tobytes())


def load_f32(path) -> DepthMap:
    with open(path, "rb") as f:
        w, h = struct.unpack("<II", f.read(8))
        depth = np.frombuffer(f.read(4 * w * h), dtype="<f4")
    if depth.size != w * h:
        raise ValueError("truncated depth file")
    depth = depth.astype(np.float64).reshape(h, w)
    return DepthMap(depth, depth > 0)
