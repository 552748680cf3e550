"""Scalar voxel volumes, the three output representations and their
activation into rendering density, grid interpolation, and parameter-free
image-to-volume lifting.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraRig, GridSpec, bilinear_sample, project, voxel_center, world_to_voxel

GRID_MAGIC = b"OCCGRID1"


class GridMode(enum.IntEnum):
    PROBABILITY = 0
    DENSITY = 1
    SDF = 2


@dataclass
class ScalarGrid:
    """A voxel volume of raw scalars plus the activation mode that turns them
    into rendering density. Values are mutable (the fitter writes them);
    everything else is fixed at construction.
    """

    spec: GridSpec
    values: np.ndarray  # shape dims, float64
    mode: GridMode
    beta: float = 1.0  # Laplace scale, SDF mode only
    sdf_sign_flip: bool = False

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.shape != self.spec.dims:
            raise ValueError(f"values shape {v.shape} != dims {self.spec.dims}")
        if not np.isfinite(v).all():
            raise ValueError("grid values must be finite")
        if self.mode == GridMode.SDF and self.beta <= 0:
            raise ValueError("beta must be positive for SDF grids")
        self.values = v

    @classmethod
    def zeros(cls, spec: GridSpec, mode: GridMode, beta: float = 1.0) -> "ScalarGrid":
        return cls(spec, np.zeros(spec.dims), mode, beta)

    def raw_for_render(self) -> np.ndarray:
        """Raw values with the SDF sign convention applied."""
        if self.mode == GridMode.SDF and self.sdf_sign_flip:
            return -self.values
        return self.values


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def laplace_density(s, beta):
    """Piecewise Laplace CDF-style map from signed distance to density.

    s <= 0: exp(s / beta) / (2 beta); s > 0: (1 - exp(-s / beta) / 2) / beta.
    Continuous at 0 (both branches give 1 / (2 beta)), monotone increasing.
    """
    s = np.asarray(s, dtype=np.float64)
    neg = (1.0 / (2.0 * beta)) * np.exp(np.minimum(s, 0.0) / beta)
    pos = (1.0 / beta) * (1.0 - 0.5 * np.exp(-np.maximum(s, 0.0) / beta))
    return np.where(s <= 0, neg, pos)


def activate(raw, mode: GridMode, beta: float = 1.0, sign_flip: bool = False):
    """Map raw voxel scalars to non-negative rendering density."""
    raw = np.asarray(raw, dtype=np.float64)
    if not np.isfinite(raw).all():
        raise ValueError("activate requires finite input")
    if mode == GridMode.PROBABILITY:
        return sigmoid(raw)
    if mode == GridMode.DENSITY:
        return softplus(raw)
    if mode == GridMode.SDF:
        if beta <= 0:
            raise ValueError("beta must be positive")
        s = -raw if sign_flip else raw
        return laplace_density(s, beta)
    raise ValueError(f"unknown mode {mode}")


def activate_grad(raw, mode: GridMode, beta: float = 1.0, sign_flip: bool = False):
    """d(density)/d(raw) for each mode; used by the fitter's chain rule."""
    raw = np.asarray(raw, dtype=np.float64)
    if mode == GridMode.PROBABILITY:
        s = sigmoid(raw)
        return s * (1.0 - s)
    if mode == GridMode.DENSITY:
        return sigmoid(raw)  # softplus'
    if mode == GridMode.SDF:
        s = -raw if sign_flip else raw
        # both branches reduce to exp(-|s|/beta) / (2 beta^2)
        g = np.exp(-np.abs(s) / beta) / (2.0 * beta * beta)
        return -g if sign_flip else g
    raise ValueError(f"unknown mode {mode}")


def sdf_density_beta_grad(s, beta):
    """d(laplace_density)/d(beta) at fixed s; drives the beta update in SDF fits."""
    s = np.asarray(s, dtype=np.float64)
    b2 = beta * beta
    neg = np.exp(np.minimum(s, 0.0) / beta) * (-1.0 / (2.0 * b2) - np.minimum(s, 0.0) / (2.0 * b2 * beta))
    pos = (-1.0 / b2) * (1.0 - 0.5 * np.exp(-np.maximum(s, 0.0) / beta)) \
        + (1.0 / beta) * (-0.5 * np.exp(-np.maximum(s, 0.0) / beta) * np.maximum(s, 0.0) / b2)
    return np.where(s <= 0, neg, pos)


class Interp(enum.Enum):
    NEAREST = "nearest"
    TRILINEAR = "trilinear"


def sample_grid(grid: ScalarGrid, p, interp: Interp = Interp.NEAREST):
    """Sample raw grid scalars at world points.

    Nearest: containing voxel's value, valid anywhere inside [min, max).
    Trilinear: blend of the 8 surrounding voxel centers; valid only with a
    half-voxel margin from the boundary (full 8-cell support).
    Returns (values, valid); invalid samples are 0.
    """
    p = np.asarray(p, dtype=np.float64)
    if interp == Interp.NEAREST:
        coords, idx, inside = world_to_voxel(p, grid.spec)
        idx = np.where(inside[..., None], idx, 0)
        vals = grid.values[idx[..., 0], idx[..., 1], idx[..., 2]]
        return np.where(inside, vals, 0.0), inside
    if interp == Interp.TRILINEAR:
        vals, valid = trilinear_raw(grid.values, grid.spec, p)
        return vals, valid
    raise ValueError(f"unknown interpolation {interp}")


def trilinear_lattice_coords(spec: GridSpec, p):
    """Continuous lattice coordinates q such that voxel centers sit at integer
    q, plus the validity mask for full 8-neighbor support."""
    p = np.asarray(p, dtype=np.float64)
    q = (p - spec.minimum) / spec.voxel_size - 0.5
    dims = np.array(spec.dims, dtype=np.float64)
    valid = np.logical_and(q >= 0.0, q <= dims - 1.0).all(axis=-1)
    return q, valid


def trilinear_raw(values, spec: GridSpec, p):
    """Trilinear interpolation of a dims-shaped array at world points."""
    q, valid = trilinear_lattice_coords(spec, p)
    dims = spec.dims
    qc = np.clip(q, 0.0, np.array(dims, dtype=np.float64) - 1.0)
    i0 = np.minimum(np.floor(qc).astype(np.int64),
                    np.maximum(np.array(dims) - 2, 0))
    i0 = np.maximum(i0, 0)
    f = qc - i0
    i1 = np.minimum(i0 + 1, np.array(dims) - 1)
    x0, y0, z0 = i0[..., 0], i0[..., 1], i0[..., 2]
    x1, y1, z1 = i1[..., 0], i1[..., 1], i1[..., 2]
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    v = (values[x0, y0, z0] * (1 - fx) * (1 - fy) * (1 - fz)
         + values[x1, y0, z0] * fx * (1 - fy) * (1 - fz)
         + values[x0, y1, z0] * (1 - fx) * fy * (1 - fz)
         + values[x0, y0, z1] * (1 - fx) * (1 - fy) * fz
         + values[x1, y1, z0] * fx * fy * (1 - fz)
         + values[x1, y0, z1] * fx * (1 - fy) * fz
         + values[x0, y1, z1] * (1 - fx) * fy * fz
         + values[x1, y1, z1] * fx * fy * fz)
    return np.where(valid, v, 0.0), valid


@dataclass
class FeatureVolume:
    spec: GridSpec
    values: np.ndarray  # dims + (C,)
    valid_count: np.ndarray  # dims, int

    @property
    def channels(self) -> int:
        return self.values.shape[-1]


def lift_images_to_volume(images, rig: CameraRig, spec: GridSpec) -> FeatureVolume:
    """Pull per-camera image features into the voxel grid.

    Each voxel center is projected into every camera; valid in-front,
    in-bounds bilinear samples are averaged over the contributing cameras
    (accumulated in camera-index order for reproducibility). Voxels seen by
    no camera get zeros and valid_count 0.
    """
    if len(rig) == 0:
        raise ValueError("rig must contain at least one camera")
    images = [np.asarray(im, dtype=np.float64) for im in images]
    images = [im[..., None] if im.ndim == 2 else im for im in images]
    channels = images[0].shape[-1]
    if any(im.shape[-1] != channels for im in images):
        raise ValueError("all images must share the channel count")
    if len(images) != len(rig):
        raise ValueError("one image per camera required")

    nx, ny, nz = spec.dims
    idx = np.stack(np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                               indexing="ij"), axis=-1)
    centers = voxel_center(idx.reshape(-1, 3), spec)

    acc = np.zeros((centers.shape[0], channels))
    count = np.zeros(centers.shape[0], dtype=np.int64)
    for cam, image in zip(rig, images):
        u, v, z, in_front = project(centers, cam.intrinsics, cam.cam_to_world)
        vals, ok = bilinear_sample(image, u, v)
        ok = ok & in_front
        acc[ok] += vals[ok]
        count[ok] += 1
    feat = np.where(count[:, None] > 0, acc / np.maximum(count[:, None], 1), 0.0)
    return FeatureVolume(spec, feat.reshape(nx, ny, nz, channels),
                         count.reshape(nx, ny, nz))


# ---------------------------------------------------------------------------
# Grid file I/O: magic "OCCGRID1", LE u32 nx ny nz, u8 mode, f32 beta,
# f32 min[3], f32 max[3], then nx*ny*nz f32 values with x fastest.

def save_grid(grid: ScalarGrid, path):
    spec = grid.spec
    with open(path, "wb") as f:
        f.write(GRID_MAGIC)
        f.write(struct.pack("<IIIBf", *spec.dims, int(grid.mode), grid.beta))
        f.write(np.asarray(spec.minimum, dtype="<f4").tobytes())
        f.write(np.asarray(spec.maximum, dtype="<f4").tobytes())
        f.write(np.asarray(grid.values, dtype="<f4").ravel(order="F").tobytes())


def load_grid(path) -> ScalarGrid:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != GRID_MAGIC:
            raise ValueError(f"bad grid magic {magic!r}")
        nx, ny, nz, mode, beta = struct.unpack("<IIIBf", f.read(17))
        mn = np.frombuffer(f.read(12), dtype="<f4").astype(np.float64)
        mx = np.frombuffer(f.read(12), dtype="<f4").astype(np.float64)
        raw = np.frombuffer(f.read(4 * nx * ny * nz), dtype="<f4")
        if raw.size != nx * ny * nz:
            raise ValueError("truncated grid file")
    spec = GridSpec(mn, mx, (nx, ny, nz))
    values = raw.astype(np.float64).reshape((nx, ny, nz), order="F")
    return ScalarGrid(spec, values, GridMode(mode), float(beta))
