"""Coordinate substrate: rigid poses, pinhole cameras, voxel-grid addressing,
and bilinear image sampling.

World convention: X is width, Y is height, Z is depth (meters). Pixel (i, j)
sits at continuous image coordinate (i, j) (pixel-center convention).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

_ORTHO_TOL = 1e-9


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Pose:
    """Rigid transform: p_out = rotation @ p_in + translation."""

    rotation: np.ndarray  # (3, 3) orthonormal, det +1
    translation: np.ndarray  # (3,) meters

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.isfinite(r).all() and np.isfinite(t).all()):
            raise GeometryError("pose has non-finite entries")
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err >= 1e-6 or np.linalg.det(r) < 0:
            raise GeometryError(f"rotation not orthonormal (err={err:.3e})")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        r.setflags(write=False)
        t.setflags(write=False)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        """Build from a 4x4 row-major homogeneous matrix."""
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other: (self * other)(p) = self(other(p))."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.rotation.T + self.translation


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point outside image")


@dataclass(frozen=True)
class Camera:
    name: str
    intrinsics: CameraIntrinsics
    cam_to_world: Pose


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple

    def __len__(self):
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)

    def __getitem__(self, i):
        return self.cameras[i]


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray  # (3,)
    direction: np.ndarray  # (3,), unit

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-9:
            raise GeometryError("ray direction must be unit length")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t):
        return self.origin + np.multiply.outer(np.asarray(t), self.direction)


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned voxel lattice over [min, max) with dims voxels per axis."""

    minimum: np.ndarray  # (3,)
    maximum: np.ndarray  # (3,)
    dims: tuple  # (nx, ny, nz)

    def __post_init__(self):
        mn = np.asarray(self.minimum, dtype=np.float64).reshape(3)
        mx = np.asarray(self.maximum, dtype=np.float64).reshape(3)
        dims = tuple(int(d) for d in self.dims)
        if not (mx > mn).all():
            raise GeometryError("grid max must exceed min componentwise")
        if any(d < 1 for d in dims):
            raise GeometryError("grid dims must be >= 1")
        object.__setattr__(self, "minimum", mn)
        object.__setattr__(self, "maximum", mx)
        object.__setattr__(self, "dims", dims)
        mn.setflags(write=False)
        mx.setflags(write=False)

    @property
    def voxel_size(self) -> np.ndarray:
        return (self.maximum - self.minimum) / np.array(self.dims, dtype=np.float64)

    @property
    def voxel_diagonal(self) -> float:
        return float(np.linalg.norm(self.voxel_size))

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz


def world_to_voxel(p, spec: GridSpec):
    """Map world points to continuous voxel coordinates and integer indices.

    Returns (coords, index, inside). coords = (p - min) / voxel_size.
    index is floor(coords); inside is True only for points strictly within
    [min, max) per axis, and index is only meaningful where inside holds.
    """
    p = np.asarray(p, dtype=np.float64)
    coords = (p - spec.minimum) / spec.voxel_size
    inside = np.logical_and(p >= spec.minimum, p < spec.maximum).all(axis=-1)
    idx = np.floor(coords).astype(np.int64)
    # guard against floating roundoff pushing an in-range point to dims
    np.clip(idx, 0, np.array(spec.dims) - 1, out=idx)
    return coords, idx, inside


def voxel_center(idx, spec: GridSpec) -> np.ndarray:
    idx = np.asarray(idx)
    if (idx < 0).any() or (idx >= np.array(spec.dims)).any():
        raise GeometryError("voxel index out of range")
    return spec.minimum + (idx + 0.5) * spec.voxel_size


def project(p_world, intr: CameraIntrinsics, cam_to_world: Pose):
    """Project world points into a pinhole camera.

    Returns (u, v, depth, in_front). depth is the camera-frame z; points with
    z <= 0 are flagged behind the camera (their u, v are unreliable).
    """
    p_cam = cam_to_world.inverse().apply(p_world)
    z = p_cam[..., 2]
    in_front = z > 0
    safe_z = np.where(in_front, z, 1.0)
    u = intr.fx * p_cam[..., 0] / safe_z + intr.cx
    v = intr.fy * p_cam[..., 1] / safe_z + intr.cy
    return u, v, z, in_front


def backproject(u, v, depth, intr: CameraIntrinsics, cam_to_world: Pose):
    """Lift pixels with metric depth back to world points; inverse of project."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if (depth <= 0).any():
        raise GeometryError("backproject requires positive depth")
    x = (u - intr.cx) / intr.fx * depth
    y = (v - intr.cy) / intr.fy * depth
    p_cam = np.stack(np.broadcast_arrays(x, y, depth), axis=-1)
    return cam_to_world.apply(p_cam)


def pixel_rays(intr: CameraIntrinsics, cam_to_world: Pose):
    """World-frame unit ray directions through every pixel center.

    Returns (origins (3,), directions (H, W, 3)).
    """
    u, v = np.meshgrid(np.arange(intr.width, dtype=np.float64),
                       np.arange(intr.height, dtype=np.float64))
    d_cam = np.stack([(u - intr.cx) / intr.fx,
                      (v - intr.cy) / intr.fy,
                      np.ones_like(u)], axis=-1)
    d_world = d_cam @ cam_to_world.rotation.T
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    return cam_to_world.translation.copy(), d_world


def bilinear_sample(image, u, v):
    """Sample an H x W or H x W x C image at continuous (u, v), pixel-center
    convention. Returns (values, valid); valid is False where the 4-neighbor
    footprint leaves [0, W-1] x [0, H-1], and those values are zeroed.
    """
    image = np.asarray(image, dtype=np.float64)
    squeeze = image.ndim == 2
    if squeeze:
        image = image[..., None]
    h, w, c = image.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    valid = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)

    uc = np.clip(u, 0, w - 1)
    vc = np.clip(v, 0, h - 1)
    u0 = np.clip(np.floor(uc).astype(np.int64), 0, w - 2) if w > 1 else np.zeros_like(uc, dtype=np.int64)
    v0 = np.clip(np.floor(vc).astype(np.int64), 0, h - 2) if h > 1 else np.zeros_like(vc, dtype=np.int64)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = (uc - u0)[..., None]
    fv = (vc - v0)[..., None]

    vals = (image[v0, u0] * (1 - fu) * (1 - fv)
            + image[v0, u1] * fu * (1 - fv)
            + image[v1, u0] * (1 - fu) * fv
            + image[v1, u1] * fu * fv)
    vals = np.where(valid[..., None], vals, 0.0)
    if squeeze:
        vals = vals[..., 0]
    return vals, valid


# ---------------------------------------------------------------------------
# Camera rig file I/O (JSON)

def save_rig(rig: CameraRig, path):
    cams = []
    for cam in rig:
        intr = cam.intrinsics
        cams.append({
            "name": cam.name,
            "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
            "width": intr.width, "height": intr.height,
            "cam_to_world": [float(x) for x in cam.cam_to_world.matrix().ravel()],
        })
    with open(path, "w") as f:
        json.dump({"cameras": cams}, f, indent=2)
        f.write("\n")


def load_rig(path) -> CameraRig:
    with open(path) as f:
        data = json.load(f)
    cams = []
    for entry in data["cameras"]:
        intr = CameraIntrinsics(entry["fx"], entry["fy"], entry["cx"], entry["cy"],
                                int(entry["width"]), int(entry["height"]))
        pose = Pose.from_matrix(entry["cam_to_world"])
        cams.append(Camera(entry["name"], intr, pose))
    return CameraRig(tuple(cams))
