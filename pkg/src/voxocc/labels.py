"""Occupancy supervision from lidar point clouds: voxelization, stratified
empty-space sampling along each return ray, and sparse z-buffered depth-map
projection.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .depthmap import DepthMap
from .geometry import Camera, GridSpec, project, world_to_voxel

PCBIN_MAGIC = b"PCBIN1"


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3) meters, world frame
    origin: np.ndarray  # (3,) lidar center

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        if not (np.isfinite(self.points).all() and np.isfinite(self.origin).all()):
            raise ValueError("point cloud must be finite")

    def __len__(self):
        return self.points.shape[0]


@dataclass
class LabelSet:
    occupied: np.ndarray  # (N, 3)
    empty: np.ndarray  # (K, 3)
    n_samples_per_ray: int
    voxel_size: np.ndarray

    def __post_init__(self):
        self.occupied = np.asarray(self.occupied, dtype=np.float64).reshape(-1, 3)
        self.empty = np.asarray(self.empty, dtype=np.float64).reshape(-1, 3)


def in_range_mask(cloud: PointCloud, spec: GridSpec) -> np.ndarray:
    return np.logical_and(cloud.points >= spec.minimum,
                          cloud.points < spec.maximum).all(axis=1)


def voxelize(cloud: PointCloud, spec: GridSpec) -> set:
    """Occupied voxel indices: the set of voxels containing in-range points."""
    if len(cloud) == 0:
        return set()
    _, idx, inside = world_to_voxel(cloud.points, spec)
    return set(map(tuple, idx[inside].tolist()))


def generate_labels(cloud: PointCloud, spec: GridSpec, n: int = 30,
                    seed: int = 0) -> LabelSet:
    """Stratified empty-space labels along each return ray.

    Every in-range point becomes an occupied label. Along the ray from the
    lidar origin to the point, n stratified samples are drawn in
    (0, range - margin) with margin of half a voxel diagonal, so closer
    returns get denser empty supervision. Samples landing inside any
    occupied voxel are dropped rather than relabeled.
    """
    if n < 1:
        raise ValueError("need at least one sample per ray")
    if len(cloud) == 0:
        raise ValueError("label generation needs a nonempty cloud")
    occ_voxels = voxelize(cloud, spec)
    margin = spec.voxel_diagonal / 2.0
    keep = in_range_mask(cloud, spec)
    pts = cloud.points[keep]
    rng = np.random.default_rng(seed)

    vecs = pts - cloud.origin
    ranges = np.linalg.norm(vecs, axis=1)
    empties = []
    for p, vec, rng_len in zip(pts, vecs, ranges):
        seg = rng_len - margin
        if seg <= 0:
            continue
        bin_w = seg / n
        ts = (np.arange(n) + rng.random(n)) * bin_w
        ts[0] = max(ts[0], 1e-9 * seg)  # keep the first sample off the origin
        samples = cloud.origin + ts[:, None] * (vec / rng_len)
        _, idx, inside = world_to_voxel(samples, spec)
        drop = np.zeros(n, dtype=bool)
        for k in range(n):
            if inside[k] and tuple(idx[k]) in occ_voxels:
                drop[k] = True
        empties.append(samples[~drop])
    empty = np.concatenate(empties) if empties else np.zeros((0, 3))
    return LabelSet(pts.copy(), empty, n, spec.voxel_size)


def project_depth_map(cloud: PointCloud, camera: Camera) -> DepthMap:
    """Project returns into a camera: nearest-pixel rounding, minimum depth
    wins when several land on one pixel, unhit pixels invalid."""
    intr = camera.intrinsics
    dm = DepthMap.invalid(intr.height, intr.width)
    if len(cloud) == 0:
        return dm
    u, v, z, in_front = project(cloud.points, intr, camera.cam_to_world)
    ui = np.round(u).astype(np.int64)
    vi = np.round(v).astype(np.int64)
    ok = in_front & (ui >= 0) & (ui < intr.width) & (vi >= 0) & (vi < intr.height)
    # z-buffer: sort by depth descending so the closest write lands last
    order = np.argsort(-z[ok], kind="stable")
    ui, vi, z = ui[ok][order], vi[ok][order], z[ok][order]
    dm.depth[vi, ui] = z
    dm.valid[vi, ui] = True
    return dm


# ---------------------------------------------------------------------------
# Point cloud file I/O: ASCII "x y z" lines, or PCBIN1 + u32 count + f32 x 3.

def save_cloud_xyz(cloud: PointCloud, path):
    with open(path, "w") as f:
        for x, y, z in cloud.points:
            f.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def load_cloud_xyz(path, origin=(0.0, 0.0, 0.0)) -> PointCloud:
    pts = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            pts.append([float(x) for x in parts])
    return PointCloud(np.array(pts, dtype=np.float64).reshape(-1, 3), np.asarray(origin))


def save_cloud_bin(cloud: PointCloud, path):
    with open(path, "wb") as f:
        f.write(PCBIN_MAGIC)
        f.write(struct.pack("<I", len(cloud)))
        f.write(np.asarray(cloud.points, dtype="<f4").tobytes())


def load_cloud_bin(path, origin=(0.0, 0.0, 0.0)) -> PointCloud:
    with open(path, "rb") as f:
        magic = f.read(6)
        if magic != PCBIN_MAGIC:
            raise ValueError(f"bad point cloud magic {magic!r}")
        (count,) = struct.unpack("<I", f.read(4))
        pts = np.frombuffer(f.read(12 * count), dtype="<f4")
    if pts.size != 3 * count:
        raise ValueError("truncated point cloud file")
    return PointCloud(pts.astype(np.float64).reshape(count, 3), np.asarray(origin))
