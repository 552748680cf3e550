"""Isosurface extraction from a scalar grid and PLY output.

Probability and density grids are meshed on their activated values so an
iso level of 0.5 means "probability one half" literally; SDF grids are
meshed on the raw signed distances at level 0.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from skimage import measure

from .volume import GridMode, ScalarGrid, activate, sigmoid, softplus


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3) world coordinates
    triangles: np.ndarray  # (F, 3) vertex indices

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0
                                    or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


def _mesh_field(grid: ScalarGrid) -> np.ndarray:
    if grid.mode == GridMode.PROBABILITY:
        return sigmoid(grid.values)
    if grid.mode == GridMode.DENSITY:
        return softplus(grid.values)
    return grid.values


def marching_cubes(grid: ScalarGrid, iso: float) -> Mesh:
    """Extract the iso level set on the cell-centered voxel lattice, with
    vertices in world coordinates. An iso outside the value range yields an
    empty mesh."""
    if any(d < 2 for d in grid.spec.dims):
        raise ValueError("marching cubes needs at least 2 voxels per axis")
    field = _mesh_field(grid)
    if not (field.min() < iso < field.max()):
        return Mesh.empty()
    verts, faces, _, _ = measure.marching_cubes(field, level=iso)
    # lattice index -> world: voxel centers sit at min + (i + 0.5) * size
    world = grid.spec.minimum + (verts + 0.5) * grid.spec.voxel_size
    mesh = Mesh(world, faces)
    keep = triangle_areas(mesh) > 1e-12
    return Mesh(mesh.vertices, mesh.triangles[keep])


def triangle_areas(mesh: Mesh) -> np.ndarray:
    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def is_edge_manifold(mesh: Mesh) -> bool:
    """Every edge shared by exactly two triangles (watertight closed surface)."""
    if len(mesh.triangles) == 0:
        return False
    tri = mesh.triangles
    edges = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return bool((counts == 2).all())


def write_ply(mesh: Mesh, path, binary: bool = False):
    """ASCII PLY with 6-decimal vertex precision, or little-endian binary."""
    fmt = "binary_little_endian 1.0" if binary else "ascii 1.0"
    header = (f"ply\nformat {fmt}\n"
              f"element vertex {len(mesh.vertices)}\n"
              "property float x\nproperty float y\nproperty float z\n"
              f"element face {len(mesh.triangles)}\n"
              "property list uchar int vertex_indices\nend_header\n")
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        if binary:
            f.write(np.asarray(mesh.vertices, dtype="<f4").tobytes())
            for t in mesh.triangles:
                f.write(struct.pack("<Biii", 3, *map(int, t)))
        else:
            for v in np.asarray(mesh.vertices, dtype=np.float32):
                f.write(f"{v[0]:.6f} {v[1]:.6f} {v[2]:.6f}\n".encode("ascii"))
            for t in mesh.triangles:
                f.write(f"3 {t[0]} {t[1]} {t[2]}\n".encode("ascii"))


def read_ply(path) -> Mesh:
    with open(path, "rb") as f:
        data = f.read()
    head_end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:head_end].decode("ascii").splitlines()
    binary = any("binary_little_endian" in ln for ln in header)
    n_vert = n_face = 0
    for ln in header:
        if ln.startswith("element vertex"):
            n_vert = int(ln.split()[-1])
        elif ln.startswith("element face"):
            n_face = int(ln.split()[-1])
    if binary:
        body = data[head_end:]
        verts = np.frombuffer(body[: 12 * n_vert], dtype="<f4").reshape(n_vert, 3)
        off = 12 * n_vert
        faces = np.empty((n_face, 3), dtype=np.int64)
        for i in range(n_face):
            cnt, a, b, c = struct.unpack_from("<Biii", body, off)
            if cnt != 3:
                raise ValueError("only triangle faces supported")
            faces[i] = (a, b, c)
            off += 13
    else:
        lines = data[head_end:].decode("ascii").split("\n")
        verts = np.array([[float(x) for x in lines[i].split()]
                          for i in range(n_vert)])
        verts = verts.reshape(n_vert, 3)
        faces = np.empty((n_face, 3), dtype=np.int64)
        for i in range(n_face):
            parts = lines[n_vert + i].split()
            if parts[0] != "3":
                raise ValueError("only triangle faces supported")
            faces[i] = [int(x) for x in parts[1:4]]
    return Mesh(verts.astype(np.float64), faces)
