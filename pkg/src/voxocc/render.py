"""Ray sampling and alpha compositing: expected depth along rays through a
scalar voxel grid, full depth-map rendering, and analytic gradients of the
rendered depth with respect to the per-sample densities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .depthmap import DepthMap
from .geometry import Camera, GridSpec, pixel_rays
from .volume import Interp, ScalarGrid, activate, trilinear_lattice_coords

MIN_LAST_DELTA = 1e-6


@dataclass
class RaySamples:
    """Per-ray sample distances, adjacent gaps, and densities."""

    t: np.ndarray  # (W,) strictly increasing
    delta: np.ndarray  # (W,) positive gaps; last one closes out to the far bound
    sigma: np.ndarray  # (W,) non-negative densities

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.delta = np.asarray(self.delta, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.t.size < 1:
            raise ValueError("need at least one sample")
        if (np.diff(self.t) <= 0).any():
            raise ValueError("sample distances must be strictly increasing")
        if (self.delta <= 0).any():
            raise ValueError("deltas must be positive")
        if (self.sigma < 0).any():
            raise ValueError("densities must be non-negative")


@dataclass
class RenderResult:
    depth: float
    weights: np.ndarray
    opacity: float


def sample_ray(near, far, n, rng=None):
    """Sample distances in [near, far): bin midpoints, or one stratified
    uniform draw per bin when an rng is given. Returns (t, delta) with the
    last delta extended past the final sample by one bin width.
    """
    if not (0 <= near < far):
        raise ValueError("need 0 <= near < far")
    if n < 1:
        raise ValueError("need at least one sample")
    t, delta = sample_rays(near, far, n, 1, rng)
    return t[0], delta[0]


def sample_rays(near, far, n, n_rays, rng=None):
    """Batched sample_ray: returns t and delta of shape (n_rays, n)."""
    if not (0 <= near < far):
        raise ValueError("need 0 <= near < far")
    bin_width = (far - near) / n
    edges = near + bin_width * np.arange(n)
    if rng is None:
        t = np.broadcast_to(edges + 0.5 * bin_width, (n_rays, n)).copy()
    else:
        t = edges + bin_width * rng.random((n_rays, n))
    delta = np.empty_like(t)
    delta[:, :-1] = np.diff(t, axis=1)
    delta[:, -1] = np.maximum((far - t[:, -1]) + bin_width, MIN_LAST_DELTA)
    return t, delta


def composite(samples: RaySamples) -> RenderResult:
    """Integrate one ray's densities into expected depth (alpha compositing)."""
    w, d, o = kernels.composite_forward(
        np.ascontiguousarray(samples.sigma[None, :]),
        np.ascontiguousarray(samples.delta[None, :]),
        np.ascontiguousarray(samples.t[None, :]))
    return RenderResult(float(d[0]), w[0], float(o[0]))


def composite_backward(samples: RaySamples, grad_depth=1.0) -> np.ndarray:
    """d(depth)/d(sigma) for one ray, scaled by the upstream gradient."""
    g = kernels.composite_backward(
        np.ascontiguousarray(samples.sigma[None, :]),
        np.ascontiguousarray(samples.delta[None, :]),
        np.ascontiguousarray(samples.t[None, :]),
        np.ascontiguousarray(np.atleast_1d(float(grad_depth))))
    return g[0]


@dataclass
class RenderConfig:
    n_samples: int = 64
    near: float = 0.4  # the ego body occludes below this
    far: float = 52.0
    interp: Interp = Interp.TRILINEAR
    jitter_seed: int | None = None  # None = deterministic bin midpoints
    opacity_floor: float = 1e-4


@dataclass
class RayRenderCache:
    """Everything the fitter needs to backpropagate through a batch render."""

    t: np.ndarray
    delta: np.ndarray
    sigma: np.ndarray
    raw: np.ndarray  # interpolated raw grid values at the samples
    valid: np.ndarray  # in-grid mask per sample
    corner_idx: np.ndarray  # (R*W, 8) flat voxel indices
    corner_w: np.ndarray  # (R*W, 8) interpolation weights


def render_rays(grid: ScalarGrid, origins, directions, cfg: RenderConfig,
                rng=None, want_cache=False):
    """Render expected depth along a batch of rays.

    origins: (3,) shared or (R, 3); directions: (R, 3) unit vectors.
    Out-of-grid samples contribute zero density. Returns (depth (R,),
    opacity (R,), cache or None).
    """
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    r = directions.shape[0]
    origins = np.asarray(origins, dtype=np.float64)
    t, delta = sample_rays(cfg.near, cfg.far, cfg.n_samples, r, rng)
    pts = origins.reshape(-1, 1, 3) + t[..., None] * directions[:, None, :]
    flat = pts.reshape(-1, 3)

    if cfg.interp == Interp.TRILINEAR:
        q, valid = trilinear_lattice_coords(grid.spec, flat)
        raw, cidx, cw = kernels.trilinear_gather(
            grid.values, np.ascontiguousarray(q),
            np.ascontiguousarray(valid, dtype=np.uint8))
    else:
        from .geometry import world_to_voxel
        _, idx, valid = world_to_voxel(flat, grid.spec)
        raw = np.where(valid, grid.values[idx[:, 0], idx[:, 1], idx[:, 2]], 0.0)
        cidx = cw = None

    sign_flip = grid.mode.name == "SDF" and grid.sdf_sign_flip
    sig = activate(raw, grid.mode, grid.beta, sign_flip)
    sig = np.where(valid, sig, 0.0).reshape(r, cfg.n_samples)

    weights, depth, opacity = kernels.composite_forward(
        np.ascontiguousarray(sig), np.ascontiguousarray(delta),
        np.ascontiguousarray(t))
    cache = None
    if want_cache:
        if cidx is None:
            raise ValueError("gradient cache requires trilinear interpolation")
        cache = RayRenderCache(t, delta, sig, raw.reshape(r, cfg.n_samples),
                               valid.reshape(r, cfg.n_samples), cidx, cw)
    return depth, opacity, cache


def render_depth_map(grid: ScalarGrid, camera: Camera, cfg: RenderConfig):
    """Render a full depth map: one ray through every pixel center, composite
    along each, and mask pixels whose accumulated opacity stays below the
    floor (nothing substantive along the ray).
    """
    intr = camera.intrinsics
    if intr.width == 0 or intr.height == 0:
        raise ValueError("camera resolution must be nonzero")
    origin, dirs = pixel_rays(intr, camera.cam_to_world)
    rng = None
    if cfg.jitter_seed is not None:
        rng = np.random.default_rng(cfg.jitter_seed)
    depth, opacity, _ = render_rays(grid, origin, dirs.reshape(-1, 3), cfg, rng)
    # composited depth is distance along the ray; store camera z-depth so
    # rendered maps compare directly against projected clouds
    fwd = camera.cam_to_world.rotation[:, 2]
    depth = depth * (dirs.reshape(-1, 3) @ fwd)
    depth = depth.reshape(intr.height, intr.width)
    opacity = opacity.reshape(intr.height, intr.width)
    valid = opacity >= cfg.opacity_floor
    return DepthMap(np.where(valid, depth, 0.0), valid)
