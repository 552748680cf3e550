"""Desk-scale end-to-end validation: synthetic scenes with exact ray-cast
ground truth, and direct optimization of a raw voxel grid against rendered
depth and/or point-label losses (no network anywhere).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .depthmap import DepthMap
from .geometry import (Camera, CameraIntrinsics, CameraRig, GridSpec, Pose,
                       Ray, pixel_rays)
from .labels import LabelSet, PointCloud, generate_labels
from .losses import (bce, photometric_loss, silog, warp, warp_depth_jacobian,
                     weighted_l1)
from .render import RenderConfig, render_rays, sample_rays
from .volume import (GridMode, Interp, ScalarGrid, activate_grad, sigmoid,
                     sdf_density_beta_grad, softplus, trilinear_lattice_coords)

ADAM_EPS = 1e-8


# ---------------------------------------------------------------------------
# Scene primitives and ray casting

@dataclass(frozen=True)
class GroundPlane:
    height: float


@dataclass(frozen=True)
class Box:
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "minimum", np.asarray(self.minimum, dtype=np.float64))
        object.__setattr__(self, "maximum", np.asarray(self.maximum, dtype=np.float64))


@dataclass
class Scene:
    primitives: list
    spec: GridSpec

    def __post_init__(self):
        if not self.primitives:
            raise ValueError("scene needs at least one primitive")

    @property
    def top_height(self) -> float:
        tops = [p.height if isinstance(p, GroundPlane) else float(p.maximum[1])
                for p in self.primitives]
        return max(tops)


def raycast_batch(scene: Scene, origins, directions, max_range: float):
    """Nearest positive intersection per ray over all primitives.

    origins broadcastable to (R, 3); directions (R, 3) unit. Returns
    (t (R,), hit (R,), normals (R, 3)); misses get t = inf.
    """
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    r = directions.shape[0]
    origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), (r, 3))
    best_t = np.full(r, np.inf)
    best_n = np.zeros((r, 3))
    eps = 1e-9
    for prim in scene.primitives:
        if isinstance(prim, GroundPlane):
            dy = directions[:, 1]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (prim.height - origins[:, 1]) / dy
            t = np.where(np.abs(dy) > eps, t, np.inf)
            ok = (t > eps) & (t < best_t)
            best_t = np.where(ok, t, best_t)
            n = np.where(origins[:, 1] >= prim.height, 1.0, -1.0)
            best_n[ok] = 0.0
            best_n[ok, 1] = n[ok]
        else:
            # slab method
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = 1.0 / directions
            t0 = (prim.minimum - origins) * inv
            t1 = (prim.maximum - origins) * inv
            tmin = np.minimum(t0, t1)
            tmax = np.maximum(t0, t1)
            # rays parallel to a slab: inside iff origin between the planes
            par = np.abs(directions) <= eps
            between = (origins >= prim.minimum) & (origins <= prim.maximum)
            tmin = np.where(par, np.where(between, -np.inf, np.inf), tmin)
            tmax = np.where(par, np.where(between, np.inf, -np.inf), tmax)
            enter_ax = np.argmax(tmin, axis=1)
            t_enter = np.max(tmin, axis=1)
            t_exit = np.min(tmax, axis=1)
            t_hit = np.where(t_enter > eps, t_enter, t_exit)
            ok = (t_exit >= np.maximum(t_enter, 0.0)) & (t_hit > eps) & (t_hit < best_t)
            best_t = np.where(ok, t_hit, best_t)
            idx = np.flatnonzero(ok)
            best_n[idx] = 0.0
            ax = enter_ax[idx]
            sgn = -np.sign(directions[idx, ax])
            best_n[idx, ax] = np.where(sgn == 0, 1.0, sgn)
    hit = np.isfinite(best_t) & (best_t <= max_range)
    return np.where(hit, best_t, np.inf), hit, best_n


def raycast(scene: Scene, ray: Ray, max_range: float):
    """Single-ray wrapper: hit distance, or None on a miss."""
    t, hit, _ = raycast_batch(scene, ray.origin, ray.direction[None, :], max_range)
    return float(t[0]) if hit[0] else None


def _shade(points, normals, directions):
    """Simple Lambertian-plus-texture value for synthesized images; gives the
    photometric loss actual structure to match."""
    lam = np.abs(np.sum(normals * (-directions), axis=-1))
    tex = (0.25 * np.sin(3.1 * points[:, 0]) * np.cos(2.3 * points[:, 2])
           + 0.15 * np.sin(5.7 * points[:, 2] + 1.3)
           + 0.1 * np.sin(4.9 * points[:, 1]))
    return np.clip(0.35 + 0.4 * lam + tex, 0.0, 1.0)


@dataclass
class ScanPattern:
    rings: int = 32
    azimuths: int = 180
    elevation_min_deg: float = -25.0
    elevation_max_deg: float = 8.0


@dataclass
class SynthesizedViews:
    depth_maps: list  # DepthMap per camera
    cloud: PointCloud
    images: list | None = None  # shaded target images, one per camera
    source_images: list | None = None  # shaded images from the source rig
    source_rig: CameraRig | None = None


def synthesize_views(scene: Scene, rig: CameraRig, lidar_origin,
                     scan: ScanPattern = ScanPattern(), max_range: float = 20.0,
                     with_images: bool = False,
                     source_offset=(0.15, 0.0, 0.1)) -> SynthesizedViews:
    """Exact ground truth by ray casting: per-pixel depth maps, a spherical
    lidar scan, and (optionally) shaded images for the target rig and a
    translated source rig for photometric supervision."""
    if len(rig) == 0:
        raise ValueError("rig must be nonempty")
    lidar_origin = np.asarray(lidar_origin, dtype=np.float64)

    depth_maps = []
    images = [] if with_images else None
    for cam in rig:
        dm, im = _render_view(scene, cam, max_range, with_images)
        depth_maps.append(dm)
        if with_images:
            images.append(im)

    # spherical scan
    el = np.linspace(np.deg2rad(scan.elevation_min_deg),
                     np.deg2rad(scan.elevation_max_deg), scan.rings)
    az = np.linspace(0.0, 2 * np.pi, scan.azimuths, endpoint=False)
    ee, aa = np.meshgrid(el, az, indexing="ij")
    dirs = np.stack([np.cos(ee) * np.sin(aa), np.sin(ee),
                     np.cos(ee) * np.cos(aa)], axis=-1).reshape(-1, 3)
    t, hit, _ = raycast_batch(scene, lidar_origin, dirs, max_range)
    cloud = PointCloud(lidar_origin + t[hit, None] * dirs[hit], lidar_origin)

    source_images = None
    source_rig = None
    if with_images:
        offset = np.asarray(source_offset, dtype=np.float64)
        cams = []
        for cam in rig:
            pose = Pose(cam.cam_to_world.rotation,
                        cam.cam_to_world.translation + offset)
            cams.append(Camera(cam.name + "_src", cam.intrinsics, pose))
        source_rig = CameraRig(tuple(cams))
        source_images = [_render_view(scene, cam, max_range, True)[1]
                         for cam in source_rig]
    return SynthesizedViews(depth_maps, cloud, images, source_images, source_rig)


def _render_view(scene: Scene, cam: Camera, max_range: float, with_image: bool):
    origin, dirs = pixel_rays(cam.intrinsics, cam.cam_to_world)
    h, w = dirs.shape[:2]
    flat = dirs.reshape(-1, 3)
    t, hit, normals = raycast_batch(scene, origin, flat, max_range)
    # depth map stores z-depth along the camera axis, consistent with project()
    fwd = cam.cam_to_world.rotation[:, 2]
    z = t * (flat @ fwd)
    dm = DepthMap(np.where(hit, z, 0.0).reshape(h, w), hit.reshape(h, w))
    image = None
    if with_image:
        pts = origin + np.where(hit, t, 0.0)[:, None] * flat
        vals = np.where(hit, _shade(pts, normals, flat), 0.0)
        image = vals.reshape(h, w)
    return dm, image


# ---------------------------------------------------------------------------
# Default desk-scale scene

def make_default_rig(width=160, height=96, n_cams=6, cam_height=1.4,
                     radius=0.5, pitch_deg=12.0) -> CameraRig:
    intr = CameraIntrinsics(fx=90.0, fy=90.0, cx=(width - 1) / 2.0,
                            cy=(height - 1) / 2.0, width=width, height=height)
    cams = []
    pitch = np.deg2rad(pitch_deg)
    up = np.array([0.0, 1.0, 0.0])
    for k in range(n_cams):
        yaw = 2 * np.pi * k / n_cams
        fwd = np.array([np.sin(yaw) * np.cos(pitch), -np.sin(pitch),
                        np.cos(yaw) * np.cos(pitch)])
        down = -up - fwd * np.dot(-up, fwd)
        down /= np.linalg.norm(down)
        right = np.cross(down, fwd)
        rot = np.stack([right, down, fwd], axis=1)
        pos = np.array([radius * np.sin(yaw), cam_height, radius * np.cos(yaw)])
        cams.append(Camera(f"cam{k}", intr, Pose(rot, pos)))
    return CameraRig(tuple(cams))


def make_default_scene() -> Scene:
    # Y extends half a meter below the ground plane so the trilinear field
    # has support on both sides of the surface
    spec = GridSpec((-10.0, -0.5, -10.0), (10.0, 2.5, 10.0), (64, 8, 64))
    prims = [
        GroundPlane(0.0),
        Box((2.5, 0.0, 1.0), (4.0, 1.6, 2.4)),
        Box((-4.5, 0.0, -3.8), (-3.0, 1.2, -2.2)),
    ]
    return Scene(prims, spec)


DEFAULT_LIDAR_ORIGIN = (0.0, 1.6, 0.0)


# ---------------------------------------------------------------------------
# Scene file I/O (JSON)

def save_scene(scene: Scene, path, rig_file=None, lidar_origin=DEFAULT_LIDAR_ORIGIN,
               scan: ScanPattern = ScanPattern()):
    prims = []
    for p in scene.primitives:
        if isinstance(p, GroundPlane):
            prims.append({"type": "ground", "height": p.height})
        else:
            prims.append({"type": "box", "min": list(map(float, p.minimum)),
                          "max": list(map(float, p.maximum))})
    doc = {
        "grid": {"min": list(map(float, scene.spec.minimum)),
                 "max": list(map(float, scene.spec.maximum)),
                 "dims": list(scene.spec.dims)},
        "primitives": prims,
        "lidar_origin": list(map(float, lidar_origin)),
        "scan": {"rings": scan.rings, "azimuths": scan.azimuths,
                 "elevation_min_deg": scan.elevation_min_deg,
                 "elevation_max_deg": scan.elevation_max_deg},
    }
    if rig_file is not None:
        doc["rig_file"] = str(rig_file)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def load_scene(path):
    """Returns (scene, lidar_origin, scan, rig_file or None)."""
    with open(path) as f:
        doc = json.load(f)
    g = doc["grid"]
    spec = GridSpec(g["min"], g["max"], tuple(g["dims"]))
    prims = []
    for p in doc["primitives"]:
        if p["type"] == "ground":
            prims.append(GroundPlane(float(p["height"])))
        elif p["type"] == "box":
            prims.append(Box(p["min"], p["max"]))
        else:
            raise ValueError(f"unknown primitive type {p['type']!r}")
    scan = ScanPattern(**doc.get("scan", {}))
    origin = np.asarray(doc.get("lidar_origin", DEFAULT_LIDAR_ORIGIN))
    return Scene(prims, spec), origin, scan, doc.get("rig_file")


# ---------------------------------------------------------------------------
# Optimization

@dataclass
class OptimConfig:
    lr: float = 0.3
    beta1: float = 0.9
    beta2: float = 0.999
    iters: int = 2000
    loss: dict = field(default_factory=lambda: {"silog": 1.0})
    batch_rays: int = 3072
    n_samples: int = 48
    near: float = 0.4
    far: float = 12.0
    gt_range: float = 9.5  # synthetic GT kept inside the grid extents
    omega: float = 5.0  # weighted-L1 balance
    label_samples: int = 30
    jitter: bool = True  # stratified sample jitter during fitting
    sky_weight: float = 0.05  # free-space pull on rays without a GT return

    def __post_init__(self):
        if isinstance(self.loss, str):
            self.loss = {self.loss: 1.0}
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must be in (0, 1)")
        if self.iters < 1:
            raise ValueError("need at least one iteration")


class Adam:
    """Plain Adam with bias correction; one moment pair per parameter array."""

    def __init__(self, shapes, lr, beta1=0.9, beta2=0.999, eps=ADAM_EPS):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]

    def step(self, params, grads):
        self.t += 1
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            m_hat = self.m[i] / (1 - self.b1 ** self.t)
            v_hat = self.v[i] / (1 - self.b2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def init_grid(spec: GridSpec, mode: GridMode, sdf_sign_flip=False) -> ScalarGrid:
    """Fitter initialization: indifferent probability, near-transparent
    density, or a uniformly positive signed distance."""
    if mode == GridMode.PROBABILITY:
        values = np.zeros(spec.dims)
    elif mode == GridMode.DENSITY:
        values = np.full(spec.dims, np.log(np.expm1(0.01)))  # softplus^-1(0.01)
    else:
        values = np.full(spec.dims, 0.5 * spec.voxel_diagonal)
    return ScalarGrid(spec, values, mode, beta=1.0, sdf_sign_flip=sdf_sign_flip)


def _collect_depth_rays(views: SynthesizedViews, rig: CameraRig):
    """Split camera rays into (origin, direction, GT distance) for pixels with
    a return and (origin, direction) for pixels without one. The no-return
    rays observed free space all the way out."""
    origins, dirs, gts = [], [], []
    sky_o, sky_d = [], []
    for cam, dm in zip(rig, views.depth_maps):
        origin, d = pixel_rays(cam.intrinsics, cam.cam_to_world)
        d = d.reshape(-1, 3)
        valid = dm.valid.ravel()
        # convert z-depth GT back to distance along the ray
        fwd = cam.cam_to_world.rotation[:, 2]
        along = dm.depth.ravel() / np.maximum(d @ fwd, 1e-12)
        origins.append(np.broadcast_to(origin, d.shape)[valid])
        dirs.append(d[valid])
        gts.append(along[valid])
        sky_o.append(np.broadcast_to(origin, d.shape)[~valid])
        sky_d.append(d[~valid])
    return (np.concatenate(origins), np.concatenate(dirs),
            np.concatenate(gts), np.concatenate(sky_o), np.concatenate(sky_d))


def _chain_to_grid(grid: ScalarGrid, cache, grad_sigma, grad_flat,
                   beta_grad_acc):
    """Back-propagate d(loss)/d(sigma) through activation and trilinear
    interpolation into the flat grid gradient (and beta for SDF grids)."""
    flip = grid.mode == GridMode.SDF and grid.sdf_sign_flip
    act = activate_grad(cache.raw, grid.mode, grid.beta, flip)
    grad_raw = grad_sigma * act * cache.valid
    kernels.scatter_add(grad_flat, cache.corner_idx, cache.corner_w,
                        np.ascontiguousarray(grad_raw.ravel()))
    if grid.mode == GridMode.SDF:
        s = -cache.raw if flip else cache.raw
        db = sdf_density_beta_grad(s, grid.beta)
        beta_grad_acc += float(np.sum(grad_sigma * db * cache.valid))
    return beta_grad_acc


def fit(grid: ScalarGrid, views: SynthesizedViews, rig: CameraRig,
        cfg: OptimConfig, seed: int = 0):
    """Adam-optimize raw voxel values (and beta for SDF grids) against the
    configured loss mixture. Deterministic under a fixed seed. Returns
    (grid, history) with history rows (iter, loss, wall_ms).

    Rendered-depth losses composite a virtual background at the far bound so
    empty rays predict `far` with a well-defined gradient.
    """
    for name in cfg.loss:
        if name not in ("silog", "bce", "weighted_l1", "photometric"):
            raise ValueError(f"unknown loss {name!r}")
        if name in ("bce", "weighted_l1") and grid.mode != GridMode.PROBABILITY:
            raise ValueError(f"{name} fitting requires a probability grid")
    if "photometric" in cfg.loss and (views.images is None
                                      or views.source_images is None):
        raise ValueError("photometric fitting needs synthesized images")

    rng = np.random.default_rng(seed)
    rcfg = RenderConfig(n_samples=cfg.n_samples, near=cfg.near, far=cfg.far,
                        interp=Interp.TRILINEAR)

    need_depth_rays = "silog" in cfg.loss
    if need_depth_rays:
        ray_o, ray_d, ray_gt, sky_o, sky_d = _collect_depth_rays(views, rig)

    labels = None
    if "bce" in cfg.loss or "weighted_l1" in cfg.loss:
        labels = generate_labels(views.cloud, grid.spec, cfg.label_samples, seed)
        occ_q, occ_valid = trilinear_lattice_coords(grid.spec, labels.occupied)
        emp_q, emp_valid = trilinear_lattice_coords(grid.spec, labels.empty)
        occ_q = np.ascontiguousarray(occ_q)
        emp_q = np.ascontiguousarray(emp_q)
        occ_vu8 = np.ascontiguousarray(occ_valid, dtype=np.uint8)
        emp_vu8 = np.ascontiguousarray(emp_valid, dtype=np.uint8)

    adam = Adam([grid.spec.dims, ()], cfg.lr, cfg.beta1, cfg.beta2)
    history = []
    for it in range(cfg.iters):
        t0 = time.perf_counter()
        grad_flat = np.zeros(grid.spec.n_voxels)
        beta_grad = 0.0
        total = 0.0

        if need_depth_rays:
            n = ray_o.shape[0]
            sel = rng.choice(n, size=min(cfg.batch_rays, n), replace=False)
            depth, opacity, cache = render_rays(grid, ray_o[sel], ray_d[sel],
                                                rcfg, rng if cfg.jitter else None,
                                                want_cache=True)
            # raw composited depth, floored so the log stays finite on rays
            # that transiently go empty; no background term (a background
            # would let near fog plus leftover transmittance fake any depth)
            floor = 0.5 * cfg.near
            pred = np.maximum(depth, floor)
            lv = silog(pred, ray_gt[sel])
            w = cfg.loss["silog"]
            total += w * lv.value
            gp = w * lv.gradient * (depth > floor)
            gs = kernels.composite_backward(
                np.ascontiguousarray(cache.sigma),
                np.ascontiguousarray(cache.delta),
                np.ascontiguousarray(cache.t), np.ascontiguousarray(gp))
            beta_grad = _chain_to_grid(grid, cache, gs, grad_flat, beta_grad)

            if cfg.sky_weight > 0 and sky_o.shape[0] > 0:
                # rays with no return saw through: pull their accumulated
                # opacity toward zero so unobstructed corridors stay clear
                m = sky_o.shape[0]
                sel = rng.choice(m, size=min(cfg.batch_rays // 8, m),
                                 replace=False)
                _, sky_op, scache = render_rays(
                    grid, sky_o[sel], sky_d[sel], rcfg,
                    rng if cfg.jitter else None, want_cache=True)
                wk = cfg.sky_weight * cfg.loss["silog"]
                total += wk * float(np.mean(sky_op))
                # d(opacity)/d(sigma_k) = delta_k * (1 - opacity)
                gsky = (wk / sky_op.size) * scache.delta \
                    * (1.0 - sky_op)[:, None]
                beta_grad = _chain_to_grid(grid, scache, gsky, grad_flat,
                                           beta_grad)

        if labels is not None:
            raw_o, ci_o, cw_o = kernels.trilinear_gather(grid.values, occ_q, occ_vu8)
            raw_e, ci_e, cw_e = kernels.trilinear_gather(grid.values, emp_q, emp_vu8)
            p_o = sigmoid(raw_o)
            p_e = sigmoid(raw_e)
            if "bce" in cfg.loss:
                w = cfg.loss["bce"]
                p_all = np.concatenate([p_o, p_e])
                y = np.concatenate([np.ones_like(p_o), np.zeros_like(p_e)])
                lv = bce(p_all, y)
                total += w * lv.value
                g = w * lv.gradient
                g_raw_o = g[: p_o.size] * p_o * (1 - p_o) * occ_valid
                g_raw_e = g[p_o.size:] * p_e * (1 - p_e) * emp_valid
                kernels.scatter_add(grad_flat, ci_o, cw_o, np.ascontiguousarray(g_raw_o))
                kernels.scatter_add(grad_flat, ci_e, cw_e, np.ascontiguousarray(g_raw_e))
            if "weighted_l1" in cfg.loss:
                w = cfg.loss["weighted_l1"]
                lv, g_emp = weighted_l1(p_o, p_e, cfg.omega)
                total += w * lv.value
                g_raw_o = w * lv.gradient * p_o * (1 - p_o) * occ_valid
                g_raw_e = w * g_emp * p_e * (1 - p_e) * emp_valid
                kernels.scatter_add(grad_flat, ci_o, cw_o, np.ascontiguousarray(g_raw_o))
                kernels.scatter_add(grad_flat, ci_e, cw_e, np.ascontiguousarray(g_raw_e))

        if "photometric" in cfg.loss:
            w = cfg.loss["photometric"]
            for cam, tgt_im, src_cam, src_im in zip(
                    rig, views.images, views.source_rig, views.source_images):
                intr = cam.intrinsics
                origin, d = pixel_rays(intr, cam.cam_to_world)
                depth, opacity, cache = render_rays(
                    grid, origin, d.reshape(-1, 3), rcfg, want_cache=True)
                t_end = 1.0 - opacity
                fwd = cam.cam_to_world.rotation[:, 2]
                scale = d.reshape(-1, 3) @ fwd  # ray distance -> z-depth
                pred = (depth + t_end * cfg.far) * scale
                dm = DepthMap(pred.reshape(intr.height, intr.width),
                              np.ones((intr.height, intr.width), dtype=bool))
                t2s = src_cam.cam_to_world.inverse().compose(cam.cam_to_world)
                synth, ok = warp(src_im, dm, intr, t2s)
                lv = photometric_loss(tgt_im, synth, ok)
                total += w * lv.value / len(rig)
                jac, _ = warp_depth_jacobian(src_im, dm, intr, t2s)
                g_depth = (w / len(rig)) * (lv.gradient * jac).ravel() * scale
                gs = kernels.composite_backward(
                    np.ascontiguousarray(cache.sigma),
                    np.ascontiguousarray(cache.delta),
                    np.ascontiguousarray(cache.t),
                    np.ascontiguousarray(g_depth))
                gs -= g_depth[:, None] * cfg.far * t_end[:, None] * cache.delta
                beta_grad = _chain_to_grid(grid, cache, gs, grad_flat, beta_grad)

        grads = [grad_flat.reshape(grid.spec.dims), np.asarray(beta_grad)]
        if grid.mode == GridMode.SDF:
            beta_param = np.asarray(grid.beta, dtype=np.float64)
            adam.step([grid.values, beta_param], grads)
            grid.beta = float(np.maximum(beta_param, 1e-3))
        else:
            adam.step([grid.values, np.zeros(())], grads)
        history.append((it, float(total), (time.perf_counter() - t0) * 1e3))
    return grid, history


def history_csv(history) -> str:
    # wall time stays out of the file so reruns are byte-identical
    lines = ["iter,loss"]
    lines += [f"{i},{loss:.9g}" for i, loss, _ in history]
    return "\n".join(lines) + "\n"
