"""Training objectives: scale-invariant log depth loss, binary cross
entropy, balanced L1 on sampled points, and photometric reconstruction with
SSIM — each with the analytic gradients the fitter consumes — plus the
differentiable image warp for self-supervision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .depthmap import DepthMap
from .geometry import CameraIntrinsics, Pose, bilinear_sample

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
BCE_EPS = 1e-7


@dataclass
class LossValue:
    value: float
    gradient: np.ndarray | None = None


def silog(pred, gt, lam: float = 0.85, alpha: float = 10.0) -> LossValue:
    """Scale-invariant logarithmic depth loss over paired positive depths.

    L = alpha * sqrt(mean(e^2) - lam * (sum(e))^2 / M^2), e = log pred - log gt.
    Gradient is w.r.t. pred; defined as 0 at the degenerate zero-radicand
    point (the global optimum).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.size == 0:
        raise ValueError("no valid pixels")
    if (pred <= 0).any() or (gt <= 0).any():
        raise ValueError("silog needs positive depths")
    m = pred.size
    e = np.log(pred) - np.log(gt)
    s = e.sum()
    radicand = np.mean(e ** 2) - lam * s * s / (m * m)
    if radicand < -1e-12:
        raise ValueError(f"negative silog radicand {radicand:.3e}")
    radicand = max(radicand, 0.0)
    root = np.sqrt(radicand)
    value = alpha * root
    if root == 0.0:
        grad = np.zeros_like(pred)
    else:
        de = (2.0 * e / m - 2.0 * lam * s / (m * m)) * (alpha / (2.0 * root))
        grad = de / pred
    return LossValue(float(value), grad)


def bce(pred_prob, labels) -> LossValue:
    """Mean binary cross entropy with predictions clamped to
    [eps, 1 - eps]; gradient w.r.t. the (unclamped) predictions, zero in the
    clamped region."""
    p = np.asarray(pred_prob, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.size == 0:
        raise ValueError("no samples")
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    value = -np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    grad = np.where((p > BCE_EPS) & (p < 1.0 - BCE_EPS),
                    (pc - y) / (pc * (1.0 - pc)) / p.size, 0.0)
    return LossValue(float(value), grad)


def weighted_l1(p_occupied, p_empty, omega: float = 5.0):
    """Balanced L1 on sampled occupancy probabilities: mean |1 - p| over
    occupied points plus omega times mean |p| over empty samples.

    Returns (LossValue w.r.t. p_occupied, gradient w.r.t. p_empty); either
    side may be empty but not both.
    """
    po = np.asarray(p_occupied, dtype=np.float64)
    pe = np.asarray(p_empty, dtype=np.float64)
    if po.size == 0 and pe.size == 0:
        raise ValueError("both label sets empty")
    value = 0.0
    grad_occ = np.zeros_like(po)
    grad_emp = np.zeros_like(pe)
    if po.size:
        value += np.mean(np.abs(1.0 - po))
        grad_occ = -np.sign(1.0 - po) / po.size
    if pe.size:
        value += omega * np.mean(np.abs(pe))
        grad_emp = omega * np.sign(pe) / pe.size
    return LossValue(float(value), grad_occ), grad_emp


# ---------------------------------------------------------------------------
# Image warping

def warp(source, target_depth: DepthMap, intr: CameraIntrinsics,
         target_to_source: Pose):
    """Synthesize the target view from the source image.

    Each valid target pixel is lifted with its depth, moved by the relative
    pose, projected into the source camera (same intrinsics), and bilinearly
    sampled. Returns (image, valid); pixels that land behind the camera or
    outside the source frame are invalid and zeroed.
    """
    source = np.asarray(source, dtype=np.float64)
    h, w = target_depth.shape
    u, v = np.meshgrid(np.arange(w, dtype=np.float64),
                       np.arange(h, dtype=np.float64))
    d = target_depth.depth
    dv = target_depth.valid & (d > 0)
    dsafe = np.where(dv, d, 1.0)
    x = (u - intr.cx) / intr.fx * dsafe
    y = (v - intr.cy) / intr.fy * dsafe
    p_t = np.stack([x, y, dsafe], axis=-1)
    p_s = target_to_source.apply(p_t.reshape(-1, 3)).reshape(h, w, 3)
    z = p_s[..., 2]
    front = z > 0
    zsafe = np.where(front, z, 1.0)
    us = intr.fx * p_s[..., 0] / zsafe + intr.cx
    vs = intr.fy * p_s[..., 1] / zsafe + intr.cy
    vals, ok = bilinear_sample(source, us, vs)
    valid = dv & front & ok
    if vals.ndim == 3:
        vals = np.where(valid[..., None], vals, 0.0)
    else:
        vals = np.where(valid, vals, 0.0)
    return vals, valid


def warp_depth_jacobian(source, target_depth: DepthMap, intr: CameraIntrinsics,
                        target_to_source: Pose):
    """d(warped image)/d(target depth) per pixel, for chaining the
    photometric loss back to rendered depth. Grayscale sources only."""
    source = np.asarray(source, dtype=np.float64)
    if source.ndim != 2:
        raise ValueError("depth jacobian supports single-channel sources")
    h, w = target_depth.shape
    u, v = np.meshgrid(np.arange(w, dtype=np.float64),
                       np.arange(h, dtype=np.float64))
    d = target_depth.depth
    dv = target_depth.valid & (d > 0)
    dsafe = np.where(dv, d, 1.0)
    # camera-frame direction at unit depth
    kx = (u - intr.cx) / intr.fx
    ky = (v - intr.cy) / intr.fy
    r = target_to_source.rotation
    t = target_to_source.translation
    # p_s = (r @ k) * d + t, linear in d per pixel
    a = r[0, 0] * kx + r[0, 1] * ky + r[0, 2]
    b = r[1, 0] * kx + r[1, 1] * ky + r[1, 2]
    c = r[2, 0] * kx + r[2, 1] * ky + r[2, 2]
    xs = a * dsafe + t[0]
    ys = b * dsafe + t[1]
    zs = c * dsafe + t[2]
    front = zs > 0
    zsafe = np.where(front, zs, 1.0)
    us = intr.fx * xs / zsafe + intr.cx
    vs = intr.fy * ys / zsafe + intr.cy
    # quotient rule on (a d + tx) / (c d + tz)
    dus_dd = intr.fx * (a * t[2] - c * t[0]) / (zsafe * zsafe)
    dvs_dd = intr.fy * (b * t[2] - c * t[1]) / (zsafe * zsafe)
    gx, gy, ok = _bilinear_gradient(source, us, vs)
    valid = dv & front & ok
    jac = np.where(valid, gx * dus_dd + gy * dvs_dd, 0.0)
    return jac, valid


def _bilinear_gradient(image, u, v):
    """Spatial derivative of bilinear sampling w.r.t. (u, v)."""
    h, w = image.shape
    valid = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    uc = np.clip(u, 0, w - 1)
    vc = np.clip(v, 0, h - 1)
    u0 = np.clip(np.floor(uc).astype(np.int64), 0, max(w - 2, 0))
    v0 = np.clip(np.floor(vc).astype(np.int64), 0, max(h - 2, 0))
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = uc - u0
    fv = vc - v0
    gx = ((image[v0, u1] - image[v0, u0]) * (1 - fv)
          + (image[v1, u1] - image[v1, u0]) * fv)
    gy = ((image[v1, u0] - image[v0, u0]) * (1 - fu)
          + (image[v1, u1] - image[v0, u1]) * fu)
    return gx, gy, valid


# ---------------------------------------------------------------------------
# SSIM / photometric loss (3x3 uniform box window, reflect padding)

def _box3(x):
    xp = np.pad(x, 1, mode="reflect")
    out = np.zeros_like(x)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            out += xp[1 + dy: 1 + dy + x.shape[0], 1 + dx: 1 + dx + x.shape[1]]
    return out / 9.0


def _box3_adjoint(g):
    """Adjoint of the reflect-padded 3x3 box filter."""
    h, w = g.shape
    acc = np.zeros((h + 2, w + 2))
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            acc[1 + dy: 1 + dy + h, 1 + dx: 1 + dx + w] += g
    acc /= 9.0
    # fold the padding back (adjoint of reflect pad)
    out = acc[1:-1, 1:-1].copy()
    out[1, :] += acc[0, 1:-1]
    out[-2, :] += acc[-1, 1:-1]
    out[:, 1] += acc[1:-1, 0]
    out[:, -2] += acc[1:-1, -1]
    out[1, 1] += acc[0, 0]
    out[1, -2] += acc[0, -1]
    out[-2, 1] += acc[-1, 0]
    out[-2, -2] += acc[-1, -1]
    return out


def ssim(a, b):
    """Per-pixel SSIM map between two single-channel images."""
    mu_a = _box3(a)
    mu_b = _box3(b)
    var_a = _box3(a * a) - mu_a ** 2
    var_b = _box3(b * b) - mu_b ** 2
    cov = _box3(a * b) - mu_a * mu_b
    n1 = 2 * mu_a * mu_b + SSIM_C1
    n2 = 2 * cov + SSIM_C2
    d1 = mu_a ** 2 + mu_b ** 2 + SSIM_C1
    d2 = var_a + var_b + SSIM_C2
    return (n1 * n2) / (d1 * d2)


def photometric_loss(target, synthesized, mask, beta: float = 0.85) -> LossValue:
    """Masked mean of beta * (1 - SSIM)/2 + (1 - beta) * |target - synth|.

    Gradient is w.r.t. the synthesized image (full image shape; the SSIM
    window lets masked-pixel terms depend on neighbors outside the mask).
    Single-channel images.
    """
    x = np.asarray(target, dtype=np.float64)
    y = np.asarray(synthesized, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if x.shape != y.shape or x.shape != mask.shape:
        raise ValueError("image and mask shapes differ")
    m = int(mask.sum())
    if m == 0:
        raise ValueError("empty mask")

    mu_x = _box3(x)
    mu_y = _box3(y)
    var_y = _box3(y * y) - mu_y ** 2
    var_x = _box3(x * x) - mu_x ** 2
    cov = _box3(x * y) - mu_x * mu_y
    n1 = 2 * mu_x * mu_y + SSIM_C1
    n2 = 2 * cov + SSIM_C2
    d1 = mu_x ** 2 + mu_y ** 2 + SSIM_C1
    d2 = var_x + var_y + SSIM_C2
    s = (n1 * n2) / (d1 * d2)

    absdiff = np.abs(x - y)
    value = np.mean(beta * (1.0 - s[mask]) / 2.0 + (1.0 - beta) * absdiff[mask])

    # d(value)/dS at each pixel, then back through the box filters
    g = np.where(mask, -beta / (2.0 * m), 0.0)
    inv = 1.0 / (d1 * d2)
    ds_dn1 = n2 * inv
    ds_dn2 = n1 * inv
    ds_dd1 = -s / d1
    ds_dd2 = -s / d2
    # S depends on mu_y, B[y^2] and B[xy]:
    #   n2 = 2(B[xy] - mu_x mu_y) + C2, d2 = B[y^2] - mu_y^2 + var_x + C2
    g_mu_y = g * (ds_dn1 * 2 * mu_x + ds_dn2 * (-2 * mu_x) + ds_dd1 * 2 * mu_y
                  + ds_dd2 * (-2 * mu_y))
    g_by2 = g * ds_dd2
    g_bxy = g * ds_dn2 * 2
    grad = (_box3_adjoint(g_mu_y)
            + _box3_adjoint(g_by2) * 2 * y
            + _box3_adjoint(g_bxy) * x)
    grad += np.where(mask, (1.0 - beta) * np.sign(y - x) / m, 0.0)
    return LossValue(float(value), grad)
