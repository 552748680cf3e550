"""Pure-numpy reference implementations of the hot kernels.

These are the fallback used when the compiled extension is unavailable
(or when VOXOCC_PURE_PYTHON is set); the compiled module implements the
same contracts and is checked against these in the test suite.
"""

import numpy as np

IMPL = "numpy"


def composite_forward(sigma, delta, t):
    """Alpha-composite densities along rays into expected depth.

    sigma, delta, t: (R, W) arrays. Returns (weights (R, W), depth (R),
    opacity (R)) with weights[i] = T_i * (1 - exp(-sigma_i * delta_i)) and
    T_i the transmittance up to sample i.
    """
    sd = sigma * delta
    alpha = -np.expm1(-sd)
    # transmittance: exclusive prefix product of exp(-sd)
    acc = np.cumsum(sd, axis=-1)
    trans = np.exp(-(acc - sd))
    weights = trans * alpha
    depth = np.sum(weights * t, axis=-1)
    opacity = np.sum(weights, axis=-1)
    return weights, depth, opacity


def composite_backward(sigma, delta, t, grad_depth):
    """Gradient of composited depth w.r.t. sigma.

    d(depth)/d(sigma_k) = delta_k * (T_{k+1} * t_k - sum_{i>k} w_i t_i),
    evaluated with suffix sums in O(W) per ray.
    """
    sd = sigma * delta
    acc = np.cumsum(sd, axis=-1)
    trans = np.exp(-(acc - sd))          # T_k
    trans_next = np.exp(-acc)            # T_{k+1} = T_k * exp(-sd_k)
    weights = trans - trans_next         # T_k * alpha_k
    wt = weights * t
    # suffix_k = sum_{i>k} w_i t_i
    total = np.sum(wt, axis=-1, keepdims=True)
    suffix = total - np.cumsum(wt, axis=-1)
    grad_sigma = delta * (trans_next * t - suffix)
    return grad_sigma * np.asarray(grad_depth)[..., None]


def trilinear_gather(values, q, valid):
    """Gather trilinear interpolants at lattice coordinates q (N, 3).

    Voxel centers sit at integer q. Returns (vals (N,), corner_idx (N, 8)
    flat indices into values.ravel(), corner_w (N, 8)); invalid samples get
    value 0 and zero weights so scatter is a no-op for them.
    """
    nx, ny, nz = values.shape
    dims = np.array([nx, ny, nz])
    qc = np.clip(q, 0.0, dims - 1.0)
    i0 = np.floor(qc).astype(np.int64)
    np.clip(i0, 0, np.maximum(dims - 2, 0), out=i0)
    f = qc - i0
    i1 = np.minimum(i0 + 1, dims - 1)

    wx = np.stack([1 - f[:, 0], f[:, 0]], axis=1)
    wy = np.stack([1 - f[:, 1], f[:, 1]], axis=1)
    wz = np.stack([1 - f[:, 2], f[:, 2]], axis=1)
    ix = np.stack([i0[:, 0], i1[:, 0]], axis=1)
    iy = np.stack([i0[:, 1], i1[:, 1]], axis=1)
    iz = np.stack([i0[:, 2], i1[:, 2]], axis=1)

    # 8 corners in (x, y, z) bit order
    corner_w = (wx[:, :, None, None] * wy[:, None, :, None]
                * wz[:, None, None, :]).reshape(-1, 8)
    corner_idx = ((ix[:, :, None, None] * ny + iy[:, None, :, None]) * nz
                  + iz[:, None, None, :]).reshape(-1, 8)
    corner_w = np.where(valid[:, None], corner_w, 0.0)
    vals = np.sum(values.ravel()[corner_idx] * corner_w, axis=1)
    return vals, corner_idx, corner_w


def scatter_add(grad_flat, corner_idx, corner_w, grad_vals):
    """Accumulate per-sample gradients into the flat grid gradient buffer."""
    contrib = np.bincount(corner_idx.ravel(),
                          weights=(corner_w * grad_vals[:, None]).ravel(),
                          minlength=grad_flat.size)
    grad_flat += contrib
