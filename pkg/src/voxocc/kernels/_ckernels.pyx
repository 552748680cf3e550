# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twins of the numpy reference kernels (see numpy_ref.py for the
contracts). Same inputs, same outputs, per-ray loops instead of vectorized
numpy temporaries."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, expm1, floor

cnp.import_array()

IMPL = "cython"


def composite_forward(double[:, ::1] sigma, double[:, ::1] delta, double[:, ::1] t):
    cdef Py_ssize_t r = sigma.shape[0], w = sigma.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] weights = np.empty((r, w))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] depth = np.empty(r)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] opacity = np.empty(r)
    cdef double[:, ::1] wv = weights
    cdef double[::1] dv = depth, ov = opacity
    cdef Py_ssize_t i, j
    cdef double trans, alpha, wij, d, o
    for i in range(r):
        trans = 1.0
        d = 0.0
        o = 0.0
        for j in range(w):
            alpha = -expm1(-sigma[i, j] * delta[i, j])
            wij = trans * alpha
            wv[i, j] = wij
            d += wij * t[i, j]
            o += wij
            trans *= 1.0 - alpha
        dv[i] = d
        ov[i] = o
    return weights, depth, opacity


def composite_backward(double[:, ::1] sigma, double[:, ::1] delta,
                       double[:, ::1] t, double[::1] grad_depth):
    cdef Py_ssize_t r = sigma.shape[0], w = sigma.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] grad = np.empty((r, w))
    cdef double[:, ::1] gv = grad
    cdef Py_ssize_t i, j
    cdef double acc, sd, trans, trans_next, suffix
    for i in range(r):
        # forward pass stashes the inclusive density integral, backward pass
        # turns it into transmittances and suffix sums
        acc = 0.0
        for j in range(w):
            acc += sigma[i, j] * delta[i, j]
            gv[i, j] = acc
        suffix = 0.0
        for j in range(w - 1, -1, -1):
            sd = sigma[i, j] * delta[i, j]
            trans_next = exp(-gv[i, j])
            trans = exp(-(gv[i, j] - sd))
            gv[i, j] = delta[i, j] * (trans_next * t[i, j] - suffix) * grad_depth[i]
            suffix += (trans - trans_next) * t[i, j]
    return grad


def trilinear_gather(double[:, :, ::1] values, double[:, ::1] q,
                     cnp.uint8_t[::1] valid):
    cdef Py_ssize_t n = q.shape[0]
    cdef Py_ssize_t nx = values.shape[0], ny = values.shape[1], nz = values.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] vals = np.zeros(n)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] cidx = np.zeros((n, 8), dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cw = np.zeros((n, 8))
    cdef double[::1] vv = vals
    cdef cnp.int64_t[:, ::1] iv = cidx
    cdef double[:, ::1] wvv = cw
    cdef Py_ssize_t i, a, b, c, k
    cdef Py_ssize_t x0, y0, z0, x1, y1, z1, xi, yi, zi
    cdef double qx, qy, qz, fx, fy, fz, wgt, acc
    cdef const double* flat = &values[0, 0, 0]
    for i in range(n):
        qx = q[i, 0]
        qy = q[i, 1]
        qz = q[i, 2]
        if qx < 0: qx = 0
        if qy < 0: qy = 0
        if qz < 0: qz = 0
        if qx > nx - 1: qx = nx - 1
        if qy > ny - 1: qy = ny - 1
        if qz > nz - 1: qz = nz - 1
        x0 = <Py_ssize_t>floor(qx)
        y0 = <Py_ssize_t>floor(qy)
        z0 = <Py_ssize_t>floor(qz)
        if x0 > nx - 2 and nx > 1: x0 = nx - 2
        if y0 > ny - 2 and ny > 1: y0 = ny - 2
        if z0 > nz - 2 and nz > 1: z0 = nz - 2
        fx = qx - x0
        fy = qy - y0
        fz = qz - z0
        x1 = x0 + 1 if x0 + 1 < nx else nx - 1
        y1 = y0 + 1 if y0 + 1 < ny else ny - 1
        z1 = z0 + 1 if z0 + 1 < nz else nz - 1
        acc = 0.0
        k = 0
        for a in range(2):
            xi = x0 if a == 0 else x1
            for b in range(2):
                yi = y0 if b == 0 else y1
                for c in range(2):
                    zi = z0 if c == 0 else z1
                    wgt = (fx if a else 1 - fx) * (fy if b else 1 - fy) * (fz if c else 1 - fz)
                    if not valid[i]:
                        wgt = 0.0
                    iv[i, k] = (xi * ny + yi) * nz + zi
                    wvv[i, k] = wgt
                    acc += flat[(xi * ny + yi) * nz + zi] * wgt
                    k += 1
        vv[i] = acc
    return vals, cidx, cw


def scatter_add(double[::1] grad_flat, cnp.int64_t[:, ::1] corner_idx,
                double[:, ::1] corner_w, double[::1] grad_vals):
    cdef Py_ssize_t n = corner_idx.shape[0]
    cdef Py_ssize_t i, k
    for i in range(n):
        for k in range(8):
            grad_flat[corner_idx[i, k]] += corner_w[i, k] * grad_vals[i]
