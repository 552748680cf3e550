"""Built-in sanity suites: compositing identities, finite-difference
gradient checks, metric cross-checks, and file-format round-trips. Fast
enough to run on every install; `voxocc selfcheck` wires this up."""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np

from . import depthmap, kernels, labels, meshing, metrics, volume
from .geometry import GridSpec
from .losses import bce, photometric_loss, silog, weighted_l1
from .render import RaySamples, composite, composite_backward, sample_rays
from .volume import GridMode, ScalarGrid


def _check_compositing(rng):
    n = 0
    sigma = rng.uniform(0, 10, (500, 16))
    t, delta = sample_rays(0.1, 20.0, 16, 500, rng)
    w, d, o = kernels.composite_forward(sigma, delta, t)
    assert np.all(w >= 0)
    assert np.allclose(o, -np.expm1(-np.sum(sigma * delta, axis=1)), atol=1e-9)
    n += 1
    rs = RaySamples(t[0], delta[0], np.zeros(16))
    res = composite(rs)
    assert res.depth == 0.0 and res.opacity == 0.0
    n += 1
    return n


def _check_gradients(rng):
    n = 0
    for _ in range(50):
        w = int(rng.integers(1, 20))
        sigma = rng.uniform(0, 5, w)
        t, delta = sample_rays(0.1, 10.0, w, 1, rng)
        rs = RaySamples(t[0], delta[0], sigma)
        g = composite_backward(rs)
        h = 1e-5
        for k in range(w):
            sp, sm = sigma.copy(), sigma.copy()
            sp[k] += h
            sm[k] -= h
            fd = (composite(RaySamples(t[0], delta[0], sp)).depth
                  - composite(RaySamples(t[0], delta[0], sm)).depth) / (2 * h)
            assert abs(g[k] - fd) <= 1e-6 * max(1.0, abs(fd))
        n += 1
    # loss gradients
    for _ in range(20):
        pred = rng.uniform(0.5, 10, 12)
        gt = rng.uniform(0.5, 10, 12)
        lv = silog(pred, gt)
        for k in range(4):
            h = 1e-6
            pp, pm = pred.copy(), pred.copy()
            pp[k] += h
            pm[k] -= h
            fd = (silog(pp, gt).value - silog(pm, gt).value) / (2 * h)
            assert abs(lv.gradient[k] - fd) <= 1e-4 * max(1.0, abs(fd))
        n += 1
    return n


def _check_metrics(rng):
    n = 0
    spec = GridSpec((0, 0, 0), (8, 8, 8), (16, 16, 16))
    values = rng.normal(0, 2, spec.dims)
    grid = ScalarGrid(spec, values, GridMode.PROBABILITY)
    pts = rng.uniform(0.5, 7.5, (30, 3))
    occ = metrics.occupied_at_many(grid, pts, 0.5)
    for p, o in zip(pts, occ):
        idx = tuple(np.floor(p / spec.voxel_size).astype(int))
        assert o == (1 / (1 + np.exp(-values[idx])) >= 0.5)
    n += 1
    pred = rng.uniform(1, 50, 40)
    gt = rng.uniform(1, 50, 40)
    rep = metrics.depth_statistics(pred, gt)
    assert abs(rep.abs_rel - np.mean(np.abs(pred - gt) / gt)) < 1e-12
    assert rep.delta1 <= rep.delta2 <= rep.delta3
    n += 1
    return n


def _check_roundtrips(rng):
    n = 0
    with tempfile.TemporaryDirectory() as td:
        td = Path(td)
        spec = GridSpec((-1, 0, -1), (1, 1, 1), (4, 2, 4))
        vals = rng.normal(0, 1, spec.dims).astype(np.float32).astype(np.float64)
        g = ScalarGrid(spec, vals, GridMode.DENSITY, 1.0)
        volume.save_grid(g, td / "g.occ")
        g2 = volume.load_grid(td / "g.occ")
        assert np.array_equal(g.values, g2.values)
        n += 1
        dm = depthmap.DepthMap(rng.uniform(0.5, 60, (6, 7)),
                               rng.random((6, 7)) > 0.3)
        depthmap.save_f32(dm, td / "d.f32")
        d2 = depthmap.load_f32(td / "d.f32")
        assert np.array_equal(d2.valid, dm.valid)
        n += 1
        cloud = labels.PointCloud(rng.uniform(-5, 5, (25, 3)), (0, 0, 0))
        labels.save_cloud_bin(cloud, td / "c.bin")
        c2 = labels.load_cloud_bin(td / "c.bin")
        assert len(c2) == 25
        n += 1
        mesh = meshing.Mesh(np.array([[0, 0, 0], [1.0, 0, 0], [0, 1.0, 0]]),
                            np.array([[0, 1, 2]]))
        meshing.write_ply(mesh, td / "m.ply")
        m2 = meshing.read_ply(td / "m.ply")
        assert len(m2.triangles) == 1
        n += 1
    return n


def run() -> int:
    rng = np.random.default_rng(0)
    suites = [("compositing", _check_compositing),
              ("gradients", _check_gradients),
              ("metrics", _check_metrics),
              ("roundtrips", _check_roundtrips)]
    failed = False
    for name, fn in suites:
        try:
            count = fn(rng)
            print(f"{name}: {count} checks passed")
        except AssertionError as e:
            print(f"{name}: FAILED ({e})")
            failed = True
    print(f"kernel implementation: {kernels.IMPL}")
    return 1 if failed else 0
