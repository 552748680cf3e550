import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxocc.geometry import Camera, CameraIntrinsics, GridSpec, Pose
from voxocc.render import (RaySamples, RenderConfig, composite,
                           composite_backward, render_depth_map, render_rays,
                           sample_ray, sample_rays)
from voxocc.volume import GridMode, Interp, ScalarGrid

# frozen values from an independent 40-digit decimal evaluation of the
# compositing recurrence with sigma=[1,2], delta=[0.5,0.5], t=[1,1.5]
W1_EXPECTED = 0.3934693402873666
W2_EXPECTED = 0.3834004995642036
DEPTH_EXPECTED = 0.9685700896336720


class TestSampling:
    def test_two_bin_midpoints(self):
        t, delta = sample_ray(0.0, 1.0, 2)
        assert np.allclose(t, [0.25, 0.75])
        assert np.allclose(delta[0], 0.5)

    def test_single_sample_midpoint(self):
        t, _ = sample_ray(2.0, 6.0, 1)
        assert np.allclose(t, [4.0])

    def test_stratified_reproducible(self):
        a = sample_rays(0.5, 20.0, 32, 8, np.random.default_rng(7))
        b = sample_rays(0.5, 20.0, 32, 8, np.random.default_rng(7))
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_stratified_one_per_bin(self, rng):
        n = 16
        t, _ = sample_ray(0.0, 8.0, n, rng)
        edges = np.linspace(0.0, 8.0, n + 1)
        assert ((t >= edges[:-1]) & (t < edges[1:])).all()
        assert (np.diff(t) > 0).all()

    def test_invalid_bounds_rejected(self):
        with pytest.raises(ValueError):
            sample_ray(5.0, 5.0, 4)
        with pytest.raises(ValueError):
            sample_ray(1.0, 2.0, 0)

    def test_last_delta_extends_to_far(self):
        t, delta = sample_ray(0.0, 10.0, 10)
        # last gap closes out the interval plus one bin width
        assert delta[-1] > 10.0 - t[-1]


class TestComposite:
    def test_empty_space(self):
        rs = RaySamples([1.0, 2.0], [1.0, 1.0], [0.0, 0.0])
        res = composite(rs)
        assert res.depth == 0.0 and res.opacity == 0.0
        assert np.allclose(res.weights, 0.0)

    def test_opaque_first_sample(self):
        rs = RaySamples([1.0, 2.0], [1.0, 1.0], [1e8, 1.0])
        res = composite(rs)
        assert abs(res.weights[0] - 1.0) < 1e-6
        assert abs(res.depth - 1.0) < 1e-6

    def test_two_sample_reference_values(self):
        rs = RaySamples([1.0, 1.5], [0.5, 0.5], [1.0, 2.0])
        res = composite(rs)
        assert abs(res.weights[0] - W1_EXPECTED) < 1e-12
        assert abs(res.weights[1] - W2_EXPECTED) < 1e-12
        assert abs(res.depth - DEPTH_EXPECTED) < 1e-12

    def test_weight_sum_identity(self, rng):
        for _ in range(200):
            w = int(rng.integers(1, 40))
            sigma = rng.uniform(0, 10, w)
            t, delta = sample_ray(0.1, 25.0, w, rng)
            res = composite(RaySamples(t, delta, sigma))
            assert (res.weights >= 0).all()
            total = res.weights.sum()
            assert total <= 1 + 1e-9
            assert abs(total - (1 - np.exp(-(sigma * delta).sum()))) < 1e-9

    def test_depth_between_first_and_last(self, rng):
        for _ in range(50):
            w = int(rng.integers(2, 30))
            sigma = rng.uniform(0.01, 5, w)
            t, delta = sample_ray(0.5, 15.0, w, rng)
            res = composite(RaySamples(t, delta, sigma))
            if res.opacity > 0:
                d = res.depth / res.weights.sum()  # opacity-normalized
                assert t[0] - 1e-9 <= d <= t[-1] + 1e-9

    def test_front_truncation_monotone(self, rng):
        for _ in range(50):
            w = 24
            sigma = rng.uniform(0, 4, w)
            t, delta = sample_ray(0.5, 15.0, w, rng)
            base = composite(RaySamples(t, delta, sigma)).depth
            k = int(rng.integers(1, w - 1))
            trunc = sigma.copy()
            trunc[:k] = 0.0
            res = composite(RaySamples(t, delta, trunc))
            if res.opacity > 1e-12:
                assert res.depth >= base - 1e-9

    def test_validation(self):
        with pytest.raises(ValueError):
            RaySamples([2.0, 1.0], [1.0, 1.0], [0.0, 0.0])
        with pytest.raises(ValueError):
            RaySamples([1.0, 2.0], [1.0, -1.0], [0.0, 0.0])
        with pytest.raises(ValueError):
            RaySamples([1.0, 2.0], [1.0, 1.0], [-0.1, 0.0])


class TestCompositeBackward:
    def test_single_sample_at_zero_density(self):
        # closed form: d/dsigma (1 - exp(-s d)) t at s=0 equals d * t
        rs = RaySamples([3.0], [0.7], [0.0])
        g = composite_backward(rs)
        assert abs(g[0] - 0.7 * 3.0) < 1e-12

    def test_matches_finite_differences(self, rng):
        for _ in range(100):
            w = int(rng.integers(1, 32))
            sigma = rng.uniform(0, 10, w)
            t, delta = sample_ray(0.1, 20.0, w, rng)
            g = composite_backward(RaySamples(t, delta, sigma))
            h = 1e-5
            for k in rng.choice(w, size=min(4, w), replace=False):
                sp, sm = sigma.copy(), sigma.copy()
                sp[k] += h
                sm[k] -= h
                fd = (composite(RaySamples(t, delta, sp)).depth
                      - composite(RaySamples(t, delta, sm)).depth) / (2 * h)
                assert abs(g[k] - fd) <= 1e-6 * max(1.0, abs(fd))

    def test_occluded_samples_get_no_gradient(self):
        rs = RaySamples([1.0, 2.0, 3.0], [1.0, 1.0, 1.0], [50.0, 1.0, 1.0])
        g = composite_backward(rs)
        assert abs(g[1]) < 1e-12 and abs(g[2]) < 1e-12

    def test_upstream_gradient_scales(self, rng):
        sigma = rng.uniform(0, 5, 8)
        t, delta = sample_ray(0.5, 10.0, 8, rng)
        rs = RaySamples(t, delta, sigma)
        assert np.allclose(composite_backward(rs, 2.5),
                           2.5 * composite_backward(rs), atol=1e-12)


def _slab_grid():
    """Opaque axis-aligned slab spanning z in [10, 10.5), camera at origin.
    Density mode so the slab can saturate within a voxel."""
    spec = GridSpec((-8, -8, 0), (8, 8, 16), (32, 32, 32))
    values = np.full(spec.dims, -50.0)
    zc = spec.minimum[2] + (np.arange(32) + 0.5) * spec.voxel_size[2]
    zmask = (zc >= 10.0) & (zc < 10.5)
    values[:, :, zmask] = 200.0
    return ScalarGrid(spec, values, GridMode.DENSITY)


class TestRenderDepthMap:
    CAM = Camera("c", CameraIntrinsics(60.0, 60.0, 16.0, 12.0, 32, 24),
                 Pose(np.eye(3), np.zeros(3)))

    def test_opaque_everywhere_hits_near(self):
        spec = GridSpec((-8, -8, 0), (8, 8, 16), (16, 16, 16))
        grid = ScalarGrid(spec, np.full(spec.dims, 200.0), GridMode.DENSITY)
        cfg = RenderConfig(n_samples=64, near=0.4, far=15.0)
        origins = np.zeros(3)
        dirs = np.array([[0.0, 0.0, 1.0], [0.0, 0.6, 0.8]])
        depth, opacity, _ = render_rays(grid, origins, dirs, cfg)
        t1 = 0.4 + (15.0 - 0.4) / 64 / 2
        assert np.all(np.abs(depth - t1) < 0.25)

    def test_probability_mode_mean_free_path(self):
        # sigmoid caps density at 1, so even a fully "occupied" probability
        # grid renders depth near + one unit mean free path, not the near plane
        spec = GridSpec((-8, -8, 0), (8, 8, 16), (16, 16, 16))
        grid = ScalarGrid(spec, np.full(spec.dims, 50.0), GridMode.PROBABILITY)
        cfg = RenderConfig(n_samples=512, near=0.4, far=15.0)
        depth, opacity, _ = render_rays(grid, np.zeros(3),
                                        np.array([[0.0, 0.0, 1.0]]), cfg)
        assert opacity[0] > 0.999
        # free space starts at z = 0.5 (half-voxel interpolation margin),
        # then one unit mean free path at density 1
        assert abs(depth[0] - 1.5) < 0.05

    def test_empty_grid_all_invalid(self):
        spec = GridSpec((-8, -8, 0), (8, 8, 16), (16, 16, 16))
        grid = ScalarGrid(spec, np.full(spec.dims, -50.0), GridMode.PROBABILITY)
        dm = render_depth_map(grid, self.CAM, RenderConfig(n_samples=48, far=15.0))
        assert not dm.valid.any()

    def test_slab_depth(self):
        grid = _slab_grid()
        dm = render_depth_map(grid, self.CAM, RenderConfig(n_samples=256, far=15.0))
        assert dm.valid[12, 16]
        assert abs(dm.depth[12, 16] - 10.0) <= grid.spec.voxel_size[2]

    def test_deterministic(self):
        grid = _slab_grid()
        cfg = RenderConfig(n_samples=64, far=15.0, jitter_seed=3)
        a = render_depth_map(grid, self.CAM, cfg)
        b = render_depth_map(grid, self.CAM, cfg)
        assert np.array_equal(a.depth, b.depth)
        assert np.array_equal(a.valid, b.valid)

    def test_nearest_interpolation_supported(self):
        grid = _slab_grid()
        cfg = RenderConfig(n_samples=256, far=15.0, interp=Interp.NEAREST)
        dm = render_depth_map(grid, self.CAM, cfg)
        assert dm.valid[12, 16]
        assert abs(dm.depth[12, 16] - 10.0) <= 2 * grid.spec.voxel_size[2]
