import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxocc.geometry import (Camera, CameraIntrinsics, CameraRig, GeometryError,
                             GridSpec, Pose, Ray, backproject, bilinear_sample,
                             load_rig, pixel_rays, project, save_rig,
                             voxel_center, world_to_voxel)

from conftest import random_rotation

IDENTITY = Pose(np.eye(3), np.zeros(3))
INTR = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 100, 100)


def wide_spec():
    return GridSpec((-52.0, 0.0, -52.0), (52.0, 6.0, 52.0), (256, 16, 256))


class TestPose:
    def test_non_orthonormal_rejected(self):
        with pytest.raises(GeometryError):
            Pose(np.eye(3) * 2.0, np.zeros(3))

    def test_compose_inverse_is_identity(self, rng):
        for _ in range(50):
            p = Pose(random_rotation(rng), rng.normal(size=3))
            m = p.compose(p.inverse()).matrix()
            assert np.allclose(m, np.eye(4), atol=1e-9)

    def test_apply_matches_matrix(self, rng):
        p = Pose(random_rotation(rng), rng.normal(size=3))
        pts = rng.normal(size=(20, 3))
        hom = np.concatenate([pts, np.ones((20, 1))], axis=1)
        expected = (p.matrix() @ hom.T).T[:, :3]
        assert np.allclose(p.apply(pts), expected, atol=1e-12)


class TestVoxelIndexing:
    def test_lower_corner(self):
        spec = wide_spec()
        coords, idx, inside = world_to_voxel(spec.minimum, spec)
        assert tuple(idx) == (0, 0, 0) and inside

    def test_upper_bound_excluded(self):
        spec = wide_spec()
        _, _, inside = world_to_voxel(spec.maximum, spec)
        assert not inside

    def test_wide_grid_center_index(self):
        _, idx, inside = world_to_voxel((0.0, 3.0, 0.0), wide_spec())
        assert tuple(idx) == (128, 8, 128) and inside

    def test_wide_grid_center_position(self):
        c = voxel_center((128, 8, 128), wide_spec())
        assert np.allclose(c, (0.203125, 3.1875, 0.203125), atol=1e-12)

    def test_single_voxel_center(self):
        spec = GridSpec((0, 0, 0), (1, 1, 1), (1, 1, 1))
        assert np.allclose(voxel_center((0, 0, 0), spec), (0.5, 0.5, 0.5))

    def test_round_trip_all_indices(self, rng):
        spec = GridSpec((-2, -1, 0), (3, 1, 4), (10, 4, 8))
        idx = np.stack([rng.integers(0, d, 100) for d in spec.dims], axis=1)
        centers = voxel_center(idx, spec)
        _, idx2, inside = world_to_voxel(centers, spec)
        assert inside.all()
        assert np.array_equal(idx, idx2)

    @given(st.floats(-51.9, 51.9), st.floats(0.0, 5.9), st.floats(-51.9, 51.9))
    @settings(max_examples=50, deadline=None)
    def test_in_range_point_maps_to_one_voxel(self, x, y, z):
        spec = wide_spec()
        _, idx, inside = world_to_voxel((x, y, z), spec)
        assert inside
        assert all(0 <= idx[a] < spec.dims[a] for a in range(3))


class TestProjection:
    def test_optical_axis(self):
        u, v, z, front = project((0, 0, 1), INTR, IDENTITY)
        assert (u, v, z) == (50.0, 50.0, 1.0) and front

    def test_behind_camera(self):
        _, _, _, front = project((0, 0, -1), INTR, IDENTITY)
        assert not front

    def test_offset_point(self):
        u, v, z, front = project((0.5, 0, 2), INTR, IDENTITY)
        assert front and np.isclose(u, 75.0) and np.isclose(z, 2.0)

    def test_backproject_principal_point(self):
        p = backproject(50, 50, 3.0, INTR, IDENTITY)
        assert np.allclose(p, (0, 0, 3.0))

    def test_backproject_offset(self):
        p = backproject(75, 50, 2.0, INTR, IDENTITY)
        assert np.allclose(p, (0.5, 0.0, 2.0), atol=1e-12)

    def test_project_backproject_round_trip(self, rng):
        pose = Pose(random_rotation(rng), rng.normal(size=3))
        for _ in range(100):
            u = rng.uniform(0, 99)
            v = rng.uniform(0, 99)
            d = rng.uniform(0.1, 40)
            p = backproject(u, v, d, INTR, pose)
            u2, v2, z2, front = project(p, INTR, pose)
            assert front
            assert abs(u2 - u) < 1e-9 and abs(v2 - v) < 1e-9
            assert abs(z2 - d) < 1e-9


class TestPixelRays:
    def test_center_ray_is_forward(self):
        origin, dirs = pixel_rays(INTR, IDENTITY)
        assert np.allclose(origin, 0.0)
        assert np.allclose(dirs[50, 50], (0, 0, 1))

    def test_unit_norm(self):
        _, dirs = pixel_rays(INTR, IDENTITY)
        assert np.allclose(np.linalg.norm(dirs, axis=-1), 1.0, atol=1e-12)


class TestBilinear:
    def test_integer_coordinates_exact(self, rng):
        img = rng.normal(size=(5, 7))
        for v in range(5):
            for u in range(7):
                val, ok = bilinear_sample(img, u, v)
                assert ok and val == img[v, u]

    def test_constant_image(self, rng):
        img = np.full((4, 4), 2.5)
        val, ok = bilinear_sample(img, 1.3, 2.7)
        assert ok and np.isclose(val, 2.5)

    def test_four_corner_mean(self):
        img = np.array([[0.0, 1.0], [2.0, 3.0]])
        val, ok = bilinear_sample(img, 0.5, 0.5)
        assert ok and np.isclose(val, 1.5)

    def test_linear_along_axis(self, rng):
        img = np.arange(6.0).reshape(1, 6).repeat(2, axis=0)
        for u in rng.uniform(0, 5, 20):
            val, ok = bilinear_sample(img, u, 0.5)
            assert ok and np.isclose(val, u, atol=1e-12)

    def test_out_of_bounds_invalid(self):
        img = np.zeros((3, 3))
        _, ok = bilinear_sample(img, -0.5, 1.0)
        assert not ok


class TestRay:
    def test_unit_direction_accepted(self):
        r = Ray((0, 0, 0), (0, 0, 1.0))
        assert np.allclose(np.linalg.norm(r.direction), 1.0, atol=1e-12)

    def test_non_unit_direction_rejected(self):
        with pytest.raises(GeometryError):
            Ray((0, 0, 0), (0, 0, 3.0))


class TestRigIO:
    def test_round_trip(self, tmp_path, rng):
        cams = []
        for i in range(3):
            pose = Pose(random_rotation(rng), rng.normal(size=3))
            cams.append(Camera(f"cam{i}", INTR, pose))
        rig = CameraRig(tuple(cams))
        save_rig(rig, tmp_path / "rig.json")
        rig2 = load_rig(tmp_path / "rig.json")
        assert len(rig2) == 3
        for a, b in zip(rig, rig2):
            assert a.name == b.name
            assert np.allclose(a.cam_to_world.matrix(), b.cam_to_world.matrix(),
                               atol=1e-12)
            assert a.intrinsics == b.intrinsics
