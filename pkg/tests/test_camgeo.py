import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mvcond.camgeo import Camera, forward_warp, project, reproject_pixel, reproject_points, unproject
from mvcond.errors import BehindCamera, InvalidCamera, InvalidRotation, NonPositiveDepth, ShapeMismatch
from mvcond.synthetic import camera_at, intrinsics, render, rotation_x, rotation_y

K100 = np.array([[100.0, 0, 50], [0, 100.0, 50], [0, 0, 1]])


def translated(tz=0.0, tx=0.0):
    return Camera.from_params(100, 100, 50, 50, t=[tx, 0.0, tz])


def random_camera(gen):
    K = np.array([[gen.uniform(50, 200), 0, gen.uniform(20, 60)], [0, gen.uniform(50, 200), gen.uniform(20, 60)], [0, 0, 1]])
    R = rotation_y(gen.uniform(-0.2, 0.2)) @ rotation_x(gen.uniform(-0.2, 0.2))
    return Camera.from_params(K[0, 0], K[1, 1], K[0, 2], K[1, 2], R, gen.uniform(-0.3, 0.3, 3))


class TestCamera:
    def test_valid(self):
        cam = Camera(K100, np.eye(4))
        assert np.array_equal(cam.center, np.zeros(3))

    def test_arrays_read_only(self):
        cam = Camera(K100, np.eye(4))
        with pytest.raises(ValueError):
            cam.K[0, 0] = 1.0

    @pytest.mark.parametrize("K", [
        [[0, 0, 1], [0, 1, 1], [0, 0, 1]],
        [[1, 0, 1], [0, -1, 1], [0, 0, 1]],
        [[1, 0.1, 1], [0, 1, 1], [0, 0, 1]],
        [[1, 0, 1], [0, 1, 1], [0, 0, 2]],
        [[np.nan, 0, 1], [0, 1, 1], [0, 0, 1]],
    ])
    def test_bad_intrinsics(self, K):
        with pytest.raises(InvalidCamera):
            Camera(np.array(K, float), np.eye(4))

    def test_reflection_rejected(self):
        T = np.diag([1.0, 1.0, -1.0, 1.0])
        with pytest.raises(InvalidRotation):
            Camera(K100, T)

    def test_non_orthonormal_rejected(self):
        T = np.eye(4)
        T[0, 0] = 1 + 1e-8
        with pytest.raises(InvalidRotation):
            Camera(K100, T)

    def test_bad_last_row(self):
        T = np.eye(4)
        T[3, 0] = 1.0
        with pytest.raises(InvalidCamera):
            Camera(K100, T)

    def test_center_of_translated_camera(self):
        cam = camera_at((1.0, 2.0, 3.0), 0.3, K100)
        assert np.allclose(cam.center, [1, 2, 3])


class TestProjection:
    def test_unproject_principal_point(self):
        assert np.array_equal(unproject((50, 50), 3.0, K100), [0, 0, 3.0])

    def test_project_example(self):
        assert project((1, 0, 2), K100)[0] == 100.0

    def test_round_trip_example(self):
        px = project(unproject((13.5, 77.25), 3.7, K100), K100)
        assert np.allclose(px, [13.5, 77.25], atol=1e-9)

    def test_nonpositive(self):
        with pytest.raises(NonPositiveDepth):
            unproject((1, 1), 0.0, K100)
        with pytest.raises(NonPositiveDepth):
            project((1, 1, -1), K100)

    @given(st.floats(-500, 500), st.floats(-500, 500), st.floats(1e-3, 1e3))
    def test_round_trip_property(self, u, v, d):
        px = project(unproject((u, v), d, K100), K100)
        assert np.allclose(px, [u, v], atol=1e-9)


class TestReproject:
    def test_identity(self):
        cam = translated()
        px, z = reproject_pixel((10, 20), 2.0, cam, cam)
        assert np.array_equal(px, [10, 20]) and z == 2.0

    def test_forward_motion_center(self):
        px, z = reproject_pixel((50, 50), 4.0, translated(), translated(tz=-1.0))
        assert np.allclose(px, [50, 50]) and z == pytest.approx(3.0)

    def test_forward_motion_off_axis(self):
        px, z = reproject_pixel((60, 50), 4.0, translated(), translated(tz=-1.0))
        assert np.allclose(px, [50 + 100 * 0.4 / 3, 50], atol=1e-12)
        assert z == pytest.approx(3.0)

    def test_errors(self):
        with pytest.raises(NonPositiveDepth):
            reproject_pixel((1, 1), -1.0, translated(), translated())
        with pytest.raises(BehindCamera):
            reproject_pixel((50, 50), 1.0, translated(), translated(tz=-2.0))

    def test_vectorised_matches_scalar(self):
        gen = np.random.default_rng(0)
        a, b = random_camera(gen), random_camera(gen)
        px = gen.uniform(0, 100, (20, 2))
        d = gen.uniform(2, 6, 20)
        uv, z = reproject_points(px, d, a, b)
        for i in range(20):
            p, zz = reproject_pixel(px[i], d[i], a, b)
            assert np.allclose(p, uv[i], atol=1e-9) and zz == pytest.approx(z[i])

    def test_behind_camera_gives_nan(self):
        uv, z = reproject_points(np.array([[50.0, 50.0]]), np.array([1.0]), translated(), translated(tz=-2.0))
        assert np.isnan(uv).all() and z[0] < 0

    @given(st.integers(0, 10_000))
    def test_self_round_trip(self, seed):
        gen = np.random.default_rng(seed)
        cam = random_camera(gen)
        px = gen.uniform(-50, 150, 2)
        out, z = reproject_pixel(px, gen.uniform(0.1, 10), cam, cam)
        assert np.allclose(out, px, atol=1e-9)

    @given(st.integers(0, 10_000))
    def test_composition(self, seed):
        gen = np.random.default_rng(seed)
        a, m, b = (random_camera(gen) for _ in range(3))
        px = gen.uniform(20, 80, 2)
        d = gen.uniform(3, 8)
        p1, z1 = reproject_pixel(px, d, a, m)
        p2, z2 = reproject_pixel(p1, z1, m, b)
        p3, z3 = reproject_pixel(px, d, a, b)
        assert np.allclose(p2, p3, atol=1e-6) and z2 == pytest.approx(z3, abs=1e-6)


class TestForwardWarp:
    def test_identity_bit_exact(self):
        img = np.random.default_rng(1).random((12, 15, 3))
        depth = np.full((12, 15), 2.0)
        cam = Camera.from_params(20, 20, 7, 6)
        res = forward_warp(img, depth, cam, cam)
        assert res.mask.all() and np.array_equal(res.image, img)

    def test_plane_translation_shift(self):
        # fx * b / depth = 100 * 0.08 / 4 = 2 pixels
        h, w = 10, 20
        img = np.random.default_rng(2).random((h, w))
        src = translated()
        dst = translated(tx=-0.08)
        res = forward_warp(img, np.full((h, w), 4.0), src, dst)
        assert np.array_equal(res.image[:, :-2], img[:, 2:])
        assert not res.mask[:, -2:].any() and res.mask[:, :-2].all()
        assert np.all(res.image[:, -2:] == 0) and np.all(res.depth[:, -2:] == 0)

    def test_zbuffer_keeps_nearer(self):
        # a near-zero target focal length collapses both source pixels onto one target pixel
        img = np.array([[[1.0, 0, 0], [0, 1.0, 0]]])
        depth = np.array([[2.0, 3.0]])
        src = Camera.from_params(100, 100, 0.5, 0)
        res = forward_warp(img, depth, src, Camera.from_params(1e-3, 100, 0, 0))
        assert res.mask.sum() == 1
        assert np.array_equal(res.image[0, 0], [1.0, 0, 0])
        assert res.depth[0, 0] == 2.0

    def test_tie_goes_to_lowest_index(self):
        img = np.array([[5.0, 7.0]])
        depth = np.array([[2.0, 2.0]])
        src = Camera.from_params(100, 100, 0.5, 0)
        res = forward_warp(img, depth, src, Camera.from_params(1e-3, 100, 0, 0))
        assert res.image[0, 0] == 5.0

    def test_invalid_depth_not_splatted(self):
        img = np.ones((4, 4))
        depth = np.full((4, 4), 2.0)
        depth[0, 0] = 0.0
        depth[1, 1] = np.nan
        cam = Camera.from_params(10, 10, 1.5, 1.5)
        res = forward_warp(img, depth, cam, cam)
        assert res.mask.sum() == 14
        assert not res.mask[0, 0] and not res.mask[1, 1]

    def test_shape_mismatch(self):
        cam = translated()
        with pytest.raises(ShapeMismatch):
            forward_warp(np.zeros((3, 4)), np.ones((4, 3)), cam, cam)

    def test_mask_consistency_and_coverage(self):
        K = intrinsics(24, 32)
        a = camera_at((0, 0, 0), 0.0, K)
        b = camera_at((0.3, 0.1, -0.2), 0.1, K)
        img, depth = render(a, 24, 32)
        res = forward_warp(img + 0.01, depth, a, b)
        assert res.mask.sum() <= np.count_nonzero(depth > 0)
        assert np.all((res.image.sum(-1) == 0) == ~res.mask)
        assert np.all((res.depth > 0) == res.mask)

    def test_splat2x2_covers_more(self):
        K = intrinsics(24, 32)
        a = camera_at((0, 0, 0), 0.0, K)
        b = camera_at((0.0, 0.0, -0.5), 0.0, K)
        img, depth = render(a, 24, 32)
        single = forward_warp(img, depth, a, b)
        splat = forward_warp(img, depth, a, b, splat2x2=True)
        assert splat.mask.sum() >= single.mask.sum()

    def test_deterministic(self):
        K = intrinsics(16, 16)
        a = camera_at((0, 0, 0), 0.0, K)
        b = camera_at((0.2, 0, 0), 0.05, K)
        img, depth = render(a, 16, 16)
        r1 = forward_warp(img, depth, a, b)
        r2 = forward_warp(img, depth, a, b)
        assert np.array_equal(r1.image, r2.image) and np.array_equal(r1.depth, r2.depth)
