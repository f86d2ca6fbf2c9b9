import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from lfdepth.geometry import (BehindCamera, DegenerateRay, DepthRange, GeometryError,
                              InvalidRange, PinholeCamera, SuperpixelPlane, backproject,
                              map_pixel_via_plane, plane_depth_at, project,
                              sample_inverse_depths, superpixel_rng)

from oracles import line_plane_depth


def rotation(ax, ay, az):
    cx, sx, cy, sy, cz, sz = np.cos(ax), np.sin(ax), np.cos(ay), np.sin(ay), np.cos(az), np.sin(az)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


angles = st.floats(-0.5, 0.5)
cameras = st.builds(
    lambda f, cx, cy, a, b, c, tx, ty, tz: PinholeCamera(
        np.array([[f, 0, cx], [0, f, cy], [0, 0, 1.0]]), rotation(a, b, c), np.array([tx, ty, tz])),
    st.floats(50, 800), st.floats(0, 300), st.floats(0, 300), angles, angles, angles,
    st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))


# -- camera invariants ----------------------------------------------------------------

def test_rejects_non_orthonormal_rotation():
    with pytest.raises(GeometryError):
        PinholeCamera(np.eye(3), np.diag([1.0, 1.0, 1.1]), np.zeros(3))


def test_rejects_reflection():
    with pytest.raises(GeometryError):
        PinholeCamera(np.eye(3), np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_rejects_lower_triangular_intrinsics():
    K = np.eye(3)
    K[1, 0] = 0.5
    with pytest.raises(GeometryError):
        PinholeCamera(K, np.eye(3), np.zeros(3))


def test_rejects_non_positive_focal():
    with pytest.raises(GeometryError):
        PinholeCamera(np.diag([0.0, 1.0, 1.0]), np.eye(3), np.zeros(3))


def test_depth_range_invariant():
    with pytest.raises(InvalidRange):
        DepthRange(2.0, 1.0)
    with pytest.raises(InvalidRange):
        DepthRange(0.0, 1.0)


def test_projection_matrix_decomposition_round_trip():
    cam = PinholeCamera(np.array([[500.0, 0.5, 320], [0, 480, 240], [0, 0, 1]]),
                        rotation(0.1, -0.2, 0.3), np.array([0.3, -0.1, 2.0]))
    P = cam.intrinsics @ np.column_stack([cam.rotation, cam.translation])
    back = PinholeCamera.from_projection(3.7 * P)
    np.testing.assert_allclose(back.intrinsics, cam.intrinsics, atol=1e-8)
    np.testing.assert_allclose(back.rotation, cam.rotation, atol=1e-10)
    np.testing.assert_allclose(back.translation, cam.translation, atol=1e-10)


# -- backproject ---------------------------------------------------------------

def test_backproject_identity_origin(identity_cam):
    np.testing.assert_allclose(backproject(identity_cam, (0, 0), 5.0), [0, 0, 5])


def test_backproject_identity_scaling(identity_cam):
    np.testing.assert_allclose(backproject(identity_cam, (1, 2), 2.0), [2, 4, 2])


def test_backproject_focal_100():
    cam = PinholeCamera(np.diag([100.0, 100.0, 1.0]), np.eye(3), np.zeros(3))
    X = backproject(cam, (100, 0), 10.0)
    np.testing.assert_allclose(X, [10, 0, 10])
    q, d = project(cam, X)
    np.testing.assert_allclose(q, [100, 0], atol=1e-12)
    assert d == pytest.approx(10.0)


@given(cameras, st.floats(-100, 700), st.floats(-100, 700), st.floats(0.05, 100))
def test_project_backproject_round_trip(cam, x, y, d):
    q, z = project(cam, backproject(cam, (x, y), d))
    assert abs(q[0] - x) < 1e-6 and abs(q[1] - y) < 1e-6
    assert abs(z - d) < 1e-6 * max(1.0, d)


# -- plane_depth_at -------------------------------------------------------------

def test_fronto_plane_depth_is_constant(identity_cam):
    plane = SuperpixelPlane(3.0, np.array([0.0, 0.0, -1.0]))
    for q in [(0, 0), (5, -3), (100, 40)]:
        assert plane_depth_at(identity_cam, plane, (1.0, 2.0), q) == pytest.approx(3.0)


def test_plane_depth_at_centroid_is_plane_depth():
    cam = PinholeCamera.rectified(200.0, (64, 48))
    n = np.array([0.3, -0.2, -1.0])
    plane = SuperpixelPlane(4.0, n / np.linalg.norm(n))
    assert plane_depth_at(cam, plane, (20.5, 31.0), (20.5, 31.0)) == pytest.approx(4.0, abs=1e-12)


def test_plane_depth_at_slanted_example(identity_cam):
    n = np.array([-1.0, 0.0, -1.0]) / np.sqrt(2.0)
    plane = SuperpixelPlane(1.0, n)
    got = plane_depth_at(identity_cam, plane, (0.0, 0.0), (0.5, 0.0))
    assert got == pytest.approx(2.0 / 3.0, abs=1e-12)
    assert got == pytest.approx(line_plane_depth(identity_cam, (0, 0), 1.0, n, (0.5, 0)), abs=1e-12)


@given(cameras, st.floats(0, 300), st.floats(0, 300), st.floats(0.5, 20),
       st.floats(-0.7, 0.7), st.floats(-0.7, 0.7), st.floats(-50, 50), st.floats(-50, 50))
def test_plane_depth_matches_line_plane_solver(cam, cx, cy, d, nx, ny, dx, dy):
    n = np.array([nx, ny, -1.0])
    n /= np.linalg.norm(n)
    plane = SuperpixelPlane(d, n)
    q = (cx + dx, cy + dy)
    try:
        got = plane_depth_at(cam, plane, (cx, cy), q)
    except DegenerateRay:
        return
    ref = line_plane_depth(cam, (cx, cy), d, n, q)
    assert got == pytest.approx(ref, rel=1e-7, abs=1e-9)


def test_plane_depth_degenerate_ray(identity_cam):
    plane = SuperpixelPlane(1.0, np.array([1.0, 0.0, 0.0]))
    with pytest.raises(DegenerateRay):
        plane_depth_at(identity_cam, plane, (0.0, 0.0), (0.0, 0.0))


# -- map_pixel_via_plane --------------------------------------------------------

def test_map_pixel_identity_target():
    cam = PinholeCamera.rectified(100.0, (32, 32))
    n = np.array([0.2, 0.1, -1.0])
    plane = SuperpixelPlane(5.0, n / np.linalg.norm(n))
    q, z = map_pixel_via_plane(cam, plane, (30, 30), (40, 35), cam)
    np.testing.assert_allclose(q, [40, 35], atol=1e-9)
    assert z == pytest.approx(plane_depth_at(cam, plane, (30, 30), (40, 35)))


def test_map_pixel_rectified_disparity():
    ref = PinholeCamera.rectified(100.0, (32, 32), (0, 0), 0.1)
    tgt = PinholeCamera.rectified(100.0, (32, 32), (1, 0), 0.1)
    q, z = map_pixel_via_plane(ref, SuperpixelPlane(10.0), (20, 20), (25, 17), tgt)
    np.testing.assert_allclose(q, [24, 17], atol=1e-9)
    assert z == pytest.approx(10.0)


def test_map_pixel_zero_baseline_at_far_plane():
    cam = PinholeCamera.rectified(100.0, (32, 32))
    twin = PinholeCamera.rectified(100.0, (32, 32), view_id=1)
    q, _ = map_pixel_via_plane(cam, SuperpixelPlane(20.0), (10, 10), (3, 7), twin)
    np.testing.assert_allclose(q, [3, 7], atol=1e-12)


def test_map_pixel_behind_target():
    ref = PinholeCamera.rectified(100.0, (32, 32))
    behind = PinholeCamera(np.diag([100.0, 100.0, 1.0]), np.eye(3), np.array([0, 0, -20.0]))
    with pytest.raises(BehindCamera):
        map_pixel_via_plane(ref, SuperpixelPlane(5.0), (0, 0), (0, 0), behind)


@given(st.floats(20, 500), st.floats(0.01, 1.0), st.floats(0.5, 50), st.floats(0, 200),
       st.floats(0, 200), st.integers(-3, 3), st.integers(-3, 3))
def test_rectified_mapping_equals_disparity_formula(f, B, d, x, y, gx, gy):
    ref = PinholeCamera.rectified(f, (100, 100), (0, 0), B)
    tgt = PinholeCamera.rectified(f, (100, 100), (gx, gy), B)
    q, _ = map_pixel_via_plane(ref, SuperpixelPlane(d), (x, y), (x, y), tgt)
    disp = f * B / d
    assert abs(q[0] - (x - gx * disp)) < 1e-6
    assert abs(q[1] - (y - gy * disp)) < 1e-6


# -- sample_inverse_depths ------------------------------------------------------

def test_grid_without_jitter():
    np.testing.assert_allclose(sample_inverse_depths(DepthRange(1, 2), 3), [2, 4 / 3, 1])


def test_two_levels_are_endpoints():
    np.testing.assert_allclose(sample_inverse_depths(DepthRange(1.5, 7), 2), [7, 1.5])


def test_levels_below_two_rejected():
    with pytest.raises(InvalidRange):
        sample_inverse_depths(DepthRange(1, 2), 1)


@given(st.floats(0.1, 10), st.floats(1.01, 50), st.integers(2, 128), st.integers(0, 2 ** 32))
def test_samples_sorted_and_in_range(d_min, ratio, L, seed):
    r = DepthRange(d_min, d_min * ratio)
    d = sample_inverse_depths(r, L, np.random.default_rng(seed))
    inv = 1.0 / d
    assert np.all(np.diff(inv) > 0)
    assert np.all(d >= r.d_min * (1 - 1e-12)) and np.all(d <= r.d_max * (1 + 1e-12))
    step = r.inverse_step(L)
    base = 1.0 / r.d_max + step * np.arange(L)
    jit = inv - base
    assert np.all(jit >= -1e-12) and np.all(jit[:-1] < step + 1e-12)


@given(st.floats(0.1, 10), st.floats(1.01, 50), st.integers(3, 128))
def test_near_depths_sampled_more_densely(d_min, ratio, L):
    d = sample_inverse_depths(DepthRange(d_min, d_min * ratio), L)
    gaps = -np.diff(d)  # far -> near
    assert np.all(np.diff(gaps) <= 1e-9 * d.max())


def test_jitter_uniform_ks():
    r = DepthRange(1.0, 4.0)
    L = 4
    step = r.inverse_step(L)
    jit = np.empty(100_000)
    for i in range(jit.size):
        d = sample_inverse_depths(r, L, superpixel_rng(7, 0, i))
        jit[i] = (1.0 / d[1] - (1.0 / r.d_max + step)) / step
    assert stats.kstest(jit, "uniform").pvalue > 0.01


def test_rng_streams_depend_only_on_key():
    a = superpixel_rng(3, 1, 5).random(4)
    b = superpixel_rng(3, 1, 5).random(4)
    c = superpixel_rng(3, 1, 6).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_superpixel_plane_validity():
    cam = PinholeCamera.rectified(100.0, (10, 10))
    r = DepthRange(1, 10)
    assert SuperpixelPlane(5.0).is_valid(cam, (10, 10), r)
    assert not SuperpixelPlane(5.0, np.array([0, 0, 1.0])).is_valid(cam, (10, 10), r)
    assert not SuperpixelPlane(20.0).is_valid(cam, (10, 10), r)
    assert not SuperpixelPlane(5.0, np.array([0, 0, -2.0])).is_valid(cam, (10, 10), r)
