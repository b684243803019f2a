import math
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vlp.config import default_config_path
from vlp.errors import BehindCamera, CoincidentCentroids, HeightMismatch
from vlp.geometry import (IMAGE_SIGN, CameraIntrinsics, ImagePoint, PixelPoint, Pose2D, estimate_azimuth,
                          image_to_pixel, normalize_angle, pixel_to_image, position_from_two_leds,
                          project_led, project_many, rotate_to_world)
from vlp.scene_sim import LedFixture, load_registry

from conftest import H, angle_diff

K5 = CameraIntrinsics(2048, 1536, 0.005, 0.005, 4.0)

finite = st.floats(-1e4, 1e4, allow_nan=False)
angles = st.floats(-math.pi, math.pi)


def led(x, y, z=H, id_=1):
    return LedFixture(id_, (x, y, z), 10.0, 2500.0)


def test_principal_point_maps_to_origin():
    assert pixel_to_image((1024, 768), K5) == ImagePoint(0.0, 0.0)


def test_pixel_to_image_substitution():
    q = pixel_to_image((1224, 768), K5)
    assert q.u == pytest.approx(1.0, abs=1e-12)
    assert q.v == 0.0


def test_image_to_pixel_substitution():
    assert image_to_pixel((0.0, 0.0), K5) == K5.principal_point
    p = image_to_pixel((1.0, -0.5), K5)
    assert p.i == pytest.approx(1224) and p.j == pytest.approx(668)


@given(st.floats(-5000, 5000), st.floats(-5000, 5000))
def test_pixel_image_round_trip(i, j):
    back = image_to_pixel(pixel_to_image((i, j), K5), K5)
    assert back.i == pytest.approx(i, abs=1e-9) and back.j == pytest.approx(j, abs=1e-9)


def test_nominal_principal_point_is_center():
    k = CameraIntrinsics(2048, 1536, 0.003125, 0.003125, 3.6)
    assert k.principal_point == PixelPoint(1024.0, 768.0)
    assert k.with_principal_point((1, 2)).principal_point == PixelPoint(1.0, 2.0)


@pytest.mark.parametrize("bad", [dict(du=0), dict(focal_length=-1), dict(width=0)])
def test_intrinsics_reject_nonpositive(bad):
    args = dict(width=10, height=10, du=0.01, dv=0.01, focal_length=1.0)
    args.update(bad)
    with pytest.raises(ValueError):
        CameraIntrinsics(**args)


@pytest.mark.parametrize("c1, expected", [((1, 0), 0.0), ((0, 1), math.pi / 2), ((-1, -1), -3 * math.pi / 4)])
def test_estimate_azimuth_examples(c1, expected):
    assert estimate_azimuth(c1, (0, 0)) == pytest.approx(expected, abs=1e-15)


def test_estimate_azimuth_coincident():
    with pytest.raises(CoincidentCentroids):
        estimate_azimuth((1.0, 2.0), (1.0, 2.0))


@given(finite, finite, finite, finite, finite, finite)
def test_azimuth_translation_invariance(a, b, c, d, tx, ty):
    if math.hypot(a - c, b - d) < 1e-3:
        return
    base = estimate_azimuth((a, b), (c, d))
    moved = estimate_azimuth((a + tx, b + ty), (c + tx, d + ty))
    assert angle_diff(base, moved) < 1e-6


def test_rotate_to_world_examples():
    assert rotate_to_world((3.0, 4.0, 5.0), 0.0) == (3.0, 4.0, 5.0)
    p = rotate_to_world((1.0, 0.0, 0.0), math.pi / 2)
    assert p.x == pytest.approx(0, abs=1e-15) and p.y == pytest.approx(1) and p.z == 0
    p = rotate_to_world((2.0, -3.0, 7.0), math.pi)
    assert (p.x, p.y, p.z) == pytest.approx((-2.0, 3.0, 7.0))


@given(finite, finite, finite, angles)
def test_rotate_preserves_norm_and_z(x, y, z, theta):
    p = rotate_to_world((x, y, z), theta)
    assert math.hypot(p.x, p.y) == pytest.approx(math.hypot(x, y), rel=1e-12, abs=1e-9)
    assert p.z == z


@given(st.floats(-100, 100))
def test_normalize_angle_range(a):
    n = normalize_angle(a)
    assert -math.pi < n <= math.pi
    assert angle_diff(n, a) < 1e-9


def test_pose_theta_normalized():
    assert Pose2D.make(0, 0, 3 * math.pi).theta == pytest.approx(math.pi)


def test_on_axis_projects_to_principal_point(camera):
    p = project_led((50.0, 60.0, H), Pose2D(50.0, 60.0, 0.7), camera, H)
    assert p.i == pytest.approx(camera.principal_point.i) and p.j == pytest.approx(camera.principal_point.j)


def test_symmetric_pair_lamps(lamps, camera):
    cam = Pose2D(86.0, 159.0, 0.0)
    q1 = pixel_to_image(project_led(lamps[1].position, cam, camera, H), camera)
    q2 = pixel_to_image(project_led(lamps[2].position, cam, camera, H), camera)
    assert q1.u == pytest.approx(-q2.u, abs=1e-12)
    assert q1.v == pytest.approx(q2.v, abs=1e-12) and q1.v == pytest.approx(0.0, abs=1e-12)
    pose = position_from_two_leds(lamps[1], lamps[2], q1, q2, camera, H)
    assert (pose.x, pose.y, pose.theta) == pytest.approx((86.0, 159.0, 0.0), abs=1e-9)


def test_recover_leds_1_and_3(lamps, camera):
    truth = Pose2D(30.0, 30.0, math.pi / 6)
    q1 = pixel_to_image(project_led(lamps[1].position, truth, camera, H), camera)
    q3 = pixel_to_image(project_led(lamps[3].position, truth, camera, H), camera)
    pose = position_from_two_leds(lamps[1], lamps[3], q1, q3, camera, H)
    assert pose.x == pytest.approx(30.0, abs=1e-9) and pose.y == pytest.approx(30.0, abs=1e-9)
    assert angle_diff(pose.theta, math.pi / 6) < 1e-12


def test_image_sign_inverts():
    # a lamp in +x of the camera lands on the -u side of the sensor
    q = pixel_to_image(project_led((10.0, 0.0, H), Pose2D(0, 0, 0), K5, H), K5)
    assert IMAGE_SIGN == -1 and q.u < 0


def test_forward_projection_closed_form(camera):
    cam = Pose2D(20.0, 40.0, 0.3)
    p = project_led((70.0, 10.0, H), cam, camera, H)
    c, s = math.cos(-0.3), math.sin(-0.3)
    dx, dy = 50.0, -30.0
    u = -camera.focal_length / H * (c * dx - s * dy)
    v = -camera.focal_length / H * (s * dx + c * dy)
    assert p.i == pytest.approx(u / camera.du + 1024) and p.j == pytest.approx(v / camera.dv + 768)


def test_project_many_matches_scalar(camera, lamps):
    cam = Pose2D(40.0, 90.0, -1.1)
    pts = np.array([fx.position for fx in lamps])
    many = project_many(pts, cam, camera, H)
    for row, fx in zip(many, lamps):
        assert tuple(row) == pytest.approx(tuple(project_led(fx.position, cam, camera, H)), abs=1e-9)


def test_height_mismatch(camera):
    with pytest.raises(HeightMismatch):
        position_from_two_leds(led(0, 0), led(100, 0, H + 5), (1, 0), (-1, 0), camera, H)


def test_behind_camera(camera):
    with pytest.raises(BehindCamera):
        project_led((0, 0, 0), Pose2D(0, 0, 0), camera, 0.0)


def test_coincident_centroids_in_solver(camera):
    with pytest.raises(CoincidentCentroids):
        position_from_two_leds(led(0, 0), led(100, 0), (0.1, 0.1), (0.1, 0.1), camera, H)


@settings(max_examples=200)
@given(st.floats(13, 159), st.floats(13, 159), angles, st.sampled_from([(1, 2), (1, 3), (2, 3)]))
def test_round_trip_property(x, y, theta, pair):
    reg = _lamps()
    k = CameraIntrinsics(2048, 1536, 0.003125, 0.003125, 3.6)
    truth = Pose2D.make(x, y, theta)
    a, b = reg[pair[0]], reg[pair[1]]
    qa = pixel_to_image(project_led(a.position, truth, k, H), k)
    qb = pixel_to_image(project_led(b.position, truth, k, H), k)
    pose = position_from_two_leds(a, b, qa, qb, k, H)
    assert math.hypot(pose.x - x, pose.y - y) < 1e-9
    assert angle_diff(pose.theta, truth.theta) < 1e-12


@given(st.floats(0.2, 5.0), angles, st.floats(20, 140), st.floats(20, 140))
def test_centroid_scaling_keeps_theta(lam, theta, x, y):
    reg = _lamps()
    q1 = pixel_to_image(project_led(reg[1].position, Pose2D.make(x, y, theta), K5, H), K5)
    q2 = pixel_to_image(project_led(reg[2].position, Pose2D.make(x, y, theta), K5, H), K5)
    base = position_from_two_leds(reg[1], reg[2], q1, q2, K5, H)
    scaled = position_from_two_leds(reg[1], reg[2], (lam * q1[0], lam * q1[1]), (lam * q2[0], lam * q2[1]), K5, H)
    assert angle_diff(base.theta, scaled.theta) < 1e-12


@given(st.floats(0.25, 4.0), angles, st.floats(20, 140), st.floats(20, 140))
def test_fixed_h_over_f_keeps_pose(scale, theta, x, y):
    reg = _lamps()
    truth = Pose2D.make(x, y, theta)
    q1 = pixel_to_image(project_led(reg[1].position, truth, K5, H), K5)
    q2 = pixel_to_image(project_led(reg[2].position, truth, K5, H), K5)
    k2 = CameraIntrinsics(2048, 1536, 0.005, 0.005, 4.0 * scale)
    a = position_from_two_leds(reg[1], reg[2], q1, q2, K5, H)
    b = position_from_two_leds(reg[1], reg[2], q1, q2, k2, H * scale, z_tolerance=1e9)
    assert (a.x, a.y) == pytest.approx((b.x, b.y), abs=1e-9)
    assert angle_diff(a.theta, b.theta) < 1e-12


@lru_cache(maxsize=None)
def _lamps():
    return load_registry(default_config_path().parent / "leds.txt")
