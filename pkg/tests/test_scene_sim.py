import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vlp.errors import ParseError, UnknownId, ValidationError
from vlp.geometry import CameraIntrinsics, Pose2D, project_led
from vlp.pgm import decode_pgm, encode_pgm, read_pgm, write_pgm
from vlp.scene_sim import (Frame, LedFixture, LedRegistry, NoiseModel, RollingShutterConfig, Scenario,
                           disc_projection, format_registry, fully_in_view, gaussian_noise, led_waveform,
                           parse_registry, render_frame, visible_for_all_headings)
from vlp.vision import extract_rois, gray_histogram, otsu_threshold

from conftest import H, registry_of

SMALL = CameraIntrinsics(256, 256, 0.003125, 0.003125, 3.6)
RS25 = RollingShutterConfig(row_readout_time=25.0)


def f2k():
    return LedFixture(1, (0.0, 0.0, H), 10.0, 2000.0)


@pytest.mark.parametrize("t, on", [(0.0, True), (250e-6, False), (500e-6, True), (125e-6, True), (375e-6, False)])
def test_waveform(t, on):
    assert led_waveform(f2k(), t) is on


def test_waveform_vectorized():
    t = np.arange(8) * 125e-6
    assert led_waveform(f2k(), t).tolist() == [True, True, False, False, True, True, False, False]


def test_stripe_period_arithmetic():
    assert RS25.stripe_period(2000.0) == pytest.approx(20.0)
    assert RollingShutterConfig().stripe_period(2500.0) == pytest.approx(20.0)


def test_rendered_stripes_are_10_bright_10_dark():
    reg = LedRegistry([f2k()])
    frame = render_frame(reg, Pose2D(0, 0, 0), SMALL, RS25, NoiseModel.zero(), H)
    col = frame.pixels[:, 128] > 100
    rows = np.flatnonzero(col)
    # run lengths of lit and dark stretches strictly inside the disc
    edges = np.flatnonzero(np.diff(col[rows[0]:rows[-1] + 1].astype(int))) + 1
    runs = np.diff(np.concatenate([[0], edges, [rows[-1] - rows[0] + 1]]))
    inner = runs[1:-1]
    assert len(inner) >= 3
    assert all(abs(r - 10) <= 1 for r in inner)


def test_empty_registry_gives_background():
    frame = render_frame(LedRegistry([]), Pose2D(0, 0, 0), SMALL, RS25, NoiseModel.zero(background_level=37), H)
    assert frame.pixels.shape == (256, 256)
    assert np.all(frame.pixels == 37)


def test_render_deterministic(lamps, camera):
    noise = NoiseModel(6.0, 0.0, 20.0, seed=11)
    a = render_frame(lamps, Pose2D(80, 80, 0.4), camera, RollingShutterConfig(), noise, H)
    b = render_frame(lamps, Pose2D(80, 80, 0.4), camera, RollingShutterConfig(), noise, H)
    assert a.pixels.tobytes() == b.pixels.tobytes()
    c = render_frame(lamps, Pose2D(80, 80, 0.4), camera, RollingShutterConfig(), noise.with_seed(12), H)
    assert a.pixels.tobytes() != c.pixels.tobytes()


def test_two_discs_centroids_match_projection(lamps, camera):
    pose = Pose2D(86.0, 159.0, 0.0)
    reg = LedRegistry([lamps[1], lamps[2]])
    frame = render_frame(reg, pose, camera, RollingShutterConfig(), NoiseModel.zero(), H)
    rois = extract_rois(frame, otsu_threshold(gray_histogram(frame)), closing_height=21)
    assert len(rois) == 2
    a, b = rois
    assert a.x + a.w <= b.x or b.x + b.w <= a.x
    for fx in reg:
        truth = project_led(fx.position, pose, camera, H)
        best = min(math.dist(r.centroid, truth) for r in rois)
        assert best <= 0.5


def test_disc_radius_formula(camera):
    fx = LedFixture(1, (0, 0, H), 9.0, 2500.0)
    k4 = CameraIntrinsics(2048, 1536, 0.005, 0.005, 4.0)
    _, r = disc_projection(fx, Pose2D(0, 0, 0), k4, H)
    assert r == pytest.approx(4 * 9 / (285 * 0.005), rel=1e-12)
    center, r_default = disc_projection(LedFixture(1, (0, 0, H), 10.0, 2500.0), Pose2D(0, 0, 0), camera, H)
    assert r_default == pytest.approx(3.6 * 10 / (285 * 0.003125))
    assert center == camera.principal_point
    _, r2 = disc_projection(fx, Pose2D(0, 0, 0), k4, 2 * H)
    assert r2 == pytest.approx(r / 2)


def test_lambertian_order():
    assert f2k().lambertian_order == pytest.approx(1.0)


def test_fixture_validation():
    with pytest.raises(ValueError):
        LedFixture(1, (0, 0, H), 0.0, 2000.0)
    with pytest.raises(ValueError):
        LedFixture(1, (0, 0, H), 1.0, -5.0)
    with pytest.raises(ValueError):
        LedFixture(1, (0, 0, H), 1.0, 5.0, half_power_angle=90.0)


def test_registry_invariants():
    with pytest.raises(ValueError):
        LedRegistry([f2k(), f2k()])
    with pytest.raises(ValueError):
        LedRegistry([f2k(), LedFixture(2, (1, 1, H + 10), 10.0, 4000.0)])
    with pytest.raises(UnknownId):
        LedRegistry([f2k()])[99]


def test_registry_text_round_trip(lamps):
    assert parse_registry(format_registry(lamps)) == lamps
    assert lamps[1].position == (13.0, 159.0, 285.0)
    assert lamps[3].position == (159.0, 13.0, 285.0)


def test_registry_duplicate_id_has_line():
    text = "# id x y z r f psi\n1 0 0 285 10 2500 60\n\n1 100 0 285 10 5000 60\n"
    with pytest.raises(ValidationError) as exc:
        parse_registry(text, "leds.txt")
    assert exc.value.line == 4
    assert "leds.txt:4:1" in str(exc.value)


@pytest.mark.parametrize("text, line", [("1 0 0 285 10 2500\n", 1), ("1 0 0 285 10 2500 60\nx 0 0 285 10 5000 60\n", 2),
                                        ("1 0 0 285 -1 2500 60\n", 1)])
def test_registry_bad_lines(text, line):
    with pytest.raises(ValidationError) as exc:
        parse_registry(text)
    assert exc.value.line == line


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(gaussian_sigma=-1)
    with pytest.raises(ValueError):
        NoiseModel(background_level=300)


def test_gaussian_noise_moments():
    rng = np.random.default_rng(0)
    x = gaussian_noise(rng, (400, 400), 10.0).astype(float)
    assert abs(x.mean()) < 0.1
    assert x.std() == pytest.approx(10.0, rel=0.02)


def test_visibility_helpers(lamps, camera):
    assert fully_in_view(lamps[1], Pose2D(13, 159, 0), camera, H)
    assert not fully_in_view(lamps[1], Pose2D(300, 0, 0), camera, H)
    assert visible_for_all_headings(lamps[2], 86, 86, camera, H)
    # opposite corner: 206 cm away, beyond the ~188 cm radius seen at every heading
    assert not visible_for_all_headings(lamps[1], 159, 13, camera, H)


def test_scenario_platform_and_offset(lamps, camera):
    sc = Scenario(lamps, camera, principal_point_offset=(10, -6))
    assert sc.true_intrinsics.principal_point == (1034.0, 762.0)
    assert sc.height == H
    assert sc.in_platform(86, 159) and sc.in_platform(13, 13)
    assert not sc.in_platform(5, 50) and not sc.in_platform(50, 160)


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 2**31))
def test_centroid_error_monotone_in_noise(seed0):
    """Mean centroid error over 100 seeds does not shrink as pixel noise grows."""
    reg = LedRegistry([LedFixture(1, (0, 0, H), 10.0, 2500.0)])
    pose = Pose2D(1.3, -0.7, 0.0)
    truth = project_led(reg[1].position, pose, SMALL, H)

    def mean_err(sigma):
        errs = []
        for s in range(100):
            frame = render_frame(reg, pose, SMALL, RollingShutterConfig(frame_start_time=s * 1.3e-4),
                                 NoiseModel(sigma, seed=seed0 + s), H)
            rois = extract_rois(frame, otsu_threshold(gray_histogram(frame)), closing_height=21)
            errs.append(math.dist(rois[0].centroid, truth))
        return np.mean(errs)

    e0, e1, e2 = mean_err(0.0), mean_err(15.0), mean_err(40.0)
    assert e0 <= e1 <= e2


# -- PGM ------------------------------------------------------------------------

def _frame():
    rng = np.random.default_rng(3)
    return Frame(rng.integers(0, 256, (7, 11), dtype=np.uint8), 0.125, Pose2D(1.5, 2.5, 0.25), 42)


def test_pgm_round_trip(tmp_path):
    f = _frame()
    write_pgm(tmp_path / "a.pgm", f)
    g = read_pgm(tmp_path / "a.pgm")
    assert np.array_equal(f.pixels, g.pixels)
    assert (g.frame_start_time, g.pose, g.seed) == (0.125, f.pose, 42)


def test_pgm_header(lamps, camera):
    frame = render_frame(lamps, Pose2D(86, 86, 0), camera, RollingShutterConfig(), NoiseModel.zero(), H)
    data = encode_pgm(frame)
    assert data.startswith(b"P5\n")
    assert b"\n2048 1536\n255\n" in data
    assert len(data) - data.index(b"\n255\n") - 5 == 2048 * 1536


def test_pgm_plain_header_without_comments():
    data = b"P5 3 2 255\n" + bytes(range(6))
    f = decode_pgm(data)
    assert f.pixels.tolist() == [[0, 1, 2], [3, 4, 5]]
    assert f.pose is None


@pytest.mark.parametrize("data, line", [
    (b"P2\n3 2\n255\n" + bytes(6), 1),
    (b"P5\n3 2\n", None),
    (b"P5\n3 x\n255\n" + bytes(6), 2),
    (b"P5\n3 2\n65535\n" + bytes(12), 3),
    (b"P5\n# c\n3 2\n255\n" + bytes(4), 4),
    (b"P5\n0 2\n255\n", 2),
])
def test_pgm_malformed(data, line):
    with pytest.raises(ParseError) as exc:
        decode_pgm(data, "x.pgm")
    if line is not None:
        assert exc.value.line == line
