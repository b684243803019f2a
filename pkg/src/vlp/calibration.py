"""Principal-point correction: the rotation method and the dispersion method.

Rotation method: turn the camera about its vertical axis in fixed steps and
record where one lamp lands in the image; the recorded points lie on a
circle around the true principal point, recovered with a Kasa fit.

Dispersion method: take repeated fixes with the sensor parked at a known
station; the mean deviation of the fixes from the station is converted back
to a pixel shift of the principal point.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateFit, EmptyInput, InsufficientSamples
from .geometry import IMAGE_SIGN, CameraIntrinsics, PixelPoint, Pose2D, rotate_to_world


class Circle(NamedTuple):
    center: Tuple[float, float]
    radius: float


@dataclass(frozen=True)
class DispersionResult:
    delta: Tuple[float, float]
    corrected: PixelPoint
    method: str = "mean"


def _as_points(samples) -> np.ndarray:
    pts = np.asarray([tuple(s)[:2] for s in samples], dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(pts)):
        raise ValueError("samples must be finite")
    return pts


def dispersion_center_mean(samples) -> Tuple[float, float]:
    """Mean deviation of fixes from the (origin) station."""
    pts = _as_points(samples)
    if len(pts) == 0:
        raise EmptyInput("no calibration samples")
    m = pts.mean(axis=0)
    return float(m[0]), float(m[1])


# -- smallest enclosing circle (Welzl, iterative form) -----------------------

_EPS = 1e-12


def _contains(c, p) -> bool:
    return math.hypot(p[0] - c[0], p[1] - c[1]) <= c[2] * (1 + 1e-12) + _EPS


def _diameter(a, b):
    cx, cy = (a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0
    return (cx, cy, max(math.hypot(cx - a[0], cy - a[1]), math.hypot(cx - b[0], cy - b[1])))


def _circumcircle(a, b, c):
    ox = (min(a[0], b[0], c[0]) + max(a[0], b[0], c[0])) / 2.0
    oy = (min(a[1], b[1], c[1]) + max(a[1], b[1], c[1])) / 2.0
    ax, ay = a[0] - ox, a[1] - oy
    bx, by = b[0] - ox, b[1] - oy
    cx, cy = c[0] - ox, c[1] - oy
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if d == 0.0:
        return None
    x = ox + ((ax * ax + ay * ay) * (by - cy) + (bx * bx + by * by) * (cy - ay)
              + (cx * cx + cy * cy) * (ay - by)) / d
    y = oy + ((ax * ax + ay * ay) * (cx - bx) + (bx * bx + by * by) * (ax - cx)
              + (cx * cx + cy * cy) * (bx - ax)) / d
    r = max(math.hypot(x - p[0], y - p[1]) for p in (a, b, c))
    return (x, y, r)


def _cross(x0, y0, x1, y1, x2, y2):
    return (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)


def _circle_two(points, p, q):
    circ = _diameter(p, q)
    left = right = None
    for r in points:
        if _contains(circ, r):
            continue
        cross = _cross(p[0], p[1], q[0], q[1], r[0], r[1])
        c = _circumcircle(p, q, r)
        if c is None:
            continue
        side = _cross(p[0], p[1], q[0], q[1], c[0], c[1])
        if cross > 0 and (left is None or side > _cross(p[0], p[1], q[0], q[1], left[0], left[1])):
            left = c
        elif cross < 0 and (right is None or side < _cross(p[0], p[1], q[0], q[1], right[0], right[1])):
            right = c
    if left is None and right is None:
        return circ
    if left is None:
        return right
    if right is None:
        return left
    return left if left[2] <= right[2] else right


def _circle_one(points, p):
    c = (p[0], p[1], 0.0)
    for i, q in enumerate(points):
        if not _contains(c, q):
            c = _diameter(p, q) if c[2] == 0.0 else _circle_two(points[:i + 1], p, q)
    return c


def smallest_enclosing_circle(samples, seed: int = 0) -> Circle:
    """Minimum-radius circle containing every sample (Welzl, expected O(n))."""
    pts = [tuple(map(float, p)) for p in _as_points(samples)]
    if not pts:
        raise EmptyInput("no points")
    random.Random(seed).shuffle(pts)
    c = None
    for i, p in enumerate(pts):
        if c is None or not _contains(c, p):
            c = _circle_one(pts[:i + 1], p)
    return Circle((c[0], c[1]), c[2])


# -- circle fitting / rotation method ------------------------------------------

def fit_circle_kasa(points, rel_tol: float = 1e-9) -> Circle:
    """Algebraic least-squares circle fit (x^2 + y^2 + Dx + Ey + F = 0)."""
    pts = _as_points(points)
    if len(pts) < 3:
        raise InsufficientSamples(f"need at least 3 points, got {len(pts)}")
    m = pts.mean(axis=0)
    x, y = (pts - m).T
    s = np.linalg.svd(np.column_stack([x, y]), compute_uv=False)
    if s[0] == 0.0 or s[1] / s[0] < rel_tol:
        raise DegenerateFit("points are collinear")
    A = np.column_stack([x, y, np.ones_like(x)])
    b = -(x * x + y * y)
    (D, E, F), *_ = np.linalg.lstsq(A, b, rcond=None)
    cx, cy = -D / 2.0, -E / 2.0
    r = math.sqrt(max(cx * cx + cy * cy - F, 0.0))
    return Circle((float(cx + m[0]), float(cy + m[1])), r)


def rotation_calibrate(samples) -> PixelPoint:
    """Corrected principal point from LED pixel positions recorded at equal yaw steps."""
    c = fit_circle_kasa(samples)
    return PixelPoint(*c.center)


def apply_dispersion_correction(nominal, delta, k: CameraIntrinsics, height: float,
                                theta: float = 0.0) -> PixelPoint:
    """Shift the principal point so a world deviation ``delta`` (cm) is cancelled.

    ``theta`` is the camera yaw during the fixes; the deviation is rotated
    back into the camera frame before converting to sensor millimetres.
    """
    dx, dy, _ = rotate_to_world(delta, -theta)
    s = -IMAGE_SIGN * k.focal_length / height
    return PixelPoint(nominal[0] + s * dx / k.du, nominal[1] + s * dy / k.dv)


# -- end-to-end acquisition in simulation ------------------------------------

@dataclass(frozen=True)
class CalibrationRig:
    """Where and how calibration captures are taken."""

    station: Tuple[float, float] = (0.0, 0.0)
    station_theta: float = 0.0
    rotation_step_deg: float = 30.0
    rotation_led_id: int = 1
    dispersion_samples: int = 12
    dispersion_center: str = "mean"

    def __post_init__(self):
        if not 0 < self.rotation_step_deg <= 120:
            raise ValueError("rotation step must be in (0, 120] degrees")
        if self.dispersion_samples < 1:
            raise ValueError("dispersion needs at least one sample")
        if self.dispersion_center not in ("mean", "min-circle"):
            raise ValueError("dispersion_center must be 'mean' or 'min-circle'")

    @property
    def rotation_angles(self) -> List[float]:
        n = int(round(360.0 / self.rotation_step_deg))
        return [math.radians(i * self.rotation_step_deg) for i in range(n)]


@dataclass
class Calibration:
    method: str
    intrinsics: CameraIntrinsics
    samples: List[Tuple[float, float]] = field(default_factory=list)
    sample_units: str = "px"
    fit: Optional[Circle] = None
    dispersion: Optional[DispersionResult] = None
    min_circle: Optional[Circle] = None
    thetas: List[float] = field(default_factory=list)

    @property
    def principal_point(self) -> PixelPoint:
        return self.intrinsics.principal_point


def calibrate_end_to_end(method: str, scenario, rig: CalibrationRig = CalibrationRig(),
                         seed: int = 0) -> Calibration:
    """Run a calibration protocol against ``scenario`` and return corrected intrinsics."""
    from .pipeline_eval import derive_seed, detect_leds, locate

    k = scenario.intrinsics
    height = scenario.height
    jitter = scenario.noise.centroid_jitter_sigma
    sx, sy = rig.station

    if method == "rotation":
        lever = np.asarray(scenario.noise.rotation_axis_offset, dtype=float)
        samples = []
        for n, theta in enumerate(rig.rotation_angles):
            s = derive_seed(seed, "rotation", n)
            rng = np.random.default_rng(s)
            ox, oy, _ = rotate_to_world(lever, theta)
            frame = scenario.capture(Pose2D.make(sx + ox, sy + oy, theta), derive_seed(s, "frame"),
                                     frame_start_time=rng.uniform(0.0, 1.0))
            found = [d for d in detect_leds(frame, scenario.registry, scenario.shutter)
                     if d.id == rig.rotation_led_id]
            if not found:
                raise InsufficientSamples(
                    f"LED {rig.rotation_led_id} not decoded at {math.degrees(theta):.0f} deg")
            p = np.asarray(found[0].pixel_centroid) + rng.normal(0.0, jitter, 2)
            samples.append((float(p[0]), float(p[1])))
        fit = fit_circle_kasa(samples)
        return Calibration("rotation", k.with_principal_point(fit.center), samples, "px", fit=fit,
                           thetas=list(rig.rotation_angles))

    if method == "dispersion":
        fixes, thetas = [], []
        for n in range(rig.dispersion_samples):
            s = derive_seed(seed, "dispersion", n)
            rng = np.random.default_rng(s)
            frame = scenario.capture(Pose2D.make(sx, sy, rig.station_theta), derive_seed(s, "frame"),
                                     frame_start_time=rng.uniform(0.0, 1.0))
            fix = locate(frame, scenario.registry, k, height, scenario.shutter,
                         jitter_sigma=jitter, rng=rng)
            fixes.append((fix.pose.x - sx, fix.pose.y - sy))
            thetas.append(fix.pose.theta)
        # A principal-point shift moves fix n by -R(theta_n - theta_ref) * delta; dividing by
        # the mean resultant length inverts the averaged rotation exactly.
        ms, mc = float(np.mean(np.sin(thetas))), float(np.mean(np.cos(thetas)))
        mean_theta, rho = math.atan2(ms, mc), math.hypot(ms, mc)
        sec = smallest_enclosing_circle(fixes)
        delta = dispersion_center_mean(fixes) if rig.dispersion_center == "mean" else sec.center
        corrected = apply_dispersion_correction(k.principal_point, (delta[0] / rho, delta[1] / rho),
                                                k, height, mean_theta)
        result = DispersionResult(tuple(delta), corrected, rig.dispersion_center)
        return Calibration("dispersion", k.with_principal_point(corrected), fixes, "cm",
                           dispersion=result, min_circle=sec, thetas=thetas)

    raise ValueError(f"unknown calibration method {method!r}")


def write_samples_csv(path, samples, units: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# units: {units}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_index", "x", "y"])
        for n, (x, y) in enumerate(samples):
            w.writerow([n, repr(float(x)), repr(float(y))])


def read_samples_csv(path) -> Tuple[List[Tuple[float, float]], Optional[str]]:
    units = None
    rows = []
    with open(path, newline="") as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                if "units:" in line:
                    units = line.split("units:", 1)[1].strip()
                continue
            lines.append(line)
    for row in csv.DictReader(lines):
        rows.append((float(row["x"]), float(row["y"])))
    return rows, units
