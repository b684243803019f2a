"""Coordinate math for a vertically mounted camera looking up at ceiling LEDs.

Frames used throughout:

* pixel ``(i, j)``: column/row in pixels, origin at the image corner; pixel
  ``(c, r)`` covers ``[c, c+1) x [r, r+1)``.
* image ``(u, v)``: sensor plane in mm, origin at the principal point.
* world ``(x, y, z)``: cm, ``z`` up.  The camera yaw ``theta`` is measured
  about the vertical axis.

The lens inverts the image: a world offset ``+dx`` (camera frame) lands at
``-u``.  ``IMAGE_SIGN`` carries that sign and the solver uses the same
constant, so projecting and solving are exact inverses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .errors import BehindCamera, CoincidentCentroids, HeightMismatch

IMAGE_SIGN = -1.0


class WorldPoint(NamedTuple):
    x: float
    y: float
    z: float = 0.0


class PixelPoint(NamedTuple):
    i: float
    j: float


class ImagePoint(NamedTuple):
    u: float
    v: float


class Pose2D(NamedTuple):
    x: float
    y: float
    theta: float = 0.0

    @classmethod
    def make(cls, x, y, theta=0.0):
        return cls(float(x), float(y), normalize_angle(theta))


def normalize_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = math.remainder(float(a), 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: pixel pitch and focal length in mm.

    ``principal_point`` defaults to the image center.
    """

    width: int
    height: int
    du: float
    dv: float
    focal_length: float
    principal_point: Optional[PixelPoint] = field(default=None)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if self.du <= 0 or self.dv <= 0:
            raise ValueError("pixel pitch must be positive")
        if self.focal_length <= 0:
            raise ValueError("focal_length must be positive")
        if self.principal_point is None:
            object.__setattr__(self, "principal_point", self.nominal_principal_point)
        else:
            object.__setattr__(self, "principal_point", PixelPoint(*map(float, self.principal_point)))

    @property
    def dl(self) -> float:
        """Isotropic mm-per-pixel scale (the larger pitch when they differ)."""
        return max(self.du, self.dv)

    @property
    def nominal_principal_point(self) -> PixelPoint:
        return PixelPoint(self.width / 2.0, self.height / 2.0)

    def with_principal_point(self, p) -> "CameraIntrinsics":
        return replace(self, principal_point=PixelPoint(float(p[0]), float(p[1])))

    def ground_sampling(self, height: float) -> float:
        """World cm covered by one pixel on the LED plane at ``height`` cm."""
        return self.dl * height / self.focal_length


def pixel_to_image(p, k: CameraIntrinsics) -> ImagePoint:
    pp = k.principal_point
    return ImagePoint((p[0] - pp.i) * k.du, (p[1] - pp.j) * k.dv)


def image_to_pixel(q, k: CameraIntrinsics) -> PixelPoint:
    pp = k.principal_point
    return PixelPoint(q[0] / k.du + pp.i, q[1] / k.dv + pp.j)


def estimate_azimuth(c1, c2, min_separation: float = 0.0) -> float:
    """Direction of the image vector from ``c2`` to ``c1``, atan2 convention."""
    du = c1[0] - c2[0]
    dv = c1[1] - c2[1]
    if math.hypot(du, dv) < min_separation or (du == 0.0 and dv == 0.0):
        raise CoincidentCentroids(f"centroids {tuple(c1)} and {tuple(c2)} coincide")
    return normalize_angle(math.atan2(dv, du))


def rotate_to_world(p, theta: float) -> WorldPoint:
    c, s = math.cos(theta), math.sin(theta)
    x, y = p[0], p[1]
    z = p[2] if len(p) > 2 else 0.0
    return WorldPoint(x * c - y * s, x * s + y * c, z)


def _check_height(height: float) -> None:
    if not height > 0:
        raise BehindCamera(f"LED plane must be above the lens (H={height} cm)")


def project_led(led, camera: Pose2D, k: CameraIntrinsics, height: float) -> PixelPoint:
    """Forward pinhole projection of a ceiling point seen from ``camera``.

    ``height`` is the vertical distance in cm from the lens to the LED plane.
    """
    _check_height(height)
    dx, dy, _ = rotate_to_world((led[0] - camera.x, led[1] - camera.y), -camera.theta)
    scale = IMAGE_SIGN * k.focal_length / height
    return image_to_pixel((scale * dx, scale * dy), k)


def position_from_two_leds(led1, led2, c1, c2, k: CameraIntrinsics, height: float,
                           z_tolerance: float = 0.1) -> Pose2D:
    """Camera pose from two decoded LEDs and their image centroids (mm).

    ``led1``/``led2`` expose ``.position`` (x, y, z in cm) and are ordered by
    ascending ID; ``c1``/``c2`` are the matching image points.
    """
    _check_height(height)
    p1, p2 = led1.position, led2.position
    if abs(p1[2] - p2[2]) > z_tolerance:
        raise HeightMismatch(f"LED heights differ: {p1[2]} vs {p2[2]} cm")

    image_angle = estimate_azimuth(c1, c2, min_separation=k.dl)
    world_angle = math.atan2(p1[1] - p2[1], p1[0] - p2[0])
    # The inverted image adds pi to the image-plane direction.
    flip = math.pi if IMAGE_SIGN < 0 else 0.0
    theta = normalize_angle(world_angle - image_angle + flip)

    scale = IMAGE_SIGN * height / k.focal_length
    offset = (scale * 0.5 * (c1[0] + c2[0]), scale * 0.5 * (c1[1] + c2[1]))
    ox, oy, _ = rotate_to_world(offset, theta)
    mx = 0.5 * (p1[0] + p2[0])
    my = 0.5 * (p1[1] + p2[1])
    return Pose2D(mx - ox, my - oy, theta)


def project_many(points: np.ndarray, camera: Pose2D, k: CameraIntrinsics, height: float) -> np.ndarray:
    """Vectorized ``project_led`` for an (N, 2+) array of world points."""
    _check_height(height)
    pts = np.asarray(points, dtype=float)
    c, s = math.cos(-camera.theta), math.sin(-camera.theta)
    dx = pts[:, 0] - camera.x
    dy = pts[:, 1] - camera.y
    scale = IMAGE_SIGN * k.focal_length / height
    u = scale * (c * dx - s * dy)
    v = scale * (s * dx + c * dy)
    pp = k.principal_point
    return np.column_stack([u / k.du + pp.i, v / k.dv + pp.j])
