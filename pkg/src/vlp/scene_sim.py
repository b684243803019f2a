"""Synthetic rolling-shutter camera for OOK-modulated ceiling lamps.

Each sensor row is sampled at ``frame_start + row * row_readout``; a lamp's
projected disc is bright on rows where its square wave is ON and background
otherwise, which produces the familiar stripe pattern.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Iterator, Optional, Tuple

import numpy as np
from scipy.special import ndtri

from .errors import UnknownId, ValidationError
from .geometry import CameraIntrinsics, PixelPoint, Pose2D, WorldPoint, project_led

MIN_FREQUENCY_RATIO = 1.25


@dataclass(frozen=True)
class LedFixture:
    id: int
    position: WorldPoint
    radius: float
    mod_frequency: float
    half_power_angle: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, "position", WorldPoint(*map(float, self.position)))
        if self.radius <= 0:
            raise ValueError(f"LED {self.id}: radius must be positive")
        if self.mod_frequency <= 0:
            raise ValueError(f"LED {self.id}: modulation frequency must be positive")
        if not 0.0 < self.half_power_angle < 90.0:
            raise ValueError(f"LED {self.id}: half-power angle must be in (0, 90) degrees")
        if not all(math.isfinite(c) for c in self.position):
            raise ValueError(f"LED {self.id}: non-finite position")

    @property
    def lambertian_order(self) -> float:
        return -math.log(2.0) / math.log(math.cos(math.radians(self.half_power_angle)))


class LedRegistry:
    """Immutable, id-keyed collection of fixtures sharing one ceiling height."""

    def __init__(self, fixtures: Iterable[LedFixture] = (), z_tolerance: float = 0.1,
                 min_frequency_ratio: float = MIN_FREQUENCY_RATIO):
        fixtures = list(fixtures)
        by_id = {}
        for fx in fixtures:
            if fx.id in by_id:
                raise ValueError(f"duplicate LED id {fx.id}")
            by_id[fx.id] = fx
        if fixtures:
            zs = [fx.position.z for fx in fixtures]
            if max(zs) - min(zs) > z_tolerance:
                raise ValueError("all fixtures must share the same height")
        freqs = sorted(fx.mod_frequency for fx in fixtures)
        for lo, hi in zip(freqs, freqs[1:]):
            if hi / lo < min_frequency_ratio:
                raise ValueError(
                    f"modulation frequencies {lo:g} and {hi:g} Hz are closer than "
                    f"ratio {min_frequency_ratio}")
        self._fixtures = tuple(fixtures)
        self._by_id = by_id

    def __iter__(self) -> Iterator[LedFixture]:
        return iter(self._fixtures)

    def __len__(self) -> int:
        return len(self._fixtures)

    def __contains__(self, led_id) -> bool:
        return led_id in self._by_id

    def __getitem__(self, led_id) -> LedFixture:
        try:
            return self._by_id[led_id]
        except KeyError:
            raise UnknownId(f"LED id {led_id} is not registered") from None

    def __eq__(self, other):
        return isinstance(other, LedRegistry) and self._fixtures == other._fixtures

    def __repr__(self):
        return f"LedRegistry({list(self._fixtures)!r})"

    @property
    def ids(self) -> Tuple[int, ...]:
        return tuple(fx.id for fx in self._fixtures)

    @property
    def ceiling_z(self) -> float:
        if not self._fixtures:
            raise ValueError("empty registry has no ceiling height")
        return self._fixtures[0].position.z


REGISTRY_COLUMNS = "id x_cm y_cm z_cm radius_cm freq_hz half_power_deg"


def parse_registry(text: str, path=None) -> LedRegistry:
    """Parse the plain-text registry format, one fixture per line."""
    fixtures = []
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 7:
            raise ValidationError(f"expected 7 fields ({REGISTRY_COLUMNS}), got {len(parts)}",
                                  lineno, 1, path)
        try:
            led_id = int(parts[0])
            x, y, z, radius, freq, psi = (float(p) for p in parts[1:])
        except ValueError as exc:
            raise ValidationError(f"bad number: {exc}", lineno, 1, path) from None
        if led_id in seen:
            raise ValidationError(f"duplicate LED id {led_id} (first on line {seen[led_id]})",
                                  lineno, 1, path)
        seen[led_id] = lineno
        try:
            fixtures.append(LedFixture(led_id, WorldPoint(x, y, z), radius, freq, psi))
        except ValueError as exc:
            raise ValidationError(str(exc), lineno, 1, path) from None
    try:
        return LedRegistry(fixtures)
    except ValueError as exc:
        raise ValidationError(str(exc), None, None, path) from None


def load_registry(path) -> LedRegistry:
    path = Path(path)
    return parse_registry(path.read_text(), path)


def format_registry(registry: LedRegistry) -> str:
    lines = [f"# {REGISTRY_COLUMNS}"]
    for fx in registry:
        p = fx.position
        lines.append(f"{fx.id} {p.x!r} {p.y!r} {p.z!r} {fx.radius!r} "
                     f"{fx.mod_frequency!r} {fx.half_power_angle!r}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class RollingShutterConfig:
    """Exposure in ms, row readout in microseconds, frame start in seconds."""

    exposure_time: float = 0.02
    row_readout_time: float = 20.0
    frame_start_time: float = 0.0

    def __post_init__(self):
        if self.exposure_time <= 0 or self.row_readout_time <= 0:
            raise ValueError("exposure and row readout time must be positive")
        if self.frame_start_time < 0:
            raise ValueError("frame start time must be non-negative")

    @property
    def row_seconds(self) -> float:
        return self.row_readout_time * 1e-6

    def stripe_period(self, frequency: float) -> float:
        """Full bright+dark stripe period in rows for a lamp at ``frequency`` Hz."""
        return 1.0 / (frequency * self.row_seconds)


@dataclass(frozen=True)
class NoiseModel:
    """Documented stand-in for the hardware error sources.

    ``gaussian_sigma`` is per-pixel read noise in gray levels (quantized
    Gaussian, see :func:`gaussian_noise`); ``centroid_jitter_sigma`` is added
    to every measured LED centroid by the evaluation harness;
    ``rotation_axis_offset`` (cm, camera frame) is the lever arm between the
    lens and the turntable axis used by the rotation calibration.
    """

    gaussian_sigma: float = 0.0
    centroid_jitter_sigma: float = 0.0
    background_level: float = 20.0
    seed: int = 0
    rotation_axis_offset: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.gaussian_sigma < 0 or self.centroid_jitter_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")
        if not 0 <= self.background_level <= 255:
            raise ValueError("background level must be within [0, 255]")
        object.__setattr__(self, "rotation_axis_offset", tuple(map(float, self.rotation_axis_offset)))

    @classmethod
    def zero(cls, seed: int = 0, background_level: float = 20.0) -> "NoiseModel":
        return cls(0.0, 0.0, background_level, seed, (0.0, 0.0))

    def with_seed(self, seed: int) -> "NoiseModel":
        return replace(self, seed=int(seed))


@dataclass
class Frame:
    pixels: np.ndarray
    frame_start_time: float = 0.0
    pose: Optional[Pose2D] = None
    seed: Optional[int] = None
    index: int = 0

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 2:
            raise ValueError("frame pixels must be a 2-D grayscale array")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def led_waveform(fixture: LedFixture, t) -> np.ndarray | bool:
    """50% duty square wave, ON during the first half of every period."""
    phase = np.floor(2.0 * fixture.mod_frequency * np.asarray(t, dtype=float) + 1e-9)
    on = (phase.astype(np.int64) % 2) == 0
    return bool(on) if on.ndim == 0 else on


def disc_projection(fixture: LedFixture, camera: Pose2D, k: CameraIntrinsics,
                    height: float) -> Tuple[PixelPoint, float]:
    center = project_led(fixture.position, camera, k, height)
    return center, k.focal_length * fixture.radius / (height * k.dl)


def lambertian_gain(fixture: LedFixture, camera: Pose2D, height: float) -> float:
    d = math.hypot(fixture.position.x - camera.x, fixture.position.y - camera.y)
    cos_phi = height / math.hypot(d, height)
    return cos_phi ** fixture.lambertian_order


@lru_cache(maxsize=8)
def _noise_table(sigma: float) -> np.ndarray:
    q = (np.arange(65536, dtype=float) + 0.5) / 65536.0
    return np.rint(sigma * ndtri(q)).astype(np.int16)


def gaussian_noise(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    """Integer Gaussian noise: uint16 uniforms mapped through the inverse CDF."""
    n = int(np.prod(shape))
    u = np.frombuffer(rng.bytes(2 * n), dtype=np.uint16).reshape(shape)
    return _noise_table(float(sigma))[u]


def render_frame(registry: LedRegistry, camera: Pose2D, k: CameraIntrinsics,
                 rs: RollingShutterConfig, noise: NoiseModel, height: float,
                 amplitude: float = 200.0) -> Frame:
    """Render one 8-bit frame; deterministic in ``noise.seed``."""
    h, w = k.height, k.width
    img = np.full((h, w), int(round(noise.background_level)), dtype=np.int16)
    row_times = rs.frame_start_time + np.arange(h) * rs.row_seconds

    for fx in registry:
        center, r = disc_projection(fx, camera, k, height)
        j0 = max(int(math.floor(center.j - r)) - 1, 0)
        j1 = min(int(math.ceil(center.j + r)) + 1, h)
        i0 = max(int(math.floor(center.i - r)) - 1, 0)
        i1 = min(int(math.ceil(center.i + r)) + 1, w)
        if j0 >= j1 or i0 >= i1:
            continue
        jj = np.arange(j0, j1) + 0.5 - center.j
        ii = np.arange(i0, i1) + 0.5 - center.i
        inside = (jj[:, None] ** 2 + ii[None, :] ** 2) <= r * r
        on_rows = led_waveform(fx, row_times[j0:j1])
        level = int(round(noise.background_level + amplitude * lambertian_gain(fx, camera, height)))
        lit = inside & on_rows[:, None]
        sub = img[j0:j1, i0:i1]
        np.maximum(sub, np.where(lit, level, 0).astype(np.int16), out=sub)

    if noise.gaussian_sigma > 0:
        rng = np.random.default_rng(noise.seed)
        img += gaussian_noise(rng, img.shape, noise.gaussian_sigma)
    np.clip(img, 0, 255, out=img)
    return Frame(img.astype(np.uint8), rs.frame_start_time, Pose2D.make(*camera), noise.seed)


def fully_in_view(fixture: LedFixture, camera: Pose2D, k: CameraIntrinsics, height: float,
                  margin: float = 1.0) -> bool:
    center, r = disc_projection(fixture, camera, k, height)
    return (center.i - r - margin >= 0 and center.i + r + margin <= k.width
            and center.j - r - margin >= 0 and center.j + r + margin <= k.height)


def visible_for_all_headings(fixture: LedFixture, x: float, y: float, k: CameraIntrinsics,
                             height: float, margin: float = 2.0) -> bool:
    """True when the disc stays inside the frame for every camera yaw."""
    pp = k.principal_point
    inscribed = min(pp.i, k.width - pp.i, pp.j, k.height - pp.j)
    gsd = k.ground_sampling(height)
    dist_px = math.hypot(fixture.position.x - x, fixture.position.y - y) / gsd
    r_px = fixture.radius / gsd
    return dist_px + r_px + margin <= inscribed


@dataclass(frozen=True)
class Scenario:
    """Everything the simulator needs to stand in for the real rig.

    ``intrinsics`` is what the positioning solver believes (nominal);
    ``principal_point_offset`` (px) is where the optical axis really lands
    relative to it.
    """

    registry: LedRegistry
    intrinsics: CameraIntrinsics
    shutter: RollingShutterConfig = field(default_factory=RollingShutterConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    camera_z: float = 0.0
    platform: Tuple[float, float] = (146.0, 146.0)
    platform_origin: Tuple[float, float] = (13.0, 13.0)    # lamps sit over the corners
    amplitude: float = 200.0
    principal_point_offset: Tuple[float, float] = (0.0, 0.0)

    @property
    def height(self) -> float:
        return self.registry.ceiling_z - self.camera_z

    @property
    def true_intrinsics(self) -> CameraIntrinsics:
        pp = self.intrinsics.principal_point
        di, dj = self.principal_point_offset
        return self.intrinsics.with_principal_point((pp.i + di, pp.j + dj))

    def capture(self, camera: Pose2D, seed: int, frame_start_time: Optional[float] = None) -> Frame:
        rs = self.shutter
        if frame_start_time is not None:
            rs = replace(rs, frame_start_time=frame_start_time)
        return render_frame(self.registry, camera, self.true_intrinsics, rs,
                            self.noise.with_seed(seed), self.height, self.amplitude)

    def in_platform(self, x: float, y: float) -> bool:
        x0, y0 = self.platform_origin
        return x0 <= x <= x0 + self.platform[0] and y0 <= y <= y0 + self.platform[1]
