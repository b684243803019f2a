"""Scenario configuration files.

INI-style text (``[section]`` headers, ``key = value`` lines, ``#``
comments) read with :mod:`configparser`.  Every key is checked against a
schema; errors point at the offending line and column.
"""

from __future__ import annotations

import configparser
import math
import os
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Dict, Optional, Tuple

from .calibration import CalibrationRig
from .errors import ParseError, ValidationError
from .geometry import CameraIntrinsics, PixelPoint
from .pipeline_eval import GridSpec
from .scene_sim import LedRegistry, NoiseModel, RollingShutterConfig, Scenario, load_registry

ENV_CONFIG = "VLP_CONFIG"


def default_config_path() -> Path:
    return Path(str(resources.files("vlp") / "data" / "default.cfg"))


@dataclass(frozen=True)
class GridConfig:
    nx: int = 6
    ny: int = 6
    x_range: Tuple[float, float] = (26.0, 146.0)
    y_range: Tuple[float, float] = (26.0, 146.0)
    trials_per_point: int = 12
    theta_deg: Optional[float] = None

    def spec(self) -> GridSpec:
        theta = None if self.theta_deg is None else math.radians(self.theta_deg)
        return GridSpec.even(self.nx, self.ny, self.x_range, self.y_range, self.trials_per_point, theta)


@dataclass(frozen=True)
class SceneConfig:
    registry_path: Path
    camera_z: float = 0.0
    platform: Tuple[float, float] = (146.0, 146.0)
    platform_origin: Tuple[float, float] = (13.0, 13.0)
    amplitude: float = 200.0
    principal_point_offset: Tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class Config:
    seed: int
    camera: CameraIntrinsics
    shutter: RollingShutterConfig
    scene: SceneConfig
    registry: LedRegistry
    noise: NoiseModel
    grid: GridConfig
    calibration: CalibrationRig
    source: Optional[Path] = field(default=None, compare=False)

    def scenario(self, seed: Optional[int] = None) -> Scenario:
        return Scenario(
            registry=self.registry,
            intrinsics=self.camera,
            shutter=self.shutter,
            noise=self.noise.with_seed(self.seed if seed is None else seed),
            camera_z=self.scene.camera_z,
            platform=self.scene.platform,
            platform_origin=self.scene.platform_origin,
            amplitude=self.scene.amplitude,
            principal_point_offset=self.scene.principal_point_offset,
        )

    @property
    def height(self) -> float:
        return self.registry.ceiling_z - self.scene.camera_z


# -- value converters ----------------------------------------------------------

def _float(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _pos(s):
    v = _float(s)
    if v <= 0:
        raise ValueError("must be > 0")
    return v


def _nonneg(s):
    v = _float(s)
    if v < 0:
        raise ValueError("must be >= 0")
    return v


def _pos_int(s):
    v = int(s)
    if v <= 0:
        raise ValueError("must be a positive integer")
    return v


def _int(s):
    return int(s)


def _pair(s):
    parts = [p.strip() for p in s.split(",")]
    if len(parts) != 2:
        raise ValueError("expected two comma-separated numbers")
    return (_float(parts[0]), _float(parts[1]))


def _gray(s):
    v = _float(s)
    if not 0 <= v <= 255:
        raise ValueError("must be within [0, 255]")
    return v


def _theta(s):
    return None if s.strip().lower() == "random" else _float(s)


def _center(s):
    if s not in ("mean", "min-circle"):
        raise ValueError("must be 'mean' or 'min-circle'")
    return s


SCHEMA = {
    "general": {"seed": _int},
    "camera": {"width": _pos_int, "height": _pos_int, "pixel_pitch_u": _pos, "pixel_pitch_v": _pos,
               "focal_length": _pos, "principal_point": _pair},
    "shutter": {"exposure_time_ms": _pos, "row_readout_us": _pos, "frame_start_s": _nonneg},
    "scene": {"registry": str, "camera_z": _float, "platform_length": _pos, "platform_width": _pos,
              "platform_origin": _pair, "amplitude": _pos, "principal_point_offset": _pair},
    "noise": {"gaussian_sigma": _nonneg, "centroid_jitter_sigma": _nonneg, "background_level": _gray,
              "rotation_axis_offset": _pair},
    "grid": {"nx": _pos_int, "ny": _pos_int, "x_min": _float, "x_max": _float, "y_min": _float,
             "y_max": _float, "trials_per_point": _pos_int, "theta_deg": _theta},
    "calibration": {"station": _pair, "station_theta_deg": _float, "rotation_step_deg": _pos,
                    "rotation_led_id": _int, "dispersion_samples": _pos_int,
                    "dispersion_center": _center},
}
REQUIRED = {("scene", "registry")}

_SECTION_RE = re.compile(r"^\s*\[([^\]]*)\]")
_KEY_RE = re.compile(r"^(\s*)([^\s=#;\[][^=]*?)\s*=\s*")


def _locate_keys(text: str) -> Tuple[Dict[str, int], Dict[Tuple[str, str], Tuple[int, int]]]:
    sections, keys = {}, {}
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            current = m.group(1).strip()
            sections.setdefault(current, lineno)
            continue
        m = _KEY_RE.match(line)
        if m and current is not None:
            keys.setdefault((current, m.group(2).strip()), (lineno, m.end() + 1))
    return sections, keys


def parse_config_text(text: str, path=None, base_dir: Optional[Path] = None) -> Config:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                       comment_prefixes=("#",), strict=True, empty_lines_in_values=False)
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path) if path else "<config>")
    except configparser.MissingSectionHeaderError as exc:
        raise ParseError("key outside any [section]", exc.lineno, 1, path) from None
    except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as exc:
        raise ParseError(exc.message.split(": ", 1)[-1], exc.lineno, 1, path) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ParseError("expected 'key = value'", lineno, 1, path) from None

    section_lines, key_lines = _locate_keys(text)
    values: Dict[str, Dict[str, object]] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ValidationError(f"unknown section [{section}]", section_lines.get(section), 1, path)
        values[section] = {}
        for key, raw in parser.items(section):
            line, col = key_lines.get((section, key), (section_lines.get(section), 1))
            if key not in SCHEMA[section]:
                raise ValidationError(f"unknown key '{key}' in [{section}]", line, 1, path)
            try:
                values[section][key] = SCHEMA[section][key](raw.strip())
            except ValueError as exc:
                raise ValidationError(f"[{section}] {key} = {raw.strip()!r}: {exc}", line, col, path) from None
    for section, key in REQUIRED:
        if key not in values.get(section, {}):
            raise ValidationError(f"missing required key '{key}' in [{section}]",
                                  section_lines.get(section), 1, path)

    def get(section, key, default):
        return values.get(section, {}).get(key, default)

    def fail(section, key, exc):
        line, col = key_lines.get((section, key), (section_lines.get(section), 1))
        return ValidationError(f"[{section}] {exc}", line, col, path)

    base_dir = Path(base_dir) if base_dir else (Path(path).parent if path else Path.cwd())

    try:
        pp = get("camera", "principal_point", None)
        camera = CameraIntrinsics(get("camera", "width", 2048), get("camera", "height", 1536),
                                  get("camera", "pixel_pitch_u", 0.003125),
                                  get("camera", "pixel_pitch_v", 0.003125),
                                  get("camera", "focal_length", 3.6),
                                  PixelPoint(*pp) if pp is not None else None)
    except ValueError as exc:
        raise fail("camera", "width", exc) from None

    shutter = RollingShutterConfig(get("shutter", "exposure_time_ms", 0.02),
                                   get("shutter", "row_readout_us", 20.0),
                                   get("shutter", "frame_start_s", 0.0))

    reg_path = Path(get("scene", "registry", ""))
    if not reg_path.is_absolute():
        reg_path = base_dir / reg_path
    if not reg_path.is_file():
        raise fail("scene", "registry", f"registry file {reg_path} does not exist")
    registry = load_registry(reg_path)
    if len(registry) < 2:
        raise fail("scene", "registry", "registry needs at least two LEDs")
    scene = SceneConfig(reg_path.resolve(), get("scene", "camera_z", 0.0),
                        (get("scene", "platform_length", 146.0), get("scene", "platform_width", 146.0)),
                        get("scene", "platform_origin", (13.0, 13.0)),
                        get("scene", "amplitude", 200.0),
                        get("scene", "principal_point_offset", (0.0, 0.0)))
    if registry.ceiling_z - scene.camera_z <= 0:
        raise fail("scene", "camera_z", "camera must sit below the LED plane")

    seed = get("general", "seed", 0)
    noise = NoiseModel(get("noise", "gaussian_sigma", 0.0), get("noise", "centroid_jitter_sigma", 0.0),
                       get("noise", "background_level", 20.0), seed,
                       get("noise", "rotation_axis_offset", (0.0, 0.0)))

    grid = GridConfig(get("grid", "nx", 6), get("grid", "ny", 6),
                      (get("grid", "x_min", 26.0), get("grid", "x_max", 146.0)),
                      (get("grid", "y_min", 26.0), get("grid", "y_max", 146.0)),
                      get("grid", "trials_per_point", 12), get("grid", "theta_deg", None))
    L, W = scene.platform
    x0, y0 = scene.platform_origin
    for axis, (lo, hi), o, size in (("x", grid.x_range, x0, L), ("y", grid.y_range, y0, W)):
        if not o <= lo <= hi <= o + size:
            raise fail("grid", f"{axis}_min",
                       f"{axis} range {lo}..{hi} outside platform {o}..{o + size}")

    try:
        rig = CalibrationRig(get("calibration", "station", (0.0, 0.0)),
                             math.radians(get("calibration", "station_theta_deg", 0.0)),
                             get("calibration", "rotation_step_deg", 30.0),
                             get("calibration", "rotation_led_id", 1),
                             get("calibration", "dispersion_samples", 12),
                             get("calibration", "dispersion_center", "mean"))
    except ValueError as exc:
        raise fail("calibration", "rotation_step_deg", exc) from None
    if rig.rotation_led_id not in registry:
        raise fail("calibration", "rotation_led_id", f"LED {rig.rotation_led_id} is not in the registry")

    return Config(seed, camera, shutter, scene, registry, noise, grid, rig, Path(path) if path else None)


def parse_config(path=None) -> Config:
    """Load and validate a config file (``$VLP_CONFIG`` or the bundled default if omitted)."""
    if path is None:
        path = os.environ.get(ENV_CONFIG) or default_config_path()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read config: {exc.strerror}", None, None, path) from None
    return parse_config_text(text, path)


def _r(v) -> str:
    return repr(float(v))


def _p(pair) -> str:
    return f"{_r(pair[0])}, {_r(pair[1])}"


def format_config(cfg: Config, camera: Optional[CameraIntrinsics] = None) -> str:
    """Serialize ``cfg``; ``camera`` overrides the intrinsics (e.g. after calibration)."""
    k = camera or cfg.camera
    g, c = cfg.grid, cfg.calibration
    out = [
        "[general]", f"seed = {cfg.seed}", "",
        "[camera]", f"width = {k.width}", f"height = {k.height}", f"pixel_pitch_u = {_r(k.du)}",
        f"pixel_pitch_v = {_r(k.dv)}", f"focal_length = {_r(k.focal_length)}",
        f"principal_point = {_p(k.principal_point)}", "",
        "[shutter]", f"exposure_time_ms = {_r(cfg.shutter.exposure_time)}",
        f"row_readout_us = {_r(cfg.shutter.row_readout_time)}",
        f"frame_start_s = {_r(cfg.shutter.frame_start_time)}", "",
        "[scene]", f"registry = {cfg.scene.registry_path}", f"camera_z = {_r(cfg.scene.camera_z)}",
        f"platform_length = {_r(cfg.scene.platform[0])}", f"platform_width = {_r(cfg.scene.platform[1])}",
        f"platform_origin = {_p(cfg.scene.platform_origin)}",
        f"amplitude = {_r(cfg.scene.amplitude)}",
        f"principal_point_offset = {_p(cfg.scene.principal_point_offset)}", "",
        "[noise]", f"gaussian_sigma = {_r(cfg.noise.gaussian_sigma)}",
        f"centroid_jitter_sigma = {_r(cfg.noise.centroid_jitter_sigma)}",
        f"background_level = {_r(cfg.noise.background_level)}",
        f"rotation_axis_offset = {_p(cfg.noise.rotation_axis_offset)}", "",
        "[grid]", f"nx = {g.nx}", f"ny = {g.ny}", f"x_min = {_r(g.x_range[0])}", f"x_max = {_r(g.x_range[1])}",
        f"y_min = {_r(g.y_range[0])}", f"y_max = {_r(g.y_range[1])}", f"trials_per_point = {g.trials_per_point}",
        f"theta_deg = {'random' if g.theta_deg is None else _r(g.theta_deg)}", "",
        "[calibration]", f"station = {_p(c.station)}", f"station_theta_deg = {_r(math.degrees(c.station_theta))}",
        f"rotation_step_deg = {_r(c.rotation_step_deg)}", f"rotation_led_id = {c.rotation_led_id}",
        f"dispersion_samples = {c.dispersion_samples}", f"dispersion_center = {c.dispersion_center}",
    ]
    return "\n".join(out) + "\n"


def write_config(cfg: Config, path, camera: Optional[CameraIntrinsics] = None) -> None:
    Path(path).write_text(format_config(cfg, camera))


def with_overrides(cfg: Config, **changes) -> Config:
    return replace(cfg, **changes)
