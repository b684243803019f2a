"""Visible light positioning with a rolling-shutter camera and two ceiling LEDs."""

from .errors import *  # noqa: F401,F403
from .geometry import (CameraIntrinsics, ImagePoint, PixelPoint, Pose2D, WorldPoint, estimate_azimuth,
                       pixel_to_image, position_from_two_leds, project_led, rotate_to_world)
from .scene_sim import (Frame, LedFixture, LedRegistry, NoiseModel, RollingShutterConfig, Scenario,
                        load_registry, render_frame)
from .pipeline_eval import GridSpec, compute_stats, locate, run_grid_experiment

__version__ = "0.1.0"
