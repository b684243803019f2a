import math
import sys

import pytest

from vlp.config import default_config_path
from vlp.geometry import CameraIntrinsics
from vlp.scene_sim import LedFixture, LedRegistry, NoiseModel, RollingShutterConfig, Scenario, load_registry

H = 285.0


@pytest.fixture(scope="session")
def lamps():
    return load_registry(default_config_path().parent / "leds.txt")


@pytest.fixture(scope="session")
def camera():
    return CameraIntrinsics(2048, 1536, 0.003125, 0.003125, 3.6)


@pytest.fixture(scope="session")
def shutter():
    return RollingShutterConfig()


@pytest.fixture(scope="session")
def clean_scenario(lamps, camera, shutter):
    """Zero noise, no principal-point offset."""
    return Scenario(lamps, camera, shutter, NoiseModel.zero())


def half_pixel_bound(k: CameraIntrinsics, height: float = H) -> float:
    """0.5 px of centroid error expressed on the floor, cm."""
    return 0.5 * k.dl * height / k.focal_length


def registry_of(*freqs, rs=None):
    """Small synthetic registry with the given frequencies, lamps 100 cm apart."""
    return LedRegistry(LedFixture(n + 1, (100.0 * n, 0.0, H), 10.0, f) for n, f in enumerate(freqs))


def angle_diff(a, b):
    return abs(math.remainder(a - b, 2 * math.pi))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
