"""LED-ID recognition from stripe spacing.

Every lamp blinks at its own frequency, so its stripes repeat every
``1 / (f * t_row)`` sensor rows.  The decoder measures that period from the
autocorrelation of the ROI's row profile and picks the registry entry whose
expected period is nearest in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import AmbiguousId, NoPeriodicity, RoiTooSmall, UnknownId
from .geometry import ImagePoint, PixelPoint, WorldPoint
from .scene_sim import Frame, LedRegistry, RollingShutterConfig
from .vision import RoiWindow

CENTRAL_FRACTION = 0.6


@dataclass(frozen=True)
class StripeProfile:
    values: np.ndarray

    def __len__(self):
        return len(self.values)


class PeriodEstimate(NamedTuple):
    period_rows: float
    confidence: float


@dataclass(frozen=True)
class DecodedLed:
    id: int
    world: WorldPoint
    pixel_centroid: PixelPoint
    period: PeriodEstimate
    image_centroid: Optional[ImagePoint] = None
    roi: Optional[RoiWindow] = None


def max_expected_period(registry: LedRegistry, rs: RollingShutterConfig) -> float:
    return max(rs.stripe_period(fx.mod_frequency) for fx in registry)


def column_profile(frame: Frame, roi: RoiWindow, max_period: Optional[float] = None) -> StripeProfile:
    """Per-row mean over the central columns of the lamp's disc.

    Columns are limited to the middle 60% of the fitted disc width (or of the
    ROI width when no disc radius is known) so the rim does not dilute the
    stripes.
    """
    if max_period is not None and roi.h < 2 * max_period:
        raise RoiTooSmall(f"ROI height {roi.h} < 2 x max period {max_period:.1f} rows")
    if roi.radius > 0:
        half = CENTRAL_FRACTION * roi.radius
        c0 = int(math.floor(roi.centroid.i - half))
        c1 = int(math.ceil(roi.centroid.i + half))
    else:
        half = 0.5 * CENTRAL_FRACTION * roi.w
        mid = roi.x + roi.w / 2.0
        c0, c1 = int(math.floor(mid - half)), int(math.ceil(mid + half))
    c0 = max(c0, roi.x, 0)
    c1 = min(c1, roi.x + roi.w, frame.width)
    if c1 <= c0:
        c0, c1 = roi.x, roi.x + roi.w
    block = frame.pixels[roi.y:roi.y + roi.h, c0:c1]
    return StripeProfile(block.mean(axis=1, dtype=np.float64))


def _autocorrelation(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Unbiased, variance-normalized autocorrelation for lags 0..max_lag."""
    n = len(x)
    var = float(np.dot(x, x)) / n
    ac = np.empty(max_lag + 1)
    for k in range(max_lag + 1):
        ac[k] = np.dot(x[:n - k], x[k:]) / (n - k) / var
    return ac


def estimate_stripe_period(p, min_confidence: float = 0.4, min_lag: int = 2,
                           dominance: float = 0.5) -> PeriodEstimate:
    """Stripe period from the first dominant autocorrelation peak.

    A peak is dominant when it reaches ``dominance`` times the tallest
    positive peak; the lag is refined by a parabola through its neighbours.
    """
    values = np.asarray(p.values if isinstance(p, StripeProfile) else p, dtype=float)
    x = values - values.mean()
    n = len(x)
    if n < 2 * min_lag + 2 or not np.any(x):
        raise NoPeriodicity("profile is too short or constant")
    max_lag = n // 2
    ac = _autocorrelation(x, max_lag + 1)

    peaks = [k for k in range(min_lag, max_lag + 1)
             if ac[k] >= ac[k - 1] and ac[k] > ac[k + 1] and ac[k] > 0]
    if not peaks:
        raise NoPeriodicity("no positive autocorrelation peak")
    tallest = max(ac[k] for k in peaks)
    k = next(k for k in peaks if ac[k] >= dominance * tallest)

    y0, y1, y2 = ac[k - 1], ac[k], ac[k + 1]
    denom = y0 - 2.0 * y1 + y2
    shift = 0.5 * (y0 - y2) / denom if denom < 0 else 0.0
    shift = min(max(shift, -0.5), 0.5)
    confidence = float(min(max(y1, 0.0), 1.0))
    if confidence < min_confidence:
        raise NoPeriodicity(f"peak confidence {confidence:.2f} below {min_confidence}")
    return PeriodEstimate(float(k + shift), confidence)


def classify_id(est: PeriodEstimate, registry: LedRegistry, rs: RollingShutterConfig,
                tolerance: float = 1.12, ambiguity: float = 0.01) -> int:
    """Nearest registry lamp in log-period distance."""
    if len(registry) == 0:
        raise UnknownId("registry is empty")
    measured = math.log(est.period_rows)
    dist = sorted((abs(measured - math.log(rs.stripe_period(fx.mod_frequency))), fx.id)
                  for fx in registry)
    if len(dist) > 1 and dist[1][0] - dist[0][0] < ambiguity:
        raise AmbiguousId(f"period {est.period_rows:.2f} rows is equally close to "
                          f"LED {dist[0][1]} and LED {dist[1][1]}")
    if dist[0][0] > math.log(tolerance):
        raise UnknownId(f"no LED within ratio {tolerance} of period {est.period_rows:.2f} rows")
    return dist[0][1]


def lookup_world(led_id: int, registry: LedRegistry) -> WorldPoint:
    return registry[led_id].position


def decode_roi(frame: Frame, roi: RoiWindow, registry: LedRegistry,
               rs: RollingShutterConfig) -> DecodedLed:
    profile = column_profile(frame, roi, max_expected_period(registry, rs))
    est = estimate_stripe_period(profile)
    led_id = classify_id(est, registry, rs)
    return DecodedLed(led_id, lookup_world(led_id, registry), roi.centroid, est, roi=roi)
