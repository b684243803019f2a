"""Frame-to-fix localization and the grid experiment.

``locate`` composes threshold -> ROI extraction (or tracking) -> LED-ID
decoding -> pair selection -> two-LED solver.  ``run_grid_experiment``
repeats it over a grid of ground-truth poses and ``compute_stats`` reduces
the errors to mean / p90 / max, an empirical CDF and a histogram.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import calibration as cal
from .decode import DecodedLed, PeriodEstimate, decode_roi
from .errors import (DecodeError, ExperimentFailed, InsufficientBeacons, TrackLost, ValidationError,
                     VlpError)
from .geometry import CameraIntrinsics, PixelPoint, Pose2D, pixel_to_image, position_from_two_leds
from .scene_sim import Frame, LedRegistry, RollingShutterConfig, Scenario, visible_for_all_headings, \
    fully_in_view
from .vision import (TrackerConfig, extract_rois, gray_histogram, init_track, otsu_threshold,
                     track_step)

HIST_BIN_WIDTH = 0.2
RESULT_COLUMNS = ["point_index", "trial_index", "seed", "gt_x", "gt_y", "gt_theta",
                  "est_x", "est_y", "est_theta", "error_cm", "status"]


def derive_seed(*keys) -> int:
    """Stable 32-bit seed from a tuple of ints/strings."""
    words = []
    for k in keys:
        if isinstance(k, str):
            words.extend(k.encode())
        else:
            words.append(int(k) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(words).generate_state(1)[0])


@dataclass
class PositionFix:
    pose: Pose2D
    led_pair: Tuple[int, int]
    centroids: Dict[int, PixelPoint] = field(default_factory=dict)
    confidence: Dict[int, float] = field(default_factory=dict)
    frame_index: int = 0


def closing_height_for(registry: LedRegistry, rs: RollingShutterConfig) -> int:
    """Twice the longest half-period, so a dark stripe never splits a lamp."""
    half = max(0.5 * rs.stripe_period(fx.mod_frequency) for fx in registry)
    return int(math.ceil(2 * half)) | 1


def detect_leds(frame: Frame, registry: LedRegistry, rs: RollingShutterConfig,
                threshold: Optional[int] = None, min_area: int = 50,
                keep_truncated: bool = False) -> List[DecodedLed]:
    """Full-frame detection and decoding; undecodable ROIs are skipped."""
    if threshold is None:
        threshold = otsu_threshold(gray_histogram(frame))
    rois = extract_rois(frame, threshold, min_area, closing_height_for(registry, rs))
    found: Dict[int, DecodedLed] = {}
    for roi in rois:
        if roi.truncated and not keep_truncated:
            continue
        try:
            d = decode_roi(frame, roi, registry, rs)
        except DecodeError:
            continue
        # rois arrive largest first; the first claim on an id wins
        found.setdefault(d.id, d)
    return sorted(found.values(), key=lambda d: d.id)


def select_led_pair(detections: Sequence[DecodedLed]) -> Tuple[DecodedLed, DecodedLed]:
    """Widest-separated pair (best angular leverage), ordered by ascending id."""
    if len(detections) < 2:
        raise InsufficientBeacons(f"need two decoded LEDs, found {len(detections)}")

    def sep(pair):
        a, b = pair
        ca = a.image_centroid or a.pixel_centroid
        cb = b.image_centroid or b.pixel_centroid
        return math.hypot(ca[0] - cb[0], ca[1] - cb[1])

    a, b = max(combinations(detections, 2), key=sep)
    return (a, b) if a.id < b.id else (b, a)


class TrackerSet:
    """One Kalman/mean-shift track per decoded LED, re-seeded on loss."""

    def __init__(self, config: TrackerConfig = TrackerConfig()):
        self.config = config
        self.tracks = {}
        self.redetections = 0       # frames that fell back to full-frame detection

    def __len__(self):
        return len(self.tracks)

    def update(self, frame: Frame, registry: LedRegistry, rs: RollingShutterConfig) -> List[DecodedLed]:
        out = []
        for led_id, state in list(self.tracks.items()):
            try:
                state, roi = track_step(state, frame)
            except TrackLost:
                del self.tracks[led_id]
                continue
            self.tracks[led_id] = state
            if state.measurement is None:
                continue
            fx = registry[led_id]
            out.append(DecodedLed(led_id, fx.position, state.centroid,
                                  PeriodEstimate(math.nan, state.similarity), roi=roi))
        if len(out) >= 2:
            return out

        self.redetections += 1
        threshold = otsu_threshold(gray_histogram(frame))
        found = detect_leds(frame, registry, rs, threshold)
        self.tracks = {d.id: init_track(frame, d.roi, threshold, self.config, d.id) for d in found}
        return found

    @property
    def pixels_processed(self) -> Dict[int, int]:
        return {k: s.pixels_processed for k, s in self.tracks.items()}


def locate(frame: Frame, registry: LedRegistry, k: CameraIntrinsics, height: float,
           rs: RollingShutterConfig = RollingShutterConfig(), tracks: Optional[TrackerSet] = None,
           jitter_sigma: float = 0.0, rng: Optional[np.random.Generator] = None) -> PositionFix:
    """Estimate the camera pose from one frame."""
    if tracks is not None:
        detections = tracks.update(frame, registry, rs)
    else:
        detections = detect_leds(frame, registry, rs)
    if len(detections) < 2:
        raise InsufficientBeacons(f"need two decoded LEDs, found {len(detections)}")

    if jitter_sigma > 0:
        rng = rng if rng is not None else np.random.default_rng()
        detections = [DecodedLed(d.id, d.world, PixelPoint(*(np.asarray(d.pixel_centroid)
                                                             + rng.normal(0.0, jitter_sigma, 2))),
                                 d.period, None, d.roi) for d in detections]
    detections = [DecodedLed(d.id, d.world, d.pixel_centroid, d.period,
                             pixel_to_image(d.pixel_centroid, k), d.roi) for d in detections]
    a, b = select_led_pair(detections)
    pose = position_from_two_leds(registry[a.id], registry[b.id], a.image_centroid,
                                  b.image_centroid, k, height)
    return PositionFix(pose, (a.id, b.id),
                       {d.id: d.pixel_centroid for d in detections},
                       {d.id: float(d.period[1]) for d in detections},
                       frame.index)


# -- grid experiment -------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    points: Tuple[Tuple[float, float], ...]
    trials_per_point: int = 12
    theta: Optional[float] = None       # None: uniform random yaw per trial

    def __post_init__(self):
        if self.trials_per_point < 1:
            raise ValueError("trials_per_point must be >= 1")
        if not self.points:
            raise ValueError("grid needs at least one point")

    @classmethod
    def even(cls, nx: int = 6, ny: int = 6, x_range=(26.0, 146.0), y_range=(26.0, 146.0),
             trials_per_point: int = 12, theta: Optional[float] = None) -> "GridSpec":
        xs = np.linspace(*x_range, nx)
        ys = np.linspace(*y_range, ny)
        pts = tuple((float(x), float(y)) for y in ys for x in xs)
        return cls(pts, trials_per_point, theta)

    @property
    def size(self) -> int:
        return len(self.points) * self.trials_per_point


def validate_grid(spec: GridSpec, scenario: Scenario) -> None:
    """Reject points off the platform or with fewer than two lamps always in view."""
    k = scenario.true_intrinsics
    for n, (x, y) in enumerate(spec.points):
        if not scenario.in_platform(x, y):
            raise ValidationError(f"grid point {n} ({x}, {y}) lies outside the platform")
        if spec.theta is None:
            seen = sum(visible_for_all_headings(fx, x, y, k, scenario.height) for fx in scenario.registry)
        else:
            pose = Pose2D.make(x, y, spec.theta)
            seen = sum(fully_in_view(fx, pose, k, scenario.height) for fx in scenario.registry)
        if seen < 2:
            raise ValidationError(f"grid point {n} ({x}, {y}) sees {seen} lamp(s); need 2")


@dataclass(frozen=True)
class TrialRecord:
    point_index: int
    trial_index: int
    seed: int
    truth: Pose2D
    estimate: Optional[Pose2D]
    error: Optional[float]
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.error is not None


def run_trial(scenario: Scenario, k: CameraIntrinsics, spec: GridSpec, point_index: int,
              trial_index: int, master_seed: int) -> TrialRecord:
    seed = derive_seed(master_seed, "grid", point_index, trial_index)
    rng = np.random.default_rng(seed)
    x, y = spec.points[point_index]
    theta = rng.uniform(-math.pi, math.pi) if spec.theta is None else spec.theta
    truth = Pose2D.make(x, y, theta)
    frame = scenario.capture(truth, derive_seed(seed, "frame"), frame_start_time=rng.uniform(0.0, 1.0))
    try:
        fix = locate(frame, scenario.registry, k, scenario.height, scenario.shutter,
                     jitter_sigma=scenario.noise.centroid_jitter_sigma, rng=rng)
    except VlpError as exc:
        return TrialRecord(point_index, trial_index, seed, truth, None, None, type(exc).__name__)
    err = math.hypot(fix.pose.x - truth.x, fix.pose.y - truth.y)
    return TrialRecord(point_index, trial_index, seed, truth, fix.pose, err)


def _run_chunk(args):
    scenario, k, spec, jobs, master_seed = args
    return [run_trial(scenario, k, spec, p, t, master_seed) for p, t in jobs]


def run_grid_experiment(spec: GridSpec, scenario: Scenario, calibration: str = "none",
                        master_seed: int = 0, rig: cal.CalibrationRig = cal.CalibrationRig(),
                        workers: int = 1, max_failure_fraction: float = 0.01,
                        intrinsics: Optional[CameraIntrinsics] = None) -> List[TrialRecord]:
    """All grid trials, ordered by (point, trial); deterministic in ``master_seed``.

    ``calibration`` selects the principal point used by the solver: the
    nominal one, or the output of the rotation/dispersion protocol run once
    up front.  Passing ``intrinsics`` skips calibration entirely.
    """
    validate_grid(spec, scenario)
    if intrinsics is None:
        if calibration == "none":
            intrinsics = scenario.intrinsics
        elif calibration in ("rotation", "dispersion"):
            intrinsics = cal.calibrate_end_to_end(calibration, scenario, rig,
                                                  derive_seed(master_seed, "calibration")).intrinsics
        else:
            raise ValueError(f"unknown calibration {calibration!r}")

    jobs = [(p, t) for p in range(len(spec.points)) for t in range(spec.trials_per_point)]
    if workers > 1:
        chunks = [jobs[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            parts = pool.map(_run_chunk, [(scenario, intrinsics, spec, c, master_seed) for c in chunks])
            records = [r for part in parts for r in part]
        records.sort(key=lambda r: (r.point_index, r.trial_index))
    else:
        records = _run_chunk((scenario, intrinsics, spec, jobs, master_seed))

    failed = sum(not r.ok for r in records)
    if failed > max_failure_fraction * len(records):
        raise ExperimentFailed(f"{failed} of {len(records)} trials failed", records)
    return records


@dataclass(frozen=True)
class ErrorStats:
    mean: float
    p90: float
    max: float
    cdf: Tuple[Tuple[float, float], ...]
    histogram: Tuple[Tuple[float, float, int], ...]
    count: int
    failed: int = 0


def compute_stats(records, bin_width: float = HIST_BIN_WIDTH) -> ErrorStats:
    """Summary statistics over successful trials (or a plain list of errors)."""
    records = list(records)
    errs = [r.error for r in records if r.ok] if records and isinstance(records[0], TrialRecord) \
        else [float(e) for e in records]
    failed = len(records) - len(errs)
    if not errs:
        raise cal.EmptyInput("no successful trials")
    e = np.sort(np.asarray(errs, dtype=float))
    n = len(e)
    # smallest e with ECDF(e) >= 0.9, i.e. the ceil(0.9 n)-th order statistic
    p90 = float(e[(9 * n + 9) // 10 - 1])
    values, counts = np.unique(e, return_counts=True)
    cdf = tuple((float(v), float(c) / n) for v, c in zip(values, np.cumsum(counts)))
    top = float(e[-1])
    nbins = max(1, int(math.ceil(top / bin_width - 1e-12)))
    edges = np.arange(nbins + 1) * bin_width
    if edges[-1] < top:
        edges = np.append(edges, edges[-1] + bin_width)
    hist, _ = np.histogram(e, bins=edges)
    histogram = tuple((float(lo), float(hi), int(c)) for lo, hi, c in zip(edges[:-1], edges[1:], hist))
    return ErrorStats(float(e.mean()), p90, top, cdf, histogram, n, failed)


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def format_results_csv(records: Sequence[TrialRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in records:
        est = r.estimate
        w.writerow([r.point_index, r.trial_index, r.seed,
                    _fmt(r.truth.x), _fmt(r.truth.y), _fmt(r.truth.theta),
                    _fmt(est and est.x), _fmt(est and est.y), _fmt(est and est.theta),
                    _fmt(r.error) if r.ok else "failed", r.status])
    return buf.getvalue()


def format_stats_csv(stats: ErrorStats) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    for name in ("mean", "p90", "max"):
        w.writerow([name, repr(getattr(stats, name))])
    w.writerow(["count", stats.count])
    w.writerow(["failed", stats.failed])
    w.writerow([])
    w.writerow(["cdf"])
    w.writerow(["error_cm", "fraction"])
    for v, f in stats.cdf:
        w.writerow([repr(v), repr(f)])
    w.writerow([])
    w.writerow(["hist"])
    w.writerow(["bin_lo_cm", "bin_hi_cm", "count"])
    for lo, hi, c in stats.histogram:
        w.writerow([repr(lo), repr(hi), c])
    return buf.getvalue()


def read_results_csv(path) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def replay(frames, registry: LedRegistry, k: CameraIntrinsics, height: float,
           rs: RollingShutterConfig, tracks: Optional[TrackerSet] = None) -> List[Optional[PositionFix]]:
    """Locate every frame of a scripted sequence; failures yield ``None``."""
    fixes = []
    for frame in frames:
        try:
            fixes.append(locate(frame, registry, k, height, rs, tracks=tracks))
        except VlpError:
            fixes.append(None)
    return fixes


def default_workers() -> int:
    return max(1, min(8, os.cpu_count() or 1))
