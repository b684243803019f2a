"""LED region extraction and tracking.

Detection: Otsu threshold over the whole frame, a vertical closing that
bridges the dark stripes, then 8-connected components.  Each lamp's center
is a circle fit to the left/right edges of its bright rows; stripes make an
intensity-weighted centroid drift by up to a quarter stripe period, so that
one is kept only as a diagnostic.

Tracking: constant-velocity Kalman prediction, a gated mean-shift search on
the binarized window, and a measurement noise scaled by how well the
candidate's intensity histogram matches the reference
(Bhattacharyya coefficient).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import cv2
import numpy as np

from .calibration import fit_circle_kasa
from .errors import CalibrationError, NotNormalized, TrackLost
from .geometry import PixelPoint
from .scene_sim import Frame


def gray_histogram(frame) -> np.ndarray:
    pixels = frame.pixels if isinstance(frame, Frame) else np.asarray(frame, dtype=np.uint8)
    h = cv2.calcHist([pixels], [0], None, [256], [0, 256])
    return h.ravel().astype(np.int64)


def _between_class_variance(counts: np.ndarray) -> np.ndarray:
    """Scaled between-class variance for thresholds t = 0..254 (class 0 is <= t)."""
    c = np.asarray(counts, dtype=np.float64)
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(c)[:255]
    s0 = np.cumsum(c * levels)[:255]
    n, s = c.sum(), (c * levels).sum()
    w1 = n - w0
    s1 = s - s0
    out = np.zeros(255)
    ok = (w0 > 0) & (w1 > 0)
    out[ok] = (s0[ok] * w1[ok] - s1[ok] * w0[ok]) ** 2 / (w0[ok] * w1[ok])
    return out


def _exact_argmax(counts: np.ndarray, candidates: np.ndarray) -> List[int]:
    c = [int(v) for v in counts]
    n = sum(c)
    total = sum(i * v for i, v in enumerate(c))
    w0 = s0 = 0
    scores = {}
    todo = set(int(t) for t in candidates)
    for t in range(max(todo) + 1):
        w0 += c[t]
        s0 += t * c[t]
        if t in todo:
            w1, s1 = n - w0, total - s0
            scores[t] = ((s0 * w1 - s1 * w0) ** 2, w0 * w1)
    best = []
    for t in sorted(scores):
        num, den = scores[t]
        if not best:
            best = [t]
            continue
        bnum, bden = scores[best[0]]
        if num * bden > bnum * den:
            best = [t]
        elif num * bden == bnum * den:
            best.append(t)
    return best


def is_degenerate(hist) -> bool:
    """True when all histogram mass sits on one gray level."""
    return int(np.count_nonzero(np.asarray(hist))) == 1


def otsu_threshold(hist) -> int:
    """Threshold maximizing between-class variance; pixels > t are foreground.

    A flat maximum is resolved to the floor of its midpoint.  A histogram
    with a single occupied level returns that level (see ``is_degenerate``).
    """
    counts = np.asarray(hist)
    if counts.shape != (256,):
        raise ValueError("histogram must have 256 bins")
    if counts.sum() <= 0:
        raise ValueError("histogram is empty")
    if is_degenerate(counts):
        return int(np.flatnonzero(counts)[0])
    var = _between_class_variance(counts)
    # floats shortlist, exact integer arithmetic settles near-ties
    near = np.flatnonzero(var >= var.max() * (1.0 - 1e-9))
    best = _exact_argmax(counts, near)
    start = end = int(best[0])
    for t in best[1:]:
        if t != end + 1:
            break
        end = int(t)
    return (start + end) // 2


@dataclass(frozen=True)
class RoiWindow:
    x: int
    y: int
    w: int
    h: int
    centroid: PixelPoint
    area: int = 0
    radius: float = 0.0
    weighted_centroid: Optional[PixelPoint] = None
    truncated: bool = False

    @property
    def bbox(self) -> Tuple[int, int, int, int]:
        return self.x, self.y, self.w, self.h

    def contains(self, p) -> bool:
        return self.x <= p[0] <= self.x + self.w and self.y <= p[1] <= self.y + self.h


def _edge_points(mask: np.ndarray, x0: int, y0: int, frame_w: int, clipped: bool) -> np.ndarray:
    """Left/right boundary points of every lit row in ``mask`` (frame coordinates)."""
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return np.empty((0, 2))
    sub = mask[rows]
    left = sub.argmax(axis=1)
    right = sub.shape[1] - sub[:, ::-1].argmax(axis=1)
    ys = y0 + rows + 0.5
    xl = x0 + left.astype(float)
    xr = x0 + right.astype(float)
    keep_l = xl > 0
    keep_r = xr < frame_w
    if clipped:
        keep_l &= left > 0
        keep_r &= right < sub.shape[1]
    return np.concatenate([np.column_stack([xl[keep_l], ys[keep_l]]),
                           np.column_stack([xr[keep_r], ys[keep_r]])])


def fit_disc(mask: np.ndarray, x0: int, y0: int, frame_w: int,
             clipped: bool = False) -> Optional[Tuple[PixelPoint, float]]:
    """Sub-pixel disc center/radius from the chord edges of a striped blob.

    ``clipped`` marks a mask cut from a larger window: edges touching the
    window border are then dropped as well as those on the frame border.
    """
    pts = _edge_points(mask, x0, y0, frame_w, clipped)
    if len(pts) < 3:
        return None
    try:
        c = fit_circle_kasa(pts)
    except CalibrationError:
        return None
    return PixelPoint(*c.center), c.radius


def _weighted_centroid(values: np.ndarray, mask: np.ndarray, x0: int, y0: int) -> Optional[PixelPoint]:
    w = values.astype(np.float64) * mask
    total = w.sum()
    if total <= 0:
        return None
    ys, xs = np.indices(w.shape)
    return PixelPoint(x0 + float((w * (xs + 0.5)).sum() / total),
                      y0 + float((w * (ys + 0.5)).sum() / total))


def extract_rois(frame: Frame, t: int, min_area: int = 50, closing_height: int = 21,
                 min_size: int = 8) -> List[RoiWindow]:
    """Lamp regions above threshold ``t``, largest first.

    ``closing_height`` (rows) must exceed the longest dark stripe so one lamp
    does not fall apart into several blobs.
    """
    pixels = frame.pixels
    H, W = pixels.shape
    _, binary = cv2.threshold(pixels, int(t), 255, cv2.THRESH_BINARY)
    if closing_height > 1:
        kh = int(closing_height) | 1
        half = kh // 2
        # close on a zero-padded copy; cv2's default border would let the
        # dilation reach the frame edge and the erosion never take it back
        padded = cv2.copyMakeBorder(binary, half, half, 0, 0, cv2.BORDER_CONSTANT, value=0)
        closed = cv2.morphologyEx(padded, cv2.MORPH_CLOSE, np.ones((kh, 1), np.uint8))[half:half + binary.shape[0]]
        closed = np.ascontiguousarray(closed)
    else:
        closed = binary
    # Grana's block-based labeling is ~3x faster than the default on sparse masks
    n, labels, stats, _ = cv2.connectedComponentsWithStatsWithAlgorithm(closed, 8, cv2.CV_32S,
                                                                         cv2.CCL_GRANA)

    rois = []
    for lab in range(1, n):
        x, y, w, h, area = (int(v) for v in stats[lab])
        if area < min_area or w < min_size or h < min_size:
            continue
        own = labels[y:y + h, x:x + w] == lab
        raw = (binary[y:y + h, x:x + w] > 0) & own
        weighted = _weighted_centroid(pixels[y:y + h, x:x + w], raw, x, y)
        disc = fit_disc(raw, x, y, W)
        if disc is None:
            center = weighted or PixelPoint(x + w / 2.0, y + h / 2.0)
            radius = math.sqrt(area / math.pi)
        else:
            center, radius = disc
        truncated = x == 0 or y == 0 or x + w == W or y + h == H
        rois.append(RoiWindow(x, y, w, h, center, area, radius, weighted, truncated))

    rois.sort(key=lambda r: -r.area)
    kept: List[RoiWindow] = []
    for r in rois:
        if not any(_overlap(r, k) for k in kept):
            kept.append(r)
    return kept


def _overlap(a: RoiWindow, b: RoiWindow) -> bool:
    return a.x < b.x + b.w and b.x < a.x + a.w and a.y < b.y + b.h and b.y < a.y + a.h


def bhattacharyya(p, q, tol: float = 1e-9) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("histograms differ in length")
    for name, h in (("p", p), ("q", q)):
        if np.any(h < 0) or abs(h.sum() - 1.0) > tol:
            raise NotNormalized(f"histogram {name} does not sum to 1")
    return float(min(1.0, np.sqrt(p * q).sum()))


# -- tracking ------------------------------------------------------------------

@dataclass(frozen=True)
class TrackerConfig:
    process_noise: float = 1.0          # q, px^2/frame^2
    measurement_noise: float = 4.0      # R0, px^2
    initial_covariance: float = 25.0
    gate_scale: float = 1.5
    min_similarity: float = 0.3
    similarity_floor: float = 0.05      # epsilon in (1 - B + eps) * R0
    max_coast: int = 5
    bins: int = 16
    max_iterations: int = 20
    convergence: float = 0.5


_F = np.array([[1, 0, 1, 0], [0, 1, 0, 1], [0, 0, 1, 0], [0, 0, 0, 1]], dtype=float)
_H = np.array([[1, 0, 0, 0], [0, 1, 0, 0]], dtype=float)


def _process_cov(q: float) -> np.ndarray:
    g = np.array([[0.5, 0.0], [0.0, 0.5], [1.0, 0.0], [0.0, 1.0]])
    return q * g @ g.T


@dataclass
class TrackState:
    x: np.ndarray
    P: np.ndarray
    reference: np.ndarray
    size: Tuple[int, int]
    threshold: int
    similarity: float = 1.0
    coast: int = 0
    pixels_processed: int = 0
    gate: Tuple[int, int, int, int] = (0, 0, 0, 0)
    led_id: Optional[int] = None
    measurement: Optional[PixelPoint] = None
    config: TrackerConfig = field(default_factory=TrackerConfig)

    @property
    def centroid(self) -> PixelPoint:
        return PixelPoint(float(self.x[0]), float(self.x[1]))


def foreground_histogram(values: np.ndarray, threshold: int, bins: int = 16) -> np.ndarray:
    """Normalized histogram of the above-threshold pixels (all zeros if none)."""
    fg = values[values > threshold]
    h = np.bincount(fg.astype(np.int64) * bins // 256, minlength=bins).astype(float)
    return h / h.sum() if h.sum() > 0 else h


def init_track(frame: Frame, roi: RoiWindow, threshold: int, config: TrackerConfig = TrackerConfig(),
               led_id: Optional[int] = None) -> TrackState:
    sub = frame.pixels[roi.y:roi.y + roi.h, roi.x:roi.x + roi.w]
    ref = foreground_histogram(sub, threshold, config.bins)
    return TrackState(
        x=np.array([roi.centroid.i, roi.centroid.j, 0.0, 0.0]),
        P=np.eye(4) * config.initial_covariance,
        reference=ref,
        size=(roi.w, roi.h),
        threshold=int(threshold),
        led_id=led_id,
        measurement=roi.centroid,
        config=config,
    )


def kalman_predict(x: np.ndarray, P: np.ndarray, q: float) -> Tuple[np.ndarray, np.ndarray]:
    x = _F @ x
    P = _F @ P @ _F.T + _process_cov(q)
    return x, 0.5 * (P + P.T)


def kalman_update(x: np.ndarray, P: np.ndarray, z, r: float) -> Tuple[np.ndarray, np.ndarray]:
    """Measurement update in Joseph form (keeps P symmetric PSD)."""
    R = np.eye(2) * r
    S = _H @ P @ _H.T + R
    K = np.linalg.solve(S, _H @ P).T
    x = x + K @ (np.asarray(z, dtype=float) - _H @ x)
    A = np.eye(4) - K @ _H
    P = A @ P @ A.T + K @ R @ K.T
    return x, 0.5 * (P + P.T)


def _window(cx: float, cy: float, w: int, h: int, bounds: Tuple[int, int, int, int]):
    bx0, by0, bx1, by1 = bounds
    x0 = int(round(cx - w / 2.0))
    y0 = int(round(cy - h / 2.0))
    return max(x0, bx0), max(y0, by0), min(x0 + w, bx1), min(y0 + h, by1)


def mean_shift(mask: np.ndarray, start: Tuple[float, float], size: Tuple[int, int],
               max_iterations: int = 20, tol: float = 0.5) -> Tuple[Tuple[float, float], int]:
    """Move a fixed-size window to the local center of mass of ``mask``.

    Coordinates are relative to ``mask``.  Returns the final center and the
    mass inside the final window.
    """
    cx, cy = start
    w, h = size
    bounds = (0, 0, mask.shape[1], mask.shape[0])
    mass = 0
    for _ in range(max_iterations):
        x0, y0, x1, y1 = _window(cx, cy, w, h, bounds)
        win = mask[y0:y1, x0:x1]
        mass = int(win.sum())
        if mass == 0:
            break
        ys, xs = np.nonzero(win)
        nx = x0 + xs.mean() + 0.5
        ny = y0 + ys.mean() + 0.5
        shift = math.hypot(nx - cx, ny - cy)
        cx, cy = nx, ny
        if shift < tol:
            break
    return (cx, cy), mass


def track_step(state: TrackState, frame: Frame) -> Tuple[TrackState, RoiWindow]:
    """Predict, search the gated window, and update one LED track."""
    cfg = state.config
    x, P = kalman_predict(state.x, state.P, cfg.process_noise)
    w, h = state.size
    gw = int(math.ceil(cfg.gate_scale * w))
    gh = int(math.ceil(cfg.gate_scale * h))
    H, W = frame.pixels.shape
    gx0, gy0, gx1, gy1 = _window(x[0], x[1], gw, gh, (0, 0, W, H))
    gate = (gx0, gy0, max(gx1 - gx0, 0), max(gy1 - gy0, 0))
    sub = frame.pixels[gy0:gy1, gx0:gx1]
    processed = int(sub.size)

    similarity = 0.0
    measured = None
    if sub.size:
        mask = sub > state.threshold
        (mx, my), mass = mean_shift(mask, (x[0] - gx0, x[1] - gy0), (w, h),
                                    cfg.max_iterations, cfg.convergence)
        if mass > 0:
            # Look a little wider than the ROI so the chord edges are not cut.
            rx0, ry0, rx1, ry1 = _window(mx, my, int(w * 1.25) + 2, int(h * 1.25) + 2,
                                         (0, 0, mask.shape[1], mask.shape[0]))
            region = mask[ry0:ry1, rx0:rx1]
            cand = foreground_histogram(sub[ry0:ry1, rx0:rx1], state.threshold, cfg.bins)
            if cand.sum() > 0 and state.reference.sum() > 0:
                similarity = bhattacharyya(cand, state.reference)
            disc = fit_disc(region, gx0 + rx0, gy0 + ry0, W, clipped=True)
            measured = disc[0] if disc is not None else PixelPoint(gx0 + mx, gy0 + my)

    coast = state.coast
    if measured is None or similarity < cfg.min_similarity:
        coast += 1
        if coast > cfg.max_coast:
            raise TrackLost(f"track coasted for {coast} frames")
        measured = None
    else:
        coast = 0
        r = (1.0 - similarity + cfg.similarity_floor) * cfg.measurement_noise
        x, P = kalman_update(x, P, (measured.i, measured.j), r)

    new = replace(state, x=x, P=P, similarity=similarity, coast=coast,
                  pixels_processed=processed, gate=gate, measurement=measured)
    cx, cy = float(x[0]), float(x[1])
    rx0, ry0, rx1, ry1 = _window(cx, cy, w, h, (0, 0, W, H))
    roi = RoiWindow(rx0, ry0, rx1 - rx0, ry1 - ry0, PixelPoint(cx, cy), area=0, radius=min(w, h) / 2.0)
    return new, roi
