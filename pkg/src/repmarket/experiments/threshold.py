"""Change-point estimation on a dispersion scan.

Three estimators of the distance below which an outcome deteriorates
sharply:

``segmented``        grid search over interior breakpoints with a
                     continuous two-piece linear least-squares fit at each
                     candidate; the breakpoint minimizing the SSE wins.  If
                     the best two-piece fit improves on a single line by
                     less than 5% the result is an explicit no-threshold
                     report.
``spline_curvature`` cubic smoothing spline; the threshold is the interior
                     point of maximum absolute second derivative.
``event_crossing``   per-grid-point probability that the outcome exceeds
                     twice its level at the widest-dispersion point,
                     smoothed and interpolated to the 0.5 crossing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.interpolate import UnivariateSpline

from ..core import ConfigError
from .scan import ScanTable

__all__ = ["ThresholdEstimate", "estimate_threshold", "threshold_panel"]

METHODS = ("segmented", "spline_curvature", "event_crossing")
MIN_POINTS = 8
SSE_IMPROVEMENT_FLOOR = 0.05
CURVATURE_FLOOR = 2.0


@dataclass
class ThresholdEstimate:
    method: str
    outcome_name: str
    d_crit: float                 # NaN when no threshold was detected
    fit_quality: float
    detected: bool

    def describe(self) -> str:
        if not self.detected:
            return f"{self.outcome_name} [{self.method}]: no threshold detected"
        return (
            f"{self.outcome_name} [{self.method}]: d_crit = {self.d_crit:.4g} "
            f"(fit quality {self.fit_quality:.3g})"
        )


def _sse(y: np.ndarray, design: np.ndarray) -> float:
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    return float(resid @ resid)


def _segmented(d: np.ndarray, y: np.ndarray) -> tuple[float, float, bool]:
    # improvement is the share of total outcome variance the kink term adds
    # over the single line, so a near-perfect line cannot register a
    # threshold just because its residual is tiny
    total_ss = float(((y - y.mean()) ** 2).sum())
    line_sse = _sse(y, np.column_stack([np.ones_like(d), d]))
    candidates = np.linspace(d[1], d[-2], 201)
    best_sse, best_c = math.inf, float("nan")
    for c in candidates:
        design = np.column_stack([np.ones_like(d), d, np.maximum(d - c, 0.0)])
        sse = _sse(y, design)
        if sse < best_sse:
            best_sse, best_c = sse, float(c)
    if total_ss <= 0:
        return float("nan"), 0.0, False
    improvement = (line_sse - best_sse) / total_ss
    detected = improvement >= SSE_IMPROVEMENT_FLOOR
    return (best_c if detected else float("nan")), improvement, detected


def _spline_curvature(
    d: np.ndarray, y: np.ndarray, noise_var: float
) -> tuple[float, float, bool]:
    smoothing = max(len(d) * noise_var, 1e-12)
    spline = UnivariateSpline(d, y, k=3, s=smoothing)
    span = d[-1] - d[0]
    inner = np.linspace(d[0] + 0.05 * span, d[-1] - 0.05 * span, 400)
    curvature = np.abs(spline.derivative(2)(inner))
    peak = float(curvature.max())
    y_range = float(y.max() - y.min())
    quality = peak * span**2 / max(y_range, 1e-12)
    detected = quality >= CURVATURE_FLOOR
    d_crit = float(inner[int(curvature.argmax())]) if detected else float("nan")
    return d_crit, quality, detected


def _event_crossing(
    d: np.ndarray, rep_values: list[np.ndarray]
) -> tuple[float, float, bool]:
    reference = float(np.nanmean(rep_values[-1]))
    threshold = 2.0 * reference
    probs = np.array([
        float(np.nanmean(np.asarray(v) > threshold)) if len(v) else float("nan")
        for v in rep_values
    ])
    # 3-point moving average, edge-padded
    padded = np.concatenate([probs[:1], probs, probs[-1:]])
    smooth = (padded[:-2] + padded[1:-1] + padded[2:]) / 3.0
    above = smooth > 0.5
    for i in range(len(d) - 1):
        if above[i] != above[i + 1] and math.isfinite(smooth[i]) and math.isfinite(smooth[i + 1]):
            p0, p1 = smooth[i], smooth[i + 1]
            frac = (0.5 - p0) / (p1 - p0)
            d_crit = float(d[i] + frac * (d[i + 1] - d[i]))
            sharpness = abs(p1 - p0)
            return d_crit, sharpness, True
    return float("nan"), 0.0, False


def estimate_threshold(
    scan: ScanTable, outcome_name: str, method: str = "segmented"
) -> ThresholdEstimate:
    """Estimate the change-point of ``outcome_name`` along the scanned
    distance axis."""
    if method not in METHODS:
        raise ConfigError(f"unknown threshold method {method!r}; choose from {METHODS}")
    d = scan.d_values
    if d.size < MIN_POINTS:
        raise ConfigError(f"threshold estimation needs >= {MIN_POINTS} scan points")
    order = np.argsort(d)
    d = d[order]
    y = scan.outcome_means(outcome_name)[order]
    if not np.isfinite(y).all():
        keep = np.isfinite(y) & np.isfinite(d)
        d, y = d[keep], y[keep]
        if d.size < MIN_POINTS:
            raise ConfigError("too few finite scan points for threshold estimation")

    if method == "segmented":
        d_crit, quality, detected = _segmented(d, y)
    elif method == "spline_curvature":
        reps = [scan.outcome_reps(outcome_name)[i] for i in order]
        per_point_var = [
            float(np.nanvar(v, ddof=1)) / len(v) if len(v) > 1 else 0.0 for v in reps
        ]
        d_crit, quality, detected = _spline_curvature(d, y, float(np.mean(per_point_var)))
    else:
        reps = [scan.outcome_reps(outcome_name)[i] for i in order]
        d_crit, quality, detected = _event_crossing(d, reps)

    if detected and not (d[0] <= d_crit <= d[-1]):
        detected, d_crit = False, float("nan")
    return ThresholdEstimate(
        method=method,
        outcome_name=outcome_name,
        d_crit=d_crit,
        fit_quality=quality,
        detected=detected,
    )


def threshold_panel(
    scan: ScanTable,
    outcomes: Sequence[str] = ("crash_freq", "var1", "max_drawdown", "lambda_peak"),
    method: str = "segmented",
) -> tuple[list[ThresholdEstimate], float]:
    """Thresholds for several tail-risk outcomes plus the spread of the
    detected estimates (small spread = the change-point clusters across
    outcomes)."""
    estimates = [estimate_threshold(scan, name, method) for name in outcomes]
    detected = [e.d_crit for e in estimates if e.detected]
    spread = float(max(detected) - min(detected)) if len(detected) >= 2 else float("nan")
    return estimates, spread
