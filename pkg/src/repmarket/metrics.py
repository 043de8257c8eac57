"""Homogeneity metrology and systemic outcome statistics.

Pairwise agent distances are measured in *function space*: two agents are
close when they map the same market states to nearby feature vectors (or
forecasts), regardless of how their parameter matrices compare entrywise.
All function-space distances are weighted root-mean-square gaps over a
reference measure of market states; the measure can be the empirical state
distribution of a simulation, an explicit benchmark grid, or a reweighting
that emphasizes stress states.

The aligned representation distance additionally minimizes over hidden-unit
permutations, so feature maps that differ only by an arbitrary reordering of
their components count as identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .agents import apply_activation
from .core import AgentParams, ConfigError

__all__ = [
    "DistanceReport",
    "OutcomeRecord",
    "ReferenceMeasure",
    "aligned_repr_distance",
    "build_distance_report",
    "composite_homogeneity",
    "concentration",
    "forecast_distance",
    "pairwise_forecast_distances",
    "pairwise_repr_distances",
    "repr_distance",
    "risk_distance",
    "synchronization",
    "tail_risk",
]

DEFAULT_WEIGHTS = (0.5, 0.3, 0.2)
STRESS_WEIGHT_BOOST = 9.0


# ---------------------------------------------------------------------------
# Reference measures over market states
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReferenceMeasure:
    """A finite measure over state vectors: points plus normalized weights."""

    kind: str                 # "empirical" | "grid" | "weighted"
    states: np.ndarray        # (M, K_s)
    weights: np.ndarray       # (M,), sums to 1

    def __post_init__(self) -> None:
        if self.states.ndim != 2 or self.states.shape[0] == 0:
            raise ConfigError("reference measure needs a non-empty (M, K_s) state array")
        if self.weights.shape != (self.states.shape[0],):
            raise ConfigError("weights length must match states")
        if np.any(self.weights < 0) or not math.isclose(float(self.weights.sum()), 1.0, rel_tol=1e-9):
            raise ConfigError("weights must be nonnegative and sum to 1")

    @classmethod
    def empirical(cls, states: np.ndarray) -> "ReferenceMeasure":
        """Uniform weights over realized states."""
        states = np.asarray(states, dtype=float)
        m = states.shape[0]
        return cls("empirical", states, np.full(m, 1.0 / m))

    @classmethod
    def grid(cls, states: np.ndarray) -> "ReferenceMeasure":
        """Uniform weights over a predetermined benchmark grid."""
        states = np.asarray(states, dtype=float)
        m = states.shape[0]
        return cls("grid", states, np.full(m, 1.0 / m))

    @classmethod
    def stress_weighted(
        cls, states: np.ndarray, vol_column: int, boost: float = STRESS_WEIGHT_BOOST
    ) -> "ReferenceMeasure":
        """Empirical states reweighted by ``1 + boost`` on the top volatility
        decile (volatility read from ``vol_column`` of the state vector)."""
        states = np.asarray(states, dtype=float)
        vols = states[:, vol_column]
        cutoff = np.quantile(vols, 0.9)
        w = np.where(vols >= cutoff, 1.0 + boost, 1.0)
        return cls("weighted", states, w / w.sum())


def _features(w: np.ndarray, mu: ReferenceMeasure, activation: str) -> np.ndarray:
    """Feature maps over the measure: (..., M, K) for stacked matrices."""
    return apply_activation(np.einsum("...ks,ms->...mk", w, mu.states), activation)


# ---------------------------------------------------------------------------
# Pairwise distances
# ---------------------------------------------------------------------------

def repr_distance(w_i: np.ndarray, w_j: np.ndarray, mu: ReferenceMeasure, activation: str) -> float:
    """Weighted RMS gap between two feature maps over the measure."""
    if w_i.shape != w_j.shape:
        raise ConfigError("agents must share feature and state dimensions")
    h_i = _features(w_i, mu, activation)
    h_j = _features(w_j, mu, activation)
    gap = ((h_i - h_j) ** 2).sum(axis=1)
    return float(np.sqrt((mu.weights * gap).sum()))


def forecast_distance(
    w_i: np.ndarray,
    theta_i: np.ndarray,
    w_j: np.ndarray,
    theta_j: np.ndarray,
    mu: ReferenceMeasure,
    activation: str,
) -> float:
    """Weighted RMS gap between two forecast rules over the measure."""
    f_i = _features(w_i, mu, activation) @ theta_i
    f_j = _features(w_j, mu, activation) @ theta_j
    return float(np.sqrt((mu.weights * (f_i - f_j) ** 2).sum()))


def risk_distance(
    params_i: AgentParams,
    params_j: AgentParams,
    weights: Sequence[float],
) -> float:
    """Weighted Euclidean distance between position-rule parameter vectors
    ``(gamma, d_max)``; weights make components comparable in scale."""
    vec_i = np.array([params_i.gamma, params_i.d_max])
    vec_j = np.array([params_j.gamma, params_j.d_max])
    w = np.asarray(weights, dtype=float)
    if w.shape != vec_i.shape:
        raise ConfigError("risk weights must match the (gamma, d_max) component vector")
    return float(np.sqrt((w * (vec_i - vec_j) ** 2).sum()))


def pairwise_repr_distances(
    ws: np.ndarray, mu: ReferenceMeasure, activation: str
) -> np.ndarray:
    """Full (N, N) matrix of representation distances for stacked matrices."""
    h = _features(ws, mu, activation)                      # (N, M, K)
    hw = h * mu.weights[None, :, None]
    sq = np.einsum("nmk,nmk->n", hw, h)
    cross = np.einsum("nmk,pmk->np", hw, h)
    d2 = sq[:, None] + sq[None, :] - 2.0 * cross
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(np.maximum(d2, 0.0))


def pairwise_forecast_distances(
    ws: np.ndarray, thetas: np.ndarray, mu: ReferenceMeasure, activation: str
) -> np.ndarray:
    """Full (N, N) matrix of forecast-rule distances."""
    h = _features(ws, mu, activation)                      # (N, M, K)
    f = np.einsum("nmk,nk->nm", h, thetas)                 # (N, M)
    fw = f * mu.weights[None, :]
    sq = np.einsum("nm,nm->n", fw, f)
    cross = fw @ f.T
    d2 = sq[:, None] + sq[None, :] - 2.0 * cross
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(np.maximum(d2, 0.0))


def pairwise_risk_distances(
    params: Sequence[AgentParams], weights: Sequence[float] | None = None
) -> np.ndarray:
    """Full (N, N) matrix of risk-parameter distances.

    When ``weights`` is omitted, components are weighted by the inverse
    cross-sectional variance; components with no dispersion get weight zero
    (they carry no heterogeneity).
    """
    vecs = np.array([[p.gamma, p.d_max] for p in params])
    if weights is None:
        var = vecs.var(axis=0)
        weights = np.where(var > 0, 1.0 / np.where(var > 0, var, 1.0), 0.0)
    w = np.asarray(weights, dtype=float)
    diff = vecs[:, None, :] - vecs[None, :, :]
    return np.sqrt((w * diff**2).sum(axis=2))


def aligned_repr_distance(
    w_i: np.ndarray,
    w_j: np.ndarray,
    mu: ReferenceMeasure,
    activation: str,
    theta_j: np.ndarray | None = None,
) -> float:
    """Representation distance minimized over hidden-unit permutations.

    The objective is additive over matched unit pairs, so the exact optimum
    is a linear assignment on the cost matrix
    ``C[k, l] = sum_m w_m (h_i[k](S_m) - h_j[l](S_m))^2``.
    """
    h_i = _features(w_i, mu, activation)                   # (M, K)
    h_j = _features(w_j, mu, activation)
    wcol = mu.weights[:, None]
    sq_i = (wcol * h_i**2).sum(axis=0)                     # (K,)
    sq_j = (wcol * h_j**2).sum(axis=0)
    cross = (h_i * wcol).T @ h_j                           # (K, K)
    cost = sq_i[:, None] + sq_j[None, :] - 2.0 * cross
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(max(cost[rows, cols].sum(), 0.0)))


# ---------------------------------------------------------------------------
# Composite homogeneity index
# ---------------------------------------------------------------------------

@dataclass
class DistanceReport:
    """Pairwise distance matrices plus the scalar homogeneity summary."""

    d_repr: np.ndarray
    d_forecast: np.ndarray
    d_risk: np.ndarray
    d_repr_aligned: np.ndarray
    d_repr_mean: float
    d_forecast_mean: float
    composite_h: float

    def to_json(self) -> str:
        payload = {
            "d_repr": self.d_repr.tolist(),
            "d_forecast": self.d_forecast.tolist(),
            "d_risk": self.d_risk.tolist(),
            "d_repr_aligned": self.d_repr_aligned.tolist(),
            "d_repr_mean": self.d_repr_mean,
            "d_forecast_mean": self.d_forecast_mean,
            "composite_h": self.composite_h,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def offdiag_mean(matrix: np.ndarray) -> float:
    """Mean over unordered pairs of a symmetric zero-diagonal matrix."""
    n = matrix.shape[0]
    if n < 2:
        return 0.0
    iu = np.triu_indices(n, k=1)
    return float(matrix[iu].mean())


def _normalize(matrix: np.ndarray) -> np.ndarray:
    """Scale a distance matrix by its 95th-percentile pairwise value so the
    bulk lands in [0, 1]; an all-zero matrix stays zero."""
    iu = np.triu_indices(matrix.shape[0], k=1)
    scale = float(np.quantile(matrix[iu], 0.95)) if iu[0].size else 0.0
    if scale <= 0:
        return np.zeros_like(matrix)
    return matrix / scale


def composite_homogeneity(
    report: "DistanceReport",
    w1: float = DEFAULT_WEIGHTS[0],
    w2: float = DEFAULT_WEIGHTS[1],
    w3: float = DEFAULT_WEIGHTS[2],
) -> tuple[np.ndarray, np.ndarray, float]:
    """Composite distance, homogeneity matrix, and its pairwise mean.

    Components are normalized per :func:`_normalize` before the weighted
    sum; weights must sum to one.
    """
    if w1 < 0 or w2 < 0 or w3 < 0 or not math.isclose(w1 + w2 + w3, 1.0, rel_tol=1e-9):
        raise ConfigError("composite weights must be nonnegative and sum to 1")
    d = (
        w1 * _normalize(report.d_repr)
        + w2 * _normalize(report.d_forecast)
        + w3 * _normalize(report.d_risk)
    )
    h = 1.0 - d
    np.fill_diagonal(h, 1.0)
    return d, h, offdiag_mean(h)


def build_distance_report(
    ws: np.ndarray,
    thetas: np.ndarray,
    params: Sequence[AgentParams],
    mu: ReferenceMeasure,
    activation: str,
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS,
) -> DistanceReport:
    """Compute every pairwise distance matrix and the composite summary."""
    n = ws.shape[0]
    d_repr = pairwise_repr_distances(ws, mu, activation)
    d_fc = pairwise_forecast_distances(ws, thetas, mu, activation)
    d_risk = pairwise_risk_distances(params)
    aligned = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            aligned[i, j] = aligned[j, i] = aligned_repr_distance(
                ws[i], ws[j], mu, activation
            )
    report = DistanceReport(
        d_repr=d_repr,
        d_forecast=d_fc,
        d_risk=d_risk,
        d_repr_aligned=aligned,
        d_repr_mean=offdiag_mean(d_repr),
        d_forecast_mean=offdiag_mean(d_fc),
        composite_h=0.0,
    )
    _, _, hbar = composite_homogeneity(report, *weights)
    report.composite_h = hbar
    return report


# ---------------------------------------------------------------------------
# Synchronization, concentration, tail risk
# ---------------------------------------------------------------------------

def synchronization(
    forecasts: np.ndarray, positions: np.ndarray
) -> tuple[float, float, int]:
    """Mean pairwise Pearson correlation of forecast and position series.

    Pairs where either series has zero variance are skipped; the number of
    skipped pairs (max over the two statistics) is returned for diagnosis.
    """
    if forecasts.shape[0] < 2 or forecasts.shape[1] < 3:
        raise ConfigError("synchronization needs >= 2 agents and >= 3 steps")
    rho_f, skipped_f = _mean_pairwise_corr(forecasts)
    rho_p, skipped_p = _mean_pairwise_corr(positions)
    return rho_f, rho_p, max(skipped_f, skipped_p)


def _mean_pairwise_corr(series: np.ndarray) -> tuple[float, int]:
    x = series - series.mean(axis=1, keepdims=True)
    norms = np.sqrt((x**2).sum(axis=1))
    valid = norms > 0
    n = series.shape[0]
    iu = np.triu_indices(n, k=1)
    pair_valid = valid[iu[0]] & valid[iu[1]]
    skipped = int((~pair_valid).sum())
    if not pair_valid.any():
        return float("nan"), skipped
    safe = np.where(valid, norms, 1.0)
    unit = x / safe[:, None]
    corr = unit @ unit.T
    vals = np.clip(corr[iu][pair_valid], -1.0, 1.0)
    return float(vals.mean()), skipped


def concentration(trades: np.ndarray) -> tuple[np.ndarray, float]:
    """Directional order-flow concentration per step and its mean.

    ``C_t = |sum_i trade_i| / sum_i |trade_i|``; steps with zero gross flow
    are NaN in the series and excluded from the mean.
    """
    gross = np.abs(trades).sum(axis=0)
    net = np.abs(trades.sum(axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(gross > 0, net / gross, np.nan)
    valid = np.isfinite(c)
    mean = float(c[valid].mean()) if valid.any() else float("nan")
    return c, mean


def tail_risk(
    returns: np.ndarray, prices: np.ndarray, crash_k: float
) -> tuple[float, float, float, float]:
    """Crash frequency, 1% and 5% return quantiles, and maximum drawdown.

    A crash is a step whose absolute return exceeds ``crash_k`` times the
    unconditional return standard deviation of the window.
    """
    returns = np.asarray(returns, dtype=float)
    prices = np.asarray(prices, dtype=float)
    if returns.size < 100:
        raise ConfigError("tail risk needs at least 100 observations")
    sd = float(returns.std())
    crash_freq = float((np.abs(returns) > crash_k * sd).mean()) if sd > 0 else 0.0
    var1 = float(np.quantile(returns, 0.01))
    var5 = float(np.quantile(returns, 0.05))
    running_max = np.maximum.accumulate(prices)
    max_drawdown = float((running_max - prices).max())
    return crash_freq, var1, var5, max_drawdown


# ---------------------------------------------------------------------------
# Per-simulation outcome record
# ---------------------------------------------------------------------------

@dataclass
class OutcomeRecord:
    """Systemic statistics of one simulated path (burn-in excluded).

    ``lambda_peak`` (largest impact coefficient reached) joins the means
    because peak execution cost is one of the threshold-scan outcomes.
    """

    rho_forecast: float
    rho_position: float
    concentration_mean: float
    lambda_mean: float
    psi_mean: float
    inv_stress_mean: float
    crash_freq: float
    var1: float
    var5: float
    max_drawdown: float
    vol: float
    lambda_peak: float
    aborted: bool = False

    FIELD_ORDER = (
        "rho_forecast", "rho_position", "concentration_mean", "lambda_mean",
        "psi_mean", "inv_stress_mean", "crash_freq", "var1", "var5",
        "max_drawdown", "vol", "lambda_peak", "aborted",
    )

    def __post_init__(self) -> None:
        if not self.aborted:
            if math.isfinite(self.var1) and math.isfinite(self.var5) and self.var1 > self.var5:
                raise ConfigError("var1 must not exceed var5")

    @classmethod
    def aborted_record(cls) -> "OutcomeRecord":
        nan = float("nan")
        return cls(*([nan] * 12), aborted=True)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "OutcomeRecord":
        return cls(**json.loads(text))
