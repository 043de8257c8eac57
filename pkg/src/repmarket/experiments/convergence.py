"""Representation-convergence scenarios: the population starts heterogeneous
and the mean-reversion speed toward the shared benchmark is varied across
scenarios, holding everything else (including the initial population, via
the shared seed) fixed.

Tracked per scenario: the time path of the mean pairwise representation
distance, rolling-window forecast/position correlations, order-flow
concentration, dealer inventory stress, and the liquidity coefficients;
plus the first time the distance path crosses a supplied critical level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import RunConfig
from ..metrics import concentration
from ..simulation import simulate_paths

__all__ = ["ConvergencePanel", "ScenarioSeries", "run_convergence"]

DEFAULT_NUS = (0.0, 0.001, 0.01, 0.1)


@dataclass
class ScenarioSeries:
    """Replication-mean time series for one convergence speed, sampled at
    ``times`` (plus the per-replication distance paths for dispersion)."""

    nu_w: float
    times: np.ndarray              # (S,)
    d_repr: np.ndarray             # (S,) mean over replications
    d_repr_reps: np.ndarray        # (R, S)
    rho_forecast: np.ndarray       # (S,)
    rho_position: np.ndarray       # (S,)
    concentration: np.ndarray      # (S,)
    inv_stress: np.ndarray         # (S,)
    lam: np.ndarray                # (S,)
    psi: np.ndarray                # (S,)
    crossing_time: float           # NaN if never below d_crit (or none given)


@dataclass
class ConvergencePanel:
    scenarios: list[ScenarioSeries]
    d_crit: float | None
    m_reps: int

    def series_for(self, nu_w: float) -> ScenarioSeries:
        for s in self.scenarios:
            if s.nu_w == nu_w:
                return s
        raise KeyError(f"no scenario with nu_w={nu_w}")


def _rolling_sync(series: np.ndarray, times: np.ndarray, window: int) -> np.ndarray:
    """Mean pairwise correlation of (N, T) series over trailing windows."""
    from ..metrics import _mean_pairwise_corr

    out = np.full(times.size, np.nan)
    for k, t in enumerate(times):
        start = max(0, t + 1 - window)
        if t + 1 - start < 3:
            continue
        out[k], _ = _mean_pairwise_corr(series[:, start:t + 1])
    return out


def run_convergence(
    base_cfg: RunConfig,
    nus: tuple[float, ...] = DEFAULT_NUS,
    sigma_w: float = 0.01,
    m_reps: int = 20,
    d_crit: float | None = None,
    sample_every: int = 50,
    roll_window: int = 200,
) -> ConvergencePanel:
    """Run every convergence speed from the same heterogeneous start.

    Agent risk aversions and learning rates stay at their initialized values
    throughout; only the representation matrices move.
    """
    scenarios: list[ScenarioSeries] = []
    for nu in nus:
        cfg = base_cfg.with_updates(**{
            "drift.nu_w": float(nu),
            "drift.sigma_w": float(sigma_w),
        })
        traj = simulate_paths(
            cfg,
            range(m_reps),
            record_states=False,
            repr_every=sample_every,
            repr_window=roll_window,
        )
        times = traj.repr_times
        ok = ~traj.aborted
        d_reps = traj.repr_series[ok]
        d_mean = d_reps.mean(axis=0)

        rho_f = np.full(times.size, np.nan)
        rho_p = np.full(times.size, np.nan)
        conc = np.full(times.size, np.nan)
        for k, t in enumerate(times):
            start = max(0, int(t) + 1 - roll_window)
            f_vals, p_vals, c_vals = [], [], []
            for j in np.flatnonzero(ok):
                f = _rolling_corr_window(traj.forecasts[j], start, int(t))
                p = _rolling_corr_window(traj.positions[j], start, int(t))
                _, cm = concentration(traj.trades[j][:, start:int(t) + 1])
                f_vals.append(f)
                p_vals.append(p)
                c_vals.append(cm)
            rho_f[k] = np.nanmean(f_vals)
            rho_p[k] = np.nanmean(p_vals)
            conc[k] = np.nanmean(c_vals)

        inv = np.abs(traj.inventory[ok])[:, times].mean(axis=0)
        lam = traj.lam[ok][:, times].mean(axis=0)
        psi = traj.psi[ok][:, times].mean(axis=0)

        crossing = float("nan")
        if d_crit is not None:
            below = np.flatnonzero(d_mean < d_crit)
            if below.size:
                crossing = float(times[below[0]])

        scenarios.append(
            ScenarioSeries(
                nu_w=float(nu),
                times=times.astype(float),
                d_repr=d_mean,
                d_repr_reps=d_reps,
                rho_forecast=rho_f,
                rho_position=rho_p,
                concentration=conc,
                inv_stress=inv,
                lam=lam,
                psi=psi,
                crossing_time=crossing,
            )
        )
    return ConvergencePanel(scenarios=scenarios, d_crit=d_crit, m_reps=m_reps)


def _rolling_corr_window(series: np.ndarray, start: int, t: int) -> float:
    from ..metrics import _mean_pairwise_corr

    if t + 1 - start < 3:
        return float("nan")
    val, _ = _mean_pairwise_corr(series[:, start:t + 1])
    return val
