"""One-replication orchestration: simulate, reduce to outcome statistics,
and (optionally) keep the trajectories for mechanism decomposition.

Replications are the unit of parallelism; each owns its engine state,
population, and RNG streams, so a batch can be split across processes and
re-merged by replication index with order-independent results.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core import AgentParams, AgentState, RunConfig
from ..metrics import (
    OutcomeRecord,
    ReferenceMeasure,
    concentration,
    offdiag_mean,
    pairwise_forecast_distances,
    pairwise_repr_distances,
    synchronization,
    tail_risk,
)
from ..simulation import Trajectories, simulate_paths

__all__ = [
    "SimulationOutput",
    "outcome_from_trajectories",
    "run_batch",
    "run_replication",
    "summarize_outcomes",
]

MEASURE_CAP = 500


@dataclass
class SimulationOutput:
    """One replication reduced to its outcome record plus the realized
    population-level distances."""

    rep: int
    outcome: OutcomeRecord
    d_repr_mean: float
    d_forecast_mean: float
    trajectories: Trajectories | None = None


def empirical_measure_from_states(
    states: np.ndarray, cap: int = MEASURE_CAP
) -> ReferenceMeasure:
    """Uniform measure over (at most ``cap``, evenly thinned) visited states."""
    m = states.shape[0]
    if m > cap:
        idx = np.linspace(0, m - 1, cap).astype(int)
        states = states[idx]
    return ReferenceMeasure.empirical(states)


def outcome_from_trajectories(
    traj: Trajectories,
    j: int,
    cfg: RunConfig,
    window: slice | None = None,
    measure_cap: int = MEASURE_CAP,
) -> tuple[OutcomeRecord, float, float]:
    """Reduce replication ``j`` of a batch to its outcome record and the
    realized mean pairwise representation / forecast distances.

    ``window`` selects the evaluation span (defaults to everything past the
    burn-in).
    """
    if traj.aborted[j]:
        return OutcomeRecord.aborted_record(), float("nan"), float("nan")
    if window is None:
        window = slice(cfg.burn_in, None)

    returns = traj.returns[j, window]
    prices = traj.prices[j, window]
    rho_f, rho_p, _ = synchronization(
        traj.forecasts[j][:, window], traj.positions[j][:, window]
    )
    _, conc_mean = concentration(traj.trades[j][:, window])
    crash, var1, var5, mdd = tail_risk(returns, prices, cfg.crash_k)
    record = OutcomeRecord(
        rho_forecast=rho_f,
        rho_position=rho_p,
        concentration_mean=conc_mean,
        lambda_mean=float(traj.lam[j, window].mean()),
        psi_mean=float(traj.psi[j, window].mean()),
        inv_stress_mean=float(np.abs(traj.inventory[j, window]).mean()),
        crash_freq=crash,
        var1=var1,
        var5=var5,
        max_drawdown=mdd,
        vol=float(returns.std()),
        lambda_peak=float(traj.lam[j, window].max()),
    )

    d_repr = d_fc = float("nan")
    if traj.states is not None:
        mu = empirical_measure_from_states(traj.states[j, window], measure_cap)
        d_repr = offdiag_mean(
            pairwise_repr_distances(traj.w_final[j], mu, cfg.activation)
        )
        d_fc = offdiag_mean(
            pairwise_forecast_distances(
                traj.w_final[j], traj.theta_final[j], mu, cfg.activation
            )
        )
    return record, d_repr, d_fc


def run_batch(
    cfg: RunConfig,
    rep_ids: Sequence[int],
    *,
    keep_trajectories: bool = False,
    population: list[tuple[AgentParams, AgentState]] | None = None,
    shock_scale: np.ndarray | None = None,
    constant_liquidity: bool = False,
    window: slice | None = None,
    measure_cap: int = MEASURE_CAP,
    jobs: int = 1,
) -> list[SimulationOutput]:
    """Simulate every replication id and reduce each to a SimulationOutput.

    With ``jobs > 1`` the replication list is chunked across worker
    processes; outputs are merged back in replication order.
    """
    rep_ids = list(rep_ids)
    if jobs > 1 and len(rep_ids) > 1:
        chunks = [rep_ids[i::jobs] for i in range(jobs)]
        chunks = [c for c in chunks if c]
        args = [
            (cfg, chunk, keep_trajectories, population, shock_scale,
             constant_liquidity, window, measure_cap)
            for chunk in chunks
        ]
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(_batch_worker, args))
        outputs = [out for part in parts for out in part]
        outputs.sort(key=lambda o: rep_ids.index(o.rep))
        return outputs
    return _run_batch_local(
        cfg, rep_ids, keep_trajectories, population, shock_scale,
        constant_liquidity, window, measure_cap,
    )


def _batch_worker(args) -> list[SimulationOutput]:
    return _run_batch_local(*args)


def _run_batch_local(
    cfg: RunConfig,
    rep_ids: Sequence[int],
    keep_trajectories: bool,
    population,
    shock_scale,
    constant_liquidity: bool,
    window: slice | None,
    measure_cap: int,
) -> list[SimulationOutput]:
    traj = simulate_paths(
        cfg,
        rep_ids,
        population=population,
        shock_scale=shock_scale,
        constant_liquidity=constant_liquidity,
    )
    outputs = []
    for j, rep in enumerate(rep_ids):
        record, d_repr, d_fc = outcome_from_trajectories(
            traj, j, cfg, window=window, measure_cap=measure_cap
        )
        outputs.append(
            SimulationOutput(
                rep=rep,
                outcome=record,
                d_repr_mean=d_repr,
                d_forecast_mean=d_fc,
                trajectories=traj if keep_trajectories else None,
            )
        )
    return outputs


def run_replication(
    cfg: RunConfig,
    rep: int = 0,
    overrides: dict | None = None,
    keep_trajectories: bool = False,
) -> SimulationOutput:
    """One full simulation under ``cfg`` (plus dotted-path overrides)."""
    if overrides:
        cfg = cfg.with_updates(**overrides)
    return run_batch(cfg, [rep], keep_trajectories=keep_trajectories)[0]


def summarize_outcomes(
    outputs: Sequence[SimulationOutput],
) -> dict[str, tuple[float, float, int]]:
    """Per-outcome (mean, standard error, n) over the clean replications.

    Aborted replications are excluded from the statistics but reported under
    the ``aborted`` key as (count, rate, n_total).
    """
    clean = [o for o in outputs if not o.outcome.aborted]
    summary: dict[str, tuple[float, float, int]] = {}
    n_total = len(outputs)
    n_aborted = n_total - len(clean)
    summary["aborted"] = (float(n_aborted), n_aborted / n_total if n_total else 0.0, n_total)
    if not clean:
        return summary
    fields = [f for f in OutcomeRecord.FIELD_ORDER if f != "aborted"]
    for name in fields:
        vals = np.array([getattr(o.outcome, name) for o in clean], dtype=float)
        vals = vals[np.isfinite(vals)]
        if vals.size == 0:
            summary[name] = (float("nan"), float("nan"), 0)
            continue
        se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
        summary[name] = (float(vals.mean()), se, int(vals.size))
    for name in ("d_repr_mean", "d_forecast_mean"):
        vals = np.array([getattr(o, name) for o in clean], dtype=float)
        vals = vals[np.isfinite(vals)]
        if vals.size:
            se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
            summary[name] = (float(vals.mean()), se, int(vals.size))
    return summary
