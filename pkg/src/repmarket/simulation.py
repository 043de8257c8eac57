"""The per-period market loop, vectorized over a batch of replications.

Every replication in a batch owns its own RNG streams (keyed by replication
index), its own dealer, and its own population, so a batched run of
replications ``[0..R)`` is equivalent to running them one at a time.  The
batch axis exists purely for speed: moment-based calibration evaluates many
candidate parameter vectors, each over a common set of seeded replications.

Phase order within one period (see ``agents`` for the phase contract):
state snapshot -> encode/forecast -> position choice -> flow aggregation and
price formation -> readout learning -> slippage and volatility updates ->
representation drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import agents as ag
from .core import (
    AgentParams,
    AgentState,
    PopulationSpec,
    RunConfig,
    RunStreams,
    base_matrix_rng,
)
from .engine import draw_shocks, liquidity_coefs
from .simulation_kernel import HAVE_NUMBA, run_static_kernel

__all__ = ["Trajectories", "draw_w_center", "simulate_paths"]

INITIAL_PRICE = 100.0


def draw_w_center(cfg: RunConfig) -> np.ndarray:
    """The shared benchmark representation matrix for a seed.

    Entries are i.i.d. normal at scale ``cfg.center_scale``; identical for
    every replication and every treatment cell run under the same seed.
    """
    rng = base_matrix_rng(cfg.seed)
    return cfg.center_scale * rng.standard_normal((cfg.k_features, cfg.state_dim))


@dataclass
class Trajectories:
    """Recorded series for a batch of replications (leading axis = batch)."""

    rep_ids: tuple[int, ...]
    burn_in: int
    prices: np.ndarray          # (R, T)
    returns: np.ndarray         # (R, T)
    flows: np.ndarray           # (R, T)
    inventory: np.ndarray       # (R, T)
    lam: np.ndarray             # (R, T)
    psi: np.ndarray             # (R, T)
    shocks: np.ndarray          # (R, T)
    sigma2: np.ndarray          # (R, T) decision-time variance estimate
    aborted: np.ndarray         # (R,) bool
    abort_step: np.ndarray      # (R,) int, -1 when clean
    gamma: np.ndarray           # (R, N)
    eta: np.ndarray             # (R, N)
    w_init: np.ndarray          # (R, N, K, K_s)
    w_final: np.ndarray         # (R, N, K, K_s)
    theta_init: np.ndarray      # (R, N, K)
    theta_final: np.ndarray     # (R, N, K)
    states: np.ndarray | None = None       # (R, T, K_s)
    forecasts: np.ndarray | None = None    # (R, N, T)
    positions: np.ndarray | None = None    # (R, N, T)
    trades: np.ndarray | None = None       # (R, N, T)
    repr_times: np.ndarray | None = None   # (S,)
    repr_series: np.ndarray | None = None  # (R, S) mean pairwise repr distance
    schedule: np.ndarray | None = None     # (R, N, T) bool

    @property
    def n_reps(self) -> int:
        return self.prices.shape[0]

    @property
    def n_steps(self) -> int:
        return self.prices.shape[1]

    def post_burn(self, arr: np.ndarray) -> np.ndarray:
        """Slice the time axis (last axis) past the burn-in window."""
        return arr[..., self.burn_in:]


def _population_arrays(
    cfg: RunConfig,
    rep_ids: Sequence[int],
    w_center: np.ndarray,
    injected: list[tuple[AgentParams, AgentState]] | None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, float, float]:
    n, k, ks = cfg.n_agents, cfg.k_features, cfg.state_dim
    r = len(rep_ids)
    w = np.empty((r, n, k, ks))
    theta = np.empty((r, n, k))
    gamma = np.empty((r, n))
    eta = np.empty((r, n))
    d_max = np.empty((r, n))
    if injected is not None:
        if len(injected) != n:
            raise ValueError(f"injected population has {len(injected)} agents, config says {n}")
        for i, (p, s) in enumerate(injected):
            w[:, i] = s.w
            theta[:, i] = s.theta
            gamma[:, i] = p.gamma
            eta[:, i] = p.eta_theta
            d_max[:, i] = p.d_max
        rho, eps_reg = injected[0][0].rho, injected[0][0].eps_reg
    else:
        spec = cfg.population
        for j, rep in enumerate(rep_ids):
            streams = RunStreams(cfg.seed, rep)
            pairs = ag.init_population(spec, streams.agent_init, k, ks, w_center)
            arrs = ag.PopulationArrays.from_pairs(pairs)
            w[j], theta[j] = arrs.w, arrs.theta
            gamma[j], eta[j], d_max[j] = arrs.gamma, arrs.eta, arrs.d_max
        rho, eps_reg = spec.rho, spec.eps_reg
    return w, theta, gamma, eta, d_max, rho, eps_reg


def simulate_paths(
    cfg: RunConfig,
    rep_ids: Sequence[int],
    *,
    population: list[tuple[AgentParams, AgentState]] | None = None,
    shock_scale: np.ndarray | None = None,
    constant_liquidity: bool = False,
    record_agents: bool = True,
    record_states: bool = True,
    repr_every: int = 0,
    repr_window: int = 200,
) -> Trajectories:
    """Run the market for every replication id in ``rep_ids``.

    population          use these exact agents in every replication instead
                        of drawing fresh ones per replication
    shock_scale         per-step multiplier on the fundamental innovations
                        (stress-phase injection)
    constant_liquidity  pin the liquidity coefficients at their baselines
    repr_every          when positive, record the mean pairwise
                        representation distance every that many steps,
                        evaluated over the trailing ``repr_window`` states
    """
    n, t_total = cfg.n_agents, cfg.n_steps
    k, ks, l_lags = cfg.k_features, cfg.state_dim, cfg.l_lags
    r = len(rep_ids)
    pricing = cfg.pricing
    drift = cfg.drift
    sqrt_dt = math.sqrt(drift.dt)

    w_center = cfg.population.w_center
    if w_center is None:
        w_center = draw_w_center(cfg)

    w, theta, gamma, eta, d_max, rho, eps_reg = _population_arrays(
        cfg, rep_ids, w_center, population
    )
    w_init = w.copy()
    theta_init = theta.copy()
    pos = np.zeros((r, n))
    lam_hat = np.zeros((r, n))

    streams = [RunStreams(cfg.seed, rep) for rep in rep_ids]
    shocks = np.stack([draw_shocks(cfg.shocks, s.fundamental(), t_total) for s in streams])
    if shock_scale is not None:
        shocks = shocks * np.asarray(shock_scale)[None, :]

    schedule = None
    if cfg.async_updates.enabled:
        schedule = np.stack([
            ag.poisson_clocks(cfg.async_updates, n, t_total, s.agent_clock)
            for s in streams
        ])

    # compiled fast path: static representations need no in-loop randomness
    if HAVE_NUMBA and not drift.active and repr_every == 0:
        theta_final = theta.copy()
        res = run_static_kernel(
            w, theta_final, gamma, eta, d_max, rho, eps_reg, shocks, schedule,
            cfg.activation, l_lags, pricing, cfg.vol_beta,
            constant_liquidity, INITIAL_PRICE,
        )
        return Trajectories(
            rep_ids=tuple(rep_ids),
            burn_in=cfg.burn_in,
            prices=res["prices"],
            returns=res["returns"],
            flows=res["flows"],
            inventory=res["inventory"],
            lam=res["lam"],
            psi=res["psi"],
            shocks=shocks,
            sigma2=res["sigma2"],
            aborted=res["aborted"],
            abort_step=res["abort_step"],
            gamma=gamma,
            eta=eta,
            w_init=w_init,
            w_final=w,
            theta_init=theta_init,
            theta_final=theta_final,
            states=res["states"] if record_states else None,
            forecasts=res["forecasts"] if record_agents else None,
            positions=res["positions"] if record_agents else None,
            trades=res["trades"] if record_agents else None,
            schedule=schedule,
        )

    drift_rngs = None
    base_rngs = None
    w_base = None
    if drift.active:
        w_base = np.broadcast_to(w_center, (r, k, ks)).copy()
        if drift.sigma_w > 0:
            drift_rngs = [[s.agent_drift(i) for i in range(n)] for s in streams]
        if drift.sigma_base > 0:
            base_rngs = [s.base_drift() for s in streams]

    # dealer and public estimator state
    fundamental = np.full(r, INITIAL_PRICE)
    inventory = np.zeros(r)
    price = np.full(r, INITIAL_PRICE)
    mu_hat = np.zeros(r)
    sigma2 = np.full(r, np.square(np.float64(pricing.sigma_eps)))
    prev_flow = np.zeros(r)

    rec = {
        name: np.full((r, t_total), np.nan)
        for name in ("prices", "returns", "flows", "inventory", "lam", "psi", "sigma2")
    }
    states_rec = np.full((r, t_total, ks), np.nan) if record_states else None
    forecasts_rec = positions_rec = trades_rec = None
    if record_agents:
        forecasts_rec = np.full((r, n, t_total), np.nan)
        positions_rec = np.full((r, n, t_total), np.nan)
        trades_rec = np.full((r, n, t_total), np.nan)
    r_hat_cache = np.zeros((r, n))
    aborted = np.zeros(r, dtype=bool)
    abort_step = np.full(r, -1, dtype=int)

    repr_times: list[int] = []
    repr_series: list[np.ndarray] = []
    state_buffer = np.zeros((r, max(repr_window, 1), ks)) if repr_every else None

    svec = np.zeros((r, ks))
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for t in range(t_total):
            # 1. state snapshot: lags most recent first, vol signal, last flow
            svec[:] = 0.0
            n_avail = min(t, l_lags)
            if n_avail:
                svec[:, :n_avail] = rec["returns"][:, t - n_avail:t][:, ::-1]
            svec[:, l_lags] = np.sqrt(sigma2)
            svec[:, l_lags + 1] = prev_flow
            if record_states:
                states_rec[:, t] = svec
            if repr_every:
                state_buffer[:, t % repr_window] = svec
            rec["sigma2"][:, t] = sigma2

            # 2-3. decision phase
            x = ag.apply_activation(np.einsum("rnks,rs->rnk", w, svec), cfg.activation)
            r_hat = np.einsum("rnk,rnk->rn", theta, x)
            friction = pricing.kappa + lam_hat
            d_star = (r_hat + friction * pos) / (gamma * sigma2[:, None] + friction)
            d_new = np.clip(d_star, -d_max, d_max)
            if schedule is not None:
                active = schedule[:, :, t]
                d_new = np.where(active, d_new, pos)
                r_hat_cache = np.where(active, r_hat, r_hat_cache)
            else:
                active = None
                r_hat_cache = r_hat
            trade = d_new - pos
            pos = d_new

            # 4. flow aggregation and price formation
            flow = trade.sum(axis=1)
            if constant_liquidity:
                lam_t = np.full(r, pricing.lambda0)
                psi_t = np.full(r, pricing.psi0)
            else:
                lam_t, psi_t = liquidity_coefs(inventory, pricing)
            fundamental = fundamental + shocks[:, t]
            inventory = inventory - flow
            new_price = fundamental + lam_t * flow - psi_t * inventory
            ret = new_price - price
            price = new_price

            bad = ~np.isfinite(new_price) | ~np.isfinite(flow)
            if bad.any():
                fresh = bad & ~aborted
                abort_step[fresh] = t
                aborted |= bad

            rec["prices"][:, t] = price
            rec["returns"][:, t] = ret
            rec["flows"][:, t] = flow
            rec["inventory"][:, t] = inventory
            rec["lam"][:, t] = lam_t
            rec["psi"][:, t] = psi_t
            if record_agents:
                forecasts_rec[:, :, t] = r_hat_cache
                positions_rec[:, :, t] = pos
                trades_rec[:, :, t] = trade

            # 5. learning on the freshly realized change, then slippage and
            #    volatility updates (learning must see the decision-time
            #    impact estimate, so it runs before the slippage refresh)
            err = ret[:, None] - lam_hat * np.abs(trade) - r_hat
            grad = eta[:, :, None] * err[:, :, None] * x
            if active is not None:
                grad = np.where(active[:, :, None], grad, 0.0)
            theta = theta + grad

            ratio = np.abs(ret[:, None]) / np.maximum(np.abs(trade), eps_reg)
            lam_new = (1.0 - rho) * lam_hat + rho * ratio
            lam_hat = np.where(active, lam_new, lam_hat) if active is not None else lam_new

            mu_hat = (1.0 - cfg.vol_beta) * mu_hat + cfg.vol_beta * ret
            dev = ret - mu_hat
            sigma2 = (1.0 - cfg.vol_beta) * sigma2 + cfg.vol_beta * dev * dev

            # 6. representation drift
            if drift.active:
                if base_rngs is not None:
                    for j in range(r):
                        w_base[j] += drift.sigma_base * sqrt_dt * base_rngs[j].standard_normal((k, ks))
                if drift.nu_w > 0:
                    w = w + drift.nu_w * drift.dt * (w_base[:, None] - w)
                if drift_rngs is not None:
                    for j in range(r):
                        for i in range(n):
                            w[j, i] += drift.sigma_w * sqrt_dt * drift_rngs[j][i].standard_normal((k, ks))

            if repr_every and (t + 1) % repr_every == 0:
                window = min(t + 1, repr_window)
                repr_times.append(t)
                repr_series.append(_mean_repr_distance(w, state_buffer, window, t, repr_window, cfg.activation))

    traj = Trajectories(
        rep_ids=tuple(rep_ids),
        burn_in=cfg.burn_in,
        prices=rec["prices"],
        returns=rec["returns"],
        flows=rec["flows"],
        inventory=rec["inventory"],
        lam=rec["lam"],
        psi=rec["psi"],
        shocks=shocks,
        sigma2=rec["sigma2"],
        aborted=aborted,
        abort_step=abort_step,
        gamma=gamma,
        eta=eta,
        w_init=w_init,
        w_final=w,
        theta_init=theta_init,
        theta_final=theta,
        states=states_rec,
        forecasts=forecasts_rec,
        positions=positions_rec,
        trades=trades_rec,
        schedule=schedule,
    )
    if repr_every:
        traj.repr_times = np.array(repr_times)
        traj.repr_series = np.column_stack(repr_series) if repr_series else np.zeros((r, 0))
    return traj


def _mean_repr_distance(
    w: np.ndarray,
    state_buffer: np.ndarray,
    window: int,
    t: int,
    buffer_len: int,
    activation: str,
) -> np.ndarray:
    """Mean pairwise representation distance over the trailing state window,
    one value per replication."""
    r, n = w.shape[0], w.shape[1]
    if window >= buffer_len:
        states = state_buffer
    else:
        idx = [(t - d) % buffer_len for d in range(window)]
        states = state_buffer[:, idx]
    # features: (R, N, M, K)
    h = ag.apply_activation(np.einsum("rnks,rms->rnmk", w, states), activation)
    m = states.shape[1]
    sq = np.einsum("rnmk,rnmk->rn", h, h) / m
    cross = np.einsum("rnmk,rpmk->rnp", h, h) / m
    d2 = sq[:, :, None] + sq[:, None, :] - 2.0 * cross
    iu = np.triu_indices(n, k=1)
    return np.sqrt(np.maximum(d2[:, iu[0], iu[1]], 0.0)).mean(axis=1)
