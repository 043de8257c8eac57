"""Compiled inner loop for the static-representation simulation path.

When representation drift is off, a period consumes no randomness beyond
the pre-drawn fundamental shocks, so the whole step loop is pure
arithmetic and compiles cleanly.  The kernel mirrors ``simulate_paths``
phase for phase; the (slower) numpy path remains the reference
implementation and the only path used when drift is active.

Falls back to a numpy implementation transparently when numba is missing.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a soft dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]

__all__ = ["HAVE_NUMBA", "run_static_kernel"]


@njit(cache=True)
def _step_loop(
    w,            # (R, N, K, Ks)
    theta,        # (R, N, K) in/out
    gamma,        # (R, N)
    eta,          # (R, N)
    d_max,        # (R, N)
    rho,          # float
    eps_reg,      # float
    shocks,       # (R, T)
    schedule,     # (R, N, T) bool; all-true when async disabled
    use_tanh,     # bool
    l_lags,       # int
    lambda0, alpha_lambda, beta_lambda,
    psi0, alpha_psi, beta_psi,
    kappa, vol_beta,
    constant_liquidity,   # bool
    initial_price,        # float
    sigma2_init,          # float
    prices, returns, flows, inventory, lam_rec, psi_rec, sigma2_rec,  # (R, T) out
    states_rec,           # (R, T, Ks) out
    forecasts, positions, trades,  # (R, N, T) out
    aborted, abort_step,  # (R,) out
):
    r_count, n_agents, k_feat, ks = w.shape
    t_total = shocks.shape[1]
    for r in range(r_count):
        fundamental = initial_price
        inv = 0.0
        price = initial_price
        mu_hat = 0.0
        sigma2 = sigma2_init
        prev_flow = 0.0
        pos = np.zeros(n_agents)
        lam_hat = np.zeros(n_agents)
        x = np.zeros((n_agents, k_feat))
        r_hat = np.zeros(n_agents)
        r_hat_cache = np.zeros(n_agents)
        svec = np.zeros(ks)
        alive = True
        for t in range(t_total):
            if not alive:
                for q in range(ks):
                    states_rec[r, t, q] = np.nan
                prices[r, t] = np.nan
                returns[r, t] = np.nan
                flows[r, t] = np.nan
                inventory[r, t] = np.nan
                lam_rec[r, t] = np.nan
                psi_rec[r, t] = np.nan
                sigma2_rec[r, t] = np.nan
                for i in range(n_agents):
                    forecasts[r, i, t] = np.nan
                    positions[r, i, t] = np.nan
                    trades[r, i, t] = np.nan
                continue

            # state snapshot: lags most recent first, vol signal, last flow
            for q in range(ks):
                svec[q] = 0.0
            n_avail = t if t < l_lags else l_lags
            for q in range(n_avail):
                svec[q] = returns[r, t - 1 - q]
            svec[l_lags] = np.sqrt(sigma2)
            svec[l_lags + 1] = prev_flow
            for q in range(ks):
                states_rec[r, t, q] = svec[q]
            sigma2_rec[r, t] = sigma2

            # decision phase
            flow = 0.0
            for i in range(n_agents):
                active = schedule[r, i, t]
                if active:
                    rh = 0.0
                    for k in range(k_feat):
                        z = 0.0
                        for q in range(ks):
                            z += w[r, i, k, q] * svec[q]
                        if use_tanh:
                            # tanh via exp; noticeably faster than libm tanh
                            e = np.exp(-2.0 * abs(z))
                            t_val = (1.0 - e) / (1.0 + e)
                            z = t_val if z >= 0.0 else -t_val
                        x[i, k] = z
                        rh += theta[r, i, k] * z
                    r_hat[i] = rh
                    r_hat_cache[i] = rh
                    friction = kappa + lam_hat[i]
                    d_star = (rh + friction * pos[i]) / (gamma[r, i] * sigma2 + friction)
                    cap = d_max[r, i]
                    if d_star > cap:
                        d_star = cap
                    elif d_star < -cap:
                        d_star = -cap
                    trade = d_star - pos[i]
                    pos[i] = d_star
                else:
                    trade = 0.0
                trades[r, i, t] = trade
                positions[r, i, t] = pos[i]
                forecasts[r, i, t] = r_hat_cache[i]
                flow += trade

            # price formation
            if constant_liquidity:
                lam_t = lambda0
                psi_t = psi0
            else:
                i2 = inv * inv
                lam_t = lambda0 * (1.0 + alpha_lambda * i2 / (1.0 + beta_lambda * i2))
                psi_t = psi0 * (1.0 + alpha_psi * i2 / (1.0 + beta_psi * i2))
            fundamental += shocks[r, t]
            inv -= flow
            new_price = fundamental + lam_t * flow - psi_t * inv
            ret = new_price - price
            price = new_price

            prices[r, t] = price
            returns[r, t] = ret
            flows[r, t] = flow
            inventory[r, t] = inv
            lam_rec[r, t] = lam_t
            psi_rec[r, t] = psi_t

            if not (np.isfinite(new_price) and np.isfinite(flow)):
                aborted[r] = True
                abort_step[r] = t
                alive = False
                continue

            # learning, then slippage and volatility updates
            for i in range(n_agents):
                if not schedule[r, i, t]:
                    continue
                trade = trades[r, i, t]
                err = ret - lam_hat[i] * abs(trade) - r_hat[i]
                scale = eta[r, i] * err
                for k in range(k_feat):
                    theta[r, i, k] += scale * x[i, k]
                denom = abs(trade)
                if denom < eps_reg:
                    denom = eps_reg
                lam_hat[i] = (1.0 - rho) * lam_hat[i] + rho * abs(ret / denom)

            mu_hat = (1.0 - vol_beta) * mu_hat + vol_beta * ret
            dev = ret - mu_hat
            sigma2 = (1.0 - vol_beta) * sigma2 + vol_beta * dev * dev
            prev_flow = flow


def run_static_kernel(
    w: np.ndarray,
    theta: np.ndarray,
    gamma: np.ndarray,
    eta: np.ndarray,
    d_max: np.ndarray,
    rho: float,
    eps_reg: float,
    shocks: np.ndarray,
    schedule: np.ndarray | None,
    activation: str,
    l_lags: int,
    pricing,
    vol_beta: float,
    constant_liquidity: bool,
    initial_price: float,
) -> dict[str, np.ndarray]:
    """Allocate the output arrays and run the compiled loop.

    ``theta`` is updated in place (final readouts); everything else is
    returned in the dict.
    """
    r, n, _, ks = w.shape
    t_total = shocks.shape[1]
    if schedule is None:
        schedule = np.ones((r, n, t_total), dtype=np.bool_)
    out = {
        name: np.empty((r, t_total))
        for name in ("prices", "returns", "flows", "inventory", "lam", "psi", "sigma2")
    }
    states = np.empty((r, t_total, ks))
    forecasts = np.empty((r, n, t_total))
    positions = np.empty((r, n, t_total))
    trades = np.empty((r, n, t_total))
    aborted = np.zeros(r, dtype=np.bool_)
    abort_step = np.full(r, -1, dtype=np.int64)
    _step_loop(
        w, theta, gamma, eta, d_max, float(rho), float(eps_reg),
        shocks, schedule, activation == "tanh", l_lags,
        pricing.lambda0, pricing.alpha_lambda, pricing.beta_lambda,
        pricing.psi0, pricing.alpha_psi, pricing.beta_psi,
        pricing.kappa, float(vol_beta), constant_liquidity,
        float(initial_price), float(np.square(np.float64(pricing.sigma_eps))),
        out["prices"], out["returns"], out["flows"], out["inventory"],
        out["lam"], out["psi"], out["sigma2"],
        states, forecasts, positions, trades, aborted, abort_step,
    )
    out["states"] = states
    out["forecasts"] = forecasts
    out["positions"] = positions
    out["trades"] = trades
    out["aborted"] = aborted
    out["abort_step"] = abort_step
    return out
