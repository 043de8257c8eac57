"""Representation-readout agents.

Each agent encodes the public state through its own matrix, reads out a
scalar return forecast, sizes a position with a risk- and friction-penalized
partial-adjustment rule, and adapts the readout by stochastic gradient
descent on an execution-adjusted prediction error.  Representation matrices
evolve, if enabled, by a discrete mean-reverting step toward a shared
benchmark matrix.

Per-period phase contract (enforced by the simulation loop):

1. build the public state snapshot;
2. read-only over the snapshot: encode, forecast (caches the decision
   context on the agent);
3. choose positions (records the trade);
4. aggregate flow, form the price; the freshly realized price change is the
   quantity each cached forecast targeted;
5. per-agent writes: learn from the realized change (must run before the
   slippage estimate is refreshed, which consumes the same realized change
   paired with the trade that produced it), then update the shared
   volatility estimator;
6. drift the representation matrices.

Phases 2-3 may run agents in parallel; phase 4 is a sequential reduction;
phase 5-6 writes are per-agent independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (
    AgentParams,
    AgentState,
    AsyncSpec,
    ConfigError,
    DriftSpec,
    MarketState,
    PopulationSpec,
    VolEstimator,
)

__all__ = [
    "PopulationArrays",
    "choose_position",
    "drift_base",
    "drift_representation",
    "encode",
    "encode_features",
    "forecast",
    "init_population",
    "learn",
    "poisson_clocks",
    "target_position",
    "update_slippage",
    "update_vol",
]

RngFactory = Callable[[int], np.random.Generator]


def apply_activation(x: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return np.tanh(x)
    if activation == "linear":
        return x
    raise ConfigError(f"unknown activation {activation!r}")


# ---------------------------------------------------------------------------
# Population initialization
# ---------------------------------------------------------------------------

def init_population(
    spec: PopulationSpec,
    rng_for_agent: RngFactory,
    k_features: int,
    state_dim: int,
    w_center: np.ndarray,
) -> list[tuple[AgentParams, AgentState]]:
    """Draw one agent population from the spec.

    Agent ``i`` consumes only its own stream (``rng_for_agent(i)``), in a
    fixed order (matrix noise, readout, risk aversion, learning rate), so
    growing the population never perturbs existing agents.  Lognormal
    parameters are mean-preserving: dispersion treatments move spread only.
    """
    if w_center.shape != (k_features, state_dim):
        raise ConfigError(
            f"w_center shape {w_center.shape} != ({k_features}, {state_dim})"
        )
    population = []
    for i in range(spec.n_agents):
        rng = rng_for_agent(i)
        z = rng.standard_normal((k_features, state_dim))
        w = w_center + spec.w_sigma * z
        theta = spec.theta_sigma * rng.standard_normal(k_features)
        gamma = float(rng.lognormal(spec.gamma_mu, spec.gamma_sigma)) if spec.gamma_sigma > 0 else spec.gamma_mean
        eta = float(rng.lognormal(spec.eta_mu, spec.eta_sigma)) if spec.eta_sigma > 0 else spec.eta_mean
        params = AgentParams(
            gamma=gamma,
            eta_theta=eta,
            d_max=spec.d_max,
            rho=spec.rho,
            eps_reg=spec.eps_reg,
        )
        state = AgentState(w=w, theta=theta, last_features=np.zeros(k_features))
        population.append((params, state))
    return population


@dataclass
class PopulationArrays:
    """Stacked view of a population for vectorized stepping."""

    w: np.ndarray        # (N, K, K_s)
    theta: np.ndarray    # (N, K)
    gamma: np.ndarray    # (N,)
    eta: np.ndarray      # (N,)
    d_max: np.ndarray    # (N,)
    rho: float
    eps_reg: float

    @classmethod
    def from_pairs(cls, pairs: list[tuple[AgentParams, AgentState]]) -> "PopulationArrays":
        return cls(
            w=np.stack([s.w for _, s in pairs]),
            theta=np.stack([s.theta for _, s in pairs]),
            gamma=np.array([p.gamma for p, _ in pairs]),
            eta=np.array([p.eta_theta for p, _ in pairs]),
            d_max=np.array([p.d_max for p, _ in pairs]),
            rho=pairs[0][0].rho,
            eps_reg=pairs[0][0].eps_reg,
        )


# ---------------------------------------------------------------------------
# Decision-phase operations
# ---------------------------------------------------------------------------

def encode_features(w: np.ndarray, s: np.ndarray, activation: str) -> np.ndarray:
    """Feature map: elementwise activation of ``w @ s``.

    Accepts stacked ``w`` with leading dimensions; ``s`` broadcasts from the
    right.
    """
    return apply_activation(np.einsum("...ks,...s->...k", w, s), activation)


def encode(agent: AgentState, state: MarketState, activation: str) -> np.ndarray:
    """Encode a market state into the agent's feature vector and cache it."""
    s = state.as_vector()
    if agent.w.shape[1] != s.shape[0]:
        raise ConfigError(
            f"state dimension {s.shape[0]} != representation columns {agent.w.shape[1]}"
        )
    x = encode_features(agent.w, s, activation)
    agent.last_features = x
    return x


def forecast(agent: AgentState, x: np.ndarray) -> float:
    """Readout forecast ``theta . x``; cached for the learning step."""
    r_hat = float(agent.theta @ x)
    agent.last_forecast = r_hat
    agent.last_features = x
    return r_hat


def update_slippage(agent: AgentState, realized_ret: float, params: AgentParams) -> float:
    """EWMA of realized per-unit slippage.

    Pairs the realized price change with the trade that produced it
    (``agent.last_trade``); the ``eps_reg`` floor keeps the ratio finite for
    negligible volume.
    """
    ratio = abs(realized_ret / max(abs(agent.last_trade), params.eps_reg))
    agent.lambda_hat = (1.0 - params.rho) * agent.lambda_hat + params.rho * ratio
    return agent.lambda_hat


def target_position(
    r_hat, position, lambda_hat, gamma, sigma2, kappa
):
    """Unconstrained optimum of the quadratic trade-off between conviction,
    risk penalty, and adjustment cost (vectorized)."""
    friction = kappa + lambda_hat
    return (r_hat + friction * position) / (gamma * sigma2 + friction)


def choose_position(
    agent: AgentState,
    params: AgentParams,
    r_hat: float,
    sigma2: float,
    kappa: float,
) -> float:
    """Cap the unconstrained target at ``d_max`` and record the trade."""
    if sigma2 < 0:
        raise ConfigError("sigma2 must be nonnegative")
    d_star = target_position(r_hat, agent.position, agent.lambda_hat, params.gamma, sigma2, kappa)
    assert params.gamma * sigma2 + kappa + agent.lambda_hat > 0
    d_new = math.copysign(min(abs(d_star), params.d_max), d_star) if d_star != 0 else 0.0
    agent.last_trade = d_new - agent.position
    agent.position = d_new
    return d_new


def update_vol(est: VolEstimator, r: float) -> VolEstimator:
    """Centered EWMA update: mean first, then variance around the new mean."""
    est.mu_hat = (1.0 - est.beta) * est.mu_hat + est.beta * r
    dev = r - est.mu_hat
    est.sigma2_hat = (1.0 - est.beta) * est.sigma2_hat + est.beta * dev * dev
    return est


def learn(agent: AgentState, params: AgentParams, r_next: float) -> np.ndarray:
    """Gradient step on the execution-adjusted prediction error.

    Requires the decision-phase caches (features, forecast, trade, perceived
    impact) to be intact: the target is the realized change net of
    ``lambda_hat * |trade|``, and the gradient direction is the cached
    feature vector.
    """
    r_adj = r_next - agent.lambda_hat * abs(agent.last_trade)
    agent.theta = agent.theta + params.eta_theta * (r_adj - agent.last_forecast) * agent.last_features
    return agent.theta


# ---------------------------------------------------------------------------
# Representation dynamics
# ---------------------------------------------------------------------------

def drift_base(w_base: np.ndarray, spec: DriftSpec, rng: np.random.Generator) -> np.ndarray:
    """One Brownian step of the shared benchmark matrix (no mean reversion)."""
    if spec.sigma_base == 0:
        return w_base
    return w_base + spec.sigma_base * math.sqrt(spec.dt) * rng.standard_normal(w_base.shape)


def drift_representation(
    agent: AgentState,
    w_base: np.ndarray,
    spec: DriftSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    """Explicit Euler step of the mean-reverting matrix dynamics.

    ``W <- W + nu_w * (W_base - W) * dt + sigma_w * sqrt(dt) * G`` with
    standard normal ``G`` drawn from the agent's own stream.  The benchmark
    must already hold this period's value when it moves.
    """
    w = agent.w + spec.nu_w * spec.dt * (w_base - agent.w)
    if spec.sigma_w > 0:
        w = w + spec.sigma_w * math.sqrt(spec.dt) * rng.standard_normal(agent.w.shape)
    agent.w = w
    return w


# ---------------------------------------------------------------------------
# Asynchronous update clocks
# ---------------------------------------------------------------------------

def poisson_clocks(
    spec: AsyncSpec,
    n_agents: int,
    n_steps: int,
    rng_for_agent: RngFactory,
) -> np.ndarray:
    """Boolean (agents x steps) schedule of update arrivals.

    Each agent draws a lognormal arrival rate from its own stream, then a
    Bernoulli thinning with per-step probability ``1 - exp(-rate)``.  A
    disabled spec, or an infinite mean rate, yields an all-true schedule.
    """
    if not spec.enabled:
        return np.ones((n_agents, n_steps), dtype=bool)
    schedule = np.empty((n_agents, n_steps), dtype=bool)
    for i in range(n_agents):
        rng = rng_for_agent(i)
        if math.isinf(spec.rate_mean):
            rate = math.inf
        else:
            mu = math.log(spec.rate_mean) - 0.5 * spec.rate_sigma**2
            rate = float(rng.lognormal(mu, spec.rate_sigma)) if spec.rate_sigma > 0 else spec.rate_mean
        p = 1.0 if math.isinf(rate) else 1.0 - math.exp(-rate)
        schedule[i] = rng.uniform(size=n_steps) < p
    return schedule
