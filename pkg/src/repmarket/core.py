"""Domain types, configuration, and the deterministic random-number contract.

The observable state vector fed to every agent has a fixed layout::

    S = (r_1, r_2, ..., r_L, sigma_hat, flow_prev)

where ``r_1`` is the most recent realized price change, ``r_L`` the oldest
of the ``L`` retained lags, ``sigma_hat`` the public EWMA volatility signal
(standard-deviation units), and ``flow_prev`` the previous period's
aggregate net order flow.  Its dimension ``K_s = L + 2`` must match the
column count of every agent's representation matrix.

All randomness is drawn from counter-based Philox streams keyed by
``(seed, stream_id)``.  Stream ids are derived by hashing a purpose tag
together with replication and agent indices, so changing the number of
agents or replications never shifts the draws of the others.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace
from enum import IntEnum
from pathlib import Path

import numpy as np

__all__ = [
    "Activation",
    "AgentParams",
    "AgentState",
    "AsyncSpec",
    "ConfigError",
    "DealerState",
    "DriftSpec",
    "MarketState",
    "NumericFault",
    "PopulationSpec",
    "PricingParams",
    "RunConfig",
    "RunStreams",
    "ShockSpec",
    "StreamPurpose",
    "VolEstimator",
    "build_state",
    "load_config",
    "save_config",
    "seeded_rng",
    "stream_id",
]


class ConfigError(ValueError):
    """Raised for invalid configuration or precondition violations."""


class NumericFault(FloatingPointError):
    """A simulated path produced a non-finite value; the replication aborts."""


# ---------------------------------------------------------------------------
# Deterministic RNG streams
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1


def _mix64(x: int) -> int:
    # splitmix64 finalizer; avalanches all 64 bits
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def stream_id(*parts: int) -> int:
    """Hash integer parts into a single 64-bit stream identifier."""
    h = 0x9E3779B97F4A7C15
    for p in parts:
        h = _mix64(h ^ _mix64(int(p) & _MASK64))
    return h


def seeded_rng(seed: int, sid: int) -> np.random.Generator:
    """Deterministic generator for the stream ``(seed, sid)``.

    Identical pairs yield identical streams; distinct stream ids yield
    independent streams (Philox counter-based splitting).
    """
    key = np.array([int(seed) & _MASK64, int(sid) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class StreamPurpose(IntEnum):
    FUNDAMENTAL = 1      # one per replication: fundamental-value shocks
    AGENT_INIT = 2       # one per (replication, agent): initial W, theta, gamma, eta
    AGENT_DRIFT = 3      # one per (replication, agent): representation exploration noise
    AGENT_CLOCK = 4      # one per (replication, agent): asynchronous update schedule
    BASE_MATRIX = 5      # seed-level: the shared benchmark representation
    BASE_DRIFT = 6       # one per replication: benchmark-representation innovations
    CANDIDATE = 7        # matched-design candidate population draws
    BOOTSTRAP = 8        # calibration bootstrap resampling
    SOBOL = 9            # calibration Sobol scrambling


@dataclass(frozen=True)
class RunStreams:
    """Factory for every stream one replication consumes."""

    seed: int
    rep: int = 0

    def fundamental(self) -> np.random.Generator:
        return seeded_rng(self.seed, stream_id(StreamPurpose.FUNDAMENTAL, self.rep))

    def agent_init(self, agent: int) -> np.random.Generator:
        return seeded_rng(self.seed, stream_id(StreamPurpose.AGENT_INIT, self.rep, agent))

    def agent_drift(self, agent: int) -> np.random.Generator:
        return seeded_rng(self.seed, stream_id(StreamPurpose.AGENT_DRIFT, self.rep, agent))

    def agent_clock(self, agent: int) -> np.random.Generator:
        return seeded_rng(self.seed, stream_id(StreamPurpose.AGENT_CLOCK, self.rep, agent))

    def base_drift(self) -> np.random.Generator:
        return seeded_rng(self.seed, stream_id(StreamPurpose.BASE_DRIFT, self.rep))


def base_matrix_rng(seed: int) -> np.random.Generator:
    """Stream for the shared benchmark matrix (common to all replications)."""
    return seeded_rng(seed, stream_id(StreamPurpose.BASE_MATRIX))


# ---------------------------------------------------------------------------
# Market state
# ---------------------------------------------------------------------------

Activation = str  # "tanh" | "linear"

_ACTIVATIONS = ("tanh", "linear")


def validate_activation(name: str) -> str:
    if name not in _ACTIVATIONS:
        raise ConfigError(f"unknown activation {name!r}; expected one of {_ACTIVATIONS}")
    return name


@dataclass(frozen=True)
class MarketState:
    """Publicly observable state: lagged returns (most recent first), the
    EWMA volatility signal, and the previous period's aggregate net flow."""

    lagged_returns: tuple[float, ...]
    realized_vol: float
    lagged_flow: float

    def __post_init__(self) -> None:
        if self.realized_vol < 0:
            raise ConfigError("realized_vol must be nonnegative")

    @property
    def dimension(self) -> int:
        return len(self.lagged_returns) + 2

    def as_vector(self) -> np.ndarray:
        return np.array([*self.lagged_returns, self.realized_vol, self.lagged_flow])


def build_state(
    return_history: "np.ndarray | list[float]",
    vol: float,
    last_flow: float,
    l_lags: int,
) -> MarketState:
    """Assemble the observable state from a most-recent-first return history.

    ``return_history[0]`` must be the latest realized return; the first
    ``l_lags`` entries are retained.
    """
    history = np.asarray(return_history, dtype=float)
    if history.ndim != 1 or history.shape[0] < l_lags:
        raise ConfigError(
            f"return history has {history.size} entries; {l_lags} lags required"
        )
    return MarketState(
        lagged_returns=tuple(float(x) for x in history[:l_lags]),
        realized_vol=float(vol),
        lagged_flow=float(last_flow),
    )


# ---------------------------------------------------------------------------
# Agent-side value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AgentParams:
    """Static per-agent parameters; immutable for the life of the agent.

    gamma      risk aversion in the position rule
    eta_theta  readout learning rate
    d_max      hard position cap
    rho        slippage EWMA weight, in (0, 1)
    eps_reg    slippage denominator floor
    """

    gamma: float
    eta_theta: float
    d_max: float
    rho: float
    eps_reg: float

    def __post_init__(self) -> None:
        for name in ("gamma", "eta_theta", "d_max", "rho", "eps_reg"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"AgentParams.{name} must be strictly positive")
        if not 0 < self.rho < 1:
            raise ConfigError("AgentParams.rho must lie in (0, 1)")


@dataclass
class AgentState:
    """Mutable per-agent state: the representation matrix, the readout, the
    held position, the perceived-impact estimate, and the caches from the
    most recent decision (features, forecast, trade)."""

    w: np.ndarray            # (K, K_s)
    theta: np.ndarray        # (K,)
    position: float = 0.0
    lambda_hat: float = 0.0
    last_trade: float = 0.0
    last_forecast: float = 0.0
    last_features: np.ndarray | None = None

    def copy(self) -> "AgentState":
        return AgentState(
            w=self.w.copy(),
            theta=self.theta.copy(),
            position=self.position,
            lambda_hat=self.lambda_hat,
            last_trade=self.last_trade,
            last_forecast=self.last_forecast,
            last_features=None if self.last_features is None else self.last_features.copy(),
        )


@dataclass(frozen=True)
class PricingParams:
    """Dealer pricing-block parameters: baseline impact and inventory premium,
    their stress amplification and saturation, the position-adjustment
    friction, and the fundamental shock scale."""

    lambda0: float = 0.05
    alpha_lambda: float = 4.0
    beta_lambda: float = 0.02
    psi0: float = 0.02
    alpha_psi: float = 4.0
    beta_psi: float = 0.02
    kappa: float = 0.1
    sigma_eps: float = 0.5

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ConfigError(f"PricingParams.{f.name} must be strictly positive")

    PARAM_NAMES = (
        "lambda0", "alpha_lambda", "beta_lambda", "psi0",
        "alpha_psi", "beta_psi", "kappa", "sigma_eps",
    )

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.PARAM_NAMES])

    @classmethod
    def from_array(cls, values: np.ndarray) -> "PricingParams":
        return cls(**{n: float(v) for n, v in zip(cls.PARAM_NAMES, values)})


@dataclass(frozen=True)
class DealerState:
    """Dealer-side state after a completed period."""

    fundamental: float
    inventory: float
    price: float
    lambda_coef: float
    psi_coef: float


@dataclass
class VolEstimator:
    """Centered EWMA of realized returns: mean first, then squared deviation
    around the just-updated mean."""

    mu_hat: float = 0.0
    sigma2_hat: float = 0.0
    beta: float = 0.05

    def __post_init__(self) -> None:
        if not 0 < self.beta < 1:
            raise ConfigError("VolEstimator.beta must lie in (0, 1)")
        if self.sigma2_hat < 0:
            raise ConfigError("VolEstimator.sigma2_hat must be nonnegative")


# ---------------------------------------------------------------------------
# Population / dynamics specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PopulationSpec:
    """Distributional recipe for one agent population.

    Representation matrices are ``w_center + w_sigma * Z`` with standard
    normal ``Z``; readouts are ``N(0, theta_sigma^2)``.  Risk aversions and
    learning rates are lognormal with *mean-preserving* parameterization:
    the log-mean is re-solved from (mean, sigma) so that changing the
    dispersion never moves the cross-sectional mean.
    """

    n_agents: int = 20
    w_sigma: float = 1.0
    theta_sigma: float = 0.1
    gamma_mean: float = 2.0
    gamma_sigma: float = 0.6
    eta_mean: float = 0.05
    eta_sigma: float = 0.6
    d_max: float = 5.0
    rho: float = 0.1
    eps_reg: float = 0.01
    w_center: np.ndarray | None = None   # (K, K_s); drawn from the seed stream when absent

    def __post_init__(self) -> None:
        if self.n_agents < 1:
            raise ConfigError("n_agents must be positive")
        for name in ("w_sigma", "theta_sigma", "gamma_sigma", "eta_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"PopulationSpec.{name} must be nonnegative")
        for name in ("gamma_mean", "eta_mean", "d_max", "eps_reg"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"PopulationSpec.{name} must be strictly positive")

    @property
    def gamma_mu(self) -> float:
        """Lognormal log-mean solving E[gamma] = gamma_mean at gamma_sigma."""
        return math.log(self.gamma_mean) - 0.5 * self.gamma_sigma**2

    @property
    def eta_mu(self) -> float:
        return math.log(self.eta_mean) - 0.5 * self.eta_sigma**2


@dataclass(frozen=True)
class DriftSpec:
    """Mean-reverting representation dynamics toward a shared benchmark.

    Per period: ``W <- W + nu_w * (W_base - W) * dt + sigma_w * sqrt(dt) * G``
    (explicit Euler step).  When ``sigma_base > 0`` the benchmark itself takes
    a Brownian step each period, shared by all agents of a replication.
    """

    nu_w: float = 0.0
    sigma_w: float = 0.0
    sigma_base: float = 0.0
    dt: float = 1.0

    def __post_init__(self) -> None:
        if min(self.nu_w, self.sigma_w, self.sigma_base) < 0 or self.dt <= 0:
            raise ConfigError("DriftSpec rates must be nonnegative and dt positive")
        if self.nu_w * self.dt >= 1:
            raise ConfigError("explicit scheme requires nu_w * dt < 1")

    @property
    def active(self) -> bool:
        return self.nu_w > 0 or self.sigma_w > 0 or self.sigma_base > 0


@dataclass(frozen=True)
class AsyncSpec:
    """Agent-specific Poisson update clocks.

    Arrival rates are lognormal with mean ``rate_mean`` (per step); an agent
    acts only on its arrival steps and holds its position otherwise.
    ``rate_mean = inf`` forces every step active.
    """

    enabled: bool = False
    rate_mean: float = 0.5
    rate_sigma: float = 0.5

    def __post_init__(self) -> None:
        if self.enabled and self.rate_mean <= 0:
            raise ConfigError("AsyncSpec rates must be strictly positive when enabled")
        if self.rate_sigma < 0:
            raise ConfigError("AsyncSpec.rate_sigma must be nonnegative")


@dataclass(frozen=True)
class ShockSpec:
    """Fundamental-innovation generator.

    ``gaussian``      N(0, sigma_eps^2) every step.
    ``stable_jump``   the Gaussian diffusion plus, with probability
                      ``jump_intensity`` per step, a symmetric alpha-stable
                      jump scaled by ``stable_scale``.
    """

    kind: str = "gaussian"
    sigma_eps: float = 0.5
    stable_alpha: float = 1.5
    stable_scale: float = 1.0
    jump_intensity: float = 0.01

    def __post_init__(self) -> None:
        if self.kind not in ("gaussian", "stable_jump"):
            raise ConfigError(f"unknown shock kind {self.kind!r}")
        if self.sigma_eps < 0 or self.stable_scale <= 0 or self.jump_intensity < 0:
            raise ConfigError("invalid shock scales")
        if not 0 < self.stable_alpha <= 2:
            raise ConfigError("stable_alpha must lie in (0, 2]")


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    """Everything one simulation run needs, minus the seed-derived draws.

    ``n_steps`` counts total periods including the ``burn_in`` prefix that is
    excluded from all outcome statistics.
    """

    n_agents: int = 20
    n_steps: int = 3000
    burn_in: int = 500
    l_lags: int = 5
    k_features: int = 8
    seed: int = 42
    activation: str = "tanh"
    vol_beta: float = 0.05
    crash_k: float = 4.0
    periods_per_year: int = 252 * 78
    w_center_scale: float | None = None   # default 1/sqrt(K_s)
    pricing: PricingParams = field(default_factory=PricingParams)
    population: PopulationSpec = field(default_factory=PopulationSpec)
    shocks: ShockSpec = field(default_factory=ShockSpec)
    drift: DriftSpec = field(default_factory=DriftSpec)
    async_updates: AsyncSpec = field(default_factory=AsyncSpec)

    def __post_init__(self) -> None:
        if self.burn_in >= self.n_steps:
            raise ConfigError("burn_in must be smaller than n_steps")
        if self.k_features < 1 or self.l_lags < 1:
            raise ConfigError("k_features and l_lags must be positive")
        validate_activation(self.activation)
        if self.population.n_agents != self.n_agents:
            object.__setattr__(
                self, "population", replace(self.population, n_agents=self.n_agents)
            )

    @property
    def state_dim(self) -> int:
        return self.l_lags + 2

    @property
    def center_scale(self) -> float:
        if self.w_center_scale is not None:
            return self.w_center_scale
        return 1.0 / math.sqrt(self.state_dim)

    def with_updates(self, **dotted: object) -> "RunConfig":
        """Return a copy with dotted-path overrides applied.

        ``cfg.with_updates(**{"population.w_sigma": 0.05, "n_steps": 800})``
        Section names follow the config file ("async" maps to the
        ``async_updates`` attribute).
        """
        top: dict[str, object] = {}
        nested: dict[str, dict[str, object]] = {}
        for key, value in dotted.items():
            if "." in key:
                section, name = key.split(".", 1)
                nested.setdefault(section, {})[name] = value
            else:
                top[key] = value
        for section, kv in nested.items():
            attr = "async_updates" if section == "async" else section
            if not hasattr(self, attr):
                raise ConfigError(f"unknown config section {section!r}")
            try:
                top[attr] = replace(getattr(self, attr), **kv)
            except TypeError as exc:
                raise ConfigError(f"unknown key in [{section}]: {exc}") from exc
        try:
            return replace(self, **top)
        except TypeError as exc:
            raise ConfigError(f"unknown config key: {exc}") from exc


# ---------------------------------------------------------------------------
# Config file round-trip (flat sectioned key=value text)
# ---------------------------------------------------------------------------

_SECTION_TYPES = {
    "pricing": PricingParams,
    "population": PopulationSpec,
    "shocks": ShockSpec,
    "drift": DriftSpec,
    "async": AsyncSpec,
}
_SECTION_ATTR = {
    "pricing": "pricing",
    "population": "population",
    "shocks": "shocks",
    "drift": "drift",
    "async": "async_updates",
}
_RUN_FIELDS = {
    "n_agents": int,
    "n_steps": int,
    "burn_in": int,
    "l_lags": int,
    "k_features": int,
    "seed": int,
    "activation": str,
    "vol_beta": float,
    "crash_k": float,
    "periods_per_year": int,
    "w_center_scale": float,
}


def _coerce(raw: str, typ: type) -> object:
    if typ is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from {raw!r}")
    return typ(raw)


def load_config(path: "str | Path") -> RunConfig:
    """Load a :class:`RunConfig` from a sectioned key=value file.

    Schema documented in ``docs/formats.md``; unknown keys are rejected so
    typos surface immediately.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser.read(path)

    kwargs: dict[str, object] = {}
    for key, raw in parser.items("run") if parser.has_section("run") else []:
        if key not in _RUN_FIELDS:
            raise ConfigError(f"unknown key {key!r} in [run]")
        kwargs[key] = _coerce(raw, _RUN_FIELDS[key])

    for section, typ in _SECTION_TYPES.items():
        if not parser.has_section(section):
            continue
        valid = {f.name: f.type for f in fields(typ)}
        sub: dict[str, object] = {}
        for key, raw in parser.items(section):
            if key not in valid:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            ftyp = {"int": int, "float": float, "str": str, "bool": bool}.get(
                str(valid[key]).replace("builtins.", ""), float
            )
            sub[key] = _coerce(raw, ftyp)
        kwargs[_SECTION_ATTR[section]] = typ(**sub)

    return RunConfig(**kwargs)


def save_config(cfg: RunConfig, path: "str | Path") -> None:
    """Write ``cfg`` in the same sectioned key=value format."""
    parser = configparser.ConfigParser()
    parser["run"] = {}
    for name in _RUN_FIELDS:
        value = getattr(cfg, name)
        if value is None:
            continue
        parser["run"][name] = str(value)
    for section, attr in _SECTION_ATTR.items():
        sub = getattr(cfg, attr)
        parser[section] = {}
        for f in fields(type(sub)):
            value = getattr(sub, f.name)
            if f.name == "w_center" or value is None:
                continue
            parser[section][f.name] = str(value)
    with open(path, "w") as fh:
        parser.write(fh)
