"""Moment-matching calibration of the dealer pricing block.

The eight pricing parameters are chosen to reproduce an eight-moment target
vector: annualized volatility, unconditional price impact, impact
re-estimated on the top-5% and top-1% volatility subsamples, lag-1 return
autocorrelation (unconditional and on the same subsamples), and lag-1 flow
autocorrelation.  The conditional tail moments discipline the nonlinear
amplification and saturation parameters, which the unconditional moments
leave weakly identified.

Search is two-stage: a Sobol design over the parameter box, then
Nelder-Mead refinement (with reflection into the box) from the best
candidates.  Every objective evaluation simulates the same seeded
replications, so the objective is a deterministic function of the candidate
and the seed and the search surface is stable.
"""

from __future__ import annotations

import configparser
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import least_squares, minimize
from scipy.stats import qmc


def _nanmean_cols(arr: "np.ndarray") -> "np.ndarray":
    """Column means ignoring NaN; all-NaN columns give NaN without warning."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(arr, axis=0)

from .core import (
    ConfigError,
    DriftSpec,
    PricingParams,
    RunConfig,
    StreamPurpose,
    seeded_rng,
    stream_id,
)
from .simulation import simulate_paths

__all__ = [
    "CalibrationResult",
    "MomentVector",
    "SmmConfig",
    "calibrate",
    "compute_moments",
    "load_moment_file",
    "save_moment_file",
    "simulate_moment_batch",
    "smm_objective",
    "synthetic_targets",
]

log = logging.getLogger(__name__)

MIN_TAIL_OBS = 30
DEFAULT_BOUNDS_SCALE = 3.0


@dataclass(frozen=True)
class MomentVector:
    """The eight calibration targets, in fixed order."""

    ann_vol: float
    impact_uncond: float
    impact_top5: float
    impact_top1: float
    acf1: float
    acf1_top5: float
    acf1_top1: float
    flow_acf1: float

    NAMES = (
        "ann_vol", "impact_uncond", "impact_top5", "impact_top1",
        "acf1", "acf1_top5", "acf1_top1", "flow_acf1",
    )

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.NAMES])

    @classmethod
    def from_array(cls, values: np.ndarray) -> "MomentVector":
        return cls(**{n: float(v) for n, v in zip(cls.NAMES, values)})


def _ols_slope(y: np.ndarray, x: np.ndarray) -> float:
    vx = x.var()
    if vx <= 0 or x.size < 3:
        return float("nan")
    return float(np.cov(y, x, ddof=0)[0, 1] / vx)


def _acf1(x: np.ndarray) -> float:
    if x.size < 3 or x.var() <= 0:
        return float("nan")
    a, b = x[1:], x[:-1]
    sa, sb = a.std(), b.std()
    if sa <= 0 or sb <= 0:
        return float("nan")
    return float(((a - a.mean()) * (b - b.mean())).mean() / (sa * sb))


def _tail_indices(vols: np.ndarray, top: float) -> np.ndarray:
    cutoff = np.quantile(vols, 1.0 - top)
    return np.flatnonzero(vols >= cutoff)


def compute_moments(
    returns: np.ndarray,
    flows: np.ndarray,
    vols: np.ndarray,
    periods_per_year: int = 252 * 78,
) -> MomentVector:
    """Eight-moment summary of an aligned (returns, flows, vol-signal) path.

    Tail moments re-estimate impact and return autocorrelation on the steps
    whose volatility signal sits in its top 5% (resp. 1%).  A tail subsample
    below 30 observations marks the moment NaN (unreliable) with a warning;
    NaN moments drop out of the calibration objective.
    """
    returns = np.asarray(returns, dtype=float)
    flows = np.asarray(flows, dtype=float)
    vols = np.asarray(vols, dtype=float)
    if not returns.shape == flows.shape == vols.shape:
        raise ConfigError("returns, flows and vols must be aligned")
    if returns.size < 1000:
        raise ConfigError("moment computation needs >= 1000 post-burn-in observations")

    ann_vol = float(returns.std() * math.sqrt(periods_per_year))
    impact = _ols_slope(returns, flows)
    acf = _acf1(returns)
    flow_acf = _acf1(flows)
    if not math.isfinite(flow_acf):
        warnings.warn("flow autocorrelation undefined (degenerate flows); flagged NaN")

    tails: dict[str, float] = {}
    for label, top in (("top5", 0.05), ("top1", 0.01)):
        idx = _tail_indices(vols, top)
        if idx.size < MIN_TAIL_OBS:
            warnings.warn(
                f"{label} volatility subsample has {idx.size} < {MIN_TAIL_OBS} obs; "
                "tail moments flagged unreliable"
            )
            tails[f"impact_{label}"] = float("nan")
            tails[f"acf1_{label}"] = float("nan")
            continue
        tails[f"impact_{label}"] = _ols_slope(returns[idx], flows[idx])
        nxt = idx[idx + 1 < returns.size]
        a, b = returns[nxt + 1], returns[nxt]
        sa, sb = a.std(), b.std()
        tails[f"acf1_{label}"] = (
            float(((a - a.mean()) * (b - b.mean())).mean() / (sa * sb))
            if min(sa, sb) > 0 and nxt.size >= 3
            else float("nan")
        )

    return MomentVector(
        ann_vol=ann_vol,
        impact_uncond=impact,
        impact_top5=tails["impact_top5"],
        impact_top1=tails["impact_top1"],
        acf1=acf,
        acf1_top5=tails["acf1_top5"],
        acf1_top1=tails["acf1_top1"],
        flow_acf1=flow_acf,
    )


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def default_bounds(
    center: PricingParams, scale: float = DEFAULT_BOUNDS_SCALE
) -> dict[str, tuple[float, float]]:
    """Multiplicative box ``[p/scale, p*scale]`` around a center point."""
    return {
        name: (getattr(center, name) / scale, getattr(center, name) * scale)
        for name in PricingParams.PARAM_NAMES
    }


@dataclass
class SmmConfig:
    """Everything one calibration run needs.

    With ``fixed_population`` (the default) every replication reuses the one
    agent population drawn from the base config's seed, so replications vary
    only the shock path: the pricing block is the object under study, and
    cross-population variation would otherwise dominate the moment noise at
    desk scale.
    """

    targets: MomentVector
    bounds: dict[str, tuple[float, float]]
    base_config: RunConfig
    target_se: np.ndarray | None = None        # per-moment standard errors
    target_reps: np.ndarray | None = None      # per-replication target moments
    n_sobol: int = 512
    n_local_starts: int = 8
    sim_steps: int = 3000                      # post-burn-in sample length
    sim_reps: int = 10
    n_bootstrap: int = 200
    nm_maxfev: int = 150
    ls_maxfev: int = 60                        # least-squares polish iterations
    weight_matrix: str = "identity"            # "identity" | "inv_bootstrap_var"
    fixed_population: bool = True

    def __post_init__(self) -> None:
        for name, (lo, hi) in self.bounds.items():
            if name not in PricingParams.PARAM_NAMES:
                raise ConfigError(f"unknown pricing parameter {name!r} in bounds")
            if lo <= 0 or lo > hi:
                raise ConfigError(f"bad bounds for {name}: ({lo}, {hi})")
        if self.weight_matrix not in ("identity", "inv_bootstrap_var"):
            raise ConfigError(f"unknown weight matrix {self.weight_matrix!r}")
        if min(self.n_sobol, self.n_local_starts, self.sim_steps, self.sim_reps) < 1:
            raise ConfigError("counts must be positive")

    def sim_config(self, theta: PricingParams) -> RunConfig:
        """Simulation environment for a candidate: pricing swapped in,
        representation drift disabled (the population is held fixed)."""
        cfg = self.base_config
        return replace(
            cfg,
            pricing=theta,
            shocks=replace(cfg.shocks, sigma_eps=theta.sigma_eps),
            drift=DriftSpec(),
            n_steps=cfg.burn_in + self.sim_steps,
        )

    def omega(self) -> np.ndarray:
        if self.weight_matrix == "identity":
            return np.ones(len(MomentVector.NAMES))
        var = self.bootstrap_target_variance()
        return np.where(var > 0, 1.0 / np.where(var > 0, var, 1.0), 0.0)

    def bootstrap_target_variance(self) -> np.ndarray:
        if self.target_se is not None:
            return np.asarray(self.target_se, dtype=float) ** 2
        if self.target_reps is not None and self.target_reps.shape[0] > 1:
            reps = self.target_reps
            return np.nanvar(reps, axis=0, ddof=1) / reps.shape[0]
        raise ConfigError(
            "inverse-variance weighting needs target standard errors or "
            "per-replication target moments"
        )


@dataclass
class CalibrationResult:
    theta_hat: PricingParams
    objective: float
    ci: dict[str, tuple[float, float]]
    trace: list[tuple[PricingParams, float]] = field(repr=False, default_factory=list)
    n_evaluations: int = 0


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------

def _calibration_population(cfg: SmmConfig):
    """The single agent population shared by every calibration replication,
    keyed by the base config's seed (not the shock seed)."""
    from .agents import init_population
    from .core import RunStreams
    from .simulation import draw_w_center

    base = cfg.base_config
    w_center = base.population.w_center
    if w_center is None:
        w_center = draw_w_center(base)
    streams = RunStreams(base.seed, 0)
    return init_population(
        base.population, streams.agent_init, base.k_features, base.state_dim, w_center
    )


def simulate_moment_batch(
    theta: PricingParams, cfg: SmmConfig, seed: int
) -> np.ndarray:
    """Per-replication moment matrix (sim_reps x 8) at a candidate.

    Replications [0, sim_reps) always map to the same shock streams for a
    given seed, so candidates are compared on common random numbers.
    Aborted replications yield NaN rows.
    """
    sim_cfg = replace(cfg.sim_config(theta), seed=seed)
    traj = simulate_paths(
        sim_cfg,
        range(cfg.sim_reps),
        population=_calibration_population(cfg) if cfg.fixed_population else None,
        record_agents=False,
        record_states=False,
    )
    out = np.full((cfg.sim_reps, len(MomentVector.NAMES)), np.nan)
    post = slice(sim_cfg.burn_in, None)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for j in range(cfg.sim_reps):
            if traj.aborted[j]:
                continue
            out[j] = compute_moments(
                traj.returns[j, post],
                traj.flows[j, post],
                np.sqrt(traj.sigma2[j, post]),
                sim_cfg.periods_per_year,
            ).as_array()
    return out


def moment_residuals(theta: PricingParams, cfg: SmmConfig, seed: int) -> np.ndarray:
    """Weight-scaled moment residuals ``sqrt(omega) * (m_sim - m_target)``.

    Moments that are NaN on either side (unreliable tails, degenerate flows)
    contribute zero; a fully aborted candidate returns a large constant
    vector so the search backs away from it.
    """
    sims = simulate_moment_batch(theta, cfg, seed)
    clean = ~np.isnan(sims).all(axis=1)
    target = cfg.targets.as_array()
    if not clean.any():
        return np.full(target.size, ABORT_RESIDUAL)
    m_sim = _nanmean_cols(sims[clean])
    omega = cfg.omega()
    valid = np.isfinite(m_sim) & np.isfinite(target) & (omega > 0)
    if not valid.any():
        return np.full(target.size, ABORT_RESIDUAL)
    res = np.zeros(target.size)
    res[valid] = np.sqrt(omega[valid]) * (m_sim[valid] - target[valid])
    return res


def smm_objective(theta: PricingParams, cfg: SmmConfig, seed: int) -> float:
    """Weighted quadratic distance between simulated and target moments.

    Deterministic in (theta, seed): every evaluation simulates the same
    seeded replications.  Returns +inf when every replication aborts.
    """
    res = moment_residuals(theta, cfg, seed)
    if res[0] == ABORT_RESIDUAL and np.all(res == ABORT_RESIDUAL):
        return float("inf")
    return float(res @ res)


ABORT_RESIDUAL = 1e6

# Finite-difference step (log coordinates) for the least-squares polish.
# Wide on purpose: the simulated moment surface has deterministic
# micro-kinks (cap-binding changes across trajectories); a ~10% step reads
# the macro valley instead of the kinks.
LS_DIFF_STEP = 0.1


def _reflect(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Fold an unconstrained point into the box by triangular reflection."""
    span = hi - lo
    with np.errstate(invalid="ignore"):
        y = np.mod(x - lo, 2.0 * span)
        y = np.where(y > span, 2.0 * span - y, y)
    return np.where(span > 0, lo + y, lo)


# ---------------------------------------------------------------------------
# Two-stage search
# ---------------------------------------------------------------------------

def calibrate(cfg: SmmConfig, seed: int) -> CalibrationResult:
    """Sobol global stage, Nelder-Mead refinement, least-squares polish,
    bootstrap intervals.

    The search runs in log-parameter coordinates (the parameters are
    positive with multiplicative bounds, and the objective's ridges are far
    better conditioned in logs).  Stage one evaluates a scrambled Sobol
    design over the log-box; stage two refines from the best
    ``n_local_starts`` candidates by Nelder-Mead with reflection into the
    box; a final trust-region least-squares polish on the weighted moment
    residuals descends the narrow valley Nelder-Mead cannot traverse within
    budget.  The refined objective can never exceed the stage-one best.

    Bootstrap intervals re-polish against resampled targets from
    ``theta_hat`` and report per-parameter 2.5/97.5 quantiles; with
    ``n_bootstrap = 0`` the intervals collapse onto the estimate.
    """
    names = PricingParams.PARAM_NAMES
    lo = np.log([cfg.bounds[n][0] for n in names])
    hi = np.log([cfg.bounds[n][1] for n in names])
    trace: list[tuple[PricingParams, float]] = []
    n_evals = 0

    def to_theta(z: np.ndarray) -> PricingParams:
        return PricingParams.from_array(np.exp(_reflect(z, lo, hi)))

    def objective_vec(z: np.ndarray, targets: MomentVector | None = None) -> float:
        nonlocal n_evals
        theta = to_theta(z)
        use_cfg = cfg if targets is None else replace(cfg, targets=targets)
        value = smm_objective(theta, use_cfg, seed)
        n_evals += 1
        if targets is None:
            trace.append((theta, value))
        return value

    def residual_vec(z: np.ndarray, targets: MomentVector | None = None) -> np.ndarray:
        nonlocal n_evals
        theta = PricingParams.from_array(np.exp(np.clip(z, lo, hi)))
        use_cfg = cfg if targets is None else replace(cfg, targets=targets)
        res = moment_residuals(theta, use_cfg, seed)
        n_evals += 1
        if targets is None:
            trace.append((theta, float(res @ res)))
        return res

    # A degenerate box has nothing to search: report its single point.
    if np.allclose(lo, hi):
        theta = PricingParams.from_array(np.array([cfg.bounds[n][0] for n in names]))
        value = smm_objective(theta, cfg, seed)
        n_evals += 1
        trace.append((theta, value))
        return CalibrationResult(
            theta_hat=theta,
            objective=float(value),
            ci={n: (getattr(theta, n), getattr(theta, n)) for n in names},
            trace=trace,
            n_evaluations=n_evals,
        )

    # Stage 1: Sobol design over the log-box
    sobol_seed = stream_id(StreamPurpose.SOBOL, seed) % (2**32)
    sampler = qmc.Sobol(d=len(names), scramble=True, seed=sobol_seed)
    points = qmc.scale(sampler.random(cfg.n_sobol), lo, hi)
    stage1 = [(p, objective_vec(p)) for p in points]
    stage1.sort(key=lambda pv: pv[1])
    log.info("stage 1 complete: best objective %.6g over %d points", stage1[0][1], len(stage1))

    if not math.isfinite(stage1[0][1]):
        raise ConfigError("calibration failed: no finite-objective candidate in the Sobol stage")

    # Stage 2: Nelder-Mead from the best candidates
    best_x, best_val = stage1[0]
    for start, start_val in stage1[: cfg.n_local_starts]:
        res = minimize(
            objective_vec,
            start,
            method="Nelder-Mead",
            options={
                "maxfev": cfg.nm_maxfev,
                "xatol": 1e-4 * float((hi - lo).mean() + 1e-12),
                "fatol": 1e-12,
            },
        )
        val = min(res.fun, start_val)
        x = res.x if res.fun <= start_val else start
        if val < best_val:
            best_val, best_x = val, x
    log.info("stage 2 complete: objective %.6g after %d evaluations", best_val, n_evals)

    # Stage 3: least-squares polish along the residual valley
    polish = least_squares(
        residual_vec,
        _reflect(np.asarray(best_x), lo, hi),
        bounds=(lo, hi),
        diff_step=LS_DIFF_STEP,
        max_nfev=cfg.ls_maxfev,
        xtol=3e-16,
        ftol=3e-16,
        gtol=3e-16,
    )
    polish_val = float(2.0 * polish.cost)  # least_squares cost = 0.5 * sum(res^2)
    if polish_val < best_val:
        best_val = polish_val
        best_x = polish.x
    theta_hat = to_theta(np.asarray(best_x))
    log.info("polish complete: objective %.6g after %d evaluations", best_val, n_evals)

    # Bootstrap confidence intervals
    ci: dict[str, tuple[float, float]] = {}
    if cfg.n_bootstrap > 0:
        z_hat = np.log(theta_hat.as_array())
        draws = np.empty((cfg.n_bootstrap, len(names)))
        for b in range(cfg.n_bootstrap):
            boot_targets = _resample_targets(cfg, seed, b)
            res = least_squares(
                residual_vec,
                z_hat,
                kwargs={"targets": boot_targets},
                bounds=(lo, hi),
                diff_step=LS_DIFF_STEP,
                max_nfev=max(5, cfg.ls_maxfev // 10),
            )
            draws[b] = np.exp(res.x)
        lo_q = np.quantile(draws, 0.025, axis=0)
        hi_q = np.quantile(draws, 0.975, axis=0)
        point = theta_hat.as_array()
        for i, n in enumerate(names):
            ci[n] = (min(lo_q[i], point[i]), max(hi_q[i], point[i]))
    else:
        for n in names:
            v = getattr(theta_hat, n)
            ci[n] = (v, v)

    return CalibrationResult(
        theta_hat=theta_hat,
        objective=float(best_val),
        ci=ci,
        trace=trace,
        n_evaluations=n_evals,
    )


def _resample_targets(cfg: SmmConfig, seed: int, b: int) -> MomentVector:
    rng = seeded_rng(seed, stream_id(StreamPurpose.BOOTSTRAP, b))
    if cfg.target_reps is not None and cfg.target_reps.shape[0] > 1:
        reps = cfg.target_reps
        idx = rng.integers(0, reps.shape[0], size=reps.shape[0])
        return MomentVector.from_array(_nanmean_cols(reps[idx]))
    if cfg.target_se is not None:
        base = cfg.targets.as_array()
        return MomentVector.from_array(base + cfg.target_se * rng.standard_normal(base.size))
    raise ConfigError(
        "bootstrap needs per-replication target moments or target standard errors"
    )


# ---------------------------------------------------------------------------
# Synthetic targets and the moment-file format
# ---------------------------------------------------------------------------

def synthetic_targets(
    theta_star: PricingParams,
    cfg: SmmConfig,
    seed: int,
    reps: int = 20,
) -> tuple[MomentVector, np.ndarray]:
    """Generate target moments by simulating the model at a known parameter
    point, with its own seed and replication set.  Returns the target vector
    and the per-replication moment matrix (for bootstrap resampling)."""
    gen_cfg = replace(cfg, sim_reps=reps)
    sims = simulate_moment_batch(theta_star, gen_cfg, seed)
    clean = ~np.isnan(sims).all(axis=1)
    if not clean.any():
        raise ConfigError("synthetic target generation aborted in every replication")
    return MomentVector.from_array(_nanmean_cols(sims[clean])), sims[clean]


def save_moment_file(
    path: "str | Path", targets: MomentVector, se: np.ndarray | None = None
) -> None:
    parser = configparser.ConfigParser()
    parser["moments"] = {n: repr(getattr(targets, n)) for n in MomentVector.NAMES}
    if se is not None:
        parser["standard_errors"] = {
            n: repr(float(v)) for n, v in zip(MomentVector.NAMES, se)
        }
    with open(path, "w") as fh:
        parser.write(fh)


def load_moment_file(path: "str | Path") -> tuple[MomentVector, np.ndarray | None]:
    """Read a target-moment file: a ``[moments]`` section with all eight
    named moments, and an optional ``[standard_errors]`` section."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"moment file not found: {path}")
    parser.read(path)
    if not parser.has_section("moments"):
        raise ConfigError("moment file must contain a [moments] section")
    values = {}
    for name in MomentVector.NAMES:
        if not parser.has_option("moments", name):
            raise ConfigError(f"moment file missing {name!r}")
        values[name] = float(parser.get("moments", name))
    se = None
    if parser.has_section("standard_errors"):
        se = np.array([
            float(parser.get("standard_errors", n, fallback="nan"))
            for n in MomentVector.NAMES
        ])
    return MomentVector(**values), se
