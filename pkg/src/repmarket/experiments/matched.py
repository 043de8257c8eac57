"""Matched forecast-distance design: two populations with near-identical
average forecast distances but representation distances apart by a target
factor, simulated through a calm phase and then a stress phase of scaled-up
fundamental shocks.

Candidate populations vary the representation spread and the readout spread
jointly (a small feature-map spread with a large readout spread can produce
the same forecast diversity as the reverse), so compensating pairs exist.
If strict pair matching yields under 3% of examined pairs, selection falls
back to conditional binning: candidates are sorted into forecast-distance
deciles and the representation-distance extremes are compared within the
best-populated bin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ..agents import init_population
from ..core import (
    AgentParams,
    AgentState,
    ConfigError,
    RunConfig,
    StreamPurpose,
    seeded_rng,
    stream_id,
)
from ..metrics import (
    OutcomeRecord,
    ReferenceMeasure,
    offdiag_mean,
    pairwise_forecast_distances,
    pairwise_repr_distances,
)
from ..simulation import draw_w_center
from .runner import SimulationOutput, outcome_from_trajectories, run_batch

__all__ = [
    "MatchedDesign",
    "MatchedExperimentResult",
    "build_matched_design",
    "default_candidate_measure",
    "run_matched_experiment",
]

STRICT_BAND = 0.05
REPR_GAP = 2.0
BINNED_TRIGGER = 0.03
N_BINS = 10


Population = list[tuple[AgentParams, AgentState]]


@dataclass
class CandidateSummary:
    index: int
    w_sigma: float
    theta_sigma: float
    d_repr: float
    d_forecast: float


@dataclass
class MatchedDesign:
    group_a: Population            # lower representation distance
    group_b: Population
    d_repr_a: float
    d_repr_b: float
    d_fc_a: float
    d_fc_b: float
    mode: str                      # "strict_match" | "binned"
    candidates: list[CandidateSummary] = field(repr=False, default_factory=list)
    strict_yield: float = 0.0

    @property
    def fc_gap(self) -> float:
        denom = max(self.d_fc_a, self.d_fc_b)
        return abs(self.d_fc_a - self.d_fc_b) / denom if denom > 0 else 0.0

    @property
    def repr_ratio(self) -> float:
        return self.d_repr_b / self.d_repr_a if self.d_repr_a > 0 else math.inf


def default_candidate_measure(cfg: RunConfig, n_states: int = 300) -> ReferenceMeasure:
    """Cheap reference measure for candidate screening: one short baseline
    simulation's visited states."""
    short = cfg.with_updates(n_steps=cfg.burn_in + n_states)
    out = run_batch(short, [0], keep_trajectories=True)[0]
    states = out.trajectories.states[0, cfg.burn_in:]
    return ReferenceMeasure.empirical(states)


def _realize_candidate(
    cfg: RunConfig,
    index: int,
    w_sigma: float,
    theta_sigma: float,
    w_center: np.ndarray,
) -> Population:
    from dataclasses import replace

    spec = replace(cfg.population, w_sigma=w_sigma, theta_sigma=theta_sigma)

    def agent_rng(a: int) -> np.random.Generator:
        return seeded_rng(cfg.seed, stream_id(StreamPurpose.CANDIDATE, index, a, 1))

    return init_population(spec, agent_rng, cfg.k_features, cfg.state_dim, w_center)


def build_matched_design(
    base_cfg: RunConfig,
    mu: ReferenceMeasure,
    n_candidates: int = 2000,
    target_band: float = STRICT_BAND,
    repr_gap: float = REPR_GAP,
    w_sigma_range: tuple[float, float] = (0.05, 1.0),
    theta_sigma_range: tuple[float, float] = (0.02, 1.0),
    candidate_sigmas: np.ndarray | None = None,
) -> MatchedDesign:
    """Search candidate populations for a forecast-matched pair with a large
    representation gap.

    Candidates draw (w_sigma, theta_sigma) log-uniformly from the given
    ranges, each realized with its own streams under the base seed; pass an
    explicit ``candidate_sigmas`` array (n, 2) to construct a designed pool
    instead (e.g. a compensating diagonal where a tighter feature spread is
    offset by a wider readout spread).  The strict criterion keeps pairs
    whose forecast distances differ by less than ``target_band`` (relative)
    while representation distances differ by at least ``repr_gap`` times;
    among those the pair with the largest representation ratio wins.
    """
    w_center = base_cfg.population.w_center
    if w_center is None:
        w_center = draw_w_center(base_cfg)
    if candidate_sigmas is not None:
        candidate_sigmas = np.asarray(candidate_sigmas, dtype=float)
        n_candidates = candidate_sigmas.shape[0]
        w_sigmas = candidate_sigmas[:, 0]
        t_sigmas = candidate_sigmas[:, 1]
    else:
        rng = seeded_rng(base_cfg.seed, stream_id(StreamPurpose.CANDIDATE))
        lo_w, hi_w = w_sigma_range
        lo_t, hi_t = theta_sigma_range
        w_sigmas = np.exp(rng.uniform(math.log(lo_w), math.log(hi_w), size=n_candidates))
        t_sigmas = np.exp(rng.uniform(math.log(lo_t), math.log(hi_t), size=n_candidates))

    populations: list[Population] = []
    summaries: list[CandidateSummary] = []
    d_repr = np.empty(n_candidates)
    d_fc = np.empty(n_candidates)
    for i in range(n_candidates):
        pop = _realize_candidate(base_cfg, i, float(w_sigmas[i]), float(t_sigmas[i]), w_center)
        ws = np.stack([s.w for _, s in pop])
        thetas = np.stack([s.theta for _, s in pop])
        d_repr[i] = offdiag_mean(pairwise_repr_distances(ws, mu, base_cfg.activation))
        d_fc[i] = offdiag_mean(
            pairwise_forecast_distances(ws, thetas, mu, base_cfg.activation)
        )
        populations.append(pop)
        summaries.append(
            CandidateSummary(i, float(w_sigmas[i]), float(t_sigmas[i]), float(d_repr[i]), float(d_fc[i]))
        )

    # strict pair search, vectorized over all unordered pairs
    fc_hi = np.maximum(d_fc[:, None], d_fc[None, :])
    with np.errstate(invalid="ignore", divide="ignore"):
        fc_rel = np.abs(d_fc[:, None] - d_fc[None, :]) / np.where(fc_hi > 0, fc_hi, 1.0)
        rep_lo = np.minimum(d_repr[:, None], d_repr[None, :])
        rep_ratio = np.maximum(d_repr[:, None], d_repr[None, :]) / np.where(rep_lo > 0, rep_lo, np.nan)
    iu = np.triu_indices(n_candidates, k=1)
    qualifying = (fc_rel[iu] < target_band) & (rep_ratio[iu] >= repr_gap)
    n_pairs = iu[0].size
    strict_yield = float(qualifying.sum()) / n_pairs if n_pairs else 0.0

    if strict_yield >= BINNED_TRIGGER and qualifying.any():
        ratios = np.where(qualifying, rep_ratio[iu], -np.inf)
        best = int(np.argmax(ratios))
        i, j = int(iu[0][best]), int(iu[1][best])
        a, b = (i, j) if d_repr[i] <= d_repr[j] else (j, i)
        mode = "strict_match"
    else:
        a, b = _binned_selection(d_fc, d_repr)
        mode = "binned"
    if a is None:
        raise ConfigError(
            "matched design failed: no qualifying pair and no populated bin; "
            f"d_repr range [{d_repr.min():.4g}, {d_repr.max():.4g}], "
            f"d_forecast range [{d_fc.min():.4g}, {d_fc.max():.4g}]"
        )
    return MatchedDesign(
        group_a=populations[a],
        group_b=populations[b],
        d_repr_a=float(d_repr[a]),
        d_repr_b=float(d_repr[b]),
        d_fc_a=float(d_fc[a]),
        d_fc_b=float(d_fc[b]),
        mode=mode,
        candidates=summaries,
        strict_yield=strict_yield,
    )


def _binned_selection(d_fc: np.ndarray, d_repr: np.ndarray) -> tuple[int | None, int | None]:
    """Decile-bin candidates by forecast distance; inside the bin with the
    widest representation spread, compare the bottom- vs top-tercile
    representation medians."""
    edges = np.quantile(d_fc, np.linspace(0, 1, N_BINS + 1))
    best: tuple[float, int, int] | None = None
    for b in range(N_BINS):
        lo, hi = edges[b], edges[b + 1]
        mask = (d_fc >= lo) & (d_fc <= hi if b == N_BINS - 1 else d_fc < hi)
        idx = np.flatnonzero(mask)
        if idx.size < 6:
            continue
        reps = d_repr[idx]
        t1, t2 = np.quantile(reps, [1 / 3, 2 / 3])
        low_group = idx[reps <= t1]
        high_group = idx[reps >= t2]
        if low_group.size == 0 or high_group.size == 0:
            continue
        a = int(low_group[np.argsort(d_repr[low_group])[low_group.size // 2]])
        bb = int(high_group[np.argsort(d_repr[high_group])[high_group.size // 2]])
        if d_repr[a] <= 0:
            continue
        ratio = d_repr[bb] / d_repr[a]
        if best is None or ratio > best[0]:
            best = (ratio, a, bb)
    if best is None:
        return None, None
    return best[1], best[2]


# ---------------------------------------------------------------------------
# Two-phase experiment
# ---------------------------------------------------------------------------

@dataclass
class MatchedExperimentResult:
    design: MatchedDesign
    calm: dict[str, list[OutcomeRecord]]       # "a" / "b"
    stress: dict[str, list[OutcomeRecord]]
    calm_diagnostic: dict[str, tuple[float, float, float]]  # outcome -> (mean_a, mean_b, p)
    matched_ok: bool

    def phase_summary(self, phase: str, group: str, outcome: str) -> tuple[float, float]:
        records = (self.calm if phase == "calm" else self.stress)[group]
        vals = np.array([getattr(r, outcome) for r in records if not r.aborted])
        vals = vals[np.isfinite(vals)]
        if vals.size == 0:
            return float("nan"), float("nan")
        se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
        return float(vals.mean()), se


def _welch_p(a: np.ndarray, b: np.ndarray) -> float:
    a = a[np.isfinite(a)]
    b = b[np.isfinite(b)]
    if a.size < 2 or b.size < 2:
        return float("nan")
    if np.allclose(a, a[0]) and np.allclose(b, b[0]):
        return 1.0 if math.isclose(float(a[0]), float(b[0]), rel_tol=1e-12, abs_tol=1e-12) else 0.0
    return float(stats.ttest_ind(a, b, equal_var=False).pvalue)


def run_matched_experiment(
    design: MatchedDesign,
    base_cfg: RunConfig,
    calm_steps: int = 2000,
    stress_steps: int = 300,
    stress_shock_scale: float = 5.0,
    m_reps: int = 20,
    jobs: int = 1,
) -> MatchedExperimentResult:
    """Simulate both groups through burn-in, a calm phase, and a stress
    phase of scaled fundamental shocks; shock streams are shared across
    groups at matched replication indices, so group differences isolate
    population structure.

    The stress-phase comparison is only flagged evidential
    (``matched_ok``) when the calm-phase two-sample tests on forecast
    correlation, position correlation, and volatility all fail to reject at
    5%.
    """
    total = base_cfg.burn_in + calm_steps + stress_steps
    cfg = base_cfg.with_updates(n_steps=total)
    scale = np.ones(total)
    scale[base_cfg.burn_in + calm_steps:] = stress_shock_scale
    calm_window = slice(base_cfg.burn_in, base_cfg.burn_in + calm_steps)
    stress_window = slice(base_cfg.burn_in + calm_steps, total)

    calm: dict[str, list[OutcomeRecord]] = {"a": [], "b": []}
    stress: dict[str, list[OutcomeRecord]] = {"a": [], "b": []}
    diag_samples: dict[str, dict[str, list[float]]] = {
        g: {"rho_forecast": [], "rho_position": [], "vol": []} for g in ("a", "b")
    }
    for group, pop in (("a", design.group_a), ("b", design.group_b)):
        outs = run_batch(
            cfg,
            range(m_reps),
            population=pop,
            shock_scale=scale,
            keep_trajectories=True,
            jobs=jobs,
        )
        for out in outs:
            traj = out.trajectories
            j = traj.rep_ids.index(out.rep)
            calm_rec, _, _ = outcome_from_trajectories(traj, j, cfg, window=calm_window)
            stress_rec, _, _ = outcome_from_trajectories(traj, j, cfg, window=stress_window)
            calm[group].append(calm_rec)
            stress[group].append(stress_rec)
            if not calm_rec.aborted:
                for name in diag_samples[group]:
                    diag_samples[group][name].append(getattr(calm_rec, name))

    diagnostic: dict[str, tuple[float, float, float]] = {}
    ok = True
    for name in ("rho_forecast", "rho_position", "vol"):
        a = np.array(diag_samples["a"][name], dtype=float)
        b = np.array(diag_samples["b"][name], dtype=float)
        p = _welch_p(a, b)
        diagnostic[name] = (
            float(np.nanmean(a)) if a.size else float("nan"),
            float(np.nanmean(b)) if b.size else float("nan"),
            p,
        )
        if not (math.isfinite(p) and p > 0.05):
            ok = False
    return MatchedExperimentResult(
        design=design,
        calm=calm,
        stress=stress,
        calm_diagnostic=diagnostic,
        matched_ok=ok,
    )
