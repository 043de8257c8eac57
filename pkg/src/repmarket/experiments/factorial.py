"""The 2x2x2 dispersion factorial and its saturated effect regression.

Each cell toggles the cross-sectional *dispersion* of one agent
characteristic (representation matrices, risk aversions, learning rates)
between a wide and a tight regime while the cross-sectional means stay
pinned.  Replication ``m`` shares its fundamental-shock stream across all
eight cells (streams are keyed by replication index, not by cell), so
cell-to-cell outcome differences at matched indices are paired.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..core import ConfigError, RunConfig
from ..metrics import OutcomeRecord
from .runner import SimulationOutput, run_batch

__all__ = [
    "ALL_CELLS",
    "DirectionalVerdict",
    "FactorialCell",
    "FactorialEstimates",
    "FactorialLevels",
    "FactorialResult",
    "cell_config",
    "directional_check",
    "fit_factorial",
    "run_factorial",
]

EFFECT_TERMS = (
    "alpha", "beta_w", "beta_gamma", "beta_eta",
    "beta_wg", "beta_we", "beta_ge", "beta_wge",
)

DEFAULT_OUTCOMES = (
    "rho_forecast", "rho_position", "concentration_mean", "lambda_mean",
    "psi_mean", "inv_stress_mean", "crash_freq", "var1", "var5",
    "max_drawdown", "vol", "lambda_peak",
)


@dataclass(frozen=True)
class FactorialCell:
    """One (h_w, h_gamma, h_eta) configuration; 1 = homogeneous (tight)."""

    h_w: int
    h_gamma: int
    h_eta: int

    def __post_init__(self) -> None:
        if any(v not in (0, 1) for v in (self.h_w, self.h_gamma, self.h_eta)):
            raise ConfigError("factorial indicators must be 0 or 1")

    @property
    def label(self) -> str:
        return f"{self.h_w}{self.h_gamma}{self.h_eta}"

    def design_row(self) -> np.ndarray:
        w, g, e = self.h_w, self.h_gamma, self.h_eta
        return np.array([1.0, w, g, e, w * g, w * e, g * e, w * g * e])


ALL_CELLS: tuple[FactorialCell, ...] = tuple(
    FactorialCell(w, g, e) for w in (0, 1) for g in (0, 1) for e in (0, 1)
)


@dataclass(frozen=True)
class FactorialLevels:
    """Wide/tight dispersion levels for the three treatment dimensions.

    Means are fixed by the population spec; these levels move spread only.
    """

    w_sigma_wide: float = 1.0
    w_sigma_tight: float = 0.05
    gamma_sigma_high: float = 0.6
    gamma_sigma_low: float = 0.05
    eta_sigma_high: float = 0.6
    eta_sigma_low: float = 0.05


def cell_config(base_cfg: RunConfig, cell: FactorialCell, levels: FactorialLevels) -> RunConfig:
    return base_cfg.with_updates(**{
        "population.w_sigma": levels.w_sigma_tight if cell.h_w else levels.w_sigma_wide,
        "population.gamma_sigma": levels.gamma_sigma_low if cell.h_gamma else levels.gamma_sigma_high,
        "population.eta_sigma": levels.eta_sigma_low if cell.h_eta else levels.eta_sigma_high,
    })


# ---------------------------------------------------------------------------
# Saturated effect regression
# ---------------------------------------------------------------------------

@dataclass
class FactorialEstimates:
    """Coefficients and standard errors of the saturated cell-mean model."""

    outcome: str
    coef: dict[str, float]
    se: dict[str, float]
    cell_means: dict[str, float] = field(default_factory=dict)

    def fitted_mean(self, cell: FactorialCell) -> float:
        beta = np.array([self.coef[t] for t in EFFECT_TERMS])
        return float(cell.design_row() @ beta)


def fit_factorial(
    cell_values: dict[FactorialCell, np.ndarray], outcome: str = ""
) -> FactorialEstimates:
    """Exact saturated fit of the 8 cell means.

    The design matrix is square and invertible, so fitted cell means equal
    observed cell means.  Standard errors propagate the across-replication
    variance of each cell mean through the inverse design.
    """
    cells = list(cell_values.keys())
    if sorted(c.label for c in cells) != sorted(c.label for c in ALL_CELLS):
        raise ConfigError("factorial fit needs exactly the 8 distinct cells")
    cells = sorted(cells, key=lambda c: c.label)
    x = np.stack([c.design_row() for c in cells])
    means = np.empty(8)
    mean_var = np.empty(8)
    for i, c in enumerate(cells):
        vals = np.asarray(cell_values[c], dtype=float)
        vals = vals[np.isfinite(vals)]
        if vals.size == 0:
            raise ConfigError(f"cell {c.label} has no finite observations")
        means[i] = vals.mean()
        mean_var[i] = vals.var(ddof=1) / vals.size if vals.size > 1 else 0.0
    a = np.linalg.inv(x)
    beta = a @ means
    beta_se = np.sqrt((a**2) @ mean_var)
    return FactorialEstimates(
        outcome=outcome,
        coef={t: float(b) for t, b in zip(EFFECT_TERMS, beta)},
        se={t: float(s) for t, s in zip(EFFECT_TERMS, beta_se)},
        cell_means={c.label: float(m) for c, m in zip(cells, means)},
    )


# ---------------------------------------------------------------------------
# Running the factorial
# ---------------------------------------------------------------------------

@dataclass
class FactorialResult:
    levels: FactorialLevels
    m_reps: int
    outputs: dict[FactorialCell, list[SimulationOutput]]
    estimates: dict[str, FactorialEstimates]
    incomplete: bool = False

    def cell_values(self, outcome: str) -> dict[FactorialCell, np.ndarray]:
        values = {}
        for cell, outs in self.outputs.items():
            if outcome in ("d_repr_mean", "d_forecast_mean"):
                vals = [getattr(o, outcome) for o in outs if not o.outcome.aborted]
            else:
                vals = [getattr(o.outcome, outcome) for o in outs if not o.outcome.aborted]
            values[cell] = np.array(vals, dtype=float)
        return values


def run_factorial(
    base_cfg: RunConfig,
    m_reps: int = 50,
    levels: FactorialLevels = FactorialLevels(),
    outcomes: Sequence[str] = DEFAULT_OUTCOMES,
    jobs: int = 1,
) -> FactorialResult:
    """Simulate all 8 cells with paired replications and fit the saturated
    effect model per outcome."""
    outputs: dict[FactorialCell, list[SimulationOutput]] = {}
    incomplete = False
    for cell in ALL_CELLS:
        cfg_c = cell_config(base_cfg, cell, levels)
        assert cfg_c.population.gamma_mean == base_cfg.population.gamma_mean
        assert cfg_c.population.eta_mean == base_cfg.population.eta_mean
        outs = run_batch(cfg_c, range(m_reps), jobs=jobs)
        if all(o.outcome.aborted for o in outs):
            incomplete = True
        outputs[cell] = outs

    result = FactorialResult(
        levels=levels, m_reps=m_reps, outputs=outputs, estimates={},
        incomplete=incomplete,
    )
    if not incomplete:
        for outcome in outcomes:
            values = result.cell_values(outcome)
            if any(v.size == 0 or not np.isfinite(v).any() for v in values.values()):
                continue
            result.estimates[outcome] = fit_factorial(values, outcome)
    return result


# ---------------------------------------------------------------------------
# Directional mechanism comparison
# ---------------------------------------------------------------------------

@dataclass
class DirectionalVerdict:
    """Paired comparison of the all-homogeneous vs all-heterogeneous cells.

    For each outcome: mean paired difference (homogeneous minus
    heterogeneous), its standard error over matched replication indices, and
    whether the difference clears two standard errors.  The comparison is
    reported either way; ``confirmed`` is simply whether every requested
    outcome cleared the bar.
    """

    outcomes: dict[str, tuple[float, float, bool]]
    n_pairs: int
    confirmed: bool

    def describe(self) -> str:
        lines = []
        for name, (diff, se, passed) in self.outcomes.items():
            verdict = "separated" if passed else "NOT separated"
            lines.append(
                f"{name}: diff(homog - heterog) = {diff:+.6g} (se {se:.3g}) -> {verdict} at 2 se"
            )
        lines.append(
            f"overall: {'mechanism direction confirmed' if self.confirmed else 'separation not established'}"
            f" over {self.n_pairs} paired replications"
        )
        return "\n".join(lines)


def directional_check(
    result: FactorialResult,
    outcomes: Sequence[str] = ("rho_position", "crash_freq"),
) -> DirectionalVerdict:
    homog = result.outputs[FactorialCell(1, 1, 1)]
    heterog = result.outputs[FactorialCell(0, 0, 0)]
    by_rep_h = {o.rep: o for o in homog if not o.outcome.aborted}
    by_rep_x = {o.rep: o for o in heterog if not o.outcome.aborted}
    shared = sorted(set(by_rep_h) & set(by_rep_x))
    verdicts: dict[str, tuple[float, float, bool]] = {}
    for name in outcomes:
        diffs = np.array([
            getattr(by_rep_h[r].outcome, name) - getattr(by_rep_x[r].outcome, name)
            for r in shared
        ])
        diffs = diffs[np.isfinite(diffs)]
        if diffs.size < 2:
            verdicts[name] = (float("nan"), float("nan"), False)
            continue
        mean = float(diffs.mean())
        se = float(diffs.std(ddof=1) / math.sqrt(diffs.size))
        verdicts[name] = (mean, se, mean > 2.0 * se)
    return DirectionalVerdict(
        outcomes=verdicts,
        n_pairs=len(shared),
        confirmed=all(v[2] for v in verdicts.values()),
    )
