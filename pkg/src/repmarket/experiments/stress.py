"""Stress suite: the factorial's two extreme cells re-run under heavy-tailed
shocks, asynchronous update clocks, and a moving benchmark representation,
each reported as deltas against its matched baseline at the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..core import AsyncSpec, DriftSpec, RunConfig, ShockSpec
from .factorial import ALL_CELLS, FactorialCell, FactorialLevels, cell_config
from .runner import SimulationOutput, run_batch, summarize_outcomes

__all__ = ["StressComparison", "StressResult", "run_stress_suite"]

EXTREME_CELLS = (FactorialCell(0, 0, 0), FactorialCell(1, 1, 1))


@dataclass
class StressComparison:
    variant: str                  # "stable_shocks" | "async_updates" | "moving_base"
    cell: FactorialCell
    baseline: list[SimulationOutput]
    stressed: list[SimulationOutput]

    def deltas(self) -> dict[str, float]:
        """Stressed-minus-baseline outcome means."""
        base = summarize_outcomes(self.baseline)
        stressed = summarize_outcomes(self.stressed)
        return {
            name: stressed[name][0] - base[name][0]
            for name in base
            if name in stressed and name != "aborted"
        }


@dataclass
class StressResult:
    comparisons: list[StressComparison]

    def for_variant(self, variant: str) -> list[StressComparison]:
        return [c for c in self.comparisons if c.variant == variant]


def run_stress_suite(
    base_cfg: RunConfig,
    shock: ShockSpec | None = None,
    async_spec: AsyncSpec | None = None,
    drift: DriftSpec | None = None,
    m_reps: int = 20,
    levels: FactorialLevels = FactorialLevels(),
    jobs: int = 1,
) -> StressResult:
    """Re-run the all-heterogeneous and all-homogeneous cells under each
    stressor.

    The moving-base variant is compared against the *static*-base run with
    the same mean-reversion and exploration rates, so its delta isolates the
    benchmark's motion rather than the drift itself.
    """
    if shock is None:
        shock = replace(
            base_cfg.shocks, kind="stable_jump",
            stable_alpha=1.5, stable_scale=2.0 * base_cfg.pricing.sigma_eps,
            jump_intensity=0.05,
        )
    if async_spec is None:
        async_spec = AsyncSpec(enabled=True, rate_mean=0.5, rate_sigma=0.5)
    if drift is None:
        drift = DriftSpec(nu_w=0.05, sigma_w=0.01, sigma_base=0.02)
    if drift.sigma_base <= 0:
        raise ValueError("the moving-base stressor needs sigma_base > 0")

    comparisons: list[StressComparison] = []
    reps = range(m_reps)
    for cell in EXTREME_CELLS:
        cfg_cell = cell_config(base_cfg, cell, levels)
        baseline = run_batch(cfg_cell, reps, jobs=jobs)

        stressed = run_batch(replace(cfg_cell, shocks=shock), reps, jobs=jobs)
        comparisons.append(StressComparison("stable_shocks", cell, baseline, stressed))

        stressed = run_batch(replace(cfg_cell, async_updates=async_spec), reps, jobs=jobs)
        comparisons.append(StressComparison("async_updates", cell, baseline, stressed))

        static_drift = replace(drift, sigma_base=0.0)
        drift_base_run = run_batch(replace(cfg_cell, drift=static_drift), reps, jobs=jobs)
        stressed = run_batch(replace(cfg_cell, drift=drift), reps, jobs=jobs)
        comparisons.append(StressComparison("moving_base", cell, drift_base_run, stressed))

    return StressResult(comparisons=comparisons)
