"""Experiment orchestration: replication running, the dispersion factorial,
the single-factor scan, threshold estimation, the matched forecast-distance
design, convergence scenarios, negative controls, and the stress suite."""

from .controls import ControlComparison, ControlsResult, run_negative_controls
from .convergence import ConvergencePanel, ScenarioSeries, run_convergence
from .factorial import (
    ALL_CELLS,
    DirectionalVerdict,
    FactorialCell,
    FactorialEstimates,
    FactorialLevels,
    FactorialResult,
    cell_config,
    directional_check,
    fit_factorial,
    run_factorial,
)
from .manifest import (
    config_payload,
    param_hash,
    prepare_run_dir,
    read_manifest,
    read_table,
    write_manifest,
    write_table,
)
from .matched import (
    MatchedDesign,
    MatchedExperimentResult,
    build_matched_design,
    default_candidate_measure,
    run_matched_experiment,
)
from .runner import (
    SimulationOutput,
    outcome_from_trajectories,
    run_batch,
    run_replication,
    summarize_outcomes,
)
from .scan import ScanPoint, ScanTable, run_scan
from .stress import StressComparison, StressResult, run_stress_suite
from .threshold import ThresholdEstimate, estimate_threshold, threshold_panel

__all__ = [name for name in dir() if not name.startswith("_")]
