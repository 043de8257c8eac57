"""Command-line entry point.

One subcommand per experiment plus `metrics` (population homogeneity
report) and `export` (plot-ready files from a finished run directory).
Every run writes a manifest (config + seed + parameter hash) and
tab-separated result tables; re-running with the same inputs reproduces the
tables byte for byte.  File formats are documented in ``docs/formats.md``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .calibration import (
    SmmConfig,
    default_bounds,
    calibrate,
    load_moment_file,
    synthetic_targets,
)
from .core import ConfigError, PricingParams, RunConfig, load_config
from .metrics import OutcomeRecord, ReferenceMeasure, build_distance_report
from .experiments import (
    ControlsResult,
    FactorialCell,
    ScanTable,
    build_matched_design,
    default_candidate_measure,
    directional_check,
    estimate_threshold,
    prepare_run_dir,
    read_manifest,
    read_table,
    run_batch,
    run_convergence,
    run_factorial,
    run_matched_experiment,
    run_negative_controls,
    run_scan,
    run_stress_suite,
    summarize_outcomes,
    write_manifest,
    write_table,
)
from .experiments.scan import SCAN_OUTCOMES

log = logging.getLogger("repmarket")

OUTPUT_ROOT_ENV = "REPMARKET_RUN_ROOT"
OUTCOME_COLUMNS = list(OutcomeRecord.FIELD_ORDER)


def _default_output(command: str, seed: int) -> Path:
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / f"{command}-seed{seed}"


def _parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    for caster in (int, float):
        try:
            return key, caster(raw)
        except ValueError:
            pass
    if raw.lower() in ("true", "false"):
        return key, raw.lower() == "true"
    return key, raw


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    updates: dict[str, object] = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        updates["n_steps"] = args.steps
    if getattr(args, "agents", None) is not None:
        updates["n_agents"] = args.agents
    for key, value in getattr(args, "override", None) or []:
        updates[key] = value
    return cfg.with_updates(**updates) if updates else cfg


def _outcome_row(rep: int, out) -> list:
    row: list = [rep]
    for name in OUTCOME_COLUMNS:
        row.append(getattr(out.outcome, name))
    row.extend([out.d_repr_mean, out.d_forecast_mean])
    return row


def _check_abort_rate(outputs, ceiling: float) -> int:
    rate = sum(o.outcome.aborted for o in outputs) / max(len(outputs), 1)
    if rate > ceiling:
        log.error("aborted-replication rate %.2f exceeds ceiling %.2f", rate, ceiling)
        return 1
    return 0


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_simulate(args) -> int:
    cfg = _load_run_config(args)
    run_dir = prepare_run_dir(args.output or _default_output("simulate", cfg.seed), args.force)
    write_manifest(run_dir, "simulate", cfg, {"rep": args.rep})
    out = run_batch(cfg, [args.rep], keep_trajectories=True)[0]
    traj = out.trajectories
    rows = [
        [t, traj.prices[0, t], traj.returns[0, t], traj.flows[0, t],
         traj.inventory[0, t], traj.lam[0, t], traj.psi[0, t], traj.sigma2[0, t]]
        for t in range(traj.n_steps)
    ]
    write_table(
        run_dir / "timeseries.tsv",
        ["step", "price", "ret", "flow", "inventory", "lam", "psi", "sigma2"],
        rows,
    )
    payload = json.loads(out.outcome.to_json())
    payload["d_repr_mean"] = out.d_repr_mean
    payload["d_forecast_mean"] = out.d_forecast_mean
    (run_dir / "outcome.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    log.info("simulate: %d steps -> %s", traj.n_steps, run_dir)
    print(out.outcome.to_json())
    return _check_abort_rate([out], args.max_abort_rate)


def _cmd_metrics(args) -> int:
    cfg = _load_run_config(args)
    run_dir = prepare_run_dir(args.output or _default_output("metrics", cfg.seed), args.force)
    write_manifest(run_dir, "metrics", cfg, {"measure": args.measure, "states": args.states})
    from .simulation import simulate_paths

    probe = cfg.with_updates(n_steps=cfg.burn_in + args.states)
    traj = simulate_paths(probe, [0])
    states = traj.states[0, cfg.burn_in:]
    if args.measure == "stress":
        mu = ReferenceMeasure.stress_weighted(states, vol_column=cfg.l_lags)
    else:
        mu = ReferenceMeasure.empirical(states)
    from .core import AgentParams

    params = [
        AgentParams(
            gamma=float(traj.gamma[0, i]), eta_theta=float(traj.eta[0, i]),
            d_max=cfg.population.d_max, rho=cfg.population.rho,
            eps_reg=cfg.population.eps_reg,
        )
        for i in range(cfg.n_agents)
    ]
    report = build_distance_report(
        traj.w_final[0], traj.theta_final[0], params, mu, cfg.activation
    )
    (run_dir / "distances.json").write_text(report.to_json() + "\n")
    rows = []
    n = cfg.n_agents
    for i in range(n):
        for j in range(i + 1, n):
            rows.append([
                i, j, report.d_repr[i, j], report.d_forecast[i, j],
                report.d_risk[i, j], report.d_repr_aligned[i, j],
            ])
    write_table(
        run_dir / "pairs.tsv",
        ["agent_i", "agent_j", "d_repr", "d_forecast", "d_risk", "d_repr_aligned"],
        rows,
    )
    print(
        f"d_repr_mean={report.d_repr_mean!r} d_forecast_mean={report.d_forecast_mean!r} "
        f"composite_h={report.composite_h!r}"
    )
    return 0


def _cmd_calibrate(args) -> int:
    cfg = _load_run_config(args)
    run_dir = prepare_run_dir(args.output or _default_output("calibrate", cfg.seed), args.force)
    bounds = default_bounds(cfg.pricing, scale=args.bounds_scale)
    smm = SmmConfig(
        targets=None,  # type: ignore[arg-type]  # filled below
        bounds=bounds,
        base_config=cfg,
        n_sobol=args.sobol,
        n_local_starts=args.local_starts,
        sim_steps=args.sim_steps,
        sim_reps=args.sim_reps,
        n_bootstrap=args.bootstrap,
        weight_matrix=args.weighting,
    )
    if args.targets:
        targets, se = load_moment_file(args.targets)
        smm = replace(smm, targets=targets, target_se=se)
    else:
        log.info("no target file given; generating synthetic targets at the config's pricing")
        targets, reps = synthetic_targets(cfg.pricing, smm, seed=cfg.seed + 1)
        smm = replace(smm, targets=targets, target_reps=reps)
    write_manifest(run_dir, "calibrate", cfg, {
        "targets": args.targets or "synthetic",
        "bounds": {k: list(v) for k, v in bounds.items()},
        "n_sobol": smm.n_sobol, "n_local_starts": smm.n_local_starts,
        "sim_steps": smm.sim_steps, "sim_reps": smm.sim_reps,
        "n_bootstrap": smm.n_bootstrap, "weighting": smm.weight_matrix,
    })
    result = calibrate(smm, seed=cfg.seed)
    rows = [
        [i, *theta.as_array(), value]
        for i, (theta, value) in enumerate(result.trace)
    ]
    write_table(
        run_dir / "trace.tsv",
        ["eval", *PricingParams.PARAM_NAMES, "objective"],
        rows,
    )
    payload = {
        "theta_hat": asdict(result.theta_hat),
        "objective": result.objective,
        "ci": {k: list(v) for k, v in result.ci.items()},
        "n_evaluations": result.n_evaluations,
        "targets": asdict(smm.targets),
    }
    (run_dir / "calibration.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(json.dumps(payload["theta_hat"], sort_keys=True))
    return 0


def _cmd_factorial(args) -> int:
    cfg = _load_run_config(args)
    run_dir = prepare_run_dir(args.output or _default_output("factorial", cfg.seed), args.force)
    write_manifest(run_dir, "factorial", cfg, {"m_reps": args.reps})
    result = run_factorial(cfg, m_reps=args.reps, jobs=args.jobs)
    long_rows = []
    all_outputs = []
    for cell, outs in sorted(result.outputs.items(), key=lambda kv: kv[0].label):
        for out in outs:
            long_rows.append([cell.label, cell.h_w, cell.h_gamma, cell.h_eta, *_outcome_row(out.rep, out)])
            all_outputs.append(out)
    write_table(
        run_dir / "factorial_long.tsv",
        ["cell", "h_w", "h_gamma", "h_eta", "rep", *OUTCOME_COLUMNS, "d_repr_mean", "d_forecast_mean"],
        long_rows,
    )
    effect_rows = []
    for outcome in sorted(result.estimates):
        est = result.estimates[outcome]
        for term in est.coef:
            effect_rows.append([outcome, term, est.coef[term], est.se[term]])
    write_table(run_dir / "factorial_effects.tsv", ["outcome", "term", "coef", "se"], effect_rows)
    verdict = directional_check(result)
    (run_dir / "verdict.txt").write_text(verdict.describe() + "\n")
    print(verdict.describe())
    if result.incomplete:
        log.error("factorial incomplete: at least one cell aborted entirely")
        return 1
    return _check_abort_rate(all_outputs, args.max_abort_rate)


def _scan_to_tables(scan: ScanTable, run_dir: Path) -> None:
    long_rows = []
    mean_rows = []
    for p_idx, point in enumerate(scan.points):
        n_reps = point.d_repr_reps.size
        for rep in range(n_reps):
            row = [p_idx, point.sigma_w, rep, point.d_repr_reps[rep]]
            row.extend(point.outcome_reps[name][rep] for name in SCAN_OUTCOMES)
            long_rows.append(row)
        mean_row = [p_idx, point.sigma_w, point.d_repr]
        for name in SCAN_OUTCOMES:
            mean_row.extend([point.mean(name), point.se(name)])
        mean_rows.append(mean_row)
    write_table(
        run_dir / "scan_long.tsv",
        ["point", "sigma_w", "rep", "d_repr", *SCAN_OUTCOMES],
        long_rows,
    )
    header = ["point", "sigma_w", "d_repr"]
    for name in SCAN_OUTCOMES:
        header.extend([f"{name}_mean", f"{name}_se"])
    write_table(run_dir / "scan_means.tsv", header, mean_rows)


def _cmd_scan(args) -> int:
    cfg = _load_run_config(args)
    run_dir = prepare_run_dir(args.output or _default_output("scan", cfg.seed), args.force)
    write_manifest(run_dir, "scan", cfg, {
        "points": args.points, "m_reps": args.reps,
        "wide": args.wide, "tight": args.tight, "mode": args.mode,
    })
    scan = run_scan(
        cfg, n_points=args.points, sigma_range=(args.wide, args.tight),
        control_mode=args.mode, m_reps=args.reps, jobs=args.jobs,
    )
    _scan_to_tables(scan, run_dir)
    log.info("scan: %d points x %d reps -> %s", args.points, args.reps, run_dir)
    print(f"scan complete: d_repr range [{scan.d_values.min()!r}, {scan.d_values.max()!r}]")
    return 0


def _scan_from_long_table(path: Path, outcome: str) -> ScanTable:
    header, rows = read_table(path)
    try:
        d_col = header.index("d_repr")
        y_col = header.index(outcome)
        p_col = header.index("point")
    except ValueError as exc:
        raise ConfigError(f"scan table {path} lacks required column: {exc}") from exc
    groups: dict[int, tuple[list[float], list[float]]] = {}
    for row in rows:
        p = int(row[p_col])
        groups.setdefault(p, ([], []))
        groups[p][0].append(float(row[d_col]))
        groups[p][1].append(float(row[y_col]))
    d_points = []
    y_reps = []
    for p in sorted(groups):
        ds, ys = groups[p]
        d_points.append(float(np.nanmean(ds)))
        y_reps.append(ys)
    return ScanTable.from_arrays(d_points, y_reps, outcome)


def _cmd_threshold(args) -> int:
    scan = _scan_from_long_table(Path(args.input), args.outcome)
    methods = [args.method] if args.method != "all" else [
        "segmented", "spline_curvature", "event_crossing"
    ]
    rows = []
    for method in methods:
        est = estimate_threshold(scan, args.outcome, method)
        rows.append([est.outcome_name, est.method, est.d_crit, est.fit_quality, est.detected])
        print(est.describe())
    if args.output:
        run_dir = prepare_run_dir(args.output, args.force)
        write_manifest(run_dir, "threshold", RunConfig(), {
            "input": str(args.input), "outcome": args.outcome, "method": args.method,
        })
        write_table(
            run_dir / "threshold.tsv",
            ["outcome", "method", "d_crit", "fit_quality", "detected"],
            rows,
        )
    return 0


def _cmd_matched(args) -> int:
    cfg = _load_run_config(args)
    run_dir = prepare_run_dir(args.output or _default_output("matched", cfg.seed), args.force)
    write_manifest(run_dir, "matched", cfg, {
        "candidates": args.candidates, "m_reps": args.reps,
        "calm_steps": args.calm_steps, "stress_steps": args.stress_steps,
        "stress_scale": args.stress_scale,
    })
    mu = default_candidate_measure(cfg)
    design = build_matched_design(cfg, mu, n_candidates=args.candidates)
    result = run_matched_experiment(
        design, cfg,
        calm_steps=args.calm_steps, stress_steps=args.stress_steps,
        stress_shock_scale=args.stress_scale, m_reps=args.reps, jobs=args.jobs,
    )
    (run_dir / "design.json").write_text(json.dumps({
        "mode": design.mode,
        "strict_yield": design.strict_yield,
        "d_repr_a": design.d_repr_a, "d_repr_b": design.d_repr_b,
        "d_fc_a": design.d_fc_a, "d_fc_b": design.d_fc_b,
        "fc_gap": design.fc_gap, "repr_ratio": design.repr_ratio,
    }, indent=2, sort_keys=True) + "\n")
    phase_rows = []
    for phase, records in (("calm", result.calm), ("stress", result.stress)):
        for group in ("a", "b"):
            for rep, rec in enumerate(records[group]):
                row = [group, phase, rep]
                row.extend(getattr(rec, name) for name in OUTCOME_COLUMNS)
                phase_rows.append(row)
    write_table(
        run_dir / "matched_phases.tsv",
        ["group", "phase", "rep", *OUTCOME_COLUMNS],
        phase_rows,
    )
    diag_rows = [
        [name, *vals, result.matched_ok]
        for name, vals in sorted(result.calm_diagnostic.items())
    ]
    write_table(
        run_dir / "matched_diagnostic.tsv",
        ["outcome", "mean_a", "mean_b", "p_value", "matched_ok"],
        diag_rows,
    )
    print(
        f"mode={design.mode} repr_ratio={design.repr_ratio:.3g} fc_gap={design.fc_gap:.3g} "
        f"matched_ok={result.matched_ok}"
    )
    return 0


def _cmd_converge(args) -> int:
    cfg = _load_run_config(args)
    run_dir = prepare_run_dir(args.output or _default_output("converge", cfg.seed), args.force)
    nus = tuple(float(x) for x in args.nus.split(","))
    write_manifest(run_dir, "converge", cfg, {
        "nus": list(nus), "m_reps": args.reps, "sigma_w": args.sigma_w,
        "d_crit": args.d_crit,
    })
    panel = run_convergence(
        cfg, nus=nus, sigma_w=args.sigma_w, m_reps=args.reps, d_crit=args.d_crit,
    )
    rows = []
    for scenario in panel.scenarios:
        for k, t in enumerate(scenario.times):
            rows.append([
                scenario.nu_w, int(t), scenario.d_repr[k], scenario.rho_forecast[k],
                scenario.rho_position[k], scenario.concentration[k],
                scenario.inv_stress[k], scenario.lam[k], scenario.psi[k],
            ])
    write_table(
        run_dir / "convergence_panel.tsv",
        ["nu_w", "step", "d_repr", "rho_forecast", "rho_position",
         "concentration", "inv_stress", "lam", "psi"],
        rows,
    )
    write_table(
        run_dir / "crossings.tsv",
        ["nu_w", "crossing_step"],
        [[s.nu_w, s.crossing_time] for s in panel.scenarios],
    )
    for s in panel.scenarios:
        print(f"nu_w={s.nu_w}: final d_repr={s.d_repr[-1]!r} crossing={s.crossing_time!r}")
    return 0


def _cmd_controls(args) -> int:
    cfg = _load_run_config(args)
    run_dir = prepare_run_dir(args.output or _default_output("controls", cfg.seed), args.force)
    write_manifest(run_dir, "controls", cfg, {"m_reps": args.reps})
    result = run_negative_controls(cfg, m_reps=args.reps, jobs=args.jobs)
    long_rows = []
    summary_rows = []
    for comp in result.comparisons():
        for arm, outs in (("control", comp.control), ("treatment", comp.treatment)):
            for out in outs:
                long_rows.append([comp.name, arm, *_outcome_row(out.rep, out)])
        for outcome, (c_mean, t_mean) in sorted(comp.summary().items()):
            summary_rows.append([comp.name, outcome, c_mean, t_mean])
    write_table(
        run_dir / "controls_long.tsv",
        ["control", "arm", "rep", *OUTCOME_COLUMNS, "d_repr_mean", "d_forecast_mean"],
        long_rows,
    )
    write_table(
        run_dir / "controls_summary.tsv",
        ["control", "outcome", "control_mean", "treatment_mean"],
        summary_rows,
    )
    print("controls complete:", ", ".join(c.name for c in result.comparisons()))
    return 0


def _cmd_stress(args) -> int:
    cfg = _load_run_config(args)
    run_dir = prepare_run_dir(args.output or _default_output("stress", cfg.seed), args.force)
    write_manifest(run_dir, "stress", cfg, {"m_reps": args.reps})
    result = run_stress_suite(cfg, m_reps=args.reps, jobs=args.jobs)
    long_rows = []
    delta_rows = []
    for comp in result.comparisons:
        for arm, outs in (("baseline", comp.baseline), ("stressed", comp.stressed)):
            for out in outs:
                long_rows.append([comp.variant, comp.cell.label, arm, *_outcome_row(out.rep, out)])
        for outcome, delta in sorted(comp.deltas().items()):
            delta_rows.append([comp.variant, comp.cell.label, outcome, delta])
    write_table(
        run_dir / "stress_long.tsv",
        ["variant", "cell", "arm", "rep", *OUTCOME_COLUMNS, "d_repr_mean", "d_forecast_mean"],
        long_rows,
    )
    write_table(
        run_dir / "stress_deltas.tsv",
        ["variant", "cell", "outcome", "delta"],
        delta_rows,
    )
    print("stress suite complete:", len(result.comparisons), "comparisons")
    return 0


EXPORT_SOURCES = {
    "timeseries": ("timeseries.tsv", "export_timeseries.tsv"),
    "scan_curve": ("scan_means.tsv", "export_scan_curve.tsv"),
    "factorial_table": ("factorial_long.tsv", "export_factorial_cells.tsv"),
    "convergence_panel": ("convergence_panel.tsv", "export_convergence_panel.tsv"),
}


def _cmd_export(args) -> int:
    run_dir = Path(args.run_dir)
    read_manifest(run_dir)  # raises when absent
    source_name, out_name = EXPORT_SOURCES[args.what]
    source = run_dir / source_name
    header, rows = read_table(source)
    out_dir = Path(args.output) if args.output else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.what == "factorial_table":
        # 8-row per-cell means table plus a copy of the long table
        cells: dict[str, list[list[str]]] = {}
        for row in rows:
            cells.setdefault(row[0], []).append(row)
        mean_rows = []
        numeric_cols = list(range(4, len(header)))
        for label in sorted(cells):
            group = cells[label]
            mean_row: list = [label, group[0][1], group[0][2], group[0][3]]
            for c in numeric_cols[1:]:
                vals = []
                for row in group:
                    try:
                        vals.append(float(row[c]))
                    except ValueError:
                        pass
                mean_row.append(float(np.nanmean(vals)) if vals else float("nan"))
            mean_rows.append(mean_row)
        write_table(out_dir / out_name, ["cell", "h_w", "h_gamma", "h_eta", *header[5:]], mean_rows)
        write_table(out_dir / "export_factorial_long.tsv", header, rows)
    else:
        write_table(out_dir / out_name, header, rows)
    print(f"exported {args.what} -> {out_dir / out_name}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="repmarket",
        description="Representation-monoculture market simulator and experiment harness",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, reps_default=20):
        p.add_argument("--config", help="run configuration file (sectioned key=value)")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--output", "-o", help="run directory (default under $REPMARKET_RUN_ROOT)")
        p.add_argument("--force", action="store_true", help="overwrite an existing run directory")
        p.add_argument("--override", type=_parse_override, action="append", metavar="KEY=VALUE",
                       help="dotted config override, e.g. population.w_sigma=0.1")
        p.add_argument("--steps", type=int, help="n_steps override")
        p.add_argument("--agents", type=int, help="n_agents override")
        p.add_argument("--reps", type=int, default=reps_default, help="replications")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        p.add_argument("--max-abort-rate", type=float, default=0.5)

    p = sub.add_parser("simulate", help="one replication; time series + outcome record")
    common(p)
    p.add_argument("--rep", type=int, default=0, help="replication index")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("metrics", help="pairwise homogeneity report for a population")
    common(p)
    p.add_argument("--measure", choices=["empirical", "stress"], default="empirical")
    p.add_argument("--states", type=int, default=500, help="measure size")
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("calibrate", help="moment-matching calibration of the pricing block")
    common(p)
    p.add_argument("--targets", help="target moment file (default: synthetic self-targets)")
    p.add_argument("--sobol", type=int, default=512, help="global-stage design size")
    p.add_argument("--local-starts", type=int, default=8)
    p.add_argument("--sim-steps", type=int, default=3000, help="post-burn-in sample length")
    p.add_argument("--sim-reps", type=int, default=10)
    p.add_argument("--bootstrap", type=int, default=200, help="bootstrap draws for intervals")
    p.add_argument("--bounds-scale", type=float, default=3.0)
    p.add_argument("--weighting", choices=["identity", "inv_bootstrap_var"], default="identity")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("factorial", help="2x2x2 dispersion factorial with paired seeds")
    common(p, reps_default=50)
    p.set_defaults(func=_cmd_factorial)

    p = sub.add_parser("scan", help="single-factor representation-dispersion scan")
    common(p, reps_default=50)
    p.add_argument("--points", type=int, default=15)
    p.add_argument("--wide", type=float, default=1.0)
    p.add_argument("--tight", type=float, default=0.05)
    p.add_argument("--mode", choices=["heterogeneous", "uniform"], default="heterogeneous")
    p.set_defaults(func=_cmd_scan)

    p = sub.add_parser("threshold", help="change-point estimates from a scan table")
    p.add_argument("--input", required=True, help="scan_long.tsv from a scan run")
    p.add_argument("--outcome", default="crash_freq")
    p.add_argument("--method", default="segmented",
                   choices=["segmented", "spline_curvature", "event_crossing", "all"])
    p.add_argument("--output", "-o")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_threshold)

    p = sub.add_parser("matched", help="matched forecast-distance two-phase experiment")
    common(p)
    p.add_argument("--candidates", type=int, default=2000)
    p.add_argument("--calm-steps", type=int, default=2000)
    p.add_argument("--stress-steps", type=int, default=300)
    p.add_argument("--stress-scale", type=float, default=5.0)
    p.set_defaults(func=_cmd_matched)

    p = sub.add_parser("converge", help="representation-convergence scenarios")
    common(p)
    p.add_argument("--nus", default="0,0.001,0.01,0.1", help="comma-separated speeds")
    p.add_argument("--sigma-w", type=float, default=0.01)
    p.add_argument("--d-crit", type=float, help="critical distance for crossing times")
    p.set_defaults(func=_cmd_converge)

    p = sub.add_parser("controls", help="negative-control comparisons")
    common(p)
    p.set_defaults(func=_cmd_controls)

    p = sub.add_parser("stress", help="heavy tails, async clocks, moving benchmark")
    common(p)
    p.set_defaults(func=_cmd_stress)

    p = sub.add_parser("export", help="plot-ready files from a finished run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--what", required=True, choices=sorted(EXPORT_SOURCES))
    p.add_argument("--output", "-o", help="destination directory (default: the run dir)")
    p.set_defaults(func=_cmd_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s [%(levelname)s] %(message)s",
        datefmt="%H:%M:%S",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    except FloatingPointError as exc:
        log.error("numeric failure: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
