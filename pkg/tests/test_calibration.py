import warnings
from dataclasses import replace

import numpy as np
import pytest

from repmarket.calibration import (
    MomentVector,
    SmmConfig,
    calibrate,
    compute_moments,
    default_bounds,
    load_moment_file,
    save_moment_file,
    simulate_moment_batch,
    smm_objective,
    synthetic_targets,
)
from repmarket.core import ConfigError, PricingParams, RunConfig


def tiny_smm(cfg=None, **kw):
    base = cfg or RunConfig(n_steps=1600, seed=5)
    defaults = dict(
        targets=None,
        bounds=default_bounds(base.pricing, scale=2.0),
        base_config=base,
        n_sobol=8,
        n_local_starts=2,
        sim_steps=1100,
        sim_reps=3,
        n_bootstrap=0,
        nm_maxfev=20,
        ls_maxfev=4,
    )
    defaults.update(kw)
    return SmmConfig(**defaults)


class TestComputeMoments:
    def test_impact_slope_recovery(self, rng):
        flows = rng.standard_normal(10_000)
        returns = 0.5 * flows + rng.normal(0, 0.01, size=10_000)
        vols = np.abs(rng.standard_normal(10_000)) + 0.5
        m = compute_moments(returns, flows, vols)
        assert m.impact_uncond == pytest.approx(0.5, abs=0.01)

    def test_ar1_autocorrelation_recovery(self, rng):
        n = 100_000
        r = np.empty(n)
        r[0] = 0.0
        eps = rng.standard_normal(n)
        for t in range(1, n):
            r[t] = 0.3 * r[t - 1] + eps[t]
        vols = np.abs(rng.standard_normal(n)) + 0.5
        m = compute_moments(r, rng.standard_normal(n), vols)
        assert m.acf1 == pytest.approx(0.3, abs=0.02)

    def test_degenerate_flows_flagged(self, rng):
        returns = rng.standard_normal(2000)
        vols = np.abs(rng.standard_normal(2000)) + 0.5
        with pytest.warns(UserWarning, match="degenerate flows"):
            m = compute_moments(returns, np.zeros(2000), vols)
        assert np.isnan(m.flow_acf1)
        assert np.isnan(m.impact_uncond) or abs(m.impact_uncond) < 1e6

    def test_thin_tail_flagged(self, rng):
        # 1% of 1000 observations < 30 -> tail moments unreliable
        returns = rng.standard_normal(1000)
        flows = rng.standard_normal(1000)
        vols = np.abs(rng.standard_normal(1000)) + 0.5
        with pytest.warns(UserWarning, match="unreliable"):
            m = compute_moments(returns, flows, vols)
        assert np.isnan(m.impact_top1)

    def test_annualization(self, rng):
        r = rng.standard_normal(5000)
        vols = np.abs(r) + 0.5
        m = compute_moments(r, rng.standard_normal(5000), vols, periods_per_year=252)
        assert m.ann_vol == pytest.approx(r.std() * np.sqrt(252))

    def test_short_sample_rejected(self, rng):
        with pytest.raises(ConfigError):
            compute_moments(np.zeros(500), np.zeros(500), np.ones(500))

    def test_vector_round_trip(self):
        m = MomentVector(1, 2, 3, 4, 5, 6, 7, 8)
        assert MomentVector.from_array(m.as_array()) == m


class TestObjective:
    def test_zero_at_own_moments(self):
        smm = tiny_smm()
        theta = smm.base_config.pricing
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sims = simulate_moment_batch(theta, smm, seed=5)
            targets = MomentVector.from_array(np.nanmean(sims, axis=0))
            smm = replace(smm, targets=targets)
            assert smm_objective(theta, smm, seed=5) == pytest.approx(0.0, abs=1e-20)

    def test_nonnegative_and_deterministic(self):
        smm = tiny_smm()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            targets, _ = synthetic_targets(smm.base_config.pricing, smm, seed=6, reps=3)
            smm = replace(smm, targets=targets)
            theta = replace(smm.base_config.pricing, lambda0=0.08)
            a = smm_objective(theta, smm, seed=5)
            b = smm_objective(theta, smm, seed=5)
        assert a >= 0.0
        assert a == b

    def test_quadratic_scaling_in_deviation(self):
        smm = tiny_smm()
        theta = smm.base_config.pricing
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sims = simulate_moment_batch(theta, smm, seed=5)
            base = np.nanmean(sims, axis=0)
            for delta in (0.1, 0.2):
                shifted = base.copy()
                shifted[0] += delta
                smm_d = replace(smm, targets=MomentVector.from_array(shifted))
                j = smm_objective(theta, smm_d, seed=5)
                assert j == pytest.approx(delta**2, rel=1e-9)

    def test_weighting_agreement_at_unit_variance(self):
        smm = tiny_smm()
        theta = replace(smm.base_config.pricing, lambda0=0.07)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            targets, _ = synthetic_targets(smm.base_config.pricing, smm, seed=6, reps=3)
            identity = replace(smm, targets=targets, weight_matrix="identity")
            invvar = replace(
                smm, targets=targets, weight_matrix="inv_bootstrap_var",
                target_se=np.ones(8),
            )
            assert smm_objective(theta, identity, seed=5) == pytest.approx(
                smm_objective(theta, invvar, seed=5)
            )

    def test_aborted_candidates_infinite(self):
        smm = tiny_smm()
        # astronomically large shocks overflow the variance estimator
        theta = PricingParams(lambda0=1e9, alpha_lambda=1e3, beta_lambda=1e-3,
                              psi0=1e9, alpha_psi=1e3, beta_psi=1e-3,
                              kappa=0.1, sigma_eps=1e200)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            targets, _ = synthetic_targets(smm.base_config.pricing, smm, seed=6, reps=3)
            smm = replace(smm, targets=targets,
                          bounds=default_bounds(theta, scale=1.5))
            assert smm_objective(theta, smm, seed=5) == np.inf


class TestCalibrate:
    def test_degenerate_bounds_return_the_point(self):
        smm = tiny_smm()
        point = smm.base_config.pricing
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            targets, _ = synthetic_targets(point, smm, seed=6, reps=3)
            bounds = {n: (getattr(point, n), getattr(point, n)) for n in PricingParams.PARAM_NAMES}
            smm = replace(smm, targets=targets, bounds=bounds)
            result = calibrate(smm, seed=5)
        assert result.theta_hat == point

    def test_deterministic(self):
        smm = tiny_smm()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            targets, reps = synthetic_targets(smm.base_config.pricing, smm, seed=6, reps=3)
            smm = replace(smm, targets=targets, target_reps=reps)
            a = calibrate(smm, seed=5)
            b = calibrate(smm, seed=5)
        assert a.theta_hat == b.theta_hat
        assert a.objective == b.objective

    def test_refinement_never_regresses(self):
        smm = tiny_smm()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            targets, _ = synthetic_targets(smm.base_config.pricing, smm, seed=6, reps=3)
            smm = replace(smm, targets=targets)
            result = calibrate(smm, seed=5)
        stage1_best = min(v for _, v in result.trace[: smm.n_sobol])
        assert result.objective <= stage1_best + 1e-15

    def test_bootstrap_ci_brackets_point(self):
        smm = tiny_smm(n_bootstrap=3)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            targets, reps = synthetic_targets(smm.base_config.pricing, smm, seed=6, reps=4)
            smm = replace(smm, targets=targets, target_reps=reps)
            result = calibrate(smm, seed=5)
        for name in PricingParams.PARAM_NAMES:
            lo, hi = result.ci[name]
            assert lo <= getattr(result.theta_hat, name) <= hi

    def test_trace_recorded(self):
        smm = tiny_smm()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            targets, _ = synthetic_targets(smm.base_config.pricing, smm, seed=6, reps=3)
            result = calibrate(replace(smm, targets=targets), seed=5)
        assert len(result.trace) == result.n_evaluations
        assert all(v >= 0 for _, v in result.trace)


class TestMomentFile:
    def test_round_trip(self, tmp_path):
        m = MomentVector(1.5, 0.2, 0.3, 0.4, -0.1, -0.2, -0.3, 0.05)
        se = np.linspace(0.01, 0.08, 8)
        path = tmp_path / "targets.moments"
        save_moment_file(path, m, se)
        loaded, loaded_se = load_moment_file(path)
        assert loaded == m
        assert np.allclose(loaded_se, se)

    def test_shipped_targets_load(self):
        targets, se = load_moment_file("data/targets/synthetic_baseline.moments")
        assert np.isfinite(targets.as_array()).all()
        assert se is not None

    def test_missing_moment_rejected(self, tmp_path):
        path = tmp_path / "bad.moments"
        path.write_text("[moments]\nann_vol = 1.0\n")
        with pytest.raises(ConfigError):
            load_moment_file(path)
