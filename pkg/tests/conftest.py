import numpy as np
import pytest

from repmarket.core import PricingParams, RunConfig


@pytest.fixture
def fast_cfg() -> RunConfig:
    """Small, quick baseline: 20 agents, 800 steps."""
    return RunConfig(n_steps=800, seed=1234)


@pytest.fixture
def tame_cfg() -> RunConfig:
    """Weak-amplification pricing that keeps even degenerate populations
    (identical agents, linear activations) numerically stable."""
    return RunConfig(
        n_steps=800,
        seed=1234,
        pricing=PricingParams(
            lambda0=0.01, alpha_lambda=0.5, beta_lambda=0.5,
            psi0=0.005, alpha_psi=0.5, beta_psi=0.5,
            kappa=0.1, sigma_eps=0.5,
        ),
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20260810)
