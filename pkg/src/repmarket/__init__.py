"""Seed-reproducible multi-agent market simulator for studying how shared
feature representations in algorithmic trading populations propagate into
synchronized positions, order-flow concentration, liquidity stress, and
tail risk."""

from .core import (
    AgentParams,
    AgentState,
    AsyncSpec,
    ConfigError,
    DealerState,
    DriftSpec,
    MarketState,
    NumericFault,
    PopulationSpec,
    PricingParams,
    RunConfig,
    RunStreams,
    ShockSpec,
    VolEstimator,
    build_state,
    load_config,
    save_config,
    seeded_rng,
    stream_id,
)
from .metrics import OutcomeRecord, ReferenceMeasure
from .simulation import Trajectories, simulate_paths

__version__ = "0.1.0"
