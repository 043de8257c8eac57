"""Reduced-form pricing block: random-walk fundamental, inventory-sensitive
liquidity coefficients, price formation, and the shock generators.

The dealer absorbs the period's aggregate net order flow, so its inventory
falls by the flow it takes the other side of.  Both the temporary impact
coefficient and the inventory premium respond to *lagged* inventory through
a saturating rational term, which bounds them between the baseline value and
``base * (1 + alpha/beta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DealerState, NumericFault, PricingParams, ShockSpec

__all__ = [
    "StepResult",
    "draw_shock",
    "draw_shocks",
    "liquidity_coefs",
    "price_step",
    "symmetric_stable",
]


@dataclass(frozen=True)
class StepResult:
    """One period's market outcome: the new price, the price change relative
    to the previous close, the absorbed flow, and the dealer-side series."""

    price: float
    ret: float
    flow: float
    inventory: float
    lambda_coef: float
    psi_coef: float


def liquidity_coefs(prev_inventory: float, pricing: PricingParams) -> tuple[float, float]:
    """Impact and inventory-premium coefficients from lagged dealer inventory.

    ``lam = lambda0 * (1 + alpha_lambda * I^2 / (1 + beta_lambda * I^2))``
    and analogously for ``psi``.  Both saturate as ``|I| -> inf``.
    """
    i2 = prev_inventory * prev_inventory
    lam = pricing.lambda0 * (1.0 + pricing.alpha_lambda * i2 / (1.0 + pricing.beta_lambda * i2))
    psi = pricing.psi0 * (1.0 + pricing.alpha_psi * i2 / (1.0 + pricing.beta_psi * i2))
    return lam, psi


def price_step(
    dealer: DealerState,
    flow: float,
    shock: float,
    pricing: PricingParams,
) -> tuple[DealerState, StepResult]:
    """Advance the dealer one period after absorbing ``flow``.

    ``dealer.lambda_coef``/``psi_coef`` must already hold this period's
    coefficients (computed from the *previous* inventory, or pinned to the
    baselines under the constant-liquidity control).  The new price is

        ``P = F' + lam * flow - psi * I'``

    with ``F' = F + shock`` and ``I' = I - flow``.
    """
    if not (math.isfinite(flow) and math.isfinite(shock)):
        raise NumericFault(f"non-finite engine input: flow={flow}, shock={shock}")
    fundamental = dealer.fundamental + shock
    inventory = dealer.inventory - flow
    price = fundamental + dealer.lambda_coef * flow - dealer.psi_coef * inventory
    if not math.isfinite(price):
        raise NumericFault(f"non-finite price: {price}")
    new_dealer = DealerState(
        fundamental=fundamental,
        inventory=inventory,
        price=price,
        lambda_coef=dealer.lambda_coef,
        psi_coef=dealer.psi_coef,
    )
    result = StepResult(
        price=price,
        ret=price - dealer.price,
        flow=flow,
        inventory=inventory,
        lambda_coef=dealer.lambda_coef,
        psi_coef=dealer.psi_coef,
    )
    return new_dealer, result


# ---------------------------------------------------------------------------
# Shock generators
# ---------------------------------------------------------------------------

def symmetric_stable(
    alpha: float, size: int, rng: np.random.Generator
) -> np.ndarray:
    """Standard symmetric alpha-stable variates via the Chambers-Mallows-Stuck
    construction.

    At ``alpha = 2`` this reduces to N(0, 2); at ``alpha = 1`` to standard
    Cauchy.
    """
    if not 0 < alpha <= 2:
        raise ValueError(f"alpha must lie in (0, 2], got {alpha}")
    u = rng.uniform(-np.pi / 2.0, np.pi / 2.0, size=size)
    w = rng.exponential(1.0, size=size)
    if alpha == 1.0:
        return np.tan(u)
    au = alpha * u
    return (
        np.sin(au)
        / np.cos(u) ** (1.0 / alpha)
        * (np.cos(u - au) / w) ** ((1.0 - alpha) / alpha)
    )


def draw_shocks(spec: ShockSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    """Vector of fundamental innovations for ``size`` periods.

    Draw order is fixed (normals, then arrival uniforms, then stable pairs)
    so a given stream always produces the same path.
    """
    eps = rng.normal(0.0, spec.sigma_eps, size=size)
    if spec.kind == "stable_jump":
        arrivals = rng.uniform(size=size) < spec.jump_intensity
        jumps = spec.stable_scale * symmetric_stable(spec.stable_alpha, size, rng)
        eps = eps + np.where(arrivals, jumps, 0.0)
    return eps


def draw_shock(spec: ShockSpec, rng: np.random.Generator) -> float:
    """Single fundamental innovation (scalar convenience over draw_shocks)."""
    return float(draw_shocks(spec, rng, 1)[0])
