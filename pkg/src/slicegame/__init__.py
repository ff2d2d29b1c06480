"""Nash equilibria of tenant weight competition in sliced mobile networks."""

from slicegame.model import (
    CellSpec,
    MarketState,
    Scenario,
    market_state,
    normalized_capacity,
    revenue_gradient,
    revenue_hessian_diag,
    revenues,
    subscription_ratio,
    tenant_fractions,
)
from slicegame.equilibrium import (
    EquilibriumResult,
    homogeneity_check,
    kkt_residual,
    penetration_bounds,
    proposed_multiplier,
    proposed_solution,
)
from slicegame.abrd import AbrdConfig, abrd, best_response

__version__ = "0.1.0"

__all__ = [
    "AbrdConfig",
    "CellSpec",
    "EquilibriumResult",
    "MarketState",
    "Scenario",
    "abrd",
    "best_response",
    "homogeneity_check",
    "kkt_residual",
    "market_state",
    "normalized_capacity",
    "penetration_bounds",
    "proposed_multiplier",
    "proposed_solution",
    "revenue_gradient",
    "revenue_hessian_diag",
    "revenues",
    "subscription_ratio",
    "tenant_fractions",
]
