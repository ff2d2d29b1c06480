"""Closed-form candidate equilibrium, penetration bounds and KKT checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from slicegame.model import (
    MarketState,
    Scenario,
    check_weights,
    market_state,
    revenue_gradient,
)
from slicegame.rootfind import solve_penetration

HOMOGENEITY_RTOL = 1e-9


@dataclass(frozen=True)
class EquilibriumResult:
    weights: np.ndarray
    state: MarketState
    method: str
    kkt_residual: float
    budget_residual: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return bool(self.diagnostics.get("converged", True))

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "weights": self.weights.tolist(),
            **self.state.to_dict(),
            "kkt_residual": self.kkt_residual,
            "budget_residual": self.budget_residual,
            "diagnostics": _jsonable(self.diagnostics),
        }
        return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def budget_residual(scenario: Scenario, weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(np.max(np.abs(w.sum(axis=1) - scenario.share_array)))


def stationarity_residual(scenario: Scenario, weights) -> np.ndarray:
    """Per-tenant ``max_j |g_j - mean(g)| / mean(g)`` of the revenue gradient."""
    out = np.empty(scenario.num_tenants)
    for i in range(scenario.num_tenants):
        g = revenue_gradient(scenario, weights, i)
        mu = g.mean()
        out[i] = np.max(np.abs(g - mu)) / mu if mu > 0 else 0.0
    return out


def kkt_residual(scenario: Scenario, weights) -> float:
    """Scaled violation of the first-order conditions of every tenant.

    The multiplier of each tenant's budget is estimated as the mean of its
    gradient components, so the value stays meaningful away from equilibrium
    and on heterogeneous cells.  The budget-equality gap is folded in with a
    max since the budget must bind at any optimum.
    """
    w = check_weights(scenario, weights)
    return float(max(stationarity_residual(scenario, w).max(), budget_residual(scenario, w)))


def homogeneity_check(scenario: Scenario) -> bool:
    """True when the closed-form candidate is an exact equilibrium.

    That is the case when no cell has a no-subscription option, or when all
    cells share the same normalized capacity.  A mix of finite and infinite
    normalized capacities is heterogeneous.
    """
    g = scenario.gamma
    if np.all(np.isinf(g)):
        return True
    if np.any(np.isinf(g)):
        return False
    return bool(np.all(np.abs(g - g[0]) <= HOMOGENEITY_RTOL * np.abs(g[0])))


def proposed_sigma(gamma, shares, beta: float) -> np.ndarray:
    """Per-cell ratio at the closed-form candidate; depends only on gamma and shares."""
    sb = np.sum(np.asarray(shares, dtype=float) ** beta)
    with np.errstate(over="ignore"):
        k = np.asarray(gamma, dtype=float) ** beta * sb
    return solve_penetration(k, beta)


def proposed_solution(scenario: Scenario) -> EquilibriumResult:
    """Each tenant splits its share in proportion to the cells' subscriber counts.

    The per-cell subscription ratio is found first, which is possible because
    at this profile it no longer depends on the weights; the fractions are
    ``s_i^beta / sum_t s_t^beta`` in every cell.
    """
    beta = scenario.beta
    s = scenario.share_array
    n = scenario.n_users
    sigma = proposed_sigma(scenario.gamma, s, beta)
    sb = s**beta
    rho_i = sb / sb.sum()
    mass = sigma * n
    weights = s[:, None] * (mass / mass.sum())[None, :]
    # pin the budget against rounding in the normalisation
    weights *= (s / weights.sum(axis=1))[:, None]

    rho = np.tile(rho_i, (scenario.num_cells, 1))
    subscribers = n[:, None] * sigma[:, None] * rho
    x = (weights / weights.sum(axis=0)).T
    allocations = x * scenario.capacity[:, None]
    state = MarketState(
        sigma=sigma,
        rho=rho,
        subscribers=subscribers,
        per_user_resources=allocations / subscribers,
        revenues=scenario.price * subscribers.sum(axis=0),
        allocations=allocations,
    )
    homogeneous = homogeneity_check(scenario)
    diagnostics = {"homogeneous": homogeneous, "exact": homogeneous, "converged": True}
    if homogeneous:
        diagnostics["multipliers"] = [
            proposed_multiplier(scenario, i) for i in range(scenario.num_tenants)
        ]
    return EquilibriumResult(
        weights=weights,
        state=state,
        method="proposed",
        kkt_residual=kkt_residual(scenario, weights),
        budget_residual=budget_residual(scenario, weights),
        diagnostics=diagnostics,
    )


def proposed_multiplier(scenario: Scenario, tenant: int) -> float:
    """Budget multiplier of ``tenant`` at the candidate on homogeneous cells.

    Raises:
        ValueError: if the cells are not homogeneous, where no closed form holds.
    """
    if not homogeneity_check(scenario):
        raise ValueError("closed-form multiplier requires homogeneous cells")
    beta = scenario.beta
    s = scenario.share_array
    sigma = float(proposed_sigma(scenario.gamma[:1], s, beta)[0])
    rho = s[tenant] ** beta / np.sum(s**beta)
    n = scenario.n_users.sum()
    si = s[tenant]
    lead = scenario.price * beta * n * sigma * rho / (si * (1.0 - beta * sigma))
    return float(lead * ((1.0 - beta) * (1.0 - rho) * sigma + (1.0 - si) * (1.0 - sigma)))


def penetration_bounds(gamma: float, beta: float, num_tenants: int) -> tuple[float, float]:
    """Smallest and largest equilibrium subscription ratio over all share vectors.

    The maximum is reached with equal shares and the minimum with a single
    tenant holding everything.
    """
    if num_tenants < 1:
        raise ValueError("num_tenants must be positive")
    if math.isinf(gamma):
        return 1.0, 1.0
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    base = gamma**beta
    lo, hi = solve_penetration(np.array([base, num_tenants ** (1.0 - beta) * base]), beta)
    if num_tenants == 1:
        hi = lo
    return float(lo), float(hi)


def verify_proposed_state(scenario: Scenario, result: EquilibriumResult) -> float:
    """Largest relative gap between the closed-form state and a fresh evaluation."""
    fresh = market_state(scenario, result.weights)
    gaps = [
        np.max(np.abs(fresh.sigma - result.state.sigma) / result.state.sigma),
        np.max(np.abs(fresh.rho - result.state.rho) / result.state.rho),
        np.max(np.abs(fresh.revenues - result.state.revenues) / result.state.revenues),
    ]
    return float(max(gaps))
