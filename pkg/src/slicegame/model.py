"""Game instance and model quantities.

Cells are indexed by ``j`` and tenants by ``i``.  Weight profiles are
``(tenants, cells)`` arrays; per-cell market quantities in
:class:`MarketState` are cell-major, ``(cells, tenants)``.

A cell with ``r0 == 0`` has infinite normalized capacity and every user in
it subscribes; that regime is carried as ``gamma = inf`` everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from slicegame.rootfind import penetration_residual, solve_penetration

WEIGHT_FLOOR = 1e-12
SHARE_TOL = 1e-12
BUDGET_TOL = 1e-12


@dataclass(frozen=True)
class CellSpec:
    n_users: int
    capacity: float
    r0: float

    def __post_init__(self):
        if int(self.n_users) != self.n_users or self.n_users < 1:
            raise ValueError(f"n_users must be a positive integer, got {self.n_users!r}")
        if not self.capacity > 0 or not math.isfinite(self.capacity):
            raise ValueError(f"capacity must be positive and finite, got {self.capacity!r}")
        if not self.r0 >= 0 or not math.isfinite(self.r0):
            raise ValueError(f"r0 must be non-negative and finite, got {self.r0!r}")


@dataclass(frozen=True)
class Scenario:
    """Immutable game instance.

    Attributes:
        cells: the cells of the network, in a fixed order.
        shares: each tenant's share of total resources; sums to one.
        price: flat subscription price (the no-subscription price is 1).
        alpha: user sensitivity to the resources-to-price ratio.
    """

    cells: tuple[CellSpec, ...]
    shares: tuple[float, ...]
    price: float = 1.0
    alpha: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        object.__setattr__(self, "shares", tuple(float(s) for s in self.shares))
        if not self.cells:
            raise ValueError("scenario needs at least one cell")
        if not self.shares:
            raise ValueError("scenario needs at least one tenant")
        if any(not s > 0 for s in self.shares):
            raise ValueError("every share must be strictly positive")
        if abs(math.fsum(self.shares) - 1.0) > SHARE_TOL:
            raise ValueError(f"shares must sum to 1, got {math.fsum(self.shares)!r}")
        if not self.price > 0:
            raise ValueError("price must be positive")
        if not self.alpha > 0 or not math.isfinite(self.alpha):
            raise ValueError("alpha must be positive and finite")

    @classmethod
    def from_gamma(
        cls,
        gamma: Sequence[float | None],
        shares: Sequence[float],
        alpha: float,
        n_users: Sequence[int] | int = 100,
        price: float = 1.0,
    ) -> Scenario:
        """Build a scenario from normalized capacities.

        ``r0`` is fixed to 1 and the capacity back-solved from gamma.  A gamma
        of ``None`` or ``inf`` means ``r0 = 0``; the capacity is then set to
        ``n_users * price`` (one resource unit per user per monetary unit),
        which only affects per-user resources.
        """
        if isinstance(n_users, (int, np.integer)):
            n_users = [int(n_users)] * len(gamma)
        if len(n_users) != len(gamma):
            raise ValueError("gamma and n_users lengths differ")
        cells = []
        for g, n in zip(gamma, n_users):
            if g is None or math.isinf(g):
                cells.append(CellSpec(int(n), float(n) * price, 0.0))
            else:
                if not g > 0:
                    raise ValueError(f"gamma must be positive, got {g!r}")
                cells.append(CellSpec(int(n), float(g) * n * price, 1.0))
        return cls(tuple(cells), tuple(shares), price, alpha)

    @property
    def num_tenants(self) -> int:
        return len(self.shares)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @cached_property
    def beta(self) -> float:
        return self.alpha / (self.alpha + 1.0)

    @cached_property
    def gamma(self) -> np.ndarray:
        g = np.array([normalized_capacity(c, self.price) for c in self.cells])
        g.setflags(write=False)
        return g

    @cached_property
    def n_users(self) -> np.ndarray:
        n = np.array([c.n_users for c in self.cells], dtype=float)
        n.setflags(write=False)
        return n

    @cached_property
    def capacity(self) -> np.ndarray:
        c = np.array([c.capacity for c in self.cells], dtype=float)
        c.setflags(write=False)
        return c

    @cached_property
    def share_array(self) -> np.ndarray:
        s = np.array(self.shares)
        s.setflags(write=False)
        return s

    def to_dict(self) -> dict:
        return {
            "cells": [
                {"n_users": c.n_users, "capacity": c.capacity, "r0": c.r0}
                for c in self.cells
            ],
            "shares": list(self.shares),
            "price": self.price,
            "alpha": self.alpha,
        }

    @classmethod
    def from_dict(cls, data: dict) -> Scenario:
        """Parse the JSON scenario schema.

        Each cell is either ``{n_users, capacity, r0}`` or ``{n_users, gamma}``
        with ``gamma: null`` standing for ``r0 = 0``.
        """
        for key in ("cells", "shares", "alpha"):
            if key not in data:
                raise ValueError(f"scenario: missing field {key!r}")
        price = float(data.get("price", 1.0))
        cells = []
        for idx, raw in enumerate(data["cells"]):
            where = f"scenario: cells[{idx}]"
            if not isinstance(raw, dict) or "n_users" not in raw:
                raise ValueError(f"{where}: expected an object with 'n_users'")
            try:
                if "gamma" in raw:
                    g = raw["gamma"]
                    tmp = cls.from_gamma([None if g is None else float(g)], [1.0],
                                         1.0, [raw["n_users"]], price)
                    cells.append(tmp.cells[0])
                else:
                    if "capacity" not in raw or "r0" not in raw:
                        raise ValueError("expected 'capacity' and 'r0' or 'gamma'")
                    cells.append(CellSpec(raw["n_users"], float(raw["capacity"]),
                                          float(raw["r0"])))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{where}: {exc}") from exc
        return cls(tuple(cells), tuple(float(s) for s in data["shares"]), price,
                   float(data["alpha"]))


@dataclass(frozen=True)
class MarketState:
    """Market outcome of a weight profile; cell-major arrays."""

    sigma: np.ndarray
    rho: np.ndarray
    subscribers: np.ndarray
    per_user_resources: np.ndarray
    revenues: np.ndarray
    allocations: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma.tolist(),
            "rho": self.rho.tolist(),
            "subscribers": self.subscribers.tolist(),
            "per_user_resources": self.per_user_resources.tolist(),
            "revenues": self.revenues.tolist(),
        }


def normalized_capacity(cell: CellSpec, price: float) -> float:
    """Capacity per user per monetary unit, relative to ``r0``; inf if r0 = 0."""
    if cell.r0 == 0:
        return math.inf
    return cell.capacity / (cell.n_users * price * cell.r0)


def subscription_ratio(cell_weights, gamma: float, beta: float) -> float:
    """Fraction of a cell's users that subscribe to some tenant."""
    w = np.maximum(np.asarray(cell_weights, dtype=float), WEIGHT_FLOOR)
    if math.isinf(gamma):
        return 1.0
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    k = gamma**beta * np.sum(w**beta) / np.sum(w) ** beta
    return float(solve_penetration(k, beta))


def penetration_coefficient(weights: np.ndarray, gamma, beta: float) -> np.ndarray:
    """Per-cell coefficient ``gamma^b * sum(w^b) / sum(w)^b``; ``weights`` is (tenants, cells)."""
    w = np.maximum(weights, WEIGHT_FLOOR)
    with np.errstate(over="ignore"):
        return np.asarray(gamma) ** beta * np.sum(w**beta, axis=0) / np.sum(w, axis=0) ** beta


def tenant_fractions(cell_weights, beta: float) -> np.ndarray:
    """Split of a cell's subscribers between tenants."""
    w = np.maximum(np.asarray(cell_weights, dtype=float), WEIGHT_FLOOR)
    # rescaling first keeps w**beta away from underflow; the result is scale free
    w = w / w.max()
    wb = w**beta
    return wb / wb.sum()


def check_weights(scenario: Scenario, weights) -> np.ndarray:
    """Validate a ``(tenants, cells)`` weight profile and return it as floats."""
    w = np.array(weights, dtype=float)
    expected = (scenario.num_tenants, scenario.num_cells)
    if w.shape != expected:
        raise ValueError(f"weights shape {w.shape} does not match {expected}")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("weights must be finite and strictly positive")
    over = w.sum(axis=1) - scenario.share_array
    if np.any(over > BUDGET_TOL):
        i = int(np.argmax(over))
        raise ValueError(f"tenant {i} exceeds its share by {over[i]:.3g}")
    return w


def market_state(scenario: Scenario, weights) -> MarketState:
    w = np.maximum(check_weights(scenario, weights), WEIGHT_FLOOR)
    beta = scenario.beta
    sigma = solve_penetration(penetration_coefficient(w, scenario.gamma, beta), beta)
    wn = w / w.max(axis=0)
    wb = wn**beta
    rho = (wb / wb.sum(axis=0)).T
    n = scenario.n_users[:, None]
    subscribers = n * sigma[:, None] * rho
    x = (w / w.sum(axis=0)).T
    allocations = x * scenario.capacity[:, None]
    with np.errstate(divide="ignore"):
        per_user = allocations / subscribers
    revenue = scenario.price * subscribers.sum(axis=0)
    return MarketState(sigma, rho, subscribers, per_user, revenue, allocations)


def revenues(scenario: Scenario, weights) -> np.ndarray:
    return market_state(scenario, weights).revenues


def own_cell_terms(own, others_sum, others_beta_sum, gamma, beta):
    """Per-cell ``(sigma, rho, x)`` for one tenant as a function of its own weights.

    ``others_sum`` and ``others_beta_sum`` are the sums of the competitors'
    weights and of their ``beta`` powers in each cell.  Splitting the
    profile this way lets a best response re-evaluate only what changes.
    """
    own = np.maximum(own, WEIGHT_FLOOR)
    ob = own**beta
    total = own + others_sum
    total_b = ob + others_beta_sum
    with np.errstate(over="ignore"):
        k = np.asarray(gamma) ** beta * total_b / total**beta
    sigma = solve_penetration(k, beta)
    return sigma, ob / total_b, own / total


def _tenant_terms(scenario: Scenario, weights, tenant: int):
    w = np.maximum(check_weights(scenario, weights), WEIGHT_FLOOR)
    own = w[tenant]
    others = np.delete(w, tenant, axis=0)
    beta = scenario.beta
    sigma, rho, x = own_cell_terms(
        own, others.sum(axis=0), (others**beta).sum(axis=0), scenario.gamma, beta
    )
    return own, sigma, rho, x


def gradient_terms(price, beta, n, own, sigma, rho, x):
    """Closed-form d(revenue)/d(own weight) per cell."""
    lead = price * beta * n * sigma * rho / (own * (1.0 - beta * sigma))
    return lead * ((1.0 - beta) * (1.0 - rho) * sigma + (1.0 - x) * (1.0 - sigma))


def hessian_terms(price, beta, n, own, sigma, rho, x):
    """Closed-form second derivative of revenue in each own weight."""
    lead = price * beta * n * sigma * rho / own**2
    d = 1.0 - beta * sigma
    q = (1.0 - sigma) / d
    inner = (
        (rho - x) ** 2 * (beta / d) * (q - sigma)
        + x**2
        + beta * (1.0 - rho) * (3.0 * rho - 2.0 * x)
        - rho
    )
    return lead * (q * inner - (1.0 - rho) * (1.0 - beta + 2.0 * beta * rho))


def revenue_gradient(scenario: Scenario, weights, tenant: int) -> np.ndarray:
    """Partial derivatives of ``tenant``'s revenue in its own per-cell weights.

    Every component is strictly positive, so at an optimum the budget binds.
    """
    own, sigma, rho, x = _tenant_terms(scenario, weights, tenant)
    return gradient_terms(scenario.price, scenario.beta, scenario.n_users, own, sigma, rho, x)


def revenue_hessian_diag(scenario: Scenario, weights, tenant: int) -> np.ndarray:
    """Diagonal of the revenue Hessian in the tenant's own weights.

    A cell's ratio and fractions depend only on the weights in that cell, so
    revenue is additively separable over cells and the mixed partials
    ``d2/(dw_j dw_k)`` for ``j != k`` are identically zero: the diagonal is
    the whole Hessian.
    """
    own, sigma, rho, x = _tenant_terms(scenario, weights, tenant)
    return hessian_terms(scenario.price, scenario.beta, scenario.n_users, own, sigma, rho, x)


def penetration_root_residual(scenario: Scenario, weights, sigma) -> np.ndarray:
    """Residual of the per-cell ratio equation at ``sigma``; zero where gamma is inf."""
    w = check_weights(scenario, weights)
    k = penetration_coefficient(w, scenario.gamma, scenario.beta)
    res = np.zeros(len(k))
    finite = np.isfinite(k)
    res[finite] = penetration_residual(np.asarray(sigma)[finite], k[finite], scenario.beta)
    res[~finite] = np.asarray(sigma)[~finite] - 1.0
    return res
