"""Asynchronous best-response dynamics.

Tenants re-optimise one at a time, in a fresh random order every round,
until no weight moves by more than the tolerance over a full round.  Each
best response maximises the tenant's revenue with the budget imposed as an
equality; the competitors' weights enter only through per-cell sums, so an
evaluation costs one vectorised root solve over the cells.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, TextIO

import numpy as np

from slicegame.equilibrium import EquilibriumResult, budget_residual, kkt_residual
from slicegame.model import (
    WEIGHT_FLOOR,
    Scenario,
    gradient_terms,
    hessian_terms,
    market_state,
    own_cell_terms,
)

BR_STATIONARITY = 1e-9
BR_METHODS = ("gradient", "heuristic")


@dataclass(frozen=True)
class AbrdConfig:
    """Settings of an ABRD run.

    ``br_iters`` bounds the optimiser inside a single best response: Newton
    iterations for ``gradient``, generations for ``heuristic``.
    """

    tolerance: float = 1e-8
    max_rounds: int = 500
    rng_seed: int = 0
    br_method: str = "gradient"
    br_iters: int = 200
    cuckoo_population: int = 25
    cuckoo_discovery: float = 0.25
    cuckoo_levy_exponent: float = 1.5

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")
        if self.br_iters < 1:
            raise ValueError("br_iters must be at least 1")
        if self.br_method not in BR_METHODS:
            raise ValueError(f"br_method must be one of {BR_METHODS}")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")
        if self.cuckoo_population < 2:
            raise ValueError("cuckoo_population must be at least 2")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> AbrdConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"abrd config: unknown fields {sorted(unknown)}")
        return cls(**data)


@dataclass
class BestResponse:
    weights: np.ndarray
    revenue: float
    iterations: int
    converged: bool
    stationarity: float


class _TenantRevenue:
    """Revenue of one tenant as a function of its own per-cell weights."""

    def __init__(self, scenario: Scenario, others: np.ndarray):
        beta = scenario.beta
        self.beta = beta
        self.price = scenario.price
        self.n = scenario.n_users
        self.gamma = scenario.gamma
        others = np.maximum(np.asarray(others, dtype=float).reshape(-1, scenario.num_cells),
                            WEIGHT_FLOOR)
        self.others_sum = others.sum(axis=0)
        self.others_beta_sum = (others**beta).sum(axis=0)

    def terms(self, own):
        return own_cell_terms(own, self.others_sum, self.others_beta_sum, self.gamma, self.beta)

    def revenue(self, own) -> np.ndarray:
        sigma, rho, _ = self.terms(own)
        return self.price * np.sum(self.n * sigma * rho, axis=-1)

    def derivatives(self, own):
        sigma, rho, x = self.terms(own)
        own = np.maximum(own, WEIGHT_FLOOR)
        args = (self.price, self.beta, self.n, own, sigma, rho, x)
        value = self.price * np.sum(self.n * sigma * rho)
        return value, gradient_terms(*args), hessian_terms(*args)


def project_to_budget(v: np.ndarray, budget: float, floor: float = WEIGHT_FLOOR) -> np.ndarray:
    """Euclidean projection onto ``{w >= floor, sum(w) = budget}`` (last axis)."""
    v = np.asarray(v, dtype=float)
    m = v.shape[-1]
    z = budget - m * floor
    shifted = v - floor
    u = np.sort(shifted, axis=-1)[..., ::-1]
    css = np.cumsum(u, axis=-1) - z
    ind = np.arange(1, m + 1)
    cond = u - css / ind > 0
    r = np.count_nonzero(cond, axis=-1)
    theta = np.take_along_axis(css, (r - 1)[..., None], axis=-1) / r[..., None]
    return np.maximum(shifted - theta, 0.0) + floor


def _feasible_start(start, budget: float, num_cells: int) -> np.ndarray:
    if start is None:
        return np.full(num_cells, budget / num_cells)
    w = np.maximum(np.asarray(start, dtype=float), WEIGHT_FLOOR)
    return w * (budget / w.sum())


def _stationarity(g: np.ndarray) -> tuple[float, float]:
    mu = float(g.mean())
    return float(np.max(np.abs(g - mu))), mu


def _gradient_best_response(obj: _TenantRevenue, budget: float, start, max_iter: int):
    """Diagonally scaled projected ascent with backtracking.

    The Hessian in the own weights is diagonal, so where every diagonal term
    is negative the step is the exact Newton step on the budget plane.  Cells
    with non-negative curvature fall back to a gradient scaling ``|g|/w``.
    """
    w = start.copy()
    value, g, h = obj.derivatives(w)
    initial = (w.copy(), value)
    dev, mu = _stationarity(g)
    it = 0
    converged = mu <= 0 or dev <= BR_STATIONARITY * mu
    while not converged and it < max_iter:
        it += 1
        d = np.where(h < 0, -h, np.abs(g) / w)
        lam = np.sum(g / d) / np.sum(1.0 / d)
        step = (g - lam) / d
        slope = float(g @ step)
        shrinking = step < 0
        t = 1.0
        if shrinking.any():
            t = min(1.0, 0.95 * float(np.min((w[shrinking] - WEIGHT_FLOOR) / -step[shrinking])))
        slack = 8 * np.finfo(float).eps * abs(value)
        accepted = False
        while t > 1e-14:
            trial = w + t * step
            trial *= budget / trial.sum()
            tv = float(obj.revenue(trial))
            if tv >= value + 1e-4 * t * slope - slack:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        w = trial
        value, g, h = obj.derivatives(w)
        dev, mu = _stationarity(g)
        converged = dev <= BR_STATIONARITY * mu
    if value < initial[1]:
        w, value = initial
        _, g, _ = obj.derivatives(w)
        dev, mu = _stationarity(g)
    return w, value, it, converged, dev / mu if mu > 0 else 0.0


def _levy_scale(exponent: float) -> float:
    num = math.gamma(1 + exponent) * math.sin(math.pi * exponent / 2)
    den = math.gamma((1 + exponent) / 2) * exponent * 2 ** ((exponent - 1) / 2)
    return (num / den) ** (1 / exponent)


def _cuckoo_best_response(obj: _TenantRevenue, budget: float, start, config: AbrdConfig,
                          rng: np.random.Generator):
    """Cuckoo search over the first ``|B| - 1`` weights; the last one closes the budget.

    Candidates leaving the feasible region are projected back onto the
    budget plane.  The incumbent is seeded into the population so the result
    never does worse than the starting point.
    """
    m = len(start)
    npop = config.cuckoo_population
    lam = config.cuckoo_levy_exponent
    sig_u = _levy_scale(lam)

    def complete(free):
        last = budget - free.sum(axis=-1, keepdims=True)
        full = np.concatenate([free, last], axis=-1)
        bad = np.any(full < WEIGHT_FLOOR, axis=-1)
        if bad.any():
            full[bad] = project_to_budget(full[bad], budget)
        return full

    nests = project_to_budget(rng.dirichlet(np.ones(m), size=npop) * budget, budget)
    nests[0] = start
    fitness = obj.revenue(nests)
    best = int(np.argmax(fitness))
    step_scale = 0.01 * budget
    for _ in range(config.br_iters):
        u = rng.normal(0.0, sig_u, size=(npop, m - 1))
        v = rng.normal(0.0, 1.0, size=(npop, m - 1))
        levy = u / np.abs(v) ** (1 / lam)
        free = nests[:, :-1] + step_scale * levy * (nests[:, :-1] - nests[best, :-1] + 1e-3 * budget)
        trial = complete(free)
        tf = obj.revenue(trial)
        better = tf > fitness
        nests[better], fitness[better] = trial[better], tf[better]

        discover = rng.random((npop, m - 1)) < config.cuckoo_discovery
        p1, p2 = rng.permutation(npop), rng.permutation(npop)
        jump = rng.random((npop, 1)) * (nests[p1, :-1] - nests[p2, :-1])
        free = nests[:, :-1] + discover * jump
        trial = complete(free)
        tf = obj.revenue(trial)
        better = tf > fitness
        nests[better], fitness[better] = trial[better], tf[better]
        best = int(np.argmax(fitness))
        step_scale = max(step_scale * 0.995, 1e-6 * budget)

    w = nests[best]
    value, g, _ = obj.derivatives(w)
    dev, mu = _stationarity(g)
    rel = dev / mu if mu > 0 else 0.0
    return w, float(value), config.br_iters, rel <= BR_STATIONARITY, rel


def best_response(
    scenario: Scenario,
    tenant: int,
    others_weights,
    config: AbrdConfig | None = None,
    start=None,
    rng: np.random.Generator | None = None,
) -> BestResponse:
    """Revenue-maximising weights of ``tenant`` against fixed competitors.

    Args:
        scenario: the game instance.
        tenant: index of the optimising tenant.
        others_weights: ``(tenants - 1, cells)`` weights of everyone else, in
            tenant order with ``tenant`` removed.
        config: optimiser choice and iteration budget.
        start: warm start; rescaled onto the budget.  Defaults to an even
            split over the cells.
        rng: random source for the heuristic; defaults to one seeded from
            ``config.rng_seed``.

    Returns:
        A :class:`BestResponse` whose weights sum exactly to the tenant's share.
        ``converged`` is False when the optimiser ran out of iterations before
        the projected gradient fell below ``1e-9`` of the mean gradient.
    """
    config = config or AbrdConfig()
    budget = scenario.shares[tenant]
    m = scenario.num_cells
    obj = _TenantRevenue(scenario, others_weights)
    if m == 1:
        w = np.array([budget])
        return BestResponse(w, float(obj.revenue(w)), 0, True, 0.0)
    w0 = _feasible_start(start, budget, m)
    if config.br_method == "gradient":
        w, value, it, ok, stat = _gradient_best_response(obj, budget, w0, config.br_iters)
    else:
        if rng is None:
            rng = np.random.default_rng(config.rng_seed)
        w, value, it, ok, stat = _cuckoo_best_response(obj, budget, w0, config, rng)
    return BestResponse(w, float(value), it, ok, stat)


def abrd(
    scenario: Scenario,
    config: AbrdConfig | None = None,
    trajectory: TextIO | Callable[[int, np.ndarray], None] | None = None,
) -> EquilibriumResult:
    """Iterate best responses in random order until the weights settle.

    Every tenant starts from an even split of its share over the cells.  A
    non-converged run is still returned, with ``diagnostics["converged"]``
    set to False.

    Args:
        scenario: the game instance.
        config: solver settings; defaults to :class:`AbrdConfig()`.
        trajectory: optional sink for per-round weights, either a text stream
            receiving JSON lines or a callable ``(round, weights)``.
    """
    config = config or AbrdConfig()
    rng = np.random.default_rng(config.rng_seed)
    s = scenario.share_array
    num_tenants, num_cells = scenario.num_tenants, scenario.num_cells
    w = np.repeat((s / num_cells)[:, None], num_cells, axis=1)

    converged = False
    change = math.inf
    rounds = 0
    br_unconverged = 0
    br_iterations = 0
    for rounds in range(1, config.max_rounds + 1):
        change = 0.0
        for i in rng.permutation(num_tenants):
            br = best_response(scenario, int(i), np.delete(w, i, axis=0), config,
                               start=w[i], rng=rng)
            change = max(change, float(np.max(np.abs(br.weights - w[i]))))
            w[i] = br.weights
            br_iterations += br.iterations
            br_unconverged += not br.converged
        if trajectory is not None:
            if callable(trajectory):
                trajectory(rounds, w.copy())
            else:
                trajectory.write(json.dumps({"round": rounds, "max_change": change,
                                             "weights": w.tolist()}) + "\n")
        if change < config.tolerance:
            converged = True
            break

    return EquilibriumResult(
        weights=w,
        state=market_state(scenario, w),
        method="abrd",
        kkt_residual=kkt_residual(scenario, w),
        budget_residual=budget_residual(scenario, w),
        diagnostics={
            "converged": converged,
            "rounds": rounds,
            "max_change": change,
            "best_response_iterations": br_iterations,
            "best_response_unconverged": br_unconverged,
            "config": config.to_dict(),
        },
    )
