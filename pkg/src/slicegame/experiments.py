"""Scenario families, Monte Carlo deviation studies and plot sweeps.

Every replication draws from its own generator seeded by
``(family seed, replication index)``, so results do not depend on the
order or the parallelism with which replications are evaluated.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from slicegame.abrd import AbrdConfig, abrd
from slicegame.equilibrium import penetration_bounds, proposed_sigma, proposed_solution
from slicegame.model import Scenario
from slicegame.rootfind import solve_penetration

GAMMA_FLOOR = 1e-9
SIGMA_BIN_WIDTH = 0.1
RHO_BIN_WIDTH = 0.5

HET_GAMMA = (0.25, 0.5, 1.0, 2.0, 4.0)
HET_USERS = (100, 200, 300, 400, 500)
HET_ALPHA = 3.0


@dataclass(frozen=True)
class ScenarioFamily:
    num_tenants: int
    num_cells: int
    alpha: float
    gamma_range: tuple[float, float]
    replications: int = 1000
    rng_seed: int = 0
    min_share: float = 0.1
    n_users: int = 100
    price: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "gamma_range", tuple(float(g) for g in self.gamma_range))
        gmin, gmax = self.gamma_range
        if self.num_tenants < 1 or self.num_cells < 1:
            raise ValueError("num_tenants and num_cells must be positive")
        if not 0 <= gmin <= gmax:
            raise ValueError("gamma_range must satisfy 0 <= gmin <= gmax")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.replications < 1:
            raise ValueError("replications must be positive")
        if not 0 <= self.min_share or self.num_tenants * self.min_share > 1 + 1e-12:
            raise ValueError("min_share must lie in [0, 1/num_tenants]")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gamma_range"] = list(self.gamma_range)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> ScenarioFamily:
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"family: unknown fields {sorted(unknown)}")
        return cls(**data)


def replication_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index), int(stream)])


def sample_shares(rng: np.random.Generator, num_tenants: int, min_share: float) -> np.ndarray:
    """Uniform draw from the simplex with every coordinate at least ``min_share``.

    The shrunken simplex is an affine image of the full one, so a flat
    Dirichlet sample mapped through it stays uniform.
    """
    d = rng.dirichlet(np.ones(num_tenants))
    s = min_share + (1.0 - num_tenants * min_share) * d
    return s / s.sum()


def gen_scenario(family: ScenarioFamily, replication_index: int) -> Scenario:
    rng = replication_rng(family.rng_seed, replication_index)
    gmin, gmax = family.gamma_range
    gamma = np.maximum(rng.uniform(gmin, gmax, family.num_cells), GAMMA_FLOOR)
    shares = sample_shares(rng, family.num_tenants, family.min_share)
    return Scenario.from_gamma(gamma, shares, family.alpha, family.n_users, family.price)


def nearest_rank(values, q: float) -> float:
    """Nearest-rank percentile: the ``ceil(q/100 * N)``-th smallest value."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        return math.nan
    return float(np.percentile(v, q, method="inverted_cdf"))


def histogram(values, width: float) -> list[tuple[float, float, int]]:
    """Counts in fixed-width bins aligned on zero, as ``(left, right, count)``."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        return []
    lo = math.floor(v.min() / width)
    hi = math.floor(v.max() / width) + 1
    edges = np.arange(lo, hi + 1) * width
    counts, _ = np.histogram(v, bins=edges)
    return [(float(a), float(b), int(c)) for a, b, c in zip(edges[:-1], edges[1:], counts)]


def relative_deviations(proposed, reference):
    """``(eps_rho, eps_sigma)`` of the closed form against an equilibrium.

    ``eps_rho`` is ``(cells, tenants)`` and compares the cell-constant
    fraction of the closed form with each cell's equilibrium fraction.
    """
    eps_rho = (proposed.state.rho - reference.state.rho) / reference.state.rho
    eps_sigma = (proposed.state.sigma - reference.state.sigma) / reference.state.sigma
    return eps_rho, eps_sigma


@dataclass
class DeviationReport:
    """Signed relative deviations pooled over replications, cells and tenants.

    ``eps_rho`` has shape ``(replications, cells, tenants)`` and ``eps_sigma``
    ``(replications, cells)``; replications whose ABRD run did not converge
    are dropped and listed in ``failed``.
    """

    family: ScenarioFamily
    replications: list[int]
    eps_rho: np.ndarray
    eps_sigma: np.ndarray
    gammas: np.ndarray
    failed: list[int] = field(default_factory=list)
    sigma_bin_width: float = SIGMA_BIN_WIDTH
    rho_bin_width: float = RHO_BIN_WIDTH

    @property
    def percentiles(self) -> dict:
        """P90/P95 of ``|eps| * 100``."""
        out = {}
        for name, eps in (("rho", self.eps_rho), ("sigma", self.eps_sigma)):
            a = 100 * np.abs(eps)
            out[name] = {"P90": nearest_rank(a, 90), "P95": nearest_rank(a, 95)}
        return out

    @property
    def per_tenant_percentiles(self) -> list[dict]:
        return [
            {
                "P90": nearest_rank(100 * np.abs(self.eps_rho[..., i]), 90),
                "P95": nearest_rank(100 * np.abs(self.eps_rho[..., i]), 95),
            }
            for i in range(self.family.num_tenants)
        ]

    @property
    def histograms(self) -> dict:
        return {
            "sigma": histogram(100 * self.eps_sigma, self.sigma_bin_width),
            "rho": histogram(100 * self.eps_rho, self.rho_bin_width),
        }

    def records(self) -> list[dict]:
        rows = []
        for k, rep in enumerate(self.replications):
            for j in range(self.eps_sigma.shape[1]):
                rows.append({"replication": rep, "metric": "sigma", "tenant": "",
                             "cell": j, "gamma": float(self.gammas[k, j]),
                             "eps": float(self.eps_sigma[k, j])})
                for i in range(self.eps_rho.shape[2]):
                    rows.append({"replication": rep, "metric": "rho", "tenant": i,
                                 "cell": j, "gamma": float(self.gammas[k, j]),
                                 "eps": float(self.eps_rho[k, j, i])})
        return rows

    def summary(self) -> dict:
        return {
            "family": self.family.to_dict(),
            "evaluated": len(self.replications),
            "failed": list(self.failed),
            "percentiles_percent": self.percentiles,
            "per_tenant_rho_percentiles_percent": self.per_tenant_percentiles,
            "histograms_percent": self.histograms,
        }


def _replication_config(base: AbrdConfig, family_seed: int, index: int) -> AbrdConfig:
    seed = np.random.SeedSequence([int(family_seed), int(index), 1]).generate_state(1, np.uint64)[0]
    return replace(base, rng_seed=int(seed))


def _run_replication(args):
    family, config, index = args
    scenario = gen_scenario(family, index)
    prop = proposed_solution(scenario)
    eq = abrd(scenario, _replication_config(config, family.rng_seed, index))
    eps_rho, eps_sigma = relative_deviations(prop, eq)
    return index, eq.converged, eps_rho, eps_sigma, np.array(scenario.gamma)


def deviation_study(
    family: ScenarioFamily,
    abrd_config: AbrdConfig | None = None,
    replications: int | None = None,
    workers: int = 1,
) -> DeviationReport:
    """Compare the closed-form candidate with ABRD over a scenario family.

    Args:
        family: scenario generator settings.
        abrd_config: base solver config; each replication gets its own seed.
        replications: override of ``family.replications``.
        workers: processes to spread replications over; results are
            identical for any value.
    """
    abrd_config = abrd_config or AbrdConfig()
    count = family.replications if replications is None else replications
    jobs = [(family, abrd_config, k) for k in range(count)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_replication, jobs))
    else:
        results = [_run_replication(job) for job in jobs]
    results.sort(key=lambda r: r[0])

    ok = [r for r in results if r[1]]
    shape_r = (0, family.num_cells, family.num_tenants)
    return DeviationReport(
        family=family,
        replications=[r[0] for r in ok],
        eps_rho=np.array([r[2] for r in ok]) if ok else np.empty(shape_r),
        eps_sigma=np.array([r[3] for r in ok]) if ok else np.empty(shape_r[:2]),
        gammas=np.array([r[4] for r in ok]) if ok else np.empty(shape_r[:2]),
        failed=[r[0] for r in results if not r[1]],
    )


# --- plot sweeps -------------------------------------------------------------

SWEEP_KINDS = (
    "sigma_vs_S_alpha",
    "sigma_vs_S_gamma",
    "rho1_vs_share_bounds",
    "sigma_vs_share_equality",
    "het_profile",
)


def _fmt(v) -> str:
    return f"{v:g}"


def _sigma_vs_tenants(max_tenants, gammas, alphas, label):
    rows = []
    for s in range(1, max_tenants + 1):
        row = {"num_tenants": s}
        for g in gammas:
            for a in alphas:
                beta = a / (a + 1.0)
                key = f"{label}={_fmt(a if label == 'alpha' else g)}"
                row[key] = penetration_bounds(g, beta, s)[1]
        rows.append(row)
    return rows


def _rho1(s1, rest, beta):
    shares = np.concatenate([[s1], rest])
    sb = np.where(shares > 0, np.abs(shares) ** beta, 0.0)
    return float(sb[0] / sb.sum())


def sweep(kind: str, params: dict | None = None) -> list[dict]:
    """Plot-ready rows for the equal-share, asymmetric-share and heterogeneous curves.

    Tenants with zero share are treated as absent when evaluating the bound
    configurations of ``rho1_vs_share_bounds``.
    """
    p = dict(params or {})
    if kind == "sigma_vs_S_alpha":
        return _sigma_vs_tenants(p.get("max_tenants", 10), [p.get("gamma", 1.0)],
                                 p.get("alphas", [1, 3, 5, 7]), "alpha")
    if kind == "sigma_vs_S_gamma":
        a = p.get("alpha", 3.0)
        return _sigma_vs_tenants(p.get("max_tenants", 10), p.get("gammas", list(HET_GAMMA)),
                                 [a], "gamma")
    if kind == "rho1_vs_share_bounds":
        num = p.get("num_tenants", 4)
        beta = p.get("alpha", 3.0) / (p.get("alpha", 3.0) + 1.0)
        grid = p.get("shares", np.linspace(0.01, 1.0, 100))
        rows = []
        for s1 in grid:
            rest = 1.0 - s1
            concentrated = np.zeros(num - 1)
            concentrated[0] = rest
            spread = np.full(num - 1, rest / (num - 1))
            rows.append({"s1": float(s1),
                         "rho1_max": _rho1(s1, concentrated, beta),
                         "rho1_min": _rho1(s1, spread, beta)})
        return rows
    if kind == "sigma_vs_share_equality":
        num = p.get("num_tenants", 4)
        a = p.get("alpha", 3.0)
        beta = a / (a + 1.0)
        gammas = p.get("gammas", list(HET_GAMMA))
        xs = np.linspace(1.0, num ** (1.0 - beta), p.get("points", 50))
        rows = []
        for x in xs:
            row = {"share_equality": float(x)}
            for g in gammas:
                row[f"gamma={_fmt(g)}"] = float(solve_penetration(g**beta * x, beta))
            rows.append(row)
        return rows
    if kind == "het_profile":
        return het_profile(p.get("shares", [0.1, 0.25, 0.4, 0.55, 0.7]),
                           AbrdConfig(**p.get("abrd", {})))
    raise ValueError(f"unknown sweep kind {kind!r}; expected one of {SWEEP_KINDS}")


def het_scenario(s1: float, num_tenants: int = 4) -> Scenario:
    rest = (1.0 - s1) / (num_tenants - 1)
    return Scenario.from_gamma(HET_GAMMA, [s1] + [rest] * (num_tenants - 1), HET_ALPHA,
                               list(HET_USERS))


def het_profile(shares, config: AbrdConfig | None = None) -> list[dict]:
    """Tenant 1 under both methods on the five-cell heterogeneous scenario."""
    rows = []
    for s1 in shares:
        sc = het_scenario(float(s1))
        prop = proposed_solution(sc)
        eq = abrd(sc, config)
        eps_rho, eps_sigma = relative_deviations(prop, eq)
        for j in range(sc.num_cells):
            rows.append({
                "s1": float(s1),
                "cell": j,
                "gamma": float(sc.gamma[j]),
                "w1_proposed": float(prop.weights[0, j]),
                "w1_abrd": float(eq.weights[0, j]),
                "sigma_proposed": float(prop.state.sigma[j]),
                "sigma_abrd": float(eq.state.sigma[j]),
                "rho1_proposed": float(prop.state.rho[j, 0]),
                "rho1_abrd": float(eq.state.rho[j, 0]),
                "eps_sigma": float(eps_sigma[j]),
                "eps_rho1": float(eps_rho[j, 0]),
                "eps_rho_max": float(np.max(np.abs(eps_rho[j]))),
                "converged": eq.converged,
            })
    return rows


def equal_share_sigma(gamma: float, alpha: float, num_tenants: int) -> float:
    beta = alpha / (alpha + 1.0)
    return float(proposed_sigma([gamma], np.full(num_tenants, 1.0 / num_tenants), beta)[0])
