import numpy as np
import pytest

from slicegame import Scenario


def bisect_root(f, lo=0.0, hi=1.0, iters=200):
    """Plain bisection; the independent oracle for every scalar root in the suite."""
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def tenant_revenue(scenario, weights, tenant):
    """Revenue by direct iteration of the logit subscription equations.

    Shares the model only through the scenario's cell parameters: the
    per-user resources and the logit shares are iterated to a fixed point in
    log space, with no use of the subscription-ratio equation.
    """
    from scipy.optimize import fsolve

    w = np.asarray(weights, dtype=float)
    a = scenario.alpha
    total = 0.0
    for j, cell in enumerate(scenario.cells):
        x = w[:, j] / w[:, j].sum()

        def resid(log_n):
            n_i = np.exp(log_n)
            r = x * cell.capacity / n_i
            share = r**a / (np.sum(r**a) + (scenario.price * cell.r0) ** a)
            return log_n - np.log(cell.n_users * share)

        guess = np.log(cell.n_users * 0.5 * x + 1e-12)
        n_i = np.exp(fsolve(resid, guess, xtol=1e-13))
        total += n_i[tenant]
    return scenario.price * total


def random_scenario(rng, tenants=(2, 5), cells=(2, 6), gamma=(0.25, 4.0), alpha=(0.5, 7.0)):
    s_count = int(rng.integers(tenants[0], tenants[1] + 1))
    b_count = int(rng.integers(cells[0], cells[1] + 1))
    shares = 0.2 / s_count + 0.8 * rng.dirichlet(np.ones(s_count))
    return Scenario.from_gamma(
        rng.uniform(*gamma, b_count),
        shares / shares.sum(),
        float(rng.uniform(*alpha)),
        [int(n) for n in rng.integers(50, 500, b_count)],
    )


def random_interior_weights(rng, scenario, slack=0.9):
    w = rng.dirichlet(np.full(scenario.num_cells, 2.0), size=scenario.num_tenants)
    return w * scenario.share_array[:, None] * slack


def revenue_fd(scenario, weights, tenant, cell, step):
    from slicegame import market_state

    def rev(d):
        w = weights.copy()
        w[tenant, cell] += d
        return market_state(scenario, w).revenues[tenant]

    first = (rev(step) - rev(-step)) / (2 * step)
    return first, rev


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def het_scenario():
    from slicegame.experiments import het_scenario as make

    return make(0.4)


# criterion number -> (passed, detail); filled by test_acceptance, printed at the end
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
