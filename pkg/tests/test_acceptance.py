"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line."""
import time

import numpy as np
import pytest

from slicegame import AbrdConfig, Scenario, abrd, best_response, market_state, proposed_solution
from slicegame.equilibrium import penetration_bounds, proposed_sigma
from slicegame.experiments import ScenarioFamily, deviation_study, het_scenario
from slicegame.model import (
    penetration_root_residual, revenue_gradient, revenue_hessian_diag, tenant_fractions,
)
from slicegame.rootfind import penetration_residual, solve_penetration

from conftest import ACCEPTANCE, random_interior_weights, random_scenario, revenue_fd


def record(key, failures, detail):
    ok = not failures
    ACCEPTANCE[key] = (ok, detail if ok else f"{detail}; {failures[0]}" +
                       (f" (+{len(failures) - 1} more)" if len(failures) > 1 else ""))
    assert ok, "\n".join(failures[:20])


def test_criterion_1_homogeneous_exactness():
    rng = np.random.default_rng(1)
    failures, worst = [], 0.0
    t0 = time.perf_counter()
    for k in range(50):
        s_count = int(rng.integers(2, 6))
        b_count = int(rng.integers(2, 11))
        shares = 0.2 / s_count + 0.8 * rng.dirichlet(np.ones(s_count))
        sc = Scenario.from_gamma([float(rng.uniform(0.25, 4))] * b_count, shares / shares.sum(),
                                 float(rng.uniform(0.5, 7)),
                                 [int(n) for n in rng.integers(50, 500, b_count)])
        eq = abrd(sc, AbrdConfig(rng_seed=k))
        err = float(np.max(np.abs(eq.weights - proposed_solution(sc).weights)))
        worst = max(worst, err)
        if not eq.converged:
            failures.append(f"scenario {k}: ABRD did not converge")
        if err >= 1e-6:
            failures.append(f"scenario {k}: max weight gap {err:.3g}")
    elapsed = time.perf_counter() - t0
    if elapsed >= 120:
        failures.append(f"runtime {elapsed:.1f}s")
    record(1, failures, f"50 scenarios, max |w_abrd - w_proposed| {worst:.2e}, {elapsed:.1f}s")


def test_criterion_2_gradient_and_hessian():
    rng = np.random.default_rng(2)
    failures = []
    g_worst = h_worst = c_worst = 0.0
    for k in range(100):
        sc = random_scenario(rng)
        w = random_interior_weights(rng, sc)
        i = int(rng.integers(sc.num_tenants))
        g = revenue_gradient(sc, w, i)
        hd = revenue_hessian_diag(sc, w, i)
        for j in range(sc.num_cells):
            fd1, rev = revenue_fd(sc, w, i, j, 1e-6 * w[i, j])
            h = 5e-3 * w[i, j]
            fd2 = (-rev(2 * h) + 16 * rev(h) - 30 * rev(0) + 16 * rev(-h) - rev(-2 * h)) / (12 * h * h)
            ge = abs(fd1 - g[j]) / abs(g[j])
            he = abs(fd2 - hd[j]) / abs(hd[j])
            g_worst, h_worst = max(g_worst, ge), max(h_worst, he)
            if ge >= 1e-5:
                failures.append(f"point {k} cell {j}: gradient rel err {ge:.3g}")
            if he >= 1e-4:
                failures.append(f"point {k} cell {j}: second derivative rel err {he:.3g}")
        # mixed differences; exact for a function separable in the cells
        if sc.num_cells > 1:
            j, m = rng.choice(sc.num_cells, 2, replace=False)
            hc = 0.1 * min(w[i, j], w[i, m])

            def rv(dj, dm):
                x = w.copy()
                x[i, j] += dj
                x[i, m] += dm
                return market_state(sc, x).revenues[i]

            cross = abs(rv(hc, hc) - rv(hc, -hc) - rv(-hc, hc) + rv(-hc, -hc)) / (4 * hc * hc)
            c_worst = max(c_worst, cross)
            if cross >= 1e-6:
                failures.append(f"point {k}: cross-partial {cross:.3g}")
    record(2, failures, f"100 points, gradient {g_worst:.1e}, second derivative {h_worst:.1e}, "
                        f"cross {c_worst:.1e}")


def test_criterion_3_penetration_root():
    rng = np.random.default_rng(3)
    failures, worst = [], 0.0
    for _ in range(200):
        beta = float(rng.uniform(0.5, 7))
        beta = beta / (beta + 1)
        shares = rng.dirichlet(np.ones(int(rng.integers(1, 6))))
        gamma = rng.uniform(0.25, 4, 10)
        sigma = proposed_sigma(gamma, shares, beta)
        k = gamma**beta * np.sum(shares**beta)
        res = float(np.max(np.abs(penetration_residual(sigma, k, beta))))
        worst = max(worst, res)
        if res >= 1e-10:
            failures.append(f"residual {res:.3g} at beta={beta:.3f}")
    grid = np.linspace(0.25, 4, 100)
    for a in (0.5, 3.0, 7.0):
        beta = a / (a + 1)
        s = proposed_sigma(grid, np.full(4, 0.25), beta)
        if not np.all(np.diff(s) > 0):
            failures.append(f"sigma not increasing in gamma at alpha={a}")
    for n in (1, 2, 4, 8):
        for gamma in (0.5, 2.0):
            s = proposed_sigma([gamma], np.full(n, 1 / n), 1e-6)[0]
            if abs(s - n / (1 + n)) >= 1e-3:
                failures.append(f"beta->0 limit off for S={n}, gamma={gamma}: {s}")
    for gamma in (0.5, 2.0):
        s = solve_penetration(gamma ** (1 - 1e-6), 1 - 1e-6)
        if abs(s - min(1.0, gamma)) >= 1e-2:
            failures.append(f"beta->1 limit off for gamma={gamma}: {s}")
    # the model-level residual on market states
    for _ in range(20):
        sc = random_scenario(rng)
        w = random_interior_weights(rng, sc, slack=1.0)
        r = float(np.max(np.abs(penetration_root_residual(sc, w, market_state(sc, w).sigma))))
        worst = max(worst, r)
        if r >= 1e-10:
            failures.append(f"market-state residual {r:.3g}")
    record(3, failures, f"max residual {worst:.1e}, monotone grid and limits checked")


def test_criterion_4_share_extremality():
    rng = np.random.default_rng(4)
    failures = []
    for k in range(1000):
        shares = rng.dirichlet(np.ones(4))
        gamma = float(rng.uniform(0.25, 4))
        a = float(rng.uniform(0.5, 7))
        beta = a / (a + 1)
        lo, hi = penetration_bounds(gamma, beta, 4)
        s = proposed_sigma([gamma], shares, beta)[0]
        if not lo - 1e-10 <= s <= hi + 1e-10:
            failures.append(f"vector {k}: sigma {s} outside [{lo}, {hi}]")
        if k % 50 == 0:
            eq = proposed_sigma([gamma], np.full(4, 0.25), beta)[0]
            mono = proposed_sigma([gamma], [1.0, 0, 0, 0], beta)[0]
            if abs(eq - hi) > 1e-12 or abs(mono - lo) > 1e-12:
                failures.append(f"vector {k}: bounds not attained ({eq - hi:.2g}, {mono - lo:.2g})")
    record(4, failures, "1000 share vectors inside [sigma_min, sigma_max], bounds attained")


def test_criterion_5_heterogeneous_scenario():
    failures = []
    max_rho = max_sigma = 0.0
    for s1 in (0.1, 0.25, 0.4, 0.55, 0.7):
        sc = het_scenario(s1)
        prop = proposed_solution(sc)
        eq = abrd(sc)
        if not eq.converged:
            failures.append(f"s1={s1}: ABRD did not converge")
        dw = eq.weights[0] - prop.weights[0]
        dr = eq.state.rho[:, 0] - prop.state.rho[:, 0]
        for name, d in (("weight", dw), ("fraction", dr)):
            if not (np.all(d[:2] < 0) and np.all(d[-2:] > 0)):
                signs = "".join("+" if x > 0 else "-" if x < 0 else "0" for x in d)
                failures.append(f"s1={s1}: tenant 1 {name} sign pattern {signs}")
        eps_rho = np.abs(prop.state.rho - eq.state.rho) / eq.state.rho
        eps_sigma = np.abs(prop.state.sigma - eq.state.sigma) / eq.state.sigma
        max_rho = max(max_rho, 100 * eps_rho.max())
        max_sigma = max(max_sigma, 100 * eps_sigma.max())
    if max_sigma >= 0.5:
        failures.append(f"max |eps_sigma| {max_sigma:.2f}% >= 0.5%")
    if max_rho >= 3:
        failures.append(f"max |eps_rho| {max_rho:.2f}% >= 3%")
    record(5, failures, f"max |eps_rho| {max_rho:.2f}%, max |eps_sigma| {max_sigma:.3f}%")


def test_criterion_6_table_family():
    fam = ScenarioFamily(num_tenants=4, num_cells=20, alpha=3.0, gamma_range=(0.25, 4.0),
                         replications=100, rng_seed=2021)
    t0 = time.perf_counter()
    rep = deviation_study(fam)
    elapsed = time.perf_counter() - t0
    pct = rep.percentiles
    rho95, sigma95 = pct["rho"]["P95"], pct["sigma"]["P95"]
    failures = []
    if rep.failed:
        failures.append(f"unconverged replications {rep.failed}")
    if not 0.5 <= rho95 <= 5.0:
        failures.append(f"P95 |eps_rho| {rho95:.3f}% outside [0.5, 5]")
    if not 0.02 <= sigma95 <= 0.5:
        failures.append(f"P95 |eps_sigma| {sigma95:.4f}% outside [0.02, 0.5]")
    if rho95 > 4.2 * 1.5 or sigma95 > 0.32 * 1.5:
        failures.append("global bound exceeded")
    if elapsed >= 1800:
        failures.append(f"runtime {elapsed:.0f}s")
    record(6, failures, f"P90/P95 |eps_rho| {pct['rho']['P90']:.2f}/{rho95:.2f}%, "
                        f"|eps_sigma| {pct['sigma']['P90']:.3f}/{sigma95:.3f}%, {elapsed:.0f}s")


def test_criterion_7_property_suite():
    rng = np.random.default_rng(7)
    failures = []
    for k in range(30):
        sc = random_scenario(rng)
        w = random_interior_weights(rng, sc, slack=1.0)
        st = market_state(sc, w)
        cap = np.abs(st.allocations.sum(axis=1) - sc.capacity) / sc.capacity
        if cap.max() >= 1e-12:
            failures.append(f"scenario {k}: capacity conservation {cap.max():.3g}")
        if np.max(np.abs(st.rho.sum(axis=1) - 1)) >= 1e-12:
            failures.append(f"scenario {k}: fractions do not sum to 1")
        # logit fixed point: subscribers reproduce themselves from the resources they get
        cells = sc.cells
        for j, cell in enumerate(cells):
            r = st.per_user_resources[j]
            logit = cell.n_users * r**sc.alpha / (np.sum(r**sc.alpha) + (sc.price * cell.r0) ** sc.alpha)
            err = np.max(np.abs(logit - st.subscribers[j]) / st.subscribers[j])
            if err >= 1e-9:
                failures.append(f"scenario {k} cell {j}: logit fixed point {err:.3g}")
        c = float(np.exp(rng.uniform(-5, 5)))
        a = tenant_fractions(w[:, 0], sc.beta)
        b = tenant_fractions(c * w[:, 0], sc.beta)
        if np.max(np.abs(a - b)) >= 1e-12:
            failures.append(f"scenario {k}: fractions not scale invariant")
        i = int(rng.integers(sc.num_tenants))
        br = best_response(sc, i, np.delete(w, i, axis=0))
        if abs(br.weights.sum() - sc.shares[i]) >= 1e-12:
            failures.append(f"scenario {k}: best-response budget gap")
    sc = het_scenario(0.55)
    x, y = abrd(sc, AbrdConfig(rng_seed=11)), abrd(sc, AbrdConfig(rng_seed=11))
    if not np.array_equal(x.weights, y.weights):
        failures.append("ABRD not deterministic under a fixed seed")
    fam = ScenarioFamily(3, 4, 3.0, (0.25, 4.0), replications=3, rng_seed=5)
    p, q = deviation_study(fam), deviation_study(fam)
    if not (np.array_equal(p.eps_rho, q.eps_rho) and np.array_equal(p.eps_sigma, q.eps_sigma)):
        failures.append("Monte Carlo not deterministic under a fixed seed")
    record(7, failures, "conservation, logit fixed point, normalization, scale invariance, "
                        "budgets and determinism")
