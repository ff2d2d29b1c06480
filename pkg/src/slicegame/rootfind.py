"""Safeguarded Newton-bisection for the subscription-ratio equation.

Every cell's ratio solves

    f(x) = x - K * (1 - x) ** (1 - beta) = 0,    0 < x < 1,

with K > 0.  f is increasing and convex on (0, 1), f(0) = -K < 0 and
f(1) = 1 > 0, so a bracketed root always exists and is unique.  The
solver works on whole arrays of K so a best-response evaluation over all
cells costs a handful of vectorised iterations.
"""

import numpy as np

XTOL = 1e-12
MAX_ITER = 200


class ConvergenceError(RuntimeError):
    """Raised when the bracketed solver exhausts its iteration cap."""


def penetration_residual(x, k, beta):
    x = np.asarray(x, dtype=float)
    return x - k * (1.0 - x) ** (1.0 - beta)


def solve_penetration(k, beta, xtol=XTOL, max_iter=MAX_ITER):
    """Root of ``x - k (1-x)^(1-beta)`` in (0, 1) for each entry of ``k``.

    ``k = inf`` maps to exactly 1 (the all-subscribe regime).

    Args:
        k: scalar or array of positive coefficients.
        beta: exponent in (0, 1).
        xtol: absolute tolerance on the root.
        max_iter: iteration cap; exceeding it raises ConvergenceError.

    Returns:
        ndarray with the same shape as ``k``.
    """
    k = np.asarray(k, dtype=float)
    out = np.ones(k.shape)
    finite = np.isfinite(k)
    if not finite.any():
        return out
    kf = k[finite]
    if np.any(kf <= 0):
        raise ValueError("coefficient must be positive")
    e = 1.0 - beta

    lo = np.zeros(kf.shape)
    hi = np.ones(kf.shape)
    x = kf / (1.0 + kf)  # exact root when beta -> 0
    active = np.ones(kf.shape, dtype=bool)
    for _ in range(max_iter):
        xa, ka = x[active], kf[active]
        u = 1.0 - xa
        f = xa - ka * u**e
        neg = f < 0
        lo_a = np.where(neg, xa, lo[active])
        hi_a = np.where(neg, hi[active], xa)
        with np.errstate(divide="ignore", invalid="ignore"):
            fp = 1.0 + ka * e * u ** (-beta)
            xn = xa - f / fp
        bad = ~np.isfinite(xn) | (xn <= lo_a) | (xn >= hi_a)
        xn = np.where(bad, 0.5 * (lo_a + hi_a), xn)
        xn = np.where(f == 0, xa, xn)
        step = np.abs(xn - xa)
        lo[active], hi[active], x[active] = lo_a, hi_a, xn
        done = ((step <= xtol) & ~bad) | (hi_a - lo_a <= 4 * np.spacing(hi_a)) | (f == 0)
        if done.all():
            break
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    else:
        raise ConvergenceError(
            f"penetration root not bracketed to {xtol} within {max_iter} iterations"
        )
    out[finite] = x
    return out
