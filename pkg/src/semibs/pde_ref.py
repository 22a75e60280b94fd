"""Implicit finite-difference reference solver (d=1, constant volatility).

Solves the American obstacle problem min(r*v - L_BS v, v - g) = 0 and its
European companion on a uniform space-time grid, backward in time with an
implicit Euler step.  The American constraint is enforced either by policy
iteration on the discrete complementarity system (default, residual at
machine precision) or by direct projection after the linear solve
(cross-check variant).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded
from scipy.stats import norm

from .market import MarketModel
from .payoffs import CALL, PUT, STRANGLE, PayoffSpec, eval_payoff
from .surface import ValueSurface

SCHEME_PENALIZED = "implicit-penalized"   # policy iteration on the LCP
SCHEME_PROJECTED = "implicit-projected"   # solve then max(v, g)


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class FDGrid:
    x_min: float
    x_max: float
    n_space: int
    n_time: int
    scheme: str = SCHEME_PENALIZED

    def __post_init__(self):
        if self.x_min <= 0 or self.x_max <= self.x_min:
            raise ValueError("need 0 < x_min < x_max")
        if self.n_space < 2 or self.n_time < 2:
            raise ValueError("n_space and n_time must be >= 2")
        if self.scheme not in (SCHEME_PENALIZED, SCHEME_PROJECTED):
            raise ValueError(f"unknown scheme {self.scheme!r}")

    def xs(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_space)

    def times(self, maturity: float) -> np.ndarray:
        return np.linspace(0.0, maturity, self.n_time)


def _check_1d_const(model: MarketModel, payoff: PayoffSpec) -> float:
    if model.d != 1 or payoff.dim != 1:
        raise ValueError("FD reference solver is one-dimensional")
    if not model.is_const_vol:
        raise ValueError("FD reference solver requires constant sigma_bar")
    return float(model.sigma_bar()[0, 0])


def _boundaries(model: MarketModel, payoff: PayoffSpec, grid: FDGrid, american: bool):
    """Left/right boundary values as functions of time-to-maturity."""
    r = model.r
    if payoff.kind == PUT:
        K = payoff.strike
        if american:
            left = lambda ttm: max(K - grid.x_min, 0.0)
        else:
            left = lambda ttm: max(K * np.exp(-r * ttm) - grid.x_min, 0.0)
        right = lambda ttm: 0.0
    elif payoff.kind == CALL:
        K = payoff.strike
        left = lambda ttm: 0.0
        right = lambda ttm: grid.x_max - K * np.exp(-r * ttm)
    elif payoff.kind == STRANGLE:
        K1, K2 = payoff.strike, payoff.strike2
        if american:
            left = lambda ttm: max(K1 - grid.x_min, 0.0)
        else:
            left = lambda ttm: max(K1 * np.exp(-r * ttm) - grid.x_min, 0.0)
        right = lambda ttm: grid.x_max - K2 * np.exp(-r * ttm)
    else:
        raise ValueError(f"no FD boundary rule for payoff kind {payoff.kind!r}")
    return left, right


def _implicit_operator(model: MarketModel, sigma: float, xs: np.ndarray, dt: float):
    """Tridiagonal bands of A = I - dt*L on the interior nodes.

    Returns (ab, lower, diag, upper) where ab is the solve_banded layout and
    the three vectors are the interior rows of A.
    """
    r = model.r
    h = xs[1] - xs[0]
    xi = xs[1:-1]
    alpha = 0.5 * sigma**2 * xi**2 / h**2
    beta = r * xi / (2.0 * h)
    lower = -dt * (alpha - beta)
    diag = 1.0 + dt * (2.0 * alpha + r)
    upper = -dt * (alpha + beta)
    n = xi.size
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1, :] = diag
    ab[2, :-1] = lower[1:]
    return ab, lower, diag, upper


def _policy_solve(ab, lower, diag, upper, rhs, g, max_iter=200):
    """Solve min(A v - rhs, v - g) = 0 by Howard policy iteration.

    A is an M-matrix for the implicit Black-Scholes step, so the iteration
    converges monotonically in finitely many active-set switches.
    """
    n = rhs.size
    active = np.zeros(n, dtype=bool)
    v = None
    for _ in range(max_iter):
        ab_mod = ab.copy()
        rhs_mod = rhs.copy()
        ab_mod[1, active] = 1.0
        idx = np.where(active)[0]
        # zero the off-diagonals of constrained rows
        up = idx[idx < n - 1]
        lo = idx[idx > 0]
        ab_mod[0, up + 1] = 0.0
        ab_mod[2, lo - 1] = 0.0
        rhs_mod[active] = g[active]
        v = solve_banded((1, 1), ab_mod, rhs_mod)
        res = diag * v - rhs
        res[:-1] += upper[:-1] * v[1:]
        res[1:] += lower[1:] * v[:-1]
        new_active = res > (v - g)
        if np.array_equal(new_active, active):
            return v
        active = new_active
    raise SolverError(
        "policy iteration did not converge; max residual "
        f"{np.max(np.abs(np.minimum(res, v - g))):.3e}"
    )


def _solve_fd(model, payoff, grid: FDGrid, maturity: float, american: bool) -> ValueSurface:
    sigma = _check_1d_const(model, payoff)
    xs = grid.xs()
    times = grid.times(maturity)
    dt = times[1] - times[0]
    g = np.asarray(eval_payoff(payoff, xs))
    left, right = _boundaries(model, payoff, grid, american)

    ab, lower, diag, upper = _implicit_operator(model, sigma, xs, dt)
    values = np.empty((times.size, xs.size))
    values[-1] = g
    max_comp = 0.0
    for i in range(times.size - 2, -1, -1):
        ttm = maturity - times[i]
        bl, br = left(ttm), right(ttm)
        rhs = values[i + 1][1:-1].copy()
        rhs[0] -= lower[0] * bl
        rhs[-1] -= upper[-1] * br
        if american:
            if grid.scheme == SCHEME_PENALIZED:
                v = _policy_solve(ab, lower, diag, upper, rhs, g[1:-1])
            else:
                v = np.maximum(solve_banded((1, 1), ab, rhs), g[1:-1])
            res = diag * v - rhs
            res[:-1] += upper[:-1] * v[1:]
            res[1:] += lower[1:] * v[:-1]
            comp = np.max(np.abs(np.minimum(res, v - g[1:-1])))
            max_comp = max(max_comp, comp)
            v = np.maximum(v, g[1:-1])  # guard against roundoff below g
        else:
            v = solve_banded((1, 1), ab, rhs)
        values[i] = np.concatenate(([bl], v, [br]))
        if american:
            values[i] = np.maximum(values[i], g)
    meta = {"scheme": grid.scheme if american else "implicit", "american": american}
    if american:
        meta["complementarity_residual"] = float(max_comp)
    return ValueSurface(times=times, axes=(xs,), values=values, meta=meta)


def solve_american_fd(model: MarketModel, payoff: PayoffSpec, grid: FDGrid, maturity: float = 1.0) -> ValueSurface:
    """American value surface on the grid; v(T,.) = g and v >= g throughout."""
    return _solve_fd(model, payoff, grid, maturity, american=True)


def solve_european_fd(model: MarketModel, payoff: PayoffSpec, grid: FDGrid, maturity: float = 1.0) -> ValueSurface:
    """Same implicit scheme without the obstacle."""
    return _solve_fd(model, payoff, grid, maturity, american=False)


def bs_closed_form_put(model: MarketModel, K: float, maturity: float, x) -> float | np.ndarray:
    """Black-Scholes European put value at time 0 for maturity ``maturity``.

    The sigma = 0 case degenerates to the deterministic-growth limit
    exp(-rT) (K - x exp(rT))^+.
    """
    if model.d != 1:
        raise ValueError("closed form is one-dimensional")
    sigma = float(model.sigma_bar()[0, 0])
    r = model.r
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("spot must be positive")
    disc = np.exp(-r * maturity)
    if sigma == 0.0 or maturity == 0.0:
        out = np.maximum(disc * K - x, 0.0) if maturity > 0 else np.maximum(K - x, 0.0)
        return float(out) if out.ndim == 0 else out
    st = sigma * np.sqrt(maturity)
    d1 = (np.log(x / K) + (r + 0.5 * sigma**2) * maturity) / st
    d2 = d1 - st
    out = disc * K * norm.cdf(-d2) - x * norm.cdf(-d1)
    return float(out) if out.ndim == 0 else out


def early_exercise_premium(surface_am: ValueSurface, surface_eu: ValueSurface) -> np.ndarray:
    """Pointwise American - European values on matching grids."""
    if (
        surface_am.times.shape != surface_eu.times.shape
        or not np.allclose(surface_am.times, surface_eu.times)
        or surface_am.axes[0].shape != surface_eu.axes[0].shape
        or not np.allclose(surface_am.axes[0], surface_eu.axes[0])
    ):
        raise ValueError("premium requires matching space-time grids")
    return surface_am.values - surface_eu.values
