"""The reaction term q(x, y) = c(x) H(g(x) - y) and its smoothed variants.

Three families are provided on top of the exact discontinuous driver:

* erfc smoothing with sharpness kappa,
* a local-polynomial (quadratic spline in y) representation suitable for
  branching-process estimators,
* randomization of the exercise indicator by an exponential tie-breaker.

All drivers are expressed in undiscounted coordinates: the time-discount
factors live in the pricers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import erfc

from .payoffs import CashFlowSpec, eval_cashflow, eval_payoff


@dataclass(frozen=True)
class ExactDriver:
    """q(x, y) = c(x) if g(x) >= y else 0 (equality counts as exercise)."""

    cashflow: CashFlowSpec

    @property
    def payoff(self):
        return self.cashflow.payoff


def q_exact(d: ExactDriver, x, y):
    g = eval_payoff(d.payoff, x)
    c = eval_cashflow(d.cashflow, x)
    out = np.where(np.asarray(g) >= np.asarray(y), c, 0.0)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ErfcDriver:
    """Gaussian-kernel smoothing of the Heaviside: 0.5 c(x) erfc(kappa (y - g(x)))."""

    base: ExactDriver
    kappa: float

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")


def q_erfc(d: ErfcDriver, x, y):
    g = eval_payoff(d.base.payoff, x)
    c = eval_cashflow(d.base.cashflow, x)
    out = 0.5 * c * erfc(d.kappa * (np.asarray(y, dtype=float) - g))
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------- local poly


@dataclass
class LocalPolyDriver:
    """Driver of the form q(x, y, y') = sum_j sum_l a_{j,l}(x) y^l phi_j(y').

    ``coeff_fn(x)`` returns the per-cell monomial coefficients a_{j,l}(x) with
    shape (..., cells, degree+1); the kernels phi_j are a Lipschitz partition
    of unity over the y'-cells (linear cross-fades of half-width
    ``kernel_halfwidth`` at the interior knots).  y and y' are clamped to the
    knot range before evaluation.
    """

    knots: np.ndarray
    coeff_fn: Callable[[np.ndarray], np.ndarray]
    kernel_halfwidth: float
    degree: int = 2
    is_zero: bool = False

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=float)
        if self.knots.size < 2 or np.any(np.diff(self.knots) <= 0):
            raise ValueError("knots must be strictly increasing with >= 1 cell")
        if not 0 < self.kernel_halfwidth <= 0.5 * np.min(np.diff(self.knots)):
            raise ValueError("kernel half-width must be in (0, min cell width / 2]")

    @property
    def cells(self) -> int:
        return self.knots.size - 1

    def coeffs(self, x) -> np.ndarray:
        return self.coeff_fn(np.asarray(x, dtype=float))

    def kernels(self, yprime) -> np.ndarray:
        """phi_j(y'), shape (..., cells); rows sum to 1 on the clamped domain."""
        yp = np.clip(np.asarray(yprime, dtype=float), self.knots[0], self.knots[-1])
        w = self.kernel_halfwidth
        interior = self.knots[1:-1]
        # share of mass sitting in cells >= j, ramping 0 -> 1 across knot j
        s = np.clip((yp[..., None] - interior + w) / (2 * w), 0.0, 1.0)
        ones = np.ones(yp.shape + (1,))
        cum = np.concatenate([ones, s, np.zeros(yp.shape + (1,))], axis=-1)
        return cum[..., :-1] - cum[..., 1:]

    def degree_weights(self, x, yprime) -> np.ndarray:
        """A_l(x, y') = sum_j a_{j,l}(x) phi_j(y'), shape (..., degree+1)."""
        a = self.coeffs(x)
        phi = self.kernels(yprime)
        return np.einsum("...jl,...j->...l", a, phi)

    def evaluate(self, x, y, yprime):
        """q(x, y, y') with y clamped to the knot range."""
        yc = np.clip(np.asarray(y, dtype=float), self.knots[0], self.knots[-1])
        weights = self.degree_weights(x, yprime)
        powers = yc[..., None] ** np.arange(self.degree + 1)
        out = np.sum(weights * powers, axis=-1)
        return float(out) if np.ndim(out) == 0 else out


def _spline_coeff_arrays(knots: np.ndarray, fvals: np.ndarray) -> np.ndarray:
    """Quadratic-spline monomial coefficients per cell from knot values.

    One quadratic per cell, interpolating f at every knot and C^1 at interior
    knots; the free end condition is p'(right end) = 0, propagated backward via
    m_j = 2*(f_{j+1} - f_j)/h - m_{j+1}.  ``fvals`` has shape (..., knots);
    returns (..., cells, 3) global-monomial coefficients.
    """
    h = np.diff(knots)
    cells = knots.size - 1
    df = np.diff(fvals, axis=-1) / h  # (..., cells)
    m = np.empty(fvals.shape)
    m[..., -1] = 0.0
    for j in range(cells - 1, -1, -1):
        m[..., j] = 2.0 * df[..., j] - m[..., j + 1]
    # local form f_j + c1 (y - k_j) + c2 (y - k_j)^2 with c1 = m_j
    c1 = m[..., :-1]
    c2 = (m[..., 1:] - m[..., :-1]) / (2.0 * h)
    f0 = fvals[..., :-1]
    k = knots[:-1]
    a0 = f0 - c1 * k + c2 * k**2
    a1 = c1 - 2.0 * c2 * k
    a2 = c2
    return np.stack([a0, a1, a2], axis=-1)


def fit_quadratic_spline(f, domain, cells: int, kernel_halfwidth: float | None = None) -> LocalPolyDriver:
    """Quadratic spline of a scalar function on ``domain`` as a LocalPolyDriver.

    The spline interpolates f at all knots, is C^1 at interior knots, and uses
    a zero right-end derivative as the closing condition.  Coefficients are
    constant in x.
    """
    lo, hi = float(domain[0]), float(domain[1])
    if not hi > lo:
        raise ValueError("domain must have positive length")
    if cells < 1:
        raise ValueError("need at least one cell")
    knots = np.linspace(lo, hi, cells + 1)
    fvals = np.array([float(f(k)) for k in knots])
    coeffs = _spline_coeff_arrays(knots, fvals)
    if kernel_halfwidth is None:
        kernel_halfwidth = 0.05 * (hi - lo) / cells

    def coeff_fn(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(coeffs, x.shape + coeffs.shape).copy()

    return LocalPolyDriver(
        knots=knots,
        coeff_fn=coeff_fn,
        kernel_halfwidth=kernel_halfwidth,
        is_zero=bool(np.all(coeffs == 0.0)),
    )


def spline_eval(drv: LocalPolyDriver, x, y):
    """Diagonal evaluation q(x, y, y) - the spline approximation itself."""
    return drv.evaluate(x, y, y)


def local_poly_from_erfc(
    erfc_driver: ErfcDriver, domain, cells: int, kernel_halfwidth: float | None = None
) -> LocalPolyDriver:
    """Spline the y-section of the erfc-smoothed driver, per evaluation point x.

    For each x the section y -> 0.5 c(x) erfc(kappa (y - g(x))) is splined on
    the fixed y-domain; coefficients are recomputed (vectorized) at the
    positions where the branching estimator needs them.
    """
    lo, hi = float(domain[0]), float(domain[1])
    cells = int(cells)
    knots = np.linspace(lo, hi, cells + 1)
    base = erfc_driver.base
    kappa = erfc_driver.kappa
    if kernel_halfwidth is None:
        kernel_halfwidth = 0.05 * (hi - lo) / cells

    def coeff_fn(x):
        x = np.asarray(x, dtype=float)
        g = np.asarray(eval_payoff(base.payoff, x))
        c = np.asarray(eval_cashflow(base.cashflow, x))
        fvals = 0.5 * c[..., None] * erfc(kappa * (knots - g[..., None]))
        return _spline_coeff_arrays(knots, fvals)

    return LocalPolyDriver(
        knots=knots, coeff_fn=coeff_fn, kernel_halfwidth=kernel_halfwidth
    )


def zero_local_poly(domain=(0.0, 1.0), cells: int = 1) -> LocalPolyDriver:
    """Identically-zero driver (reduces the branching pricer to plain MC)."""
    return fit_quadratic_spline(lambda _y: 0.0, domain, cells)


def constant_local_poly(value: float, domain, cells: int = 1) -> LocalPolyDriver:
    """Driver identically equal to ``value`` (degree-0 only)."""
    return fit_quadratic_spline(lambda _y: value, domain, cells)


# --------------------------------------------------------------- randomized


@dataclass(frozen=True)
class RandomizedDriver:
    """Indicator randomization: q(x, y) = c(x) 1{g(x) + eps >= y}, eps ~ Exp(eps_mean)."""

    base: ExactDriver
    eps_mean: float

    def __post_init__(self):
        if self.eps_mean <= 0:
            raise ValueError("eps_mean must be positive")


def q_randomized_sample(d: RandomizedDriver, x, y, rng: np.random.Generator):
    g = np.asarray(eval_payoff(d.base.payoff, x))
    c = np.asarray(eval_cashflow(d.base.cashflow, x))
    eps = rng.exponential(d.eps_mean, size=np.broadcast_shapes(g.shape, np.shape(y)))
    out = np.where(g + eps >= np.asarray(y, dtype=float), c, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def q_randomized_mean(d: RandomizedDriver, x, y):
    """E[q_randomized_sample] = c(x) min(1, exp(-(y - g(x)) / eps_mean)).

    Closed form of the general boundary-term representation specialized to an
    exponential density on (0, inf).
    """
    g = np.asarray(eval_payoff(d.base.payoff, x), dtype=float)
    c = np.asarray(eval_cashflow(d.base.cashflow, x), dtype=float)
    gap = np.maximum(np.asarray(y, dtype=float) - g, 0.0)
    with np.errstate(under="ignore"):
        out = c * np.exp(-gap / d.eps_mean)
    return float(out) if np.ndim(out) == 0 else out
