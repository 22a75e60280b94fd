"""Payoff functions g and their cash-flow companions c.

The cash flow c is the amplitude of the reaction term q(x, y) = c(x) 1{g(x) >= y}
in the semilinear pricing equation.  It must make g a subsolution of
r*phi - L*phi - c = 0 on the exercise region; the five kinds below use the
standard closed-form choices (put: c = r*K, strangle: r*K1 / -r*K2 wings with a
linear bridge, basket puts: r*K with a volatility correction in the geometric
case).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market import MarketModel

PUT = "put"
CALL = "call"
STRANGLE = "strangle"
ARITH_BASKET_PUT = "arith_basket_put"
GEOM_BASKET_PUT = "geom_basket_put"

_KINDS = (PUT, CALL, STRANGLE, ARITH_BASKET_PUT, GEOM_BASKET_PUT)


@dataclass(frozen=True)
class PayoffSpec:
    kind: str
    strike: float
    strike2: float | None = None
    dim: int = 1

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown payoff kind {self.kind!r}")
        if self.strike <= 0:
            raise ValueError("strike must be positive")
        if self.kind == STRANGLE:
            if self.strike2 is None or self.strike2 <= 0:
                raise ValueError("strangle needs a positive second strike")
            if not self.strike < self.strike2:
                raise ValueError("strangle requires K1 < K2")
        expected_dim = 2 if self.kind in (ARITH_BASKET_PUT, GEOM_BASKET_PUT) else 1
        if self.dim != expected_dim:
            raise ValueError(f"{self.kind} is defined for d={expected_dim}")

    @staticmethod
    def put(K: float) -> "PayoffSpec":
        return PayoffSpec(PUT, K)

    @staticmethod
    def call(K: float) -> "PayoffSpec":
        return PayoffSpec(CALL, K)

    @staticmethod
    def strangle(K1: float, K2: float) -> "PayoffSpec":
        return PayoffSpec(STRANGLE, K1, K2)

    @staticmethod
    def arith_basket_put(K: float) -> "PayoffSpec":
        return PayoffSpec(ARITH_BASKET_PUT, K, dim=2)

    @staticmethod
    def geom_basket_put(K: float) -> "PayoffSpec":
        return PayoffSpec(GEOM_BASKET_PUT, K, dim=2)


def _as_points(spec: PayoffSpec, x) -> np.ndarray:
    """Coerce x to shape (..., d)."""
    x = np.asarray(x, dtype=float)
    if spec.dim == 1:
        return x[..., None]
    if x.shape[-1] != spec.dim:
        raise ValueError(f"points have last axis {x.shape[-1:]}, expected {spec.dim}")
    return x


def eval_payoff(spec: PayoffSpec, x):
    """g(x), vectorized over leading axes of x."""
    pts = _as_points(spec, x)
    if spec.kind == PUT:
        out = np.maximum(spec.strike - pts[..., 0], 0.0)
    elif spec.kind == CALL:
        out = np.maximum(pts[..., 0] - spec.strike, 0.0)
    elif spec.kind == STRANGLE:
        s = pts[..., 0]
        out = np.maximum(spec.strike - s, 0.0) + np.maximum(s - spec.strike2, 0.0)
    elif spec.kind == ARITH_BASKET_PUT:
        out = np.maximum(spec.strike - 0.5 * (pts[..., 0] + pts[..., 1]), 0.0)
    else:  # GEOM_BASKET_PUT
        out = np.maximum(spec.strike - np.sqrt(pts[..., 0] * pts[..., 1]), 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class CashFlowSpec:
    payoff: PayoffSpec
    model: MarketModel
    # strangle bridge: linear interpolation of c between r*K1 at K1 and -r*K2 at K2

    def __post_init__(self):
        if self.payoff.dim != self.model.d:
            raise ValueError("payoff dimension does not match the market model")
        if self.payoff.kind == GEOM_BASKET_PUT and not self.model.is_const_vol:
            raise ValueError("geometric basket cash flow requires constant sigma_bar")

    def geometric_correction(self) -> float:
        """(1/8)(||s1||^2 + ||s2||^2 - 2<s1, s2>) for the geometric basket."""
        s = self.model.sigma_bar()
        s1, s2 = s[0], s[1]
        return 0.125 * (s1 @ s1 + s2 @ s2 - 2.0 * (s1 @ s2))


def eval_cashflow(spec: CashFlowSpec, x):
    """c(x), vectorized over leading axes of x."""
    payoff = spec.payoff
    r = spec.model.r
    pts = _as_points(payoff, x)
    if payoff.kind == PUT or payoff.kind == ARITH_BASKET_PUT:
        out = np.full(pts.shape[:-1], r * payoff.strike)
    elif payoff.kind == CALL:
        out = np.zeros(pts.shape[:-1])
    elif payoff.kind == STRANGLE:
        k1, k2 = payoff.strike, payoff.strike2
        s = np.clip(pts[..., 0], k1, k2)
        w = (s - k1) / (k2 - k1)
        out = (1.0 - w) * (r * k1) + w * (-r * k2)
    else:  # GEOM_BASKET_PUT
        beta = spec.geometric_correction()
        out = np.maximum(
            r * payoff.strike - beta * np.sqrt(pts[..., 0] * pts[..., 1]), 0.0
        )
    return out if np.ndim(out) else float(out)


@dataclass
class SubsolutionReport:
    n_checked: int
    n_skipped: int
    max_violation: float
    worst_point: np.ndarray | None


def _kink_distance(payoff: PayoffSpec, pts: np.ndarray) -> np.ndarray:
    """Distance of each point to the nearest non-smooth locus of g."""
    if payoff.kind in (PUT, CALL):
        return np.abs(pts[..., 0] - payoff.strike)
    if payoff.kind == STRANGLE:
        return np.minimum(
            np.abs(pts[..., 0] - payoff.strike),
            np.abs(pts[..., 0] - payoff.strike2),
        )
    # basket puts: kink on the zero level-set of g
    return np.abs(eval_payoff(payoff, pts))


def check_subsolution(
    spec: CashFlowSpec,
    points,
    surface=None,
    rel_step: float = 1e-4,
    region_tol: float = 1e-6,
    kink_tol: float = 1e-2,
) -> SubsolutionReport:
    """Spot-check r*g - L*g - c <= 0 at sampled exercise-region points.

    L*g is evaluated by central finite differences, so points close to kinks of
    g are skipped (convex payoffs cannot be touched from above there, so the
    subsolution requirement is vacuous).  When a value surface is supplied,
    only points with surface value within ``region_tol`` of g are checked.
    Informational diagnostic: returns the worst residual, never raises.
    """
    payoff = spec.payoff
    model = spec.model
    pts = np.atleast_2d(_as_points(payoff, points))

    g = eval_payoff(payoff, pts)
    keep = _kink_distance(payoff, pts) > kink_tol
    if surface is not None:
        v = np.array([surface.at(0.0, p if model.d > 1 else p[0]) for p in pts])
        keep &= np.abs(v - g) <= region_tol
    n_skipped = int(np.sum(~keep))
    pts = pts[keep]
    if pts.size == 0:
        return SubsolutionReport(0, n_skipped, 0.0, None)

    cov = model.sigma_bar() @ model.sigma_bar().T
    d = model.d

    def g_at(q):
        return float(np.asarray(eval_payoff(payoff, q if d > 1 else q[0])))

    residuals = np.empty(pts.shape[0])
    for i, p in enumerate(pts):
        h = rel_step * p
        grad = np.empty(d)
        hess = np.empty((d, d))
        for a in range(d):
            ea = np.zeros(d)
            ea[a] = h[a]
            grad[a] = (g_at(p + ea) - g_at(p - ea)) / (2 * h[a])
            hess[a, a] = (g_at(p + ea) - 2 * g_at(p) + g_at(p - ea)) / h[a] ** 2
            for b in range(a + 1, d):
                eb = np.zeros(d)
                eb[b] = h[b]
                hess[a, b] = hess[b, a] = (
                    g_at(p + ea + eb)
                    - g_at(p + ea - eb)
                    - g_at(p - ea + eb)
                    + g_at(p - ea - eb)
                ) / (4 * h[a] * h[b])
        # L g = r <x, Dg> + 1/2 sum_ij x_i x_j (sb sb^T)_ij D2g_ij  (g time-free)
        lg = model.r * (p @ grad) + 0.5 * np.sum(cov * np.outer(p, p) * hess)
        gval = g_at(p)
        cval = float(np.asarray(eval_cashflow(spec, p if d > 1 else p[0])))
        residuals[i] = model.r * gval - lg - cval
    worst = int(np.argmax(residuals))
    return SubsolutionReport(
        n_checked=pts.shape[0],
        n_skipped=n_skipped,
        max_violation=float(residuals[worst]),
        worst_point=pts[worst],
    )
