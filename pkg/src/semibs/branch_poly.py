"""Branching-process pricer for the local-polynomial driver (Picard-iterated).

Each estimate grows a family tree from one root particle: particles carry an
exponential lifetime; survival past maturity contributes the discounted
payoff re-weighted by the survival probability, death at tau selects a
polynomial degree l with probability p_l, multiplies the family weight by
A_l(X_tau, y') exp(-r tau) / (p_l rho(tau)) and spawns l offspring, where y'
is read from the previous Picard iterate surface.  The estimator is the
sample mean over root families of the product of all factors.

The driver's coefficients are large and oscillating when it approximates a
(smoothed) Heaviside function, which makes the family weights explode; the
instrumentation here exists to expose that instability rather than mask it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .driver import LocalPolyDriver
from .market import MarketModel, derive_rng, lognormal_step
from .payoffs import PayoffSpec, eval_payoff
from .rand_driver import _outside_value
from .surface import ValueSurface


class InstabilityError(RuntimeError):
    """Particle population or weight blow-up at a node."""

    def __init__(self, message, sweep=None, node=None):
        super().__init__(message)
        self.sweep = sweep
        self.node = node


@dataclass(frozen=True)
class BranchingConfig:
    tau_mean: float
    offspring_probs: tuple[float, ...]   # p_l for degree l = 0..l0
    picard_iters: int
    paths: int
    time_grid: np.ndarray                # coarse instants incl. 0 and maturity
    space_grid: np.ndarray
    particle_cap: int = 10**6
    on_cap: str = "record"               # "record" keeps previous iterate, "raise" aborts

    def __post_init__(self):
        object.__setattr__(self, "offspring_probs", tuple(float(p) for p in self.offspring_probs))
        object.__setattr__(self, "time_grid", np.asarray(self.time_grid, dtype=float))
        object.__setattr__(self, "space_grid", np.asarray(self.space_grid, dtype=float))
        if self.tau_mean <= 0:
            raise ValueError("tau_mean must be positive")
        p = np.array(self.offspring_probs)
        if np.any(p < 0) or not np.isclose(p.sum(), 1.0):
            raise ValueError("offspring probabilities must be non-negative and sum to 1")
        if self.picard_iters < 1:
            raise ValueError("picard_iters must be >= 1")
        if self.paths < 1:
            raise ValueError("paths must be >= 1")
        if np.any(np.diff(self.time_grid) <= 0) or self.time_grid[0] != 0.0:
            raise ValueError("time grid must start at 0 and increase")
        if np.any(np.diff(self.space_grid) <= 0) or self.space_grid[0] <= 0:
            raise ValueError("space grid must be positive and increasing")
        if self.on_cap not in ("record", "raise"):
            raise ValueError("on_cap must be 'record' or 'raise'")


def european_mc(model: MarketModel, payoff: PayoffSpec, t: float, x, maturity: float,
                paths: int, rng: np.random.Generator) -> tuple[float, float]:
    """Plain discounted-payoff Monte Carlo; the zero-driver reduction target."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    dt = maturity - t
    z = rng.standard_normal((paths, model.d))
    xT = lognormal_step(model, x, dt, z)
    vals = np.exp(-model.r * dt) * np.asarray(
        eval_payoff(payoff, xT if model.d > 1 else xT[..., 0])
    )
    se = vals.std(ddof=1) / np.sqrt(paths) if paths > 1 else 0.0
    return float(vals.mean()), float(se)


def _read_iterate(payoff: PayoffSpec, surface: ValueSurface, times: np.ndarray,
                  pts: np.ndarray, r: float = 0.0) -> np.ndarray:
    """Previous-iterate value at (time, point): ceil in t, linear + policy in x."""
    xs = surface.axes[0]
    idx = np.minimum(
        np.searchsorted(surface.times, times - 1e-12, side="left"),
        surface.times.size - 1,
    )
    out = np.empty(pts.shape[0])
    for ci in np.unique(idx):
        mask = idx == ci
        x = pts[mask]
        v = np.interp(x, xs, surface.values[ci])
        ttm = float(surface.times[-1] - surface.times[ci])
        outside, ov = _outside_value(payoff, x, xs[0], xs[-1], r, ttm)
        out[mask] = np.where(outside, ov, v)
    return out


def _estimate_node(model: MarketModel, payoff: PayoffSpec, driver: LocalPolyDriver,
                   prev: ValueSurface, t: float, x: float, cfg: BranchingConfig,
                   maturity: float, rng: np.random.Generator):
    """One branching estimate; returns (mean, stderr, particles, capped, weight_margin)."""
    N = cfg.paths
    T = maturity
    theta = cfg.tau_mean
    probs = np.array(cfg.offspring_probs)
    cum = np.cumsum(probs)
    min_p = probs[probs > 0].min()

    prod = np.ones(N)
    deaths = np.zeros(N, dtype=np.int64)
    log_dp = np.zeros(N)                       # log of |death factor| product
    birth = np.full(N, float(t))
    pos = np.full((N, model.d), float(x))
    root = np.arange(N)
    total = N
    capped = False
    max_abs_coeff = 0.0

    while root.size:
        n = root.size
        tau = rng.exponential(theta, n)
        z = rng.standard_normal((n, model.d))
        death_t = birth + tau
        surv = death_t >= T

        if np.any(surv):
            dts = T - birth[surv]
            xT = lognormal_step(model, pos[surv], dts, z[surv])
            gT = np.asarray(eval_payoff(payoff, xT if model.d > 1 else xT[..., 0]))
            factor = np.exp(-model.r * dts + dts / theta) * gT
            np.multiply.at(prod, root[surv], factor)

        dead = ~surv
        if np.any(dead):
            tau_d = tau[dead]
            xd = lognormal_step(model, pos[dead], tau_d, z[dead])
            xd_s = xd if model.d > 1 else xd[..., 0]
            yprime = _read_iterate(payoff, prev, death_t[dead], xd_s, model.r)
            aw = driver.degree_weights(xd_s, yprime)      # (nd, l0_drv+1)
            max_abs_coeff = max(max_abs_coeff, float(np.max(np.abs(aw))) if aw.size else 0.0)
            u = rng.random(tau_d.size)
            l = np.searchsorted(cum, u, side="right")
            a_l = np.where(l < aw.shape[-1], np.take_along_axis(aw, np.minimum(l, aw.shape[-1] - 1)[:, None], axis=-1)[:, 0], 0.0)
            inv_rho = theta * np.exp(tau_d / theta)
            w = a_l * np.exp(-model.r * tau_d) * inv_rho / probs[l]
            roots_d = root[dead]
            np.multiply.at(prod, roots_d, w)
            np.add.at(deaths, roots_d, 1)
            with np.errstate(divide="ignore"):
                np.add.at(log_dp, roots_d, np.where(w == 0.0, -np.inf, np.log(np.abs(w))))

            # spawn l offspring at the death position; drop families already at 0
            rep = l
            new_root = np.repeat(roots_d, rep)
            keep = prod[new_root] != 0.0
            new_root = new_root[keep]
            total += new_root.size
            if total > cfg.particle_cap:
                capped = True
                break
            birth = np.repeat(death_t[dead], rep)[keep]
            pos = np.repeat(xd, rep, axis=0)[keep]
            root = new_root
        else:
            root = np.array([], dtype=np.int64)

    # family log-weight bound: deaths * (log C + log sup 1/(p rho))
    sup_inv = theta * np.exp(maturity / theta) / min_p
    margin = -np.inf
    active = deaths > 0
    if max_abs_coeff > 0 and np.any(active):
        bound = deaths[active] * (np.log(max_abs_coeff) + np.log(sup_inv))
        finite = np.isfinite(log_dp[active])
        if np.any(finite):
            margin = float(np.max(log_dp[active][finite] - bound[finite]))

    mean = float(prod.mean())
    se = float(prod.std(ddof=1) / np.sqrt(N)) if N > 1 else 0.0
    return mean, se, total, capped, margin


def price_branching(model: MarketModel, payoff: PayoffSpec, driver: LocalPolyDriver,
                    cfg: BranchingConfig, seed: int, maturity: float = 1.0) -> ValueSurface:
    """Picard-iterated branching estimates at every (time, space) grid node.

    The iterate read by the kernels is stored on the same coarse grid
    (piecewise constant in t, linear in x), starting from the payoff as the
    initial prior.  With an identically-zero driver the estimator reduces,
    path by path, to plain discounted-payoff Monte Carlo on the same RNG
    stream (see ``european_mc``).
    """
    if model.d != 1:
        raise ValueError("branching pricer is one-dimensional")
    times = cfg.time_grid
    if not np.isclose(times[-1], maturity):
        raise ValueError("time grid must end at maturity")
    xs = cfg.space_grid
    g = np.asarray(eval_payoff(payoff, xs))

    if not driver.is_zero:
        a = np.asarray(driver.coeffs(xs))
        l0 = len(cfg.offspring_probs) - 1
        if a.shape[-1] > l0 + 1 and np.any(a[..., l0 + 1:] != 0.0):
            raise ValueError(
                "offspring_probs assigns zero probability to degrees with "
                "non-zero driver coefficients"
            )

    values = np.tile(g, (times.size, 1))      # initial prior: y' = g
    stderr = np.zeros_like(values)
    cap_events: list[tuple[int, int, int]] = []
    max_particles = 0
    weight_margin = -np.inf

    sweeps = 1 if driver.is_zero else cfg.picard_iters
    for sweep in range(sweeps):
        prev = ValueSurface(times=times, axes=(xs,), values=values.copy())
        new_values = values.copy()
        for i, t in enumerate(times):
            for j, x in enumerate(xs):
                if np.isclose(t, maturity):
                    new_values[i, j] = g[j]
                    continue
                rng = derive_rng(seed, sweep, i, j)
                if driver.is_zero:
                    est, se = european_mc(model, payoff, t, x, maturity, cfg.paths, rng)
                    new_values[i, j], stderr[i, j] = est, se
                    continue
                est, se, particles, capped, margin = _estimate_node(
                    model, payoff, driver, prev, t, x, cfg, maturity, rng
                )
                max_particles = max(max_particles, particles)
                weight_margin = max(weight_margin, margin)
                if capped:
                    if cfg.on_cap == "raise":
                        raise InstabilityError(
                            f"particle cap {cfg.particle_cap} hit at node "
                            f"(t={t}, x={x}) in sweep {sweep}",
                            sweep=sweep, node=(i, j),
                        )
                    cap_events.append((sweep, i, j))
                    # keep the previous iterate's value at a capped node
                    new_values[i, j] = prev.values[i, j]
                    stderr[i, j] = np.nan
                else:
                    new_values[i, j], stderr[i, j] = est, se
        values = new_values

    meta = {
        "stderr": stderr,
        "cap_events": cap_events,
        "max_particles": max_particles,
        "weight_margin": weight_margin,
        "seed": seed,
    }
    return ValueSurface(times=times, axes=(xs,), values=values, meta=meta)


@dataclass
class InstabilityMetrics:
    trials: int
    trial_std: np.ndarray        # per-node std of the t=0 estimates across trials
    atm_std: float | None        # std at the node closest to `atm` if given
    capped_fraction: float       # trials with at least one particle-cap event
    max_particles: int

    def rows(self, xs: np.ndarray):
        return list(zip(xs, self.trial_std))


def instability_report(runs: list[ValueSurface], atm: float | None = None) -> InstabilityMetrics:
    """Trial-to-trial dispersion and blow-up statistics over repeated runs."""
    if len(runs) < 10:
        raise ValueError("instability statistics need at least 10 trials")
    t0 = np.array([s.values[0] for s in runs])
    trial_std = t0.std(axis=0, ddof=1)
    xs = runs[0].axes[0]
    atm_std = None
    if atm is not None:
        atm_std = float(trial_std[int(np.argmin(np.abs(xs - atm)))])
    capped = sum(1 for s in runs if s.meta.get("cap_events"))
    return InstabilityMetrics(
        trials=len(runs),
        trial_std=trial_std,
        atm_std=atm_std,
        capped_fraction=capped / len(runs),
        max_particles=max(s.meta.get("max_particles", 0) for s in runs),
    )
