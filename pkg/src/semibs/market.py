"""Risk-neutral asset dynamics under the Black-Scholes-type model.

The stock vector follows dX = r X dt + diag[X] sigma_bar dW under the pricing
measure.  With a constant sigma_bar matrix the SDE has the exact lognormal
solution, which we always sample in log-space so paths stay in (0, inf)^d.
A log-Euler fallback handles state-dependent sigma_bar.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class ConstVol:
    """Constant relative-volatility matrix sigma_bar (d x d)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"sigma_bar must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("sigma_bar entries must be finite")
        # sigma_bar sigma_bar^T is PSD by construction; nothing else to check
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def covariance(self) -> np.ndarray:
        """sigma_bar sigma_bar^T."""
        return self.matrix @ self.matrix.T


@dataclass(frozen=True)
class FnVol:
    """State-dependent sigma_bar(t, x) -> (d x d) matrix."""

    fn: Callable[[float, np.ndarray], np.ndarray]
    dim: int = 1


@dataclass(frozen=True)
class MarketModel:
    r: float
    d: int
    vol: ConstVol | FnVol

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension d must be >= 1")
        if isinstance(self.vol, ConstVol) and self.vol.dim != self.d:
            raise ValueError(
                f"sigma_bar is {self.vol.dim}x{self.vol.dim} but d={self.d}"
            )

    @property
    def is_const_vol(self) -> bool:
        return isinstance(self.vol, ConstVol)

    def sigma_bar(self) -> np.ndarray:
        if not self.is_const_vol:
            raise TypeError("constant sigma_bar requested from a FnVol model")
        return self.vol.matrix


def black_scholes_model(r: float, sigma: float) -> MarketModel:
    """One-dimensional constant-volatility model."""
    return MarketModel(r=r, d=1, vol=ConstVol(np.array([[sigma]])))


@dataclass
class PathSample:
    """States of one simulated path at the requested instants."""

    times: np.ndarray   # (n,) strictly increasing, years
    states: np.ndarray  # (n, d) strictly positive
    seed: object = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.times.ndim != 1 or np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any(self.states <= 0):
            raise ValueError("states must be strictly positive")


def derive_rng(root_seed: int, *key: int) -> np.random.Generator:
    """RNG stream for one (node, trial, ...) task.

    Streams are split from the root seed via numpy's SeedSequence spawn keys:
    ``SeedSequence(root_seed, spawn_key=key)``.  Distinct keys give
    statistically independent streams and the mapping is stable across runs
    and platforms for a fixed numpy version.
    """
    return np.random.default_rng(np.random.SeedSequence(root_seed, spawn_key=key))


def _check_start(model: MarketModel, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (model.d,):
        raise ValueError(f"start point has shape {x.shape}, expected ({model.d},)")
    if np.any(x <= 0):
        raise ValueError("start point must be in (0, inf)^d")
    return x


def lognormal_step(model: MarketModel, x: np.ndarray, dt, z: np.ndarray) -> np.ndarray:
    """Exact one-step transition x -> X_{t+dt} given standard normals z.

    ``x`` and ``z`` broadcast over leading axes with the last axis of length d;
    ``dt`` may be an array broadcasting over the leading axes.  Requires a
    ConstVol model.
    """
    sig = model.sigma_bar()
    drift = model.r - 0.5 * np.diag(sig @ sig.T)
    dt = np.asarray(dt, dtype=float)[..., None]
    incr = np.sqrt(dt) * (z @ sig.T)
    return x * np.exp(drift * dt + incr)


def sample_exact(model: MarketModel, t: float, x, horizons, rng: np.random.Generator) -> PathSample:
    """Exact lognormal sampling of the path at the given horizons.

    Increments between consecutive horizons are independent Gaussians, so the
    marginals are exactly lognormal.  Requires constant sigma_bar.
    """
    x = _check_start(model, x)
    horizons = np.asarray(horizons, dtype=float)
    if horizons.ndim != 1 or horizons.size == 0:
        raise ValueError("horizons must be a non-empty 1-d array")
    if np.any(np.diff(horizons) <= 0) or horizons[0] < t:
        raise ValueError("horizons must be strictly increasing and >= t")

    dts = np.diff(np.concatenate(([t], horizons)))
    states = np.empty((horizons.size, model.d))
    cur = x
    for i, dt in enumerate(dts):
        if dt > 0:
            z = rng.standard_normal(model.d)
            cur = lognormal_step(model, cur, dt, z)
        states[i] = cur
    return PathSample(times=horizons, states=states)


def sample_euler(model: MarketModel, t: float, x, grid, rng: np.random.Generator) -> PathSample:
    """Euler-Maruyama in log-coordinates on the given time grid.

    Positivity is automatic in log-space.  Works for FnVol (and ConstVol, for
    consistency checks).
    """
    x = _check_start(model, x)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("grid must be a non-empty 1-d array")
    if np.any(np.diff(grid) <= 0) or grid[0] < t:
        raise ValueError("grid must be strictly increasing and >= t")

    def sig_at(s, xs):
        if model.is_const_vol:
            return model.sigma_bar()
        m = np.atleast_2d(np.asarray(model.vol.fn(s, xs), dtype=float))
        if not np.all(np.isfinite(m)):
            raise ValueError(f"sigma_bar({s}, {xs}) is not finite")
        return m

    times = np.concatenate(([t], grid)) if grid[0] > t else grid
    logs = np.empty((times.size, model.d))
    logs[0] = np.log(x)
    for i in range(1, times.size):
        dt = times[i] - times[i - 1]
        s_prev = times[i - 1]
        x_prev = np.exp(logs[i - 1])
        sig = sig_at(s_prev, x_prev)
        drift = model.r - 0.5 * np.diag(sig @ sig.T)
        z = rng.standard_normal(model.d)
        logs[i] = logs[i - 1] + drift * dt + np.sqrt(dt) * (sig @ z)
    states = np.exp(logs)
    keep = times >= grid[0]
    return PathSample(times=times[keep], states=states[keep])
