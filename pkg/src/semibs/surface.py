"""Space-time value surfaces shared by the solvers and pricers.

Interpolation rule: piecewise constant in time between stored instants
(a query at time t reads the earliest stored slice at or after t, matching a
backward scheme that updates the value only at its grid times) and
multilinear in space with clamping at the grid edges.  Callers with their own
out-of-range policy apply it before querying.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_FMT = "%.17g"  # full float round-trip precision


@dataclass
class ValueSurface:
    times: np.ndarray                 # (nt,) increasing, last entry is maturity
    axes: tuple[np.ndarray, ...]      # one strictly increasing abscissa array per dim
    values: np.ndarray                # (nt, n1[, n2...])
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        self.values = np.asarray(self.values, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        for a in self.axes:
            if a.ndim != 1 or np.any(np.diff(a) <= 0):
                raise ValueError("each axis must be strictly increasing")
        expected = (self.times.size,) + tuple(a.size for a in self.axes)
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape}, expected {expected}")

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def xs(self) -> np.ndarray:
        if self.ndim != 1:
            raise ValueError("xs is defined for one-dimensional surfaces")
        return self.axes[0]

    def time_index(self, t: float) -> int:
        """Index of the earliest stored time >= t (clamped to the last slice)."""
        i = int(np.searchsorted(self.times, t - 1e-12, side="left"))
        return min(i, self.times.size - 1)

    def slice_at(self, t: float) -> np.ndarray:
        return self.values[self.time_index(t)]

    def interp_slice(self, index: int, pts) -> np.ndarray:
        """Multilinear interpolation of slice ``index`` at pts, clamped."""
        v = self.values[index]
        if self.ndim == 1:
            return np.interp(np.asarray(pts, dtype=float), self.axes[0], v)
        pts = np.asarray(pts, dtype=float)
        out_shape = pts.shape[:-1]
        flat = pts.reshape(-1, self.ndim)
        idx = []
        frac = []
        for k, ax in enumerate(self.axes):
            c = np.clip(flat[:, k], ax[0], ax[-1])
            j = np.clip(np.searchsorted(ax, c, side="right") - 1, 0, ax.size - 2)
            idx.append(j)
            frac.append((c - ax[j]) / (ax[j + 1] - ax[j]))
        if self.ndim != 2:
            raise NotImplementedError("interpolation implemented for d <= 2")
        j0, j1 = idx
        f0, f1 = frac
        out = (
            v[j0, j1] * (1 - f0) * (1 - f1)
            + v[j0 + 1, j1] * f0 * (1 - f1)
            + v[j0, j1 + 1] * (1 - f0) * f1
            + v[j0 + 1, j1 + 1] * f0 * f1
        )
        return out.reshape(out_shape)

    def at(self, t: float, x):
        """Value at (t, x) under the surface's interpolation rule."""
        out = self.interp_slice(self.time_index(t), x)
        return float(out) if np.ndim(out) == 0 else out

    # ------------------------------------------------------------------ CSV

    def to_csv(self, path) -> None:
        """Write as t,x,v rows (d=1 only) at full precision."""
        if self.ndim != 1:
            raise ValueError("CSV surface format is defined for d=1")
        with open(path, "w") as fh:
            fh.write("t,x,v\n")
            for i, t in enumerate(self.times):
                for j, x in enumerate(self.axes[0]):
                    fh.write(
                        f"{_FMT % t},{_FMT % x},{_FMT % self.values[i, j]}\n"
                    )

    @staticmethod
    def from_csv(path) -> "ValueSurface":
        data = np.genfromtxt(path, delimiter=",", skip_header=1)
        data = np.atleast_2d(data)
        times = np.unique(data[:, 0])
        xs = np.unique(data[:, 1])
        values = np.full((times.size, xs.size), np.nan)
        ti = np.searchsorted(times, data[:, 0])
        xi = np.searchsorted(xs, data[:, 1])
        values[ti, xi] = data[:, 2]
        if np.any(np.isnan(values)):
            raise ValueError(f"{path} does not contain a full t-x grid")
        return ValueSurface(times=times, axes=(xs,), values=values)
