"""Fixed-grid deterministic flows.

All trajectories live on a uniform :class:`TimeGrid`.  Integration is the
classical fourth-order Runge-Kutta scheme with four substeps per grid
interval; forcing paths are read by linear interpolation between nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import BlowUpError, InputError
from .potentials import InteractionFlow, MultiPoly, RadialInteraction, as_point

__all__ = [
    "TimeGrid",
    "Path",
    "solve_deterministic_flow",
    "solve_companion_flow",
    "BLOWUP_THRESHOLD",
    "SUBSTEPS",
]

BLOWUP_THRESHOLD = 1e12
SUBSTEPS = 4


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    n: int

    def __post_init__(self):
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise InputError("time horizon must be a positive finite number")
        if int(self.n) != self.n or self.n < 2:
            raise InputError("a time grid needs at least two intervals")
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "n", int(self.n))

    @property
    def dt(self) -> float:
        return self.horizon / self.n

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.dt

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.dt

    def refined(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.horizon, self.n * factor)


class Path:
    """Trajectory sampled on a grid; ``values[0]`` is the start point.

    The values array is copied and frozen on construction.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: TimeGrid, values):
        arr = np.array(values, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] != grid.n + 1:
            raise InputError(f"path values must have shape ({grid.n + 1}, d), got {np.shape(values)}")
        if not np.all(np.isfinite(arr)):
            raise InputError("path values must be finite")
        arr.setflags(write=False)
        self.grid = grid
        self.values = arr

    @classmethod
    def from_function(cls, grid: TimeGrid, fn: Callable) -> "Path":
        """Sample ``fn(t)`` (vectorized over a time array) on the grid nodes."""
        t = grid.nodes
        vals = np.asarray(fn(t), dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        return cls(grid, vals)

    @classmethod
    def constant(cls, grid: TimeGrid, x) -> "Path":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(grid, np.broadcast_to(x, (grid.n + 1, x.size)))

    @property
    def start(self) -> np.ndarray:
        return self.values[0]

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    @property
    def increments(self) -> np.ndarray:
        """Forward difference quotients, one per interval: shape ``(n, d)``."""
        return np.diff(self.values, axis=0) / self.grid.dt

    @property
    def midvalues(self) -> np.ndarray:
        return 0.5 * (self.values[1:] + self.values[:-1])

    def at(self, interval: int, theta: float) -> np.ndarray:
        """Linear interpolation at ``t = (interval + theta) * dt``."""
        v = self.values
        if theta == 0.0:
            return v[interval]
        return v[interval] + theta * (v[interval + 1] - v[interval])

    def sup_distance(self, other: "Path") -> float:
        return float(np.max(np.linalg.norm(self.values - other.values, axis=1)))

    def __repr__(self):
        return f"Path(n={self.grid.n}, T={self.grid.horizon}, d={self.dimension}, start={self.start.tolist()})"


def _check_state(y: np.ndarray, node: int):
    if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > BLOWUP_THRESHOLD:
        raise BlowUpError(f"trajectory blew up at node {node}", node)


def _integrate(rhs, x0: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """RK4 with ``SUBSTEPS`` substeps per interval; ``rhs(interval, theta, y)``."""
    n = grid.n
    h = grid.dt / SUBSTEPS
    dtheta = 1.0 / SUBSTEPS
    out = np.empty((n + 1, x0.size))
    y = x0.copy()
    out[0] = y
    for i in range(n):
        # overflow inside a step surfaces as BlowUpError below
        with np.errstate(over="ignore", invalid="ignore"):
            for s in range(SUBSTEPS):
                th = s * dtheta
                k1 = rhs(i, th, y)
                k2 = rhs(i, th + 0.5 * dtheta, y + 0.5 * h * k1)
                k3 = rhs(i, th + 0.5 * dtheta, y + 0.5 * h * k2)
                k4 = rhs(i, th + dtheta, y + h * k3)
                y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _check_state(y, i + 1)
        out[i + 1] = y
    return out


def solve_deterministic_flow(
    v: MultiPoly,
    x,
    grid: TimeGrid,
    a: InteractionFlow | None = None,
    drive: Path | None = None,
) -> Path:
    """Zero-noise flow ``dPsi/dt = -grad V(Psi) - A(Psi, Psi) - dl/dt`` from ``x``.

    Without ``a`` (and ``drive``) this is the plain gradient flow of ``v``.
    ``drive`` is the path ``l``; its velocity is the per-interval difference
    quotient, consistent with linear interpolation between nodes.
    """
    d = v.dimension
    x0 = as_point(x, d)
    ldot = None
    if drive is not None:
        if drive.grid != grid:
            raise InputError("drive path must live on the integration grid")
        if drive.dimension != d:
            raise InputError("drive path dimension differs from the potential")
        if np.any(drive.start != 0.0):
            raise InputError("drive path must start at 0")
        ldot = drive.increments
    if a is not None and a.dimension != d:
        raise InputError("interaction flow dimension differs from the potential")

    def rhs(i, th, y):
        out = -v.gradient(y)
        if a is not None:
            out = out - a(y, y)
        if ldot is not None:
            out = out - ldot[i]
        return out

    return Path(grid, _integrate(rhs, x0, grid))


def solve_companion_flow(
    v: MultiPoly,
    fi: RadialInteraction,
    f: Path,
    n_particles: float,
) -> Path:
    """Companion trajectory ``dPsi/dt = -grad V(Psi) - (1/N) grad F(Psi - f)`` from ``f(0)``.

    ``n_particles`` may be ``math.inf``, in which case the interaction term is
    dropped and the result is the zero-noise flow started at ``f(0)``.
    """
    if not (n_particles == math.inf or (int(n_particles) == n_particles and n_particles >= 1)):
        raise InputError("number of particles must be a positive integer or infinity")
    if f.dimension != v.dimension:
        raise InputError("path dimension differs from the potential")
    inv_n = 0.0 if n_particles == math.inf else 1.0 / n_particles
    if inv_n == 0.0:
        return solve_deterministic_flow(v, f.start, f.grid)

    def rhs(i, th, y):
        return -v.gradient(y) - inv_n * fi.gradient(y - f.at(i, th))

    return Path(f.grid, _integrate(rhs, f.start.copy(), f.grid))
