"""Stochastic simulation of the mean-field system and of the self-stabilizing diffusion.

Both systems are discretized by Euler-Maruyama on the configured grid, drift
evaluated at the left node.  The law entering the self-stabilizing drift is
replaced by the empirical measure of an independent M-particle proxy system.
The proxy is a single realization per ``(master_seed, sigma, grid)``, shared
by all replicas: it stands in for a deterministic object, and sharing it keeps
the cost of an R-replica experiment at O(R + M) per step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from statsmodels.stats.proportion import proportion_confint

from .errors import BlowUpError, InputError
from .flow import BLOWUP_THRESHOLD, Path, TimeGrid
from .potentials import MultiPoly, RadialInteraction, as_point
from .streams import TAG_PARTICLE, TAG_PROXY, TAG_TRACKED, normals, stream_keys

__all__ = [
    "SimConfig",
    "RareEventEstimate",
    "DeviationEvent",
    "SlopeEstimate",
    "simulate_meanfield",
    "simulate_selfstabilizing",
    "estimate_deviation_probability",
    "ldp_slope",
]

#: Replicas integrated together; bounds memory at roughly chunk * N * (n + 1) * d floats.
REPLICA_CHUNK = 4096


@dataclass(frozen=True)
class SimConfig:
    sigma: float
    n_particles: int
    grid: TimeGrid
    master_seed: int = 0
    replicas: int = 1
    proxy_size: int = 1024

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise InputError("sigma must be a nonnegative number")
        if self.n_particles < 1:
            raise InputError("need at least one particle")
        if self.proxy_size < 2:
            raise InputError("the proxy needs at least two particles")
        if self.replicas < 1:
            raise InputError("need at least one replica")


@dataclass(frozen=True)
class RareEventEstimate:
    p_hat: float
    ci_low: float
    ci_high: float
    hits: int
    replicas: int

    @classmethod
    def from_counts(cls, hits: int, replicas: int) -> "RareEventEstimate":
        """Point estimate with the 95% Wilson score interval."""
        lo, hi = proportion_confint(hits, replicas, alpha=0.05, method="wilson")
        p = hits / replicas
        return cls(p, min(float(lo), p), max(float(hi), p), int(hits), int(replicas))


@dataclass(frozen=True)
class DeviationEvent:
    """``sup_t |X(t) - reference(t)| >= delta`` for the chosen trajectory.

    ``which`` is ``"meanfield_particle1"``, ``"tracked"`` or
    ``"coupling_distance"`` (particle 1 against the tracked self-stabilizing
    path driven by the same noise).  ``reference`` defaults to the zero-noise
    trajectory of the same Euler scheme (the simulator at sigma = 0), so
    that discretization bias does not count as deviation.  It is ignored for
    the coupling event.
    """

    delta: float
    which: str = "meanfield_particle1"
    reference: Path | None = None

    def __post_init__(self):
        if self.which not in ("meanfield_particle1", "tracked", "coupling_distance"):
            raise InputError(f"unknown deviation target {self.which!r}")
        if not self.delta >= 0:
            raise InputError("delta must be nonnegative")


def _check(x: np.ndarray, node: int):
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP_THRESHOLD:
        raise BlowUpError(f"simulation blew up at node {node}", node)


def _meanfield_batch(v, fi, x0, cfg: SimConfig, replicas: np.ndarray, first_only: bool) -> np.ndarray:
    """Euler-Maruyama for a batch of replicas; returns ``(R, N or 1, n+1, d)``."""
    grid = cfg.grid
    n, dt, d = grid.n, grid.dt, v.dimension
    npart = cfg.n_particles
    keys = stream_keys(cfg.master_seed, replicas[:, None], np.arange(npart)[None, :], TAG_PARTICLE)
    state = np.broadcast_to(x0, (len(replicas), npart, d)).copy()
    keep = 1 if first_only else npart
    out = np.empty((len(replicas), keep, n + 1, d))
    out[:, :, 0] = state[:, :keep]
    iu, ju = np.triu_indices(npart, k=1)
    incidence = np.zeros((npart, iu.size))
    incidence[iu, np.arange(iu.size)] = 1.0
    incidence[ju, np.arange(iu.size)] = -1.0
    scale = cfg.sigma * math.sqrt(dt)
    for k in range(n):
        drift = v.gradient(state)
        if iu.size:
            # Each unordered pair once: force on j is minus the force on i.
            pair = fi.gradient(state[:, iu] - state[:, ju])
            drift = drift + np.einsum("np,rpd->rnd", incidence, pair) / npart
        state = state - drift * dt
        if scale:
            state = state + scale * normals(keys, k * d, d)
        _check(state, k + 1)
        out[:, :, k + 1] = state[:, :keep]
    return out


def simulate_meanfield(v: MultiPoly, fi: RadialInteraction, x, cfg: SimConfig, replica_index: int) -> list[Path]:
    """One replica of the N-particle mean-field system started with every particle at ``x``."""
    x0 = as_point(x, v.dimension)
    traj = _meanfield_batch(v, fi, x0, cfg, np.array([replica_index]), first_only=False)[0]
    return [Path(cfg.grid, traj[i]) for i in range(cfg.n_particles)]


@lru_cache(maxsize=8)
def _proxy(v, fi, x0: tuple, sigma: float, grid: TimeGrid, master_seed: int, size: int):
    """Proxy particles ``(n+1, M, d)`` and their interaction moments ``(n+1, nB)``."""
    n, dt, d = grid.n, grid.dt, v.dimension
    kernel = fi.kernel(d)
    keys = stream_keys(master_seed, 0, np.arange(size), TAG_PROXY)
    state = np.broadcast_to(np.array(x0), (size, d)).copy()
    paths = np.empty((n + 1, size, d))
    moments = np.empty((n + 1, kernel.y_exps.shape[0]))
    paths[0] = state
    scale = sigma * math.sqrt(dt)
    for k in range(n):
        moments[k] = kernel.moments(state)
        state = state - (v.gradient(state) + kernel.force(state, moments[k])) * dt
        if scale:
            state = state + scale * normals(keys, k * d, d)
        _check(state, k + 1)
        paths[k + 1] = state
    moments[n] = kernel.moments(state)
    paths.setflags(write=False)
    moments.setflags(write=False)
    return paths, moments, kernel


def _tracked_batch(v, fi, x0, cfg: SimConfig, replicas: np.ndarray, shared_first_noise: bool) -> np.ndarray:
    """Self-stabilizing trajectories ``(R, n+1, d)`` driven by the proxy's empirical law."""
    grid = cfg.grid
    n, dt, d = grid.n, grid.dt, v.dimension
    _, moments, kernel = _proxy(v, fi, tuple(x0), float(cfg.sigma), grid, int(cfg.master_seed), int(cfg.proxy_size))
    if shared_first_noise:
        keys = stream_keys(cfg.master_seed, replicas, 0, TAG_PARTICLE)
    else:
        keys = stream_keys(cfg.master_seed, replicas, 0, TAG_TRACKED)
    state = np.broadcast_to(x0, (len(replicas), d)).copy()
    out = np.empty((len(replicas), n + 1, d))
    out[:, 0] = state
    scale = cfg.sigma * math.sqrt(dt)
    for k in range(n):
        drift = v.gradient(state) + kernel.force(state, moments[k])
        state = state - drift * dt
        if scale:
            state = state + scale * normals(keys, k * d, d)
        _check(state, k + 1)
        out[:, k + 1] = state
    return out


def simulate_selfstabilizing(
    v: MultiPoly,
    fi: RadialInteraction,
    x,
    cfg: SimConfig,
    replica_index: int,
    shared_first_noise: bool = True,
) -> tuple[Path, list[Path]]:
    """Tracked self-stabilizing trajectory and the proxy particles that define its law.

    With ``shared_first_noise`` the tracked path reuses the noise of particle 1
    of :func:`simulate_meanfield` for the same seed and replica.
    """
    x0 = as_point(x, v.dimension)
    paths, _, _ = _proxy(v, fi, tuple(x0), float(cfg.sigma), cfg.grid, int(cfg.master_seed), int(cfg.proxy_size))
    tracked = _tracked_batch(v, fi, x0, cfg, np.array([replica_index]), shared_first_noise)[0]
    return Path(cfg.grid, tracked), [Path(cfg.grid, paths[:, j]) for j in range(cfg.proxy_size)]


def _euler_flow(v, x0: np.ndarray, grid: TimeGrid) -> Path:
    """Zero-noise trajectory of the simulators' scheme (all particles coincide, so interactions vanish)."""
    out = np.empty((grid.n + 1, x0.size))
    out[0] = state = x0
    for k in range(grid.n):
        state = state - v.gradient(state) * grid.dt
        _check(state, k + 1)
        out[k + 1] = state
    return Path(grid, out)


def _sup_dev(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.max(np.linalg.norm(a - b, axis=-1), axis=-1)


def estimate_deviation_probability(
    event: DeviationEvent,
    v: MultiPoly,
    fi: RadialInteraction,
    x,
    cfg: SimConfig,
) -> RareEventEstimate:
    """Monte Carlo probability of ``event`` over ``cfg.replicas`` independent replicas."""
    x0 = as_point(x, v.dimension)
    if event.which != "coupling_distance":
        ref = event.reference or _euler_flow(v, x0, cfg.grid)
        if ref.grid != cfg.grid:
            raise InputError("reference path must live on the simulation grid")
        ref_vals = ref.values
    hits = 0
    for lo in range(0, cfg.replicas, REPLICA_CHUNK):
        reps = np.arange(lo, min(lo + REPLICA_CHUNK, cfg.replicas))
        if event.which == "meanfield_particle1":
            dev = _sup_dev(_meanfield_batch(v, fi, x0, cfg, reps, first_only=True)[:, 0], ref_vals)
        elif event.which == "tracked":
            dev = _sup_dev(_tracked_batch(v, fi, x0, cfg, reps, shared_first_noise=True), ref_vals)
        else:
            p1 = _meanfield_batch(v, fi, x0, cfg, reps, first_only=True)[:, 0]
            dev = _sup_dev(p1, _tracked_batch(v, fi, x0, cfg, reps, shared_first_noise=True))
        hits += int(np.count_nonzero(dev >= event.delta))
    return RareEventEstimate.from_counts(hits, cfg.replicas)


@dataclass(frozen=True)
class SlopeEstimate:
    slope: float
    per_point: np.ndarray
    spread: float
    sigmas: np.ndarray


def ldp_slope(points: Sequence[tuple[float, float]]) -> SlopeEstimate:
    """Small-noise exponent ``sigma^2 / 2 * log p`` per point; the slope is taken at the smallest sigma."""
    pts = [(float(s), float(p)) for s, p in points]
    if len(pts) < 2:
        raise InputError("need at least two (sigma, p_hat) points")
    sig = np.array([s for s, _ in pts])
    p = np.array([q for _, q in pts])
    if len(set(sig.tolist())) != len(sig) or np.any(sig <= 0):
        raise InputError("sigmas must be positive and distinct")
    if np.any(p <= 0) or np.any(p > 1):
        raise InputError("every probability must lie in (0, 1]; increase replicas or lower delta")
    per = 0.5 * sig**2 * np.log(p)
    return SlopeEstimate(float(per[np.argmin(sig)]), per, float(per.max() - per.min()), sig)
