"""Direct minimization of the projected N-particle rate over companion paths.

The objective is the discrete system action with particle 1 held fixed and
the other ``N - 1`` paths free (node 0 pinned at the start point).  It is
minimized by preconditioned Polak-Ribiere conjugate gradients with Armijo
backtracking.  The preconditioner is the Hessian of the kinetic part of the
action, a tridiagonal matrix in time, which removes the ``n**2`` conditioning
of path-space problems.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded
from scipy.optimize import minimize

from .action import PairModel, _stack, system_action, general_system_action
from .errors import BlowUpError, InputError, OptimizerError
from .flow import Path, TimeGrid, solve_deterministic_flow
from .potentials import InteractionFlow, MultiPoly, RadialInteraction, _sphere_directions

__all__ = [
    "OptimizerConfig",
    "MinimizationResult",
    "ResidualField",
    "ShellInfimum",
    "system_action_gradient",
    "minimize_companions",
    "euler_lagrange_residual",
    "deviation_shell_infimum",
]


@dataclass(frozen=True)
class OptimizerConfig:
    max_iterations: int = 10000
    gradient_tolerance: float = 1e-8
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    restart_period: int | None = None  # None: number of free variables
    symmetric_mode: bool = True

    def __post_init__(self):
        if not 0.0 < self.armijo_c < 1.0:
            raise InputError("armijo_c must lie in (0, 1)")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise InputError("backtrack_factor must lie in (0, 1)")
        if self.max_iterations < 1:
            raise InputError("max_iterations must be positive")
        if not self.gradient_tolerance > 0:
            raise InputError("gradient_tolerance must be positive")


@dataclass(frozen=True)
class MinimizationResult:
    value: float
    companions: tuple[Path, ...]
    iterations: int
    final_gradient_norm: float
    converged: bool
    gradient_tolerance: float = math.nan
    history: np.ndarray = field(default=None, repr=False)


@dataclass(frozen=True)
class ResidualField:
    xi: np.ndarray  # (N, n, d) at interval midpoints
    sup_norms: np.ndarray  # (N,)


#: Relative size of the staggered start used in full mode.
_FULL_MODE_SPREAD = 1e-2


def _objective(model: PairModel, stack: np.ndarray, grid: TimeGrid, with_grad: bool = True,
               weights: np.ndarray | None = None):
    """Discrete system action and its gradient with respect to every node of every path.

    ``weights[k]`` is the number of particles that follow path ``k`` (all
    ones by default).  The gradient of path ``k`` is the total derivative when
    its copies move together.
    """
    dt = grid.dt
    m = np.ones(stack.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    n_part = m.sum()
    mids = 0.5 * (stack[:, 1:] + stack[:, :-1])
    incr = np.diff(stack, axis=1) / dt
    xm, ym = mids[:, None], mids[None, :]
    pair = np.einsum("k,jkid->jid", m, model.force(xm, ym)) / n_part
    xi = incr + model.v.gradient(mids) + pair + model.ldot(grid)
    value = 0.25 * dt * float(np.einsum("p,pid,pid->", m, xi, xi))
    if not math.isfinite(value):
        raise OptimizerError("system action is not finite")
    if not with_grad:
        return value, xi, None
    w = 0.5 * dt * xi
    jx, jy = model.force_jacobians(xm, ym)
    g_mid = m[:, None, None] * (
        np.einsum("jiab,jia->jib", model.v.hessian(mids), w)
        + np.einsum("k,jkiab,jia->jib", m, jx, w) / n_part
        + np.einsum("k,kjiab,kia->jib", m, jy, w) / n_part
    )
    wm = m[:, None, None] * w
    grad = np.zeros_like(stack)
    grad[:, 1:] += wm / dt + 0.5 * g_mid
    grad[:, :-1] += -wm / dt + 0.5 * g_mid
    return value, xi, grad


def _model_for(v, fi, flow, drive) -> PairModel:
    if flow is not None:
        return PairModel(v, a=flow, drive=drive)
    if fi is None:
        raise InputError("a radial interaction is required for the standard model")
    return PairModel(v, fi)


def _assemble(f: Path, companions: Sequence[Path], n_particles: int, symmetric: bool, d: int):
    if symmetric:
        if len(companions) != 1:
            raise InputError("symmetric mode takes exactly one companion path")
        paths = [f] + [companions[0]] * (n_particles - 1)
    else:
        if len(companions) != n_particles - 1:
            raise InputError(f"expected {n_particles - 1} companion paths, got {len(companions)}")
        paths = [f] + list(companions)
    return _stack(paths, d)


def system_action_gradient(
    v: MultiPoly,
    fi: RadialInteraction | None,
    f: Path,
    companions: Sequence[Path],
    n_particles: int | None = None,
    symmetric: bool = False,
    flow: InteractionFlow | None = None,
    drive: Path | None = None,
) -> np.ndarray:
    """Gradient of the discrete system action with respect to the free companion nodes.

    Returns an array of shape ``(len(companions), n, d)`` covering nodes
    ``1..n``.  In symmetric mode the single companion stands for all ``N - 1``
    of them and the gradient is the sum over the copies.
    """
    if n_particles is None:
        if symmetric:
            raise InputError("symmetric mode needs the particle count")
        n_particles = len(companions) + 1
    model = _model_for(v, fi, flow, drive)
    stack, grid = _assemble(f, companions, n_particles, symmetric, v.dimension)
    _, _, grad = _objective(model, stack, grid)
    if symmetric:
        return grad[1:, 1:].sum(axis=0)[None]
    return grad[1:, 1:]


class _KineticPreconditioner:
    """Solve with ``weight * (L / (2 dt) + dt/2 I)``, L the path Laplacian with node 0 pinned."""

    def __init__(self, n: int, dt: float, weight: float):
        diag = np.full(n, 2.0 / (2.0 * dt) + 0.5 * dt)
        diag[-1] = 1.0 / (2.0 * dt) + 0.5 * dt
        upper = np.full(n, -1.0 / (2.0 * dt))
        upper[0] = 0.0
        self._chol = cholesky_banded(weight * np.vstack([upper, diag]))

    def __call__(self, g: np.ndarray) -> np.ndarray:
        # g: (paths, n, d) -> time along axis 0 for the banded solver
        k, n, d = g.shape
        rhs = np.moveaxis(g, 1, 0).reshape(n, k * d)
        sol = cho_solve_banded((self._chol, False), rhs)
        return np.moveaxis(sol.reshape(n, k, d), 0, 1)


def minimize_companions(
    v: MultiPoly,
    fi: RadialInteraction | None,
    f: Path,
    n_particles: int,
    cfg: OptimizerConfig | None = None,
    flow: InteractionFlow | None = None,
    drive: Path | None = None,
) -> MinimizationResult:
    """Projected rate of ``f`` by minimizing the system action over companion paths.

    Passing ``flow`` (and optionally ``drive``) selects the general model;
    ``fi`` is then ignored.  Companions start on the zero-noise flow from
    ``f(0)``.  The minimum found is local; non-convergence is reported through
    ``converged`` rather than raised.
    """
    cfg = cfg or OptimizerConfig()
    if int(n_particles) != n_particles or n_particles < 2:
        raise InputError("need an integer N >= 2")
    n_particles = int(n_particles)
    model = _model_for(v, fi, flow, drive)
    if f.dimension != v.dimension:
        raise InputError("path dimension differs from the potential")
    grid = f.grid
    n, d = grid.n, v.dimension
    n_comp = 1 if cfg.symmetric_mode else n_particles - 1
    copies = n_particles - 1 if cfg.symmetric_mode else 1

    try:
        init = model.typical_path(f.start, grid).values
    except BlowUpError as exc:
        raise OptimizerError(f"initial flow blew up at node {exc.node}") from exc
    free = np.broadcast_to(init[1:], (n_comp, n, d)).copy()
    if n_comp > 1:
        # Full mode starts the companions slightly apart, so that an
        # asymmetric minimizer is not hidden by a symmetric start.
        t = grid.nodes[1:] / grid.horizon
        scale = _FULL_MODE_SPREAD * (1.0 + float(np.max(np.abs(init))))
        offsets = (np.arange(n_comp) - 0.5 * (n_comp - 1)) / n_comp
        free += scale * offsets[:, None, None] * np.sin(np.pi * t)[None, :, None]
    start = f.start

    # Symmetric mode: one companion path carrying N - 1 particles.
    weights = np.array([1.0, n_particles - 1.0]) if cfg.symmetric_mode else None

    def build(z):
        comp = np.concatenate([np.broadcast_to(start, (n_comp, 1, d)), z], axis=1)
        return np.concatenate([f.values[None], comp], axis=0)

    def evaluate(z, with_grad=True):
        value, _, grad = _objective(model, build(z), grid, with_grad, weights)
        return value, (None if grad is None else grad[1:, 1:])

    precond = _KineticPreconditioner(n, grid.dt, float(copies))
    restart = cfg.restart_period or free.size

    value, grad = evaluate(free)
    gnorm = float(np.max(np.abs(grad)))
    tol = cfg.gradient_tolerance * (1.0 + gnorm)
    history = [value]
    z_prev = precond(grad)
    direction = -z_prev
    g_dot_z = float(np.vdot(grad, z_prev))
    alpha_guess = 1.0
    it = 0
    converged = gnorm <= tol

    def acceptable(trial, alpha, slope, slope_trial):
        # Close to the minimum, value differences drown in rounding; a drop
        # of the directional derivative then certifies progress instead.
        if trial <= value + cfg.armijo_c * alpha * slope:
            return True
        noise = 64.0 * np.finfo(float).eps * max(1.0, abs(value))
        return abs(trial - value) <= noise and abs(slope_trial) <= 0.5 * abs(slope)

    while not converged and it < cfg.max_iterations:
        slope = float(np.vdot(grad, direction))
        if slope >= 0.0:
            z_prev = precond(grad)
            direction = -z_prev
            slope = float(np.vdot(grad, direction))
        alpha = alpha_guess
        step = None
        for _ in range(80):
            trial, g_trial = evaluate(free + alpha * direction)
            slope_trial = float(np.vdot(g_trial, direction))
            if acceptable(trial, alpha, slope, slope_trial):
                step = (alpha, trial, g_trial)
                break
            alpha *= cfg.backtrack_factor
        if step is None:
            break
        # One secant refinement on the directional derivative.
        if slope_trial > slope and abs(slope_trial) > 1e-3 * abs(slope):
            alpha_s = alpha * slope / (slope - slope_trial)
            if alpha_s > 0.0 and not math.isclose(alpha_s, alpha, rel_tol=1e-3):
                trial_s, g_s = evaluate(free + alpha_s * direction)
                slope_s = float(np.vdot(g_s, direction))
                if trial_s <= trial and acceptable(trial_s, alpha_s, slope, slope_s):
                    step = (alpha_s, trial_s, g_s)
        alpha, value, grad_new = step
        free = free + alpha * direction
        history.append(value)
        it += 1
        gnorm = float(np.max(np.abs(grad_new)))
        if gnorm <= tol:
            grad = grad_new
            converged = True
            break
        z_new = precond(grad_new)
        if it % restart == 0:
            beta = 0.0
        else:
            beta = max(0.0, float(np.vdot(grad_new, z_new - z_prev)) / g_dot_z)
        direction = -z_new + beta * direction
        alpha_guess = min(1.0, 2.0 * alpha) if beta == 0.0 else alpha
        grad, z_prev = grad_new, z_new
        g_dot_z = float(np.vdot(grad, z_prev))

    companions = tuple(
        Path(grid, np.concatenate([start[None], free[k]], axis=0)) for k in range(n_comp)
    )
    paths = [f] + (list(companions) * (n_particles - 1) if cfg.symmetric_mode else list(companions))
    if flow is not None:
        final = general_system_action(v, flow, drive, paths).total
    else:
        final = system_action(v, fi, paths).total
    return MinimizationResult(
        value=final,
        companions=companions,
        iterations=it,
        final_gradient_norm=gnorm,
        converged=converged,
        gradient_tolerance=tol,
        history=np.array(history),
    )


def euler_lagrange_residual(
    v: MultiPoly,
    fi: RadialInteraction | None,
    f: Path,
    companions: Sequence[Path],
    n_particles: int | None = None,
    flow: InteractionFlow | None = None,
    drive: Path | None = None,
) -> ResidualField:
    """Residuals ``xi_i`` at interval midpoints, particle 1 being ``f``.

    A single companion with ``n_particles > 2`` is replicated ``N - 1`` times.
    """
    if n_particles is None:
        n_particles = len(companions) + 1
    symmetric = len(companions) == 1 and n_particles > 2
    model = _model_for(v, fi, flow, drive)
    stack, grid = _assemble(f, companions, n_particles, symmetric, v.dimension)
    xi = model.residuals(stack, grid)
    return ResidualField(xi, np.max(np.linalg.norm(xi, axis=-1), axis=1))


@dataclass(frozen=True)
class ShellInfimum:
    value: float
    path: Path
    time_index: int
    direction: np.ndarray


def _single_action(v, fi, ref_mid, values, dt):
    mids = 0.5 * (values[1:] + values[:-1])
    xi = np.diff(values, axis=0) / dt + v.gradient(mids) + fi.gradient(mids - ref_mid)
    value = 0.25 * dt * float(np.sum(xi * xi))
    w = 0.5 * dt * xi
    hess = v.hessian(mids) + fi.hessian(mids - ref_mid)
    g_mid = np.einsum("iab,ia->ib", hess, w)
    grad = np.zeros_like(values)
    grad[1:] += w / dt + 0.5 * g_mid
    grad[:-1] += -w / dt + 0.5 * g_mid
    return value, grad


def deviation_shell_infimum(
    v: MultiPoly,
    fi: RadialInteraction,
    x,
    grid: TimeGrid,
    delta: float,
    time_indices: Sequence[int] | None = None,
    directions: int = 16,
) -> ShellInfimum:
    """Infimum of the self-stabilizing rate over paths leaving the ``delta``-tube around the zero-noise flow.

    For each candidate node ``k`` and direction ``e`` the path is pinned at
    ``psi(t_k) + delta * e`` and the rate minimized over the remaining nodes
    (L-BFGS with the analytic gradient); the smallest value wins.
    """
    if not delta > 0:
        raise InputError("delta must be positive")
    psi = solve_deterministic_flow(v, x, grid)
    ref_mid = psi.midvalues
    n, d = grid.n, v.dimension
    if time_indices is None:
        time_indices = sorted({int(round(k)) for k in np.linspace(n / 8, n, 8)})
    dirs = _sphere_directions(d, 2 if d == 1 else directions)
    best = None
    for k in time_indices:
        for e in dirs:
            target = psi.values[k] + delta * e
            mask = np.ones(n + 1, dtype=bool)
            mask[[0, k]] = False
            base = psi.values.copy()
            base[k] = target
            # Initial guess: linear ramp of the offset up to t_k, then held.
            ramp = np.minimum(np.arange(n + 1) / k, 1.0)[:, None] * (delta * e)
            guess = (psi.values + ramp)[mask]

            def fun(z, base=base, mask=mask):
                vals = base.copy()
                vals[mask] = z.reshape(-1, d)
                val, grad = _single_action(v, fi, ref_mid, vals, grid.dt)
                return val, grad[mask].ravel()

            res = minimize(fun, guess.ravel(), jac=True, method="L-BFGS-B",
                           options={"maxiter": 20000, "gtol": 1e-12, "ftol": 1e-15})
            if best is None or res.fun < best[0]:
                vals = base.copy()
                vals[mask] = res.x.reshape(-1, d)
                best = (float(res.fun), Path(grid, vals), k, e)
    return ShellInfimum(*best)
