"""Polynomial potentials: confining landscape, radial interaction and interaction flows.

Everything here is exact polynomial arithmetic.  Gradients and Hessians are
obtained by differentiating the coefficient tables, never numerically.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.special import ndtri
from scipy.stats import qmc

from .errors import HypothesisError, InputError

__all__ = [
    "MultiPoly",
    "RadialInteraction",
    "InteractionFlow",
    "MeanFieldKernel",
    "HypothesisReport",
    "eval_confining",
    "eval_interaction",
    "eval_interaction_flow",
    "validate_hypotheses",
    "as_point",
]

#: Fixed seed for sampled checks, so reports are reproducible.
_CHECK_SEED = 20140704


def as_point(x, d: int) -> np.ndarray:
    """Return ``x`` as a float vector of length ``d`` or raise InputError."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.shape != (d,):
        raise InputError(f"expected a point of dimension {d}, got shape {np.shape(x)}")
    return arr


def _grlex_key(exps: tuple[int, ...]):
    return (sum(exps), exps)


@dataclass(frozen=True, eq=True)
class MultiPoly:
    """Multivariate polynomial ``sum_k c_k * prod_j x_j**e_kj`` in canonical form.

    Terms with equal exponents are merged, zero coefficients dropped and the
    remainder sorted in graded lexicographic order, so two equal polynomials
    have identical ``terms``.
    """

    dimension: int
    terms: tuple[tuple[float, tuple[int, ...]], ...] = ()

    def __post_init__(self):
        d = int(self.dimension)
        if d < 1:
            raise InputError("polynomial dimension must be positive")
        merged: dict[tuple[int, ...], float] = {}
        for coef, exps in self.terms:
            exps = tuple(int(e) for e in exps)
            if len(exps) != d:
                raise InputError(f"exponent tuple {exps} does not have length {d}")
            if any(e < 0 for e in exps):
                raise InputError(f"negative exponent in {exps}")
            c = float(coef)
            if not math.isfinite(c):
                raise InputError(f"non-finite coefficient {coef!r}")
            merged[exps] = merged.get(exps, 0.0) + c
        canon = tuple(
            (c, e) for e, c in sorted(merged.items(), key=lambda it: _grlex_key(it[0])) if c != 0.0
        )
        object.__setattr__(self, "dimension", d)
        object.__setattr__(self, "terms", canon)

    # -- construction -------------------------------------------------------
    @classmethod
    def from_terms(cls, terms: Iterable, dimension: int | None = None) -> "MultiPoly":
        """Build from ``[(coef, [e_1, ..., e_d]), ...]``; infers ``d`` if not given."""
        terms = [(c, tuple(np.atleast_1d(e).astype(int).tolist())) for c, e in terms]
        if dimension is None:
            if not terms:
                raise InputError("cannot infer the dimension of an empty term list")
            dimension = len(terms[0][1])
        return cls(dimension, tuple(terms))

    @classmethod
    def constant(cls, value: float, dimension: int) -> "MultiPoly":
        return cls(dimension, ((value, (0,) * dimension),))

    @classmethod
    def variable(cls, index: int, dimension: int) -> "MultiPoly":
        exps = [0] * dimension
        exps[index] = 1
        return cls(dimension, ((1.0, tuple(exps)),))

    def to_terms(self) -> list[tuple[float, list[int]]]:
        return [(c, list(e)) for c, e in self.terms]

    # -- algebra ------------------------------------------------------------
    def _coerce(self, other) -> "MultiPoly":
        if isinstance(other, MultiPoly):
            if other.dimension != self.dimension:
                raise InputError("polynomial dimensions differ")
            return other
        return MultiPoly.constant(float(other), self.dimension)

    def __add__(self, other):
        other = self._coerce(other)
        return MultiPoly(self.dimension, self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self):
        return MultiPoly(self.dimension, tuple((-c, e) for c, e in self.terms))

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        other = self._coerce(other)
        prod = [
            (c1 * c2, tuple(a + b for a, b in zip(e1, e2)))
            for (c1, e1), (c2, e2) in itertools.product(self.terms, other.terms)
        ]
        return MultiPoly(self.dimension, tuple(prod))

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if int(k) != k or k < 0:
            raise InputError("only nonnegative integer powers are supported")
        out = MultiPoly.constant(1.0, self.dimension)
        for _ in range(int(k)):
            out = out * self
        return out

    def embed(self, dimension: int, offset: int) -> "MultiPoly":
        """Reinterpret as a polynomial in ``dimension`` variables, own variables starting at ``offset``."""
        if offset < 0 or offset + self.dimension > dimension:
            raise InputError("embedding does not fit")
        terms = []
        for c, e in self.terms:
            full = [0] * dimension
            full[offset : offset + self.dimension] = e
            terms.append((c, tuple(full)))
        return MultiPoly(dimension, tuple(terms))

    def derivative(self, index: int) -> "MultiPoly":
        terms = []
        for c, e in self.terms:
            if e[index] > 0:
                de = list(e)
                de[index] -= 1
                terms.append((c * e[index], tuple(de)))
        return MultiPoly(self.dimension, tuple(terms))

    @property
    def degree(self) -> int:
        return max((sum(e) for _, e in self.terms), default=0)

    @property
    def constant_term(self) -> float:
        zero = (0,) * self.dimension
        return next((c for c, e in self.terms if e == zero), 0.0)

    # -- evaluation ---------------------------------------------------------
    @cached_property
    def _tables(self):
        if not self.terms:
            return np.zeros(0), np.zeros((0, self.dimension), dtype=int)
        coef = np.array([c for c, _ in self.terms])
        exps = np.array([e for _, e in self.terms], dtype=int)
        return coef, exps

    @cached_property
    def _gradient_polys(self) -> tuple["MultiPoly", ...]:
        return tuple(self.derivative(j) for j in range(self.dimension))

    @cached_property
    def _hessian_polys(self) -> dict[tuple[int, int], "MultiPoly"]:
        g = self._gradient_polys
        return {(i, j): g[i].derivative(j) for i in range(self.dimension) for j in range(i, self.dimension)}

    def monomials(self, x) -> np.ndarray:
        """Monomial values, shape ``(..., n_terms)`` for ``x`` of shape ``(..., d)``."""
        x = np.asarray(x, dtype=float)
        coef, exps = self._tables
        if exps.shape[0] == 0:
            return np.zeros(x.shape[:-1] + (0,))
        powers = x[..., :, None] ** np.arange(exps.max() + 1)
        picked = powers[..., np.arange(self.dimension)[None, :], exps]
        return picked.prod(axis=-1)

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dimension,):
            raise InputError(f"expected trailing dimension {self.dimension}, got shape {x.shape}")
        coef, _ = self._tables
        if coef.size == 0:
            return np.zeros(x.shape[:-1])
        return self.monomials(x) @ coef

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.stack([p.value(x) for p in self._gradient_polys], axis=-1)

    def hessian(self, x) -> np.ndarray:
        # Upper triangle only, mirrored, so the result is bitwise symmetric.
        x = np.asarray(x, dtype=float)
        d = self.dimension
        out = np.empty(x.shape[:-1] + (d, d))
        for (i, j), p in self._hessian_polys.items():
            out[..., i, j] = p.value(x)
            out[..., j, i] = out[..., i, j]
        return out


@dataclass(frozen=True)
class RadialInteraction:
    """Radial interaction ``F(x) = H(|x|^2)`` with ``H(s) = sum_{k>=1} c_k s^k``.

    ``h_coeffs`` lists ``c_1..c_m``; there is no constant term, so ``F(0) = 0``.
    """

    h_coeffs: tuple[float, ...]

    def __post_init__(self):
        coeffs = tuple(float(c) for c in np.atleast_1d(self.h_coeffs))
        if not coeffs:
            raise HypothesisError("H needs at least one coefficient", "F2")
        if not all(math.isfinite(c) for c in coeffs):
            raise InputError("non-finite interaction coefficient")
        if coeffs[-1] <= 0.0:
            raise HypothesisError(
                f"leading coefficient of H must be positive (got {coeffs[-1]}), "
                "otherwise G(r) does not diverge to +infinity",
                "F3",
            )
        object.__setattr__(self, "h_coeffs", coeffs)

    @cached_property
    def _series(self):
        h = np.concatenate([[0.0], self.h_coeffs])
        dh = npoly.polyder(h)
        d2h = npoly.polyder(dh) if dh.size > 1 else np.zeros(1)
        return h, dh, d2h

    def H(self, s):
        return npoly.polyval(s, self._series[0])

    def dH(self, s):
        return npoly.polyval(s, self._series[1])

    def d2H(self, s):
        return npoly.polyval(s, self._series[2])

    def value(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self.H(np.einsum("...i,...i->...", z, z))

    def gradient(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        s = np.einsum("...i,...i->...", z, z)
        return 2.0 * self.dH(s)[..., None] * z

    def hessian(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        d = z.shape[-1]
        s = np.einsum("...i,...i->...", z, z)
        outer = z[..., :, None] * z[..., None, :]
        return 2.0 * self.dH(s)[..., None, None] * np.eye(d) + 4.0 * self.d2H(s)[..., None, None] * outer

    def as_multipoly(self, d: int) -> MultiPoly:
        s = sum((MultiPoly.variable(k, d) ** 2 for k in range(d)), MultiPoly(d))
        return sum((c * s ** (k + 1) for k, c in enumerate(self.h_coeffs)), MultiPoly(d))

    def kernel(self, d: int) -> "MeanFieldKernel":
        return MeanFieldKernel.from_interaction(self, d)


@dataclass(frozen=True, eq=False)
class MeanFieldKernel:
    """Exact separable form of ``y -> grad F(x - y)`` for empirical averages.

    ``grad F(x - y)`` is a polynomial in ``(x, y)``; grouping its terms as
    ``sum_{a,b} C[k,a,b] x^a y^b`` turns ``mean_j grad F(x - y_j)`` into a
    contraction against the empirical moments ``mean_j y_j^b``.  This is exact
    up to rounding and costs O(#x + #y) instead of O(#x * #y).
    """

    dimension: int
    x_exps: np.ndarray = field(repr=False)  # (nA, d)
    y_exps: np.ndarray = field(repr=False)  # (nB, d)
    coef: np.ndarray = field(repr=False)  # (d, nA, nB)

    @classmethod
    def from_interaction(cls, fi: RadialInteraction, d: int) -> "MeanFieldKernel":
        dd = 2 * d
        diff = [MultiPoly.variable(k, dd) - MultiPoly.variable(d + k, dd) for k in range(d)]
        s = sum((p * p for p in diff), MultiPoly(dd))
        f_pair = sum((c * s ** (k + 1) for k, c in enumerate(fi.h_coeffs)), MultiPoly(dd))
        comps = [f_pair.derivative(k) for k in range(d)]
        xa = sorted({e[:d] for p in comps for _, e in p.terms}, key=_grlex_key)
        yb = sorted({e[d:] for p in comps for _, e in p.terms}, key=_grlex_key)
        ia = {e: i for i, e in enumerate(xa)}
        ib = {e: i for i, e in enumerate(yb)}
        coef = np.zeros((d, max(len(xa), 1), max(len(yb), 1)))
        for k, p in enumerate(comps):
            for c, e in p.terms:
                coef[k, ia[e[:d]], ib[e[d:]]] += c
        xa = np.array(xa or [(0,) * d], dtype=int)
        yb = np.array(yb or [(0,) * d], dtype=int)
        return cls(d, xa, yb, coef)

    @staticmethod
    def _mono(points, exps):
        powers = points[..., :, None] ** np.arange(exps.max() + 1)
        return powers[..., np.arange(exps.shape[1])[None, :], exps].prod(axis=-1)

    def moments(self, ys) -> np.ndarray:
        """Empirical moments over the second-to-last axis: ``(..., M, d) -> (..., nB)``."""
        return self._mono(np.asarray(ys, dtype=float), self.y_exps).mean(axis=-2)

    def force(self, xs, moments) -> np.ndarray:
        """``mean_j grad F(x - y_j)`` for ``xs`` of shape ``(..., K, d)`` and moments ``(..., nB)``."""
        mx = self._mono(np.asarray(xs, dtype=float), self.x_exps)
        weights = np.einsum("kab,...b->...ak", self.coef, moments)
        return np.einsum("...ja,...ak->...jk", mx, weights)

    def mean_force(self, xs, ys) -> np.ndarray:
        return self.force(xs, self.moments(ys))


@dataclass(frozen=True)
class InteractionFlow:
    """Vector interaction ``A(x, y) = grad_x AA(x, y)``, required antisymmetric.

    In battery mode ``A(x, y) = grad W(x) - grad W(y)`` is evaluated directly
    from ``W`` so antisymmetry holds exactly.
    """

    a_poly: MultiPoly
    battery_w: MultiPoly | None = None

    def __post_init__(self):
        if self.a_poly.dimension % 2:
            raise InputError("the interaction potential lives on R^d x R^d; its dimension must be even")
        if self.battery_w is not None and self.battery_w.dimension * 2 != self.a_poly.dimension:
            raise InputError("battery potential dimension inconsistent with interaction")

    @classmethod
    def general(cls, a_poly: MultiPoly, check: bool = True) -> "InteractionFlow":
        flow = cls(a_poly)
        if check:
            defect = flow.antisymmetry_defect()
            if not defect < 1e-10:
                raise InputError(f"interaction flow is not antisymmetric (max defect {defect:.3g})")
        return flow

    @classmethod
    def battery(cls, w: MultiPoly) -> "InteractionFlow":
        d = w.dimension
        dd = 2 * d
        grad_y = [w.derivative(k).embed(dd, d) for k in range(d)]
        a_poly = w.embed(dd, 0) - sum(
            (MultiPoly.variable(k, dd) * grad_y[k] for k in range(d)), MultiPoly(dd)
        )
        return cls(a_poly, w)

    @property
    def dimension(self) -> int:
        return self.a_poly.dimension // 2

    @property
    def mode(self) -> str:
        return "general" if self.battery_w is None else "battery"

    @cached_property
    def _components(self) -> tuple[MultiPoly, ...]:
        return tuple(self.a_poly.derivative(k) for k in range(self.dimension))

    def __call__(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.battery_w is not None:
            return self.battery_w.gradient(x) - self.battery_w.gradient(y)
        x, y = np.broadcast_arrays(x, y)
        xy = np.concatenate([x, y], axis=-1)
        return np.stack([p.value(xy) for p in self._components], axis=-1)

    def jacobians(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """``(dA/dx, dA/dy)``, each of shape ``(..., d, d)`` with row = output component."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        x, y = np.broadcast_arrays(x, y)
        if self.battery_w is not None:
            return self.battery_w.hessian(x), -self.battery_w.hessian(y)
        d = self.dimension
        hess = self.a_poly.hessian(np.concatenate([x, y], axis=-1))
        return hess[..., :d, :d], hess[..., :d, d:]

    def antisymmetry_defect(self, samples: int = 100) -> float:
        rng = np.random.default_rng(_CHECK_SEED)
        pts = rng.uniform(-2.0, 2.0, size=(samples, 2, self.dimension))
        x, y = pts[:, 0], pts[:, 1]
        return float(np.max(np.linalg.norm(self(x, y) + self(y, x), axis=-1)))


def eval_confining(v: MultiPoly, x):
    """Value, gradient and Hessian of the confining potential at one point."""
    x = as_point(x, v.dimension)
    return float(v.value(x)), v.gradient(x), v.hessian(x)


def eval_interaction(fi: RadialInteraction, x, d: int | None = None):
    """Value, gradient and Hessian of ``F(x) = H(|x|^2)`` at one point."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1 or (d is not None and x.shape[0] != d):
        raise InputError(f"expected a point of dimension {d}, got shape {x.shape}")
    return float(fi.value(x)), fi.gradient(x), fi.hessian(x)


def eval_interaction_flow(a: InteractionFlow, x, y) -> np.ndarray:
    d = a.dimension
    return a(as_point(x, d), as_point(y, d))


@dataclass(frozen=True)
class HypothesisReport:
    v2_ok: bool
    v2_check_radius: float
    f3_ok: bool
    antisymmetry_ok: bool
    details: str

    @property
    def all_ok(self) -> bool:
        return self.v2_ok and self.f3_ok and self.antisymmetry_ok


def _sphere_directions(d: int, count: int) -> np.ndarray:
    """Quasi-uniform unit vectors in R^d."""
    if d == 1:
        return np.where(np.arange(count) % 2 == 0, 1.0, -1.0)[:, None]
    if d == 2:
        ang = 2.0 * np.pi * np.arange(count) / count
        return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    u = qmc.Halton(d, scramble=False).random(count + 1)[1:]
    g = ndtri(u)
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def validate_hypotheses(
    v: MultiPoly,
    fi: RadialInteraction | Sequence[float],
    a: InteractionFlow | None = None,
    check_radius: float = 10.0,
    samples: int = 200,
) -> HypothesisReport:
    """Sample-based check of the convexity-at-infinity, growth and antisymmetry hypotheses.

    The confining check looks at Hessian eigenvalues of ``v`` on the spheres of
    radius ``check_radius`` and ``2 * check_radius``.  It is advisory: nothing
    else in the package refuses to run when it fails.  ``fi`` may be given as
    raw coefficients so that a rejected interaction is reported instead of
    raised.
    """
    if not check_radius > 0:
        raise InputError("check_radius must be positive")
    if samples < 100:
        raise InputError("at least 100 samples are required")
    lines = []

    d = v.dimension
    half = samples // 2
    dirs = np.concatenate([_sphere_directions(d, half), _sphere_directions(d, samples - half)])
    radii = np.concatenate([np.full(half, check_radius), np.full(samples - half, 2.0 * check_radius)])
    min_eig = float(np.min(np.linalg.eigvalsh(v.hessian(dirs * radii[:, None]))))
    v2_ok = min_eig >= -1e-10
    lines.append(f"V2: min Hessian eigenvalue {min_eig:.6g} on radii {check_radius:g}, {2 * check_radius:g}")

    f3_ok = True
    if not isinstance(fi, RadialInteraction):
        try:
            fi = RadialInteraction(tuple(fi))
        except HypothesisError as exc:
            f3_ok = False
            lines.append(f"{exc.hypothesis}: {exc}")
    if f3_ok:
        lines.append(f"F3: leading coefficient of H is {fi.h_coeffs[-1]:.6g} > 0")

    antisymmetry_ok = True
    if a is not None:
        if a.dimension != d:
            raise InputError("interaction flow dimension differs from the confining potential")
        defect = a.antisymmetry_defect()
        antisymmetry_ok = defect < 1e-10
        lines.append(f"antisymmetry: max |A(x,y)+A(y,x)| = {defect:.3g}")
        rng = np.random.default_rng(_CHECK_SEED + 1)
        lower = float(np.min(a.a_poly.value(rng.uniform(-5.0, 5.0, size=(4096, 2 * d)))))
        lines.append(f"lower bound (sampled on [-5,5]^{2 * d}, advisory): min AA = {lower:.6g}")

    return HypothesisReport(v2_ok, float(check_radius), f3_ok, antisymmetry_ok, "\n".join(lines))
