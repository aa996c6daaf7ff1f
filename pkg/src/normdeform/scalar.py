"""Scalar problem on the mass sphere: nonlinearity, functionals and fibers.

Functionals are assembled from three grid quantities: the Dirichlet energy
``A = ||grad u||^2``, the mass ``||u||_2^2`` and the power moments
``B_k = int |u|^{p_k}``.  Because every term of ``G`` is a pure power, the
fiber ``t -> I(u_t)`` and the augmented functional ``J(theta, u) = I(u_{e^theta})``
have closed forms in these quantities and never need resampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse.linalg import spsolve

from .radial import (
    RadialFunction,
    grad_norm_sq,
    h1_solve,
    lp_integral,
    scale,
)

__all__ = [
    "GrowthConditionError",
    "PowerNonlinearity",
    "SphereConstraint",
    "CriticalPointReport",
    "FiberMaxResult",
    "B0Estimate",
    "validate_growth",
    "moments",
    "energy_I",
    "pohozaev_P",
    "augmented_J",
    "fiber_maximize",
    "riemannian_gradient",
    "dual_norm_dI",
    "normalize_h0",
    "retract",
    "minimize_fiber_max",
    "b0_estimate",
    "newton_polish",
    "decay_rate",
    "critical_point_report",
    "gaussian_seed",
]


class GrowthConditionError(ValueError):
    """Raised when a nonlinearity violates the growth hypotheses."""


@dataclass(frozen=True)
class PowerNonlinearity:
    """``g(s) = sum_k a_k |s|^{p_k - 2} s`` (or ``a_k s_+^{p_k - 1}``)."""

    terms: tuple[tuple[float, float], ...]
    dimension: int = 3
    positive_part: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "terms", tuple((float(a), float(p)) for a, p in self.terms))
        if not self.terms:
            raise GrowthConditionError("nonlinearity needs at least one term")

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([a for a, _ in self.terms])

    @property
    def exponents(self) -> np.ndarray:
        return np.array([p for _, p in self.terms])

    @property
    def gammas(self) -> np.ndarray:
        """Dilation exponents: ``||u_t||_p^p = t^gamma ||u||_p^p``."""
        return (self.exponents - 2.0) * self.dimension / 2.0

    @property
    def mass_critical(self) -> float:
        return 2.0 + 4.0 / self.dimension

    @property
    def sobolev(self) -> float:
        return 6.0 if self.dimension == 3 else np.inf

    def _base(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return np.maximum(s, 0.0) if self.positive_part else np.abs(s)

    def G(self, s):
        b = self._base(s)
        return sum(a / p * b**p for a, p in self.terms)

    def g(self, s):
        s = np.asarray(s, dtype=float)
        b = self._base(s)
        if self.positive_part:
            return sum(a * b ** (p - 1) for a, p in self.terms)
        return sum(a * b ** (p - 2) * s for a, p in self.terms)

    def dg(self, s):
        b = self._base(s)
        return sum(a * (p - 1) * b ** (p - 2) for a, p in self.terms)

    def wG(self, s):
        """``g(s) s / 2 - G(s)``."""
        b = self._base(s)
        return sum(a * (0.5 - 1.0 / p) * b**p for a, p in self.terms)

    def with_dimension(self, dimension: int) -> "PowerNonlinearity":
        return PowerNonlinearity(self.terms, dimension, self.positive_part)


@dataclass(frozen=True)
class SphereConstraint:
    """The mass sphere ``{u : ||u||_2^2 = m}``."""

    m: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.m) and self.m > 0):
            raise ValueError(f"mass m must be positive, got {self.m}")


def validate_growth(spec: PowerNonlinearity, samples: int = 64) -> tuple[float, float]:
    """Check the growth hypotheses and return the bracketing exponents.

    Every exponent must lie strictly between the mass-critical exponent
    ``2 + 4/N`` and the Sobolev exponent, and every coefficient must be
    positive.  The returned ``(alpha, beta)`` satisfy
    ``alpha G(s) <= g(s) s <= beta G(s)``; the inequalities and the
    monotonicity condition ``wG'(s) s > (2 + 4/N) wG(s)`` are spot-checked.
    """
    lo, hi = spec.mass_critical, spec.sobolev
    for k, (a, p) in enumerate(spec.terms):
        if not (a > 0 and np.isfinite(a)):
            raise GrowthConditionError(f"term {k}: coefficient a={a} must be positive")
        if not (lo < p < hi):
            hi_s = "inf" if not np.isfinite(hi) else f"{hi:g}"
            raise GrowthConditionError(
                f"term {k}: exponent p={p:g} outside ({lo:g}, {hi_s}); growth must be "
                "mass-supercritical and Sobolev-subcritical"
            )
    alpha, beta = float(spec.exponents.min()), float(spec.exponents.max())
    s = np.geomspace(1e-3, 1e3, samples)
    if not spec.positive_part:
        s = np.concatenate([-s, s])
    G, gs, wG = spec.G(s), spec.g(s) * s, spec.wG(s)
    dwG = sum(a * (0.5 - 1.0 / p) * p * spec._base(s) ** p for a, p in spec.terms)
    tol = 1e-12 * np.abs(gs)
    if np.any(alpha * G > gs + tol) or np.any(gs > beta * G + tol):
        raise GrowthConditionError("growth bracket alpha G <= g(s) s <= beta G violated")
    if np.any(dwG <= lo * wG):
        raise GrowthConditionError("monotonicity of g(s) s / 2 - G(s) relative to 2 + 4/N violated")
    return alpha, beta


# --------------------------------------------------------------------------
# functionals


def moments(u: RadialFunction, spec: PowerNonlinearity) -> np.ndarray:
    """``B_k = int |u|^{p_k}`` (positive part when the spec says so)."""
    return np.array([lp_integral(u, p, spec.positive_part) for p in spec.exponents])


def energy_I(u: RadialFunction, spec: PowerNonlinearity) -> float:
    a = grad_norm_sq(u)
    return 0.5 * a - float(np.sum(spec.coefficients / spec.exponents * moments(u, spec)))


def pohozaev_P(u: RadialFunction, spec: PowerNonlinearity) -> float:
    a = grad_norm_sq(u)
    c = spec.coefficients * (0.5 - 1.0 / spec.exponents) * spec.dimension
    return a - float(np.sum(c * moments(u, spec)))


def _J_from(theta: float, a: float, b: np.ndarray, spec: PowerNonlinearity) -> tuple[float, float]:
    gam = spec.gammas
    e2 = np.exp(2.0 * theta)
    eg = np.exp(gam * theta)
    coef = spec.coefficients / spec.exponents
    value = 0.5 * e2 * a - float(np.sum(coef * eg * b))
    dtheta = e2 * a - float(np.sum(coef * gam * eg * b))
    return value, dtheta


def augmented_J(theta: float, u: RadialFunction, spec: PowerNonlinearity) -> tuple[float, float]:
    """``J(theta, u) = I(u_{e^theta})`` and ``dJ/dtheta = P(u_{e^theta})``."""
    return _J_from(theta, grad_norm_sq(u), moments(u, spec), spec)


@dataclass(frozen=True)
class FiberMaxResult:
    t: float
    value: float

    @property
    def theta(self) -> float:
        return float(np.log(self.t))


def _fiber_theta(a: float, b: np.ndarray, spec: PowerNonlinearity) -> float:
    # dJ/dtheta = e^{2 theta} (a - sum c_k e^{(gamma_k - 2) theta} b_k): the
    # bracket is strictly decreasing, so its root is the unique maximiser.
    gam = spec.gammas
    c = spec.coefficients * gam / spec.exponents * b
    mask = c > 0
    if a <= 0 or not np.any(mask):
        raise ValueError("fiber has no maximum: the nonlinear moments vanish")
    c, e = c[mask], gam[mask] - 2.0
    if c.size == 1:
        th = float(np.log(a / c[0]) / e[0])
        if abs(th) > np.log(1e6):
            raise ValueError("fiber maximum lies outside t in [1e-6, 1e6]; refine the grid")
        return th

    def h(th):
        return np.log(np.sum(c * np.exp(e * th))) - np.log(a)

    lo, hi = np.log(1e-6), np.log(1e6)
    if not (h(lo) < 0 < h(hi)):
        raise ValueError("fiber derivative has no sign change for t in [1e-6, 1e6]; refine the grid")
    return float(brentq(h, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200))


def fiber_maximize(u: RadialFunction, spec: PowerNonlinearity) -> FiberMaxResult:
    """Unique maximiser ``t0`` of ``t -> I(u_t)`` and the maximal value."""
    a, b = grad_norm_sq(u), moments(u, spec)
    th = _fiber_theta(a, b, spec)
    return FiberMaxResult(float(np.exp(th)), _J_from(th, a, b, spec)[0])


def retract(values: np.ndarray, weights: np.ndarray, m: float) -> np.ndarray:
    """Radial retraction onto the mass sphere."""
    nrm = float(weights @ values**2)
    if nrm <= 0:
        raise ValueError("cannot retract the zero function onto the sphere")
    return np.sqrt(m / nrm) * values


# --------------------------------------------------------------------------
# gradients


@dataclass(frozen=True)
class TangentGradient:
    """Riemannian gradient in the metric ``e^{2 theta} ||grad v||^2 + ||v||^2``."""

    grad: np.ndarray
    lam: float
    dual_norm: float
    residual: np.ndarray


def _J_u_residual(theta: float, u: np.ndarray, grid, spec: PowerNonlinearity) -> np.ndarray:
    r = np.exp(2.0 * theta) * grid.stiffness_apply(u)
    b = spec._base(u)
    if spec.positive_part:
        nl = sum(a * np.exp(gm * theta) * b ** (p - 1) for (a, p), gm in zip(spec.terms, spec.gammas))
    else:
        nl = sum(a * np.exp(gm * theta) * b ** (p - 2) * u for (a, p), gm in zip(spec.terms, spec.gammas))
    r = r - grid.weights * nl
    r[-1] = 0.0
    return r


def tangent_gradient(residual: np.ndarray, u: np.ndarray, grid, m: float, stiff: float = 1.0) -> TangentGradient:
    """Project a dual residual onto the tangent space of the sphere at ``u``.

    The multiplier makes the residual annihilate ``u``; the Riesz map of the
    metric ``stiff K + W`` turns it into a vector, which is then projected
    onto ``{v : <u, v>_2 = 0}`` along the Riesz image of ``W u``.  The result
    represents the differential exactly on the tangent space.
    """
    wu = grid.weights * u
    lam = -float(u @ residual) / m
    res = residual + lam * wu
    res[-1] = 0.0
    g0 = h1_solve(grid, res, stiff, 1.0)
    z = h1_solve(grid, wu, stiff, 1.0)
    g = g0 - (wu @ g0) / (wu @ z) * z
    dn = float(np.sqrt(max(g @ res, 0.0)))
    return TangentGradient(g, lam, dn, res)


def riemannian_gradient(
    u: RadialFunction, spec: PowerNonlinearity, constraint: SphereConstraint, theta: float = 0.0
) -> tuple[RadialFunction, float]:
    """Gradient of ``I`` (or of ``J(theta, .)``) on the sphere and the multiplier.

    The multiplier is ``lambda = (int g(u) u - ||grad u||^2) / m`` at
    ``theta = 0``; the gradient is L2-orthogonal to ``u``.
    """
    mass = float(u.grid.weights @ u.values**2)
    if abs(mass - constraint.m) > 1e-8 * constraint.m:
        raise ValueError(f"u is off the sphere: mass {mass:.12g}, expected {constraint.m:.12g}")
    tg = tangent_gradient(_J_u_residual(theta, u.values, u.grid, spec), u.values, u.grid, constraint.m, np.exp(2 * theta))
    return RadialFunction(u.grid, tg.grad), tg.lam


def dual_norm_dI(u: RadialFunction, spec: PowerNonlinearity, constraint: SphereConstraint, theta: float = 0.0) -> float:
    """Norm of the constrained differential in the dual of the H1 metric."""
    tg = tangent_gradient(_J_u_residual(theta, u.values, u.grid, spec), u.values, u.grid, constraint.m, np.exp(2 * theta))
    return tg.dual_norm


def normalize_h0(u: RadialFunction, constraint: SphereConstraint) -> RadialFunction:
    """Odd continuous map ``u -> m^{1/2} u_{t(u)} / ||u||_2`` with ``t(u) = ||u||_2``.

    The resampled ``u_t`` is renormalised by its own discrete norm so the
    image lies on the sphere to rounding.
    """
    t = np.sqrt(lp_integral(u, 2))
    ut = scale(u, t)
    return RadialFunction(u.grid, retract(ut.values, u.grid.weights, constraint.m))


# --------------------------------------------------------------------------
# fiber-max minimisation (the inf over the Pohozaev set)


@dataclass
class FiberDescent:
    """Result of minimising the fiber maximum over the sphere."""

    theta: float
    u: RadialFunction
    value: float
    dual_norm: float
    iterations: int
    history: list[float] = field(default_factory=list)


def minimize_fiber_max(
    u0: RadialFunction,
    spec: PowerNonlinearity,
    constraint: SphereConstraint,
    max_iter: int = 2000,
    tol_grad: float = 1e-9,
    stall_window: int = 50,
    stall_tol: float = 1e-10,
) -> FiberDescent:
    """Minimise ``F(u) = max_theta J(theta, u)`` on the sphere.

    Alternates the exact fiber maximisation in ``theta`` with a preconditioned
    tangential descent step in ``u`` (Armijo backtracking).  Stops when the
    dual norm of the gradient of ``F`` falls below ``tol_grad`` times
    ``||grad u||^2`` or when ``F`` decreases by less than ``stall_tol`` in
    relative terms over ``stall_window`` iterations.
    """
    grid, m = u0.grid, constraint.m
    u = retract(u0.values, grid.weights, m)

    def evaluate(v):
        a = float(grid.stiff_weights @ (grid.stiff_op @ v) ** 2)
        b = np.array([float(grid.weights @ spec._base(v) ** p) for p in spec.exponents])
        th = _fiber_theta(a, b, spec)
        return th, _J_from(th, a, b, spec)[0], a

    th, f, a = evaluate(u)
    history = [f]
    tau = 1.0
    it = 0
    dn = np.inf
    for it in range(1, max_iter + 1):
        tg = tangent_gradient(_J_u_residual(th, u, grid, spec), u, grid, m, np.exp(2 * th))
        dn = tg.dual_norm
        if dn <= tol_grad * np.exp(2 * th) * a:
            break
        slope = dn * dn
        accepted = False
        while tau > 1e-14:
            trial = retract(u - tau * tg.grad, grid.weights, m)
            th_t, f_t, a_t = evaluate(trial)
            if f_t <= f - 0.25 * tau * slope:
                accepted = True
                break
            tau *= 0.5
        if not accepted:
            break
        u, th, f, a = trial, th_t, f_t, a_t
        history.append(f)
        tau = min(2.0 * tau, 4.0)
        if len(history) > stall_window and history[-stall_window - 1] - f < stall_tol * abs(f):
            break
    return FiberDescent(th, RadialFunction(grid, u), f, dn, it, history)


def gaussian_seed(grid, constraint: SphereConstraint, rng: np.random.Generator | None = None) -> RadialFunction:
    """Smooth positive seed on the sphere; random widths and bumps if ``rng`` is given."""
    r = grid.nodes
    if rng is None:
        v = np.exp(-0.5 * r**2)
    else:
        v = np.zeros_like(r)
        for _ in range(rng.integers(1, 4)):
            w = rng.uniform(0.5, 2.0)
            c = rng.uniform(0.0, 1.5)
            v += rng.uniform(0.5, 1.5) * np.exp(-0.5 * ((r - c) / w) ** 2)
        v *= np.exp(-0.5 * (r / (0.3 * grid.r_max)) ** 2)
    return RadialFunction(grid, retract(v, grid.weights, constraint.m))


@dataclass(frozen=True)
class B0Estimate:
    """Estimate of the infimum of ``I`` over the Pohozaev set."""

    value: float
    per_seed: tuple[float, ...]
    best: FiberDescent

    def __float__(self) -> float:
        return float(self.value)


def b0_estimate(
    constraint: SphereConstraint,
    spec: PowerNonlinearity,
    grid,
    seeds: int = 3,
    rng: np.random.Generator | None = None,
    **kwargs,
) -> B0Estimate:
    """Minimum over random seeds of the minimised fiber maximum."""
    if seeds < 1:
        raise ValueError("need at least one seed")
    rng = np.random.default_rng(0) if rng is None else rng
    runs = []
    for k in range(seeds):
        u0 = gaussian_seed(grid, constraint, None if k == 0 else rng)
        if not spec.positive_part and k > 0 and rng.random() < 0.5:
            u0 = -u0
        runs.append(minimize_fiber_max(u0, spec, constraint, **kwargs))
    best = min(runs, key=lambda d: d.value)
    return B0Estimate(best.value, tuple(d.value for d in runs), best)


# --------------------------------------------------------------------------
# Newton refinement and reporting


def newton_polish(
    u: RadialFunction,
    spec: PowerNonlinearity,
    constraint: SphereConstraint,
    lam: float | None = None,
    tol: float = 1e-11,
    max_iter: int = 30,
) -> tuple[RadialFunction, float, bool]:
    """Bordered Newton iteration for ``K u + lam W u = W g(u)``, ``||u||^2 = m``.

    Converges quadratically from a neighbourhood of a nondegenerate critical
    point of any index.  Returns the refined function, its multiplier and a
    convergence flag (dual norm of the constrained gradient below ``tol``
    relative to ``||grad u||^2``).
    """
    grid, m = u.grid, constraint.m
    n = grid.n - 1
    w = grid.weights[:-1]
    d = grid.stiff_op[:, :-1]
    k = (d.T @ sp.diags(grid.stiff_weights) @ d).tocsc()
    v = u.values[:-1].copy()
    if lam is None:
        _, lam = riemannian_gradient(u, spec, constraint)
    ok = False
    for _ in range(max_iter):
        full = np.append(v, 0.0)
        f1 = k @ v + lam * w * v - w * spec.g(v)
        f2 = 0.5 * (w @ v**2 - m)
        jac = sp.bmat(
            [
                [k + sp.diags(w * (lam - spec.dg(v))), sp.csc_matrix((w * v)[:, None])],
                [sp.csr_matrix((w * v)[None, :]), None],
            ],
            format="csc",
        )
        step = spsolve(jac, -np.append(f1, f2))
        v = v + step[:n]
        lam = lam + step[n]
        full = np.append(v, 0.0)
        rf = RadialFunction(grid, full)
        dn = dual_norm_dI(rf, spec, constraint)
        if dn <= tol * grad_norm_sq(rf) and abs(f2) <= 1e-12 * m:
            ok = True
            break
    v = retract(np.append(v, 0.0), grid.weights, m)
    rf = RadialFunction(grid, v)
    _, lam = riemannian_gradient(rf, spec, constraint)
    return rf, lam, ok


def decay_rate(u: RadialFunction, window: tuple[float, float] = (0.5, 0.8), floor: float = 1e-9) -> float:
    """Exponential tail rate of ``|u|`` fitted on ``window * r_max``.

    The algebraic prefactor ``r^{-(N-1)/2}`` of radial decaying solutions is
    removed before the fit; nodes below ``floor * max|u|`` are ignored.
    """
    g = u.grid
    r, v = g.nodes, np.abs(u.values)
    sel = (r >= window[0] * g.r_max) & (r <= window[1] * g.r_max) & (v > floor * v.max())
    if np.count_nonzero(sel) < 5:
        # fall back to the outermost resolvable stretch of the tail
        peak = int(np.argmax(v))
        sel = (r > r[peak]) & (v > floor * v.max()) & (v < 1e-3 * v.max())
        if np.count_nonzero(sel) < 5:
            return float("nan")
    y = np.log(v[sel] * r[sel] ** ((g.dimension - 1) / 2))
    slope = np.polyfit(r[sel], y, 1)[0]
    return float(-slope)


@dataclass(frozen=True)
class CriticalPointReport:
    """Diagnostics of a (near) critical point on the sphere."""

    u: RadialFunction
    lam: float
    energy: float
    pohozaev: float
    grad_sq: float
    dual_norm: float
    decay: float
    converged: bool = False

    def summary(self) -> dict:
        return {
            "lambda": self.lam,
            "energy": self.energy,
            "pohozaev": self.pohozaev,
            "grad_norm_sq": self.grad_sq,
            "gradient_dual_norm": self.dual_norm,
            "decay_rate": self.decay,
            "mass": lp_integral(self.u, 2),
            "converged": self.converged,
        }


def critical_point_report(
    u: RadialFunction,
    spec: PowerNonlinearity,
    constraint: SphereConstraint,
    tol_grad: float = 1e-6,
    tol_pohozaev: float = 1e-6,
) -> CriticalPointReport:
    """Assemble a report; ``converged`` requires relative residuals below tolerance."""
    _, lam = riemannian_gradient(u, spec, constraint)
    a = grad_norm_sq(u)
    p = pohozaev_P(u, spec)
    dn = dual_norm_dI(u, spec, constraint)
    conv = dn <= tol_grad * a and abs(p) <= tol_pohozaev * a
    return CriticalPointReport(u, lam, energy_I(u, spec), p, a, dn, decay_rate(u), conv)
