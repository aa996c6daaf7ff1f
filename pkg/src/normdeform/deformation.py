"""Pseudo-gradient deformation on the augmented space ``M = R x S``.

A point of ``M`` is a pair ``(theta, u)``; it represents ``Phi_theta u``, the
mass-preserving dilation of ``u`` by ``e^theta``.  The augmented functional
``J(theta, u) = I(Phi_theta u)`` is evaluated in closed form, so flows in
``M`` never resample.  The metric at ``(theta, u)`` is
``kappa^2 + e^{2 theta} ||grad v||^2 + ||v||^2``; the metric gradient of ``J``
is used as the pseudo-gradient.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .radial import RadialFunction, RadialGrid, dilate_exact, scale
from .scalar import (
    PowerNonlinearity,
    SphereConstraint,
    _J_from,
    _J_u_residual,
    retract,
    tangent_gradient,
)
from .system import SystemParams, SystemState, _residuals

__all__ = [
    "ScalarProblem",
    "SystemProblem",
    "AugmentedPoint",
    "FlowConfig",
    "FlowRecord",
    "FlowTrace",
    "PSPStatus",
    "metric_norm",
    "dJ_norm",
    "pseudo_gradient",
    "cutoffs",
    "distance_M",
    "flow_integrate",
    "project_pi",
    "project_pi_exact",
    "lift_iota",
    "psp_monitor",
]


# --------------------------------------------------------------------------
# problems: closed-form J and metric gradients on component arrays


def _grad_sq(grid: RadialGrid, v: np.ndarray) -> float:
    return float(grid.stiff_weights @ (grid.stiff_op @ v) ** 2)


@dataclass(frozen=True)
class ScalarProblem:
    """Single equation with power nonlinearity on ``S_m``."""

    spec: PowerNonlinearity
    constraint: SphereConstraint

    @property
    def masses(self) -> tuple[float, ...]:
        return (self.constraint.m,)

    @property
    def odd(self) -> bool:
        return not self.spec.positive_part

    def components(self, point: RadialFunction) -> tuple[np.ndarray, ...]:
        return (point.values,)

    def grid_of(self, point: RadialFunction) -> RadialGrid:
        return point.grid

    def build(self, grid: RadialGrid, comps: Sequence[np.ndarray]) -> RadialFunction:
        return RadialFunction(grid, comps[0])

    def energy(self, theta: float, grid: RadialGrid, comps) -> tuple[float, float]:
        v = comps[0]
        b = np.array([float(grid.weights @ self.spec._base(v) ** p) for p in self.spec.exponents])
        return _J_from(theta, _grad_sq(grid, v), b, self.spec)

    def gradient(self, theta: float, grid: RadialGrid, comps):
        v = comps[0]
        tg = tangent_gradient(_J_u_residual(theta, v, grid, self.spec), v, grid, self.constraint.m, np.exp(2 * theta))
        return (tg.grad,), tg.dual_norm, (tg.lam,)


@dataclass(frozen=True)
class SystemProblem:
    """Two-component cubic system on ``S_{m1} x S_{m2}``."""

    params: SystemParams

    @property
    def masses(self) -> tuple[float, ...]:
        return (self.params.m1, self.params.m2)

    @property
    def odd(self) -> bool:
        return False

    def components(self, point: SystemState) -> tuple[np.ndarray, ...]:
        return (point.u1.values, point.u2.values)

    def grid_of(self, point: SystemState) -> RadialGrid:
        return point.grid

    def build(self, grid: RadialGrid, comps) -> SystemState:
        return SystemState(RadialFunction(grid, comps[0]), RadialFunction(grid, comps[1]), self.params)

    def energy(self, theta: float, grid: RadialGrid, comps) -> tuple[float, float]:
        v1, v2 = comps
        p, w, n = self.params, grid.weights, grid.dimension
        q = (
            0.25 * p.mu1 * float(w @ np.maximum(v1, 0.0) ** 4)
            + 0.25 * p.mu2 * float(w @ np.maximum(v2, 0.0) ** 4)
            + 0.5 * p.beta * float(w @ (v1 * v1 * v2 * v2))
        )
        a = _grad_sq(grid, v1) + _grad_sq(grid, v2)
        e2, en = np.exp(2 * theta), np.exp(n * theta)
        return 0.5 * e2 * a - en * q, e2 * a - n * en * q

    def gradient(self, theta: float, grid: RadialGrid, comps):
        r1, r2 = _residuals(theta, comps[0], comps[1], grid, self.params)
        stiff = np.exp(2 * theta)
        t1 = tangent_gradient(r1, comps[0], grid, self.params.m1, stiff)
        t2 = tangent_gradient(r2, comps[1], grid, self.params.m2, stiff)
        return (t1.grad, t2.grad), float(np.hypot(t1.dual_norm, t2.dual_norm)), (t1.lam, t2.lam)


Problem = Union[ScalarProblem, SystemProblem]


@dataclass(frozen=True)
class AugmentedPoint:
    """``(theta, u)`` in ``M``; ``point`` is a RadialFunction or a SystemState."""

    theta: float
    point: Union[RadialFunction, SystemState]
    problem: Problem

    @property
    def grid(self) -> RadialGrid:
        return self.problem.grid_of(self.point)

    @property
    def comps(self) -> tuple[np.ndarray, ...]:
        return self.problem.components(self.point)

    def J(self) -> tuple[float, float]:
        return self.problem.energy(self.theta, self.grid, self.comps)

    def negate(self) -> "AugmentedPoint":
        return AugmentedPoint(self.theta, self.problem.build(self.grid, [-c for c in self.comps]), self.problem)


# --------------------------------------------------------------------------
# metric quantities


def _v_metric_sq(theta: float, grid: RadialGrid, vs: Sequence[np.ndarray]) -> float:
    e2 = np.exp(2 * theta)
    return float(sum(e2 * _grad_sq(grid, v) + grid.weights @ (v * v) for v in vs))


def metric_norm(kappa: float, v, at: AugmentedPoint) -> float:
    """``(kappa^2 + e^{2 theta} ||grad v||^2 + ||v||^2)^{1/2}``, summed over components."""
    vs = [v.values] if isinstance(v, RadialFunction) else [c.values if isinstance(c, RadialFunction) else c for c in v]
    return float(np.sqrt(kappa * kappa + _v_metric_sq(at.theta, at.grid, vs)))


def dJ_norm(at: AugmentedPoint) -> float:
    """``(P(Phi_theta u)^2 + ||dI(Phi_theta u)||_*^2)^{1/2}``."""
    _, p = at.J()
    _, dn, _ = at.problem.gradient(at.theta, at.grid, at.comps)
    return float(np.hypot(p, dn))


@dataclass(frozen=True)
class PseudoGradient:
    kappa: float
    v: tuple[np.ndarray, ...]
    norm: float
    pohozaev: float
    dual_norm: float


def pseudo_gradient(at: AugmentedPoint, tol: float = 0.0) -> PseudoGradient:
    """Metric gradient ``W = (dJ/dtheta, grad_u J)``; ``||W|| = ||DJ||``."""
    _, p = at.J()
    vs, dn, _ = at.problem.gradient(at.theta, at.grid, at.comps)
    nrm = float(np.hypot(p, dn))
    if nrm <= tol:
        raise ValueError(f"pseudo-gradient requested at a critical point (||DJ|| = {nrm:.3e})")
    return PseudoGradient(p, tuple(vs), nrm, p, dn)


def distance_M(a: AugmentedPoint, b: AugmentedPoint) -> float:
    """Straight-segment length under the metric frozen at the midpoint."""
    dth = b.theta - a.theta
    dv = [y - x for x, y in zip(a.comps, b.comps)]
    return float(np.sqrt(dth * dth + _v_metric_sq(0.5 * (a.theta + b.theta), a.grid, dv)))


@dataclass(frozen=True)
class FlowConfig:
    """Flow parameters; ``eps_bar`` and ``rho`` default to ``0.1 |b|`` and ``0.1``."""

    level: float
    eps_bar: float | None = None
    rho: float = 0.1
    max_step: float = 1.0
    tol_grad: float = 1e-6
    tol_pohozaev: float = 1e-6
    tol_energy: float = 1e-6

    def __post_init__(self) -> None:
        if self.eps_bar is None:
            object.__setattr__(self, "eps_bar", 0.1 * abs(self.level))
        for name in ("eps_bar", "rho", "max_step", "tol_grad", "tol_pohozaev", "tol_energy"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"FlowConfig.{name} must be positive, got {v}")

    def at_level(self, level: float, eps_bar: float | None = None) -> "FlowConfig":
        return replace(self, level=level, eps_bar=eps_bar if eps_bar is not None else 0.1 * abs(level))


def _psi(j: float, b: float, eps: float) -> float:
    d = abs(j - b)
    if d <= 0.5 * eps:
        return 1.0
    if d >= eps:
        return 0.0
    return (eps - d) / (0.5 * eps)


def _phi(at: AugmentedPoint, rho: float, critical_set: Sequence[AugmentedPoint]) -> float:
    if not critical_set:
        return 1.0
    d = min(distance_M(at, k) for k in critical_set)
    return float(np.clip((d - rho / 3) / (rho / 3), 0.0, 1.0))


def cutoffs(at: AugmentedPoint, J_value: float, config: FlowConfig,
            critical_set: Sequence[AugmentedPoint] = ()) -> float:
    """Product of the critical-set cutoff and the energy-band cutoff."""
    psi = _psi(J_value, config.level, config.eps_bar)
    if psi == 0.0:
        return 0.0
    return psi * _phi(at, config.rho, critical_set)


# --------------------------------------------------------------------------
# flow


@dataclass(frozen=True)
class FlowRecord:
    t: float
    J: float
    P: float
    grad_norm: float
    theta: float
    step: float
    cutoff: float


@dataclass
class FlowTrace:
    """Records of an integrated flow line and its final point."""

    records: list[FlowRecord] = field(default_factory=list)
    final: AugmentedPoint | None = None
    stalled: bool = False
    frozen: bool = False
    complete: bool = True
    lambdas: tuple[float, ...] = ()

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "J", "P", "grad_norm", "theta", "step", "cutoff"])
            for r in self.records:
                w.writerow([f"{x:.17g}" for x in (r.t, r.J, r.P, r.grad_norm, r.theta, r.step, r.cutoff)])


def flow_integrate(
    start: AugmentedPoint,
    config: FlowConfig,
    budget: int,
    critical_set: Sequence[AugmentedPoint] = (),
) -> FlowTrace:
    """Integrate ``d eta / dt = -phi psi W / ||W||`` with Armijo backtracking.

    Each step is capped by ``max_step * min(1, ||W|| / tol_grad)``; the
    ``u``-part is retracted to the constraint after every step.  The flow
    stops when the cutoff vanishes (frozen), the line search underflows
    (stalled), the residuals meet the tolerances, or the budget is spent.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    prob, grid = start.problem, start.grid
    masses = prob.masses
    theta, comps = start.theta, tuple(np.array(c) for c in start.comps)
    j, p = prob.energy(theta, grid, comps)
    vs, dn, lams = prob.gradient(theta, grid, comps)
    trace = FlowTrace()
    t = 0.0
    tau = config.max_step
    cur = start
    for k in range(budget + 1):
        w = float(np.hypot(p, dn))
        cut = cutoffs(cur, j, config, critical_set)
        trace.records.append(FlowRecord(t, j, p, dn, theta, 0.0 if k == 0 else tau, cut))
        if cut == 0.0:
            trace.frozen = True
            break
        if dn <= config.tol_grad and abs(p) <= config.tol_pohozaev:
            break
        if k == budget:
            trace.complete = False
            break
        cap = config.max_step * min(1.0, w / config.tol_grad)
        tau = min(2.0 * tau, cap)
        slope = cut * w
        accepted = False
        while tau > 1e-14 * cap:
            s = -tau * cut / w
            th_new = theta + s * p
            c_new = tuple(retract(c + s * v, grid.weights, m) for c, v, m in zip(comps, vs, masses))
            j_new, p_new = prob.energy(th_new, grid, c_new)
            if j_new <= j - 0.25 * tau * slope:
                accepted = True
                break
            tau *= 0.5
        if not accepted:
            trace.stalled = True
            break
        theta, comps, j, p = th_new, c_new, j_new, p_new
        cur = AugmentedPoint(theta, prob.build(grid, comps), prob)
        vs, dn, lams = prob.gradient(theta, grid, comps)
        t += tau * cut
    trace.final = cur if cur is not start else start
    trace.lambdas = tuple(lams)
    return trace


# --------------------------------------------------------------------------
# projection and lift


def project_pi(at: AugmentedPoint):
    """``Phi_theta u`` resampled on the grid of ``u`` (then renormalised)."""
    if at.theta == 0.0:
        return at.point
    t = float(np.exp(at.theta))
    prob, grid = at.problem, at.grid
    comps = [retract(scale(RadialFunction(grid, c), t).values, grid.weights, m) for c, m in zip(at.comps, prob.masses)]
    return prob.build(grid, comps)


def project_pi_exact(at: AugmentedPoint):
    """``Phi_theta u`` represented exactly on the dilated grid."""
    t = float(np.exp(at.theta))
    comps = [dilate_exact(RadialFunction(at.grid, c), t) for c in at.comps]
    return at.problem.build(comps[0].grid, [c.values for c in comps])


def lift_iota(point, problem: Problem) -> AugmentedPoint:
    """``u -> (0, u)``."""
    return AugmentedPoint(0.0, point, problem)


@dataclass(frozen=True)
class PSPStatus:
    status: str
    energy_gap: float
    grad_norm: float
    pohozaev: float

    @property
    def converged(self) -> bool:
        return self.status == "Converged"


def psp_monitor(trace: FlowTrace, config: FlowConfig) -> PSPStatus:
    """Converged / Flowing / Stalled from the last record of a trace."""
    if not trace.records:
        raise ValueError("empty trace")
    r = trace.records[-1]
    gap = abs(r.J - config.level)
    if gap <= config.tol_energy and r.grad_norm <= config.tol_grad and abs(r.P) <= config.tol_pohozaev:
        status = "Converged"
    elif trace.stalled:
        status = "Stalled"
    else:
        status = "Flowing"
    return PSPStatus(status, gap, r.grad_norm, r.P)
