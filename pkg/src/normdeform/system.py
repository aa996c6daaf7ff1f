"""Two-component cubic system with repulsive coupling, and the scalar ground state.

``G(u1, u2) = mu1/4 u1_+^4 + mu2/4 u2_+^4 + beta/2 u1^2 u2^2``.  Every term is
quartic, so the joint dilation ``Phi_theta`` multiplies ``int G`` by
``e^{N theta}`` and the augmented functional is explicit.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.optimize import brentq
from scipy.sparse.linalg import spsolve

from .radial import RadialFunction, RadialGrid, grad_norm_sq, lp_integral
from .scalar import decay_rate, retract, tangent_gradient

__all__ = [
    "ParameterError",
    "ShootingError",
    "SystemParams",
    "SystemState",
    "GroundState",
    "SystemGradient",
    "SystemReport",
    "energy_Istar",
    "pohozaev_Pstar",
    "coupling_integral",
    "component_IP",
    "ground_state_omega",
    "shoot_omega",
    "scalar_b_i",
    "scalar_solution",
    "system_gradient",
    "augmented_Jstar",
    "validate_solution",
    "newton_polish_system",
]


class ParameterError(ValueError):
    """Raised for system parameters outside the admissible regime."""


class ShootingError(RuntimeError):
    """Raised when the ground-state shooting bracket is not valid."""


@dataclass(frozen=True)
class SystemParams:
    """Coefficients and masses; ``beta < 0`` unless ``test_mode`` is set."""

    mu1: float
    mu2: float
    beta: float
    m1: float
    m2: float
    test_mode: bool = False

    def __post_init__(self) -> None:
        for name in ("mu1", "mu2", "m1", "m2"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ParameterError(f"{name} must be > 0 (focusing self-interaction and positive mass), got {v}")
        if not np.isfinite(self.beta):
            raise ParameterError("beta must be finite")
        if self.test_mode:
            if self.beta > 0:
                raise ParameterError(f"beta must be <= 0 even in test mode, got {self.beta}")
        elif not self.beta < 0:
            raise ParameterError(f"beta must be < 0 (repulsive coupling), got {self.beta}")

    def mu(self, i: int) -> float:
        return self.mu1 if i == 0 else self.mu2

    def m(self, i: int) -> float:
        return self.m1 if i == 0 else self.m2


@dataclass(frozen=True)
class SystemState:
    """A pair on the product of mass spheres; both components share a grid."""

    u1: RadialFunction
    u2: RadialFunction
    params: SystemParams

    def __post_init__(self) -> None:
        if not self.u1.grid.same_as(self.u2.grid):
            raise ValueError("system components must share a grid")

    @property
    def grid(self) -> RadialGrid:
        return self.u1.grid

    def components(self) -> tuple[RadialFunction, RadialFunction]:
        return self.u1, self.u2

    def on_sphere(self, rtol: float = 1e-8) -> bool:
        return all(
            abs(lp_integral(u, 2) - self.params.m(i)) <= rtol * self.params.m(i) for i, u in enumerate(self.components())
        )

    @classmethod
    def normalized(cls, v1: np.ndarray, v2: np.ndarray, grid: RadialGrid, params: SystemParams) -> "SystemState":
        return cls(
            RadialFunction(grid, retract(v1, grid.weights, params.m1)),
            RadialFunction(grid, retract(v2, grid.weights, params.m2)),
            params,
        )


# --------------------------------------------------------------------------
# functionals


def _quartics(s: SystemState) -> tuple[float, float, float]:
    w = s.grid.weights
    v1, v2 = s.u1.values, s.u2.values
    b1 = float(w @ np.maximum(v1, 0.0) ** 4)
    b2 = float(w @ np.maximum(v2, 0.0) ** 4)
    x = float(w @ (v1 * v1 * v2 * v2))
    return b1, b2, x


def coupling_integral(s: SystemState) -> float:
    """``int G(u1, u2)``."""
    b1, b2, x = _quartics(s)
    p = s.params
    return 0.25 * p.mu1 * b1 + 0.25 * p.mu2 * b2 + 0.5 * p.beta * x


def energy_Istar(s: SystemState) -> float:
    return 0.5 * (grad_norm_sq(s.u1) + grad_norm_sq(s.u2)) - coupling_integral(s)


def pohozaev_Pstar(s: SystemState) -> float:
    """``P_* = A1 + A2 - N int G`` (``G`` is homogeneous of degree four)."""
    return grad_norm_sq(s.u1) + grad_norm_sq(s.u2) - s.grid.dimension * coupling_integral(s)


def component_IP(u: RadialFunction, mu: float) -> tuple[float, float]:
    """``I_i(u) = A/2 - mu/4 ||u_+||_4^4`` and ``P_i(u) = A - N mu/4 ||u_+||_4^4``."""
    if not mu > 0:
        raise ParameterError(f"mu must be > 0, got {mu}")
    a = grad_norm_sq(u)
    b = lp_integral(u, 4, positive_part=True)
    return 0.5 * a - 0.25 * mu * b, a - 0.25 * u.grid.dimension * mu * b


def augmented_Jstar(theta: float, s: SystemState) -> tuple[float, float]:
    """``J_*(theta, u) = I_*(Phi_theta u)`` and its theta-derivative ``P_*(Phi_theta u)``."""
    n = s.grid.dimension
    a = grad_norm_sq(s.u1) + grad_norm_sq(s.u2)
    q = coupling_integral(s)
    e2, en = np.exp(2 * theta), np.exp(n * theta)
    return 0.5 * e2 * a - en * q, e2 * a - n * en * q


# --------------------------------------------------------------------------
# ground state


def _omega_rhs(dim: int):
    def rhs(r, y):
        u, v = y
        return [v, -(dim - 1) / r * v + u - max(u, 0.0) ** 3]

    return rhs


def _series_start(a: float, dim: int, r0: float) -> list[float]:
    c = (a - a**3) / (2 * dim)
    return [a + c * r0**2, 2 * c * r0]


def _classify(a: float, dim: int, r_end: float, rtol: float) -> tuple[int, object]:
    """+1: overshoot (crosses zero), -1: undershoot (turns back up), 0: neither."""

    def crossing(r, y):
        return y[0]

    crossing.terminal, crossing.direction = True, -1

    def turning(r, y):
        return y[1] if r > 0.1 else -1.0

    turning.terminal, turning.direction = True, 1
    r0 = 1e-6
    sol = solve_ivp(
        _omega_rhs(dim), (r0, r_end), _series_start(a, dim, r0), method="DOP853",
        rtol=rtol, atol=1e-14, events=(crossing, turning), dense_output=True,
    )
    if sol.t_events[0].size:
        return 1, sol
    if sol.t_events[1].size:
        return -1, sol
    return 0, sol


def _tail_mismatch(a: float, dim: int, r_f: float, rtol: float):
    """Growing-mode content at ``r_f``: ``u' + u (1 + (N-1)/(2 r))`` vanishes on
    the decaying linear mode ``r^{-(N-1)/2} e^{-r}`` (exact for N = 3)."""
    r0 = 1e-6
    sol = solve_ivp(
        _omega_rhs(dim), (r0, r_f), _series_start(a, dim, r0), method="DOP853",
        rtol=rtol, atol=1e-15, dense_output=True,
    )
    u, v = sol.y[:, -1]
    return v + u * (1.0 + (dim - 1) / (2.0 * r_f)), sol


@lru_cache(maxsize=8)
def shoot_omega(dim: int = 3, bracket: tuple[float, float] = (2.0, 8.0), r_match: float = 12.0,
                rtol: float = 1e-12):
    """Shooting on ``omega(0)`` for ``omega'' + (N-1)/r omega' - omega + omega_+^3 = 0``.

    Bisection on the overshoot/undershoot classification narrows the bracket
    to ``1e-6``; Brent's method then zeroes the growing-mode content of the
    trajectory at ``r_match``, where the cubic term is below rounding.
    Returns the center value and the dense solution on ``[0, r_match]``.
    """
    lo, hi = bracket
    r_end = 3.0 * r_match
    slo, _ = _classify(lo, dim, r_end, 1e-9)
    shi, _ = _classify(hi, dim, r_end, 1e-9)
    if slo != -1 or shi != 1:
        raise ShootingError(f"shooting bracket {bracket} does not enclose the ground state")
    while hi - lo > 1e-6 * hi:
        mid = 0.5 * (lo + hi)
        if _classify(mid, dim, r_end, 1e-9)[0] == 1:
            hi = mid
        else:
            lo = mid
    flo, fhi = _tail_mismatch(lo, dim, r_match, rtol)[0], _tail_mismatch(hi, dim, r_match, rtol)[0]
    if not flo > 0 > fhi:
        raise ShootingError(f"tail matching failed on bracket ({lo}, {hi})")
    a = brentq(lambda x: _tail_mismatch(x, dim, r_match, rtol)[0], lo, hi, xtol=1e-15, rtol=1e-15)
    return a, _tail_mismatch(a, dim, r_match, rtol)[1]


@dataclass(frozen=True)
class GroundState:
    """Positive radial solution of ``-Delta omega + omega = omega_+^3``."""

    omega: RadialFunction
    mass: float
    center_value: float
    identities: tuple[float, float]

    @property
    def grid(self) -> RadialGrid:
        return self.omega.grid


def ground_state_omega(grid: RadialGrid) -> GroundState:
    """Ground state by shooting, sampled on ``grid``.

    The shot is used up to the matching radius; beyond it the profile is the
    decaying linear mode ``C r^{-(N-1)/2} e^{-r}`` (the cubic term is below
    rounding there).
    """
    dim = grid.dimension
    a, sol = shoot_omega(dim)
    r_match = float(sol.t[-1])
    r = grid.nodes
    vals = np.empty_like(r)
    inner = r <= r_match
    vals[inner] = sol.sol(np.maximum(r[inner], sol.t[0]))[0]
    u_m = float(sol.y[0, -1])
    outer = ~inner
    pref = (dim - 1) / 2
    vals[outer] = u_m * (r_match / r[outer]) ** pref * np.exp(-(r[outer] - r_match))
    omega = RadialFunction(grid, vals)
    m = lp_integral(omega, 2)
    ids = (grad_norm_sq(omega) / m, lp_integral(omega, 4) / m)
    return GroundState(omega, m, float(a), ids)


def scalar_b_i(mi: float, mui: float, gs: GroundState) -> tuple[float, float]:
    """Frequency and energy of the scalar ground state on ``S_{mi}`` (3D cubic)."""
    if not (mi > 0 and mui > 0):
        raise ParameterError("mass and coefficient must be > 0")
    lam = (gs.mass / (mui * mi)) ** 2
    return lam, 0.5 * gs.mass**2 / (mui**2 * mi)


def scalar_solution(mi: float, mui: float, gs: GroundState, grid: RadialGrid | None = None) -> RadialFunction:
    """``u(lambda; r) = (lambda / mu)^{1/2} omega(lambda^{1/2} r)`` on ``grid``."""
    lam, _ = scalar_b_i(mi, mui, gs)
    grid = gs.grid if grid is None else grid
    s = np.sqrt(lam)
    return RadialFunction(grid, np.sqrt(lam / mui) * gs.omega(s * grid.nodes))


# --------------------------------------------------------------------------
# gradient


def _residuals(theta: float, v1: np.ndarray, v2: np.ndarray, grid: RadialGrid, p: SystemParams):
    e2, en = np.exp(2 * theta), np.exp(grid.dimension * theta)
    w = grid.weights
    r1 = e2 * grid.stiffness_apply(v1) - en * w * (p.mu1 * np.maximum(v1, 0.0) ** 3 + p.beta * v1 * v2 * v2)
    r2 = e2 * grid.stiffness_apply(v2) - en * w * (p.mu2 * np.maximum(v2, 0.0) ** 3 + p.beta * v2 * v1 * v1)
    r1[-1] = r2[-1] = 0.0
    return r1, r2


@dataclass(frozen=True)
class SystemGradient:
    grad1: RadialFunction
    grad2: RadialFunction
    lambda1: float
    lambda2: float
    dual_norm: float


def system_gradient(s: SystemState, theta: float = 0.0, check: bool = True) -> SystemGradient:
    """Componentwise tangent gradients of ``I_*`` (or ``J_*(theta, .)``) and multipliers."""
    if check and not s.on_sphere():
        raise ValueError("state is off the product of mass spheres")
    g = s.grid
    r1, r2 = _residuals(theta, s.u1.values, s.u2.values, g, s.params)
    stiff = np.exp(2 * theta)
    t1 = tangent_gradient(r1, s.u1.values, g, s.params.m1, stiff)
    t2 = tangent_gradient(r2, s.u2.values, g, s.params.m2, stiff)
    return SystemGradient(
        RadialFunction(g, t1.grad), RadialFunction(g, t2.grad), t1.lam, t2.lam,
        float(np.hypot(t1.dual_norm, t2.dual_norm)),
    )


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class SystemReport:
    """Post-hoc validation of a computed system solution."""

    state: SystemState
    lambda1: float
    lambda2: float
    energy: float
    pohozaev_residual: float
    identity_residuals: tuple[float, float, float]
    positivity: tuple[bool, bool]
    decay_rates: tuple[float, float]
    decay_ok: tuple[bool, bool]
    gradient_dual_norm: float = float("nan")
    converged: bool = False

    @property
    def signs_ok(self) -> bool:
        return self.lambda1 > 0 and self.lambda2 > 0

    def summary(self) -> dict:
        return {
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "energy": self.energy,
            "pohozaev_residual": self.pohozaev_residual,
            "grad_scale": grad_norm_sq(self.state.u1) + grad_norm_sq(self.state.u2),
            "identity_residuals": list(self.identity_residuals),
            "positivity": list(self.positivity),
            "decay_rates": list(self.decay_rates),
            "decay_ok": list(self.decay_ok),
            "gradient_dual_norm": self.gradient_dual_norm,
            "converged": self.converged,
        }


def validate_solution(s: SystemState, lambda1: float, lambda2: float, c: float,
                      tol_grad: float = 1e-6, tol_pohozaev: float = 1e-6) -> SystemReport:
    """Check the exact identities satisfied by solutions at level ``c``.

    Residuals are relative: gradient energy against ``6c``, ``int G`` against
    ``2c`` and ``lambda1 m1 + lambda2 m2`` against ``2c``.  Never raises.
    """
    a = grad_norm_sq(s.u1) + grad_norm_sq(s.u2)
    q = coupling_integral(s)
    p = s.params
    scale = abs(c) if c != 0 else 1.0
    res = (
        abs(a - 6 * c) / (6 * scale),
        abs(q - 2 * c) / (2 * scale),
        abs(lambda1 * p.m1 + lambda2 * p.m2 - 2 * c) / (2 * scale),
    )
    pos = tuple(bool(u.values.min() > -1e-8 * u.values.max()) for u in s.components())
    rates = (decay_rate(s.u1), decay_rate(s.u2))
    dok = tuple(
        bool(lam > 0 and np.isfinite(k) and abs(k - np.sqrt(lam)) <= 0.1 * np.sqrt(lam))
        for k, lam in zip(rates, (lambda1, lambda2))
    )
    pst = pohozaev_Pstar(s)
    try:
        with np.errstate(all="ignore"):
            dn = system_gradient(s, check=False).dual_norm
    except Exception:  # validation reports, it does not throw
        dn = float("nan")
    conv = bool(abs(pst) <= tol_pohozaev * a and dn <= tol_grad * max(1.0, np.sqrt(a)))
    return SystemReport(s, float(lambda1), float(lambda2), float(c), float(pst), res, pos, rates, dok, dn, conv)


def newton_polish_system(s: SystemState, lambdas: tuple[float, float] | None = None,
                         tol: float = 1e-11, max_iter: int = 30) -> tuple[SystemState, float, float, bool]:
    """Bordered Newton iteration on the coupled Euler-Lagrange system on ``s.grid``."""
    g, p = s.grid, s.params
    n = g.n - 1
    w = g.weights[:-1]
    d = g.stiff_op[:, :-1]
    k = (d.T @ sp.diags(g.stiff_weights) @ d).tocsc()
    v1, v2 = s.u1.values[:-1].copy(), s.u2.values[:-1].copy()
    if lambdas is None:
        sg = system_gradient(s, check=False)
        l1, l2 = sg.lambda1, sg.lambda2
    else:
        l1, l2 = lambdas
    ok = False
    for _ in range(max_iter):
        p1, p2 = np.maximum(v1, 0.0), np.maximum(v2, 0.0)
        f1 = k @ v1 + l1 * w * v1 - w * (p.mu1 * p1**3 + p.beta * v1 * v2**2)
        f2 = k @ v2 + l2 * w * v2 - w * (p.mu2 * p2**3 + p.beta * v2 * v1**2)
        c1 = 0.5 * (w @ v1**2 - p.m1)
        c2 = 0.5 * (w @ v2**2 - p.m2)
        j11 = k + sp.diags(w * (l1 - 3 * p.mu1 * p1**2 - p.beta * v2**2))
        j22 = k + sp.diags(w * (l2 - 3 * p.mu2 * p2**2 - p.beta * v1**2))
        j12 = sp.diags(-2 * p.beta * w * v1 * v2)
        col1 = sp.csc_matrix((w * v1)[:, None])
        col2 = sp.csc_matrix((w * v2)[:, None])
        jac = sp.bmat(
            [
                [j11, j12, col1, None],
                [j12, j22, None, col2],
                [col1.T, None, None, None],
                [None, col2.T, None, None],
            ],
            format="csc",
        )
        step = spsolve(jac, -np.concatenate([f1, f2, [c1, c2]]))
        v1 = v1 + step[:n]
        v2 = v2 + step[n : 2 * n]
        l1, l2 = l1 + step[2 * n], l2 + step[2 * n + 1]
        st = SystemState(RadialFunction(g, np.append(v1, 0.0)), RadialFunction(g, np.append(v2, 0.0)), p)
        a = grad_norm_sq(st.u1) + grad_norm_sq(st.u2)
        if system_gradient(st, check=False).dual_norm <= tol * a and max(abs(c1), abs(c2)) <= 1e-12 * max(p.m1, p.m2):
            ok = True
            break
    st = SystemState.normalized(np.append(v1, 0.0), np.append(v2, 0.0), g, p)
    sg = system_gradient(st, check=False)
    return st, sg.lambda1, sg.lambda2, ok
