"""Minimax drivers: mountain pass on the sphere and the two-parameter minimax.

Paths and surfaces are stored as augmented nodes ``(theta, u)`` that represent
``Phi_theta u``.  Dilation paths are therefore exact (no resampling), and every
energy or Pohozaev value of a node is evaluated in closed form.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar, root

from .deformation import (
    AugmentedPoint,
    FlowConfig,
    ScalarProblem,
    SystemProblem,
    distance_M,
    dJ_norm,
    flow_integrate,
    project_pi,
)
from .radial import RadialFunction, RadialGrid, make_grid
from .scalar import (
    CriticalPointReport,
    PowerNonlinearity,
    SphereConstraint,
    critical_point_report,
    fiber_maximize,
    gaussian_seed,
    newton_polish,
    retract,
)
from .system import (
    GroundState,
    SystemParams,
    SystemReport,
    SystemState,
    energy_Istar,
    ground_state_omega,
    newton_polish_system,
    scalar_b_i,
    validate_solution,
)

log = logging.getLogger(__name__)

__all__ = [
    "THREADS_ENV",
    "GridTooSmallError",
    "InadmissibleError",
    "PathOnSphere",
    "SurfaceOnProduct",
    "MinimaxReport",
    "dilation_path",
    "path_values",
    "admissible_path_check",
    "path_pohozaev_crossing",
    "reparametrize",
    "mountain_pass_single",
    "initial_surface",
    "surface_values",
    "admissible_surface_check",
    "default_bbar",
    "surface_minimax",
    "degree_intersection",
    "winding_number",
    "locate_zero",
    "capping_time",
    "quartic_integral",
    "refine_surface",
    "sweep_grid_for",
    "PathCrossing",
]

THREADS_ENV = "NORMDEFORM_THREADS"


class InadmissibleError(ValueError):
    """The path or surface does not satisfy the class conditions."""


class GridTooSmallError(ValueError):
    """The grid cannot host the required dilations; carries the radius needed."""

    def __init__(self, message: str, required_r_max: float):
        super().__init__(f"{message} (required r_max >= {required_r_max:.4g})")
        self.required_r_max = required_r_max


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _map(fn, items):
    k = _threads()
    if k == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=k) as ex:
        return list(ex.map(fn, items))


def _interp_node(a: AugmentedPoint, b: AugmentedPoint, lam: float) -> AugmentedPoint:
    """Straight segment in ``(theta, u)`` coordinates, retracted to the constraint."""
    prob, grid = a.problem, a.grid
    th = (1 - lam) * a.theta + lam * b.theta
    comps = [retract((1 - lam) * x + lam * y, grid.weights, m) for x, y, m in zip(a.comps, b.comps, prob.masses)]
    return AugmentedPoint(th, prob.build(grid, comps), prob)


# --------------------------------------------------------------------------
# paths


@dataclass
class PathOnSphere:
    """Uniformly parameterised nodes ``t_j = j / (n - 1)`` of a path in ``S_m``."""

    nodes: list[AugmentedPoint]

    def __post_init__(self) -> None:
        if len(self.nodes) < 2:
            raise ValueError("a path needs at least two nodes")

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def params(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n)

    def functions(self) -> list:
        """The represented constrained points, resampled on the base grid."""
        return [project_pi(p) for p in self.nodes]

    def at(self, t: float) -> AugmentedPoint:
        x = np.clip(t, 0.0, 1.0) * (self.n - 1)
        j = min(int(np.floor(x)), self.n - 2)
        return _interp_node(self.nodes[j], self.nodes[j + 1], x - j)


def dilation_path(u0: RadialFunction, spec: PowerNonlinearity, constraint: SphereConstraint,
                  nu: float = 1e-2, L: float = 1e2, n_nodes: int = 17) -> PathOnSphere:
    """``t -> u0_{nu (1 - t) + L t}`` stored exactly as ``(log dilation, u0)`` nodes."""
    if not (0 < nu < L):
        raise ValueError("need 0 < nu < L")
    prob = ScalarProblem(spec, constraint)
    u0 = RadialFunction(u0.grid, retract(u0.values, u0.grid.weights, constraint.m))
    t = np.linspace(0.0, 1.0, n_nodes)
    return PathOnSphere([AugmentedPoint(float(np.log(nu * (1 - s) + L * s)), u0, prob) for s in t])


def path_values(path: PathOnSphere) -> tuple[np.ndarray, np.ndarray]:
    """Energies and Pohozaev values of the represented nodes."""
    vals = np.array([p.J() for p in path.nodes])
    return vals[:, 0], vals[:, 1]


def admissible_path_check(path: PathOnSphere, spec: PowerNonlinearity, b0: float) -> bool:
    """Endpoint conditions: ``P > 0`` at the start, ``P < 0`` at the end, energies ``< b0 / 2``."""
    if not b0 > 0:
        raise ValueError("b0 must be positive")
    j, p = path_values(path)
    return bool(p[0] > 0 > p[-1] and j[0] < 0.5 * b0 and j[-1] < 0.5 * b0)


@dataclass(frozen=True)
class PathCrossing:
    index: int
    t: float
    point: AugmentedPoint


def path_pohozaev_crossing(path: PathOnSphere, spec: PowerNonlinearity, tol: float = 1e-8) -> PathCrossing:
    """First node interval where ``P`` changes sign, bisected in the path parameter."""
    _, p = path_values(path)
    idx = np.nonzero((p[:-1] > 0) & (p[1:] <= 0))[0]
    if idx.size == 0:
        raise InadmissibleError("no sign change of the Pohozaev functional along the path")
    j = int(idx[0])
    a, b = 0.0, 1.0
    lo, hi = path.nodes[j], path.nodes[j + 1]
    while (b - a) / (path.n - 1) > tol:
        mid = 0.5 * (a + b)
        if _interp_node(lo, hi, mid).J()[1] > 0:
            a = mid
        else:
            b = mid
    lam = 0.5 * (a + b)
    return PathCrossing(j, (j + lam) / (path.n - 1), _interp_node(lo, hi, lam))


def reparametrize(path: PathOnSphere) -> PathOnSphere:
    """Equal arclength spacing in the augmented metric; endpoints kept exactly."""
    seg = np.array([distance_M(a, b) for a, b in zip(path.nodes[:-1], path.nodes[1:])])
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] <= 0:
        return path
    target = np.linspace(0.0, s[-1], path.n)
    out = [path.nodes[0]]
    for x in target[1:-1]:
        j = min(int(np.searchsorted(s, x, side="right")) - 1, path.n - 2)
        lam = (x - s[j]) / seg[j] if seg[j] > 0 else 0.0
        out.append(_interp_node(path.nodes[j], path.nodes[j + 1], float(lam)))
    out.append(path.nodes[-1])
    return PathOnSphere(out)


@dataclass
class MinimaxReport:
    """Outcome of a minimax computation."""

    level: float
    max_index: int | tuple[int, int]
    history: list[tuple[int, float]]
    report: CriticalPointReport | SystemReport | None
    status: str
    details: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == "Converged"


def _endpoint_dilations(u0: RadialFunction, spec: PowerNonlinearity, peak: float) -> tuple[float, float]:
    prob = ScalarProblem(spec, SphereConstraint(1.0))
    grid = u0.grid
    nu = 0.5
    while prob.energy(np.log(nu), grid, (u0.values,))[0] >= 0.05 * peak:
        nu *= 0.5
    L = 2.0
    while prob.energy(np.log(L), grid, (u0.values,))[0] >= 0.0:
        L *= 2.0
    return nu, L


def _snap_to_ridge(path: PathOnSphere, samples: int = 4) -> tuple[PathOnSphere, float]:
    """Path maximum, with the node nearest to it moved onto the maximiser.

    Every segment is sampled, the best segment is maximised in one variable
    and the closer interior endpoint of that segment is moved to the peak.
    The returned level is the (sampled) maximum over the whole polygon.
    """
    j, _ = path_values(path)
    best, seg, lam0 = float(j.max()), None, 0.0
    for k, (a, b) in enumerate(zip(path.nodes[:-1], path.nodes[1:])):
        for lam in np.arange(1, samples + 1) / (samples + 1):
            e = _interp_node(a, b, float(lam)).J()[0]
            if e > best:
                best, seg, lam0 = float(e), k, float(lam)
    if seg is None:
        return path, best
    a, b = path.nodes[seg], path.nodes[seg + 1]
    h = 1.0 / (samples + 1)
    res = minimize_scalar(lambda lam: -_interp_node(a, b, lam).J()[0],
                          bounds=(max(0.0, lam0 - h), min(1.0, lam0 + h)), method="bounded",
                          options={"xatol": 1e-4})
    lam = float(res.x)
    best = max(best, float(-res.fun))
    k = seg if lam < 0.5 else seg + 1
    if k == 0:
        k = 1
    if k == path.n - 1:
        k = path.n - 2
    if seg <= k <= seg + 1:
        nodes = list(path.nodes)
        nodes[k] = _interp_node(a, b, lam)
        path = PathOnSphere(nodes)
    return path, best


def _neighbour_gaps(path: PathOnSphere) -> np.ndarray:
    seg = np.array([distance_M(a, b) for a, b in zip(path.nodes[:-1], path.nodes[1:])])
    left = np.concatenate([[np.inf], seg])
    right = np.concatenate([seg, [np.inf]])
    return np.minimum(left, right)


def mountain_pass_single(
    constraint: SphereConstraint,
    spec: PowerNonlinearity,
    config: FlowConfig | None = None,
    grid: RadialGrid | None = None,
    seed: int | None = None,
    n_nodes: int = 17,
    max_sweeps: int = 400,
    flow_budget: int = 4,
    switch_tol: float = 2e-2,
    stall_window: int = 20,
    b0: float | None = None,
) -> MinimaxReport:
    """Deform a dilation path down to the mountain-pass level.

    Each sweep lifts every node, flows it at the current path maximum with
    ``eps_bar = min(0.1 |level|, (level - endpoint max) / 2)`` so that the
    endpoints stay frozen, and reparametrises by arclength.  Node steps are
    capped by half the distance to the nearest neighbour so the deformed
    polygon stays a faithful image of a continuous path, and the level is
    kept on the ridge crossing of its adjacent segments.  Once the maximising node
    is nearly critical (``||DJ|| <= switch_tol * sqrt(A)``) it is projected
    to the base grid and refined by a bordered Newton iteration; the refined
    point is accepted if its energy lies within ``eps_bar`` of the level and
    it meets the convergence tolerances.  The refinement is also attempted once
    when the level has not decreased over ``stall_window`` sweeps.
    """
    grid = make_grid(spec.dimension, 20.0, 4096) if grid is None else grid
    cfg0 = config or FlowConfig(level=1.0)
    rng = np.random.default_rng(seed) if seed is not None else None
    u0 = gaussian_seed(grid, constraint, rng)
    fm = fiber_maximize(u0, spec)
    u0 = RadialFunction(grid, retract(project_pi(AugmentedPoint(fm.theta, u0, ScalarProblem(spec, constraint))).values,
                                      grid.weights, constraint.m))
    nu, L = _endpoint_dilations(u0, spec, fm.value)
    path = reparametrize(dilation_path(u0, spec, constraint, nu, L, n_nodes))
    if b0 is not None and not admissible_path_check(path, spec, b0):
        raise InadmissibleError("initial dilation path is not admissible")
    ends = (path.nodes[0], path.nodes[-1])
    ends_max = max(ends[0].J()[0], ends[1].J()[0])
    path, level = _snap_to_ridge(path)
    history = [(0, level)]
    status, report, eps = "Stalled", None, 0.1 * abs(level)
    k_max = 0
    tried_stagnant = False
    for sweep in range(1, max_sweeps + 1):
        eps = min(0.1 * abs(level), 0.5 * (level - ends_max))
        cfg = cfg0.at_level(level, eps)
        gaps = _neighbour_gaps(path)
        traces = _map(
            lambda a: flow_integrate(a[0], replace(cfg, max_step=min(cfg.max_step, 0.5 * a[1])), flow_budget),
            list(zip(path.nodes, gaps)),
        )
        flowed = PathOnSphere([tr.final for tr in traces])
        if flowed.nodes[0] is not ends[0] or flowed.nodes[-1] is not ends[1]:
            raise AssertionError("path endpoints moved: the energy cutoff failed to freeze them")
        rep = reparametrize(flowed)
        cand_f, lev_f = _snap_to_ridge(flowed)
        cand_r, lev_r = _snap_to_ridge(rep)
        path, new_level = (cand_r, lev_r) if lev_r <= lev_f else (cand_f, lev_f)
        level = min(level, new_level)
        history.append((sweep, level))
        j, _ = path_values(path)
        k_max = int(np.argmax(j))
        top = path.nodes[k_max]
        scale_a = np.exp(2 * top.theta) * float(
            top.grid.stiff_weights @ (top.grid.stiff_op @ top.comps[0]) ** 2
        )
        stagnant = sweep > stall_window and history[-stall_window - 1][1] - level <= 1e-6 * abs(level)
        if dJ_norm(top) <= switch_tol * np.sqrt(scale_a) or (stagnant and not tried_stagnant):
            tried_stagnant = tried_stagnant or stagnant
            cand = _polish_scalar(top, spec, constraint, cfg0)
            if cand is not None and abs(cand.energy - level) <= eps:
                report, status = cand, "Converged" if cand.converged else "Stalled"
                break
    if report is None:
        report = critical_point_report(project_pi(path.nodes[k_max]), spec, constraint, cfg0.tol_grad, cfg0.tol_pohozaev)
        status = "Converged" if report.converged else "Stalled"
    pj, pp = path_values(path)
    details = {"nu": nu, "L": L, "sweeps": len(history) - 1, "eps_bar": eps, "rho": cfg0.rho,
               "flow_budget": flow_budget, "n_nodes": path.n, "path_level": level,
               "path_J": pj.tolist(), "path_P": pp.tolist()}
    return MinimaxReport(report.energy, k_max, history, report, status, details)


def _polish_scalar(top: AugmentedPoint, spec, constraint, cfg: FlowConfig) -> CriticalPointReport | None:
    u = project_pi(top)
    try:
        v, _, ok = newton_polish(u, spec, constraint)
    except Exception as exc:  # singular Jacobian far from a nondegenerate point
        log.debug("Newton refinement failed: %s", exc)
        return None
    if not ok:
        return None
    return critical_point_report(v, spec, constraint, cfg.tol_grad, cfg.tol_pohozaev)


# --------------------------------------------------------------------------
# surfaces


@dataclass
class SurfaceOnProduct:
    """Nodes ``nodes[i][j]`` at ``(s_i, t_j)`` of a surface in ``S_{m1} x S_{m2}``."""

    nodes: list[list[AugmentedPoint]]
    params: SystemParams

    def __post_init__(self) -> None:
        n = len(self.nodes)
        if n < 2 or any(len(row) != n for row in self.nodes):
            raise ValueError("surface nodes must form a square array")

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def grid(self) -> RadialGrid:
        return self.nodes[0][0].grid

    def boundary_index(self) -> list[tuple[int, int]]:
        """Boundary nodes, counter-clockwise from ``(0, 0)`` in the ``(s, t)`` plane."""
        n = self.n
        out = [(i, 0) for i in range(n - 1)]
        out += [(n - 1, j) for j in range(n - 1)]
        out += [(i, n - 1) for i in range(n - 1, 0, -1)]
        out += [(0, j) for j in range(n - 1, 0, -1)]
        return out

    def at(self, s: float, t: float) -> AugmentedPoint:
        """Bilinear interpolation in ``(theta, u)`` coordinates, retracted."""
        n = self.n
        x, y = np.clip(s, 0.0, 1.0) * (n - 1), np.clip(t, 0.0, 1.0) * (n - 1)
        i, j = min(int(x), n - 2), min(int(y), n - 2)
        a, b = x - i, y - j
        wts = ((1 - a) * (1 - b), a * (1 - b), (1 - a) * b, a * b)
        pts = (self.nodes[i][j], self.nodes[i + 1][j], self.nodes[i][j + 1], self.nodes[i + 1][j + 1])
        prob, grid = pts[0].problem, pts[0].grid
        th = sum(w * p.theta for w, p in zip(wts, pts))
        comps = [
            retract(sum(w * p.comps[k] for w, p in zip(wts, pts)), grid.weights, m)
            for k, m in enumerate(prob.masses)
        ]
        return AugmentedPoint(float(th), prob.build(grid, comps), prob)


def _component_values(at: AugmentedPoint) -> tuple[float, float, float, float]:
    """``(I1, P1, I2, P2)`` of the components of the represented point."""
    p, grid = at.problem.params, at.grid
    n = grid.dimension
    e2, en = np.exp(2 * at.theta), np.exp(n * at.theta)
    out = []
    for v, mu in zip(at.comps, (p.mu1, p.mu2)):
        a = float(grid.stiff_weights @ (grid.stiff_op @ v) ** 2)
        q = 0.25 * mu * float(grid.weights @ np.maximum(v, 0.0) ** 4)
        out += [0.5 * e2 * a - en * q, e2 * a - n * en * q]
    return tuple(out)


def surface_values(surface: SurfaceOnProduct) -> dict[str, np.ndarray]:
    """Node arrays of ``J``, ``P_*`` and the component energies and Pohozaev values."""
    n = surface.n
    keys = ("J", "P", "I1", "P1", "I2", "P2")
    out = {k: np.empty((n, n)) for k in keys}
    for i in range(n):
        for j in range(n):
            q = surface.nodes[i][j]
            out["J"][i, j], out["P"][i, j] = q.J()
            out["I1"][i, j], out["P1"][i, j], out["I2"][i, j], out["P2"][i, j] = _component_values(q)
    return out


def default_bbar(b1: float, b2: float) -> float:
    """Midpoint of the admissible interval ``(max(b1, b2), b1 + b2)``."""
    return 0.5 * (max(b1, b2) + b1 + b2)


def admissible_surface_check(surface: SurfaceOnProduct, b1: float, b2: float, bbar: float) -> bool:
    """Sign and energy conditions of the surface class on every boundary node."""
    if not (max(b1, b2) < bbar < b1 + b2):
        raise ValueError("bbar must lie in (max(b1, b2), b1 + b2)")
    v = surface_values(surface)
    n = surface.n
    e0, e1 = np.s_[0, :], np.s_[n - 1, :]
    f0, f1 = np.s_[:, 0], np.s_[:, n - 1]
    ok = (
        np.all(v["P1"][e0] > 0) and np.all(v["P1"][e1] < 0)
        and np.all(v["I1"][e0] < b1) and np.all(v["I1"][e1] < b1)
        and np.all(v["P2"][f0] > 0) and np.all(v["P2"][f1] < 0)
        and np.all(v["I2"][f0] < b2) and np.all(v["I2"][f1] < b2)
    )
    ring = np.array([v["J"][i, j] for i, j in surface.boundary_index()])
    return bool(ok and np.all(ring < bbar))


def quartic_integral(state_or_comps, grid: RadialGrid, params: SystemParams, theta: float = 0.0) -> float:
    """``int G`` of the represented point with ``G = mu1/4 u1^4 + mu2/4 u2^4 + beta/2 u1^2 u2^2``."""
    v1, v2 = state_or_comps
    w = grid.weights
    q = (0.25 * params.mu1 * float(w @ np.maximum(v1, 0.0) ** 4)
         + 0.25 * params.mu2 * float(w @ np.maximum(v2, 0.0) ** 4)
         + 0.5 * params.beta * float(w @ (v1 * v1 * v2 * v2)))
    return float(np.exp(grid.dimension * theta) * q)


def capping_time(comps, grid: RadialGrid, params: SystemParams) -> float:
    """``inf { t >= 1 : I_*(c_t) < 0 }`` for the cubic system in three dimensions.

    Along the dilation ``I_*(c_t) = t^2 A / 2 - t^N int G``; for ``N = 3`` the
    infimum is ``max(1, A / (2 int G))``.
    """
    if grid.dimension != 3:
        raise ValueError("the capped edges are built for N = 3")
    a = sum(float(grid.stiff_weights @ (grid.stiff_op @ v) ** 2) for v in comps)
    q = quartic_integral(comps, grid, params)
    if not q > 0:
        raise InadmissibleError("the quartic integral must be positive on the capped edge")
    return max(1.0, a / (2.0 * q))


def _smooth_cutoff(r: np.ndarray, r0: float, r1: float) -> np.ndarray:
    x = np.clip((r - r0) / (r1 - r0), 0.0, 1.0)
    return 1.0 - x**3 * (10 - 15 * x + 6 * x * x)


def _approximant(i: int, params: SystemParams, gs: GroundState, grid: RadialGrid, radius: float) -> RadialFunction:
    """Cut-off ground state of component ``i``, renormalised and moved to its fiber maximum."""
    from .radial import scale
    from .system import scalar_solution

    mi, mui = params.m(i), params.mu(i)
    u = scalar_solution(mi, mui, gs, grid)
    v = u.values * _smooth_cutoff(grid.nodes, 0.8 * radius, radius)
    v = retract(v, grid.weights, mi)
    spec = PowerNonlinearity(((mui, 4.0),), grid.dimension, positive_part=True)
    fm = fiber_maximize(RadialFunction(grid, v), spec)
    w = scale(RadialFunction(grid, v), fm.t)
    return RadialFunction(grid, retract(w.values, grid.weights, mi))


def _support_radius(u: RadialFunction, rel: float = 1e-9) -> float:
    big = np.abs(u.values) > rel * np.abs(u.values).max()
    return float(u.grid.nodes[np.nonzero(big)[0][-1]])


def initial_surface(
    params: SystemParams,
    gs: GroundState,
    delta: float | None = None,
    n_nodes: int = 17,
    bbar: float | None = None,
    nus: Sequence[float] = (0.3, 0.25, 0.2),
    Ls: Sequence[float] = (2.0, 3.0, 4.0, 6.0, 8.0),
) -> SurfaceOnProduct:
    """Admissible surface from dilation edges, capped edges and transfinite interpolation.

    The approximants ``w_i`` are smooth radial cutoffs of the scalar ground
    states, moved to their fiber maxima, so ``I_i(w_i)`` exceeds ``b_i`` only
    by the cutoff error.  The grid of ``gs`` must host the spread dilations
    ``w_{i, nu}``; otherwise :class:`GridTooSmallError` reports the radius
    needed.
    """
    grid = gs.grid
    (l1, b1), (l2, b2) = (scalar_b_i(params.m(i), params.mu(i), gs) for i in (1, 2))
    delta = 0.01 * min(b1, b2) if delta is None else delta
    if not delta > 0:
        raise ValueError("delta must be positive")
    bbar = default_bbar(b1, b2) if bbar is None else bbar
    tail = _support_radius(gs.omega)
    radius = [tail / np.sqrt(lam) for lam in (l1, l2)]
    needed = max(radius) * 1.05 / min(nus) / 0.95
    nu_ok = [nu for nu in nus if max(radius) * 1.05 / nu <= 0.95 * grid.r_max]
    if not nu_ok:
        raise GridTooSmallError("grid too small for the spread edge dilations", needed)
    ws = [_approximant(i, params, gs, grid, min(radius[i - 1], 0.95 * grid.r_max)) for i in (1, 2)]
    for w, b in zip(ws, (b1, b2)):
        e = component_energy(w, params, w is ws[0])
        if e > b + delta:
            raise GridTooSmallError("cutoff approximant exceeds b_i + delta", 2 * grid.r_max)
    last = None
    for nu in nu_ok:
        for L in Ls:
            try:
                surf = _build_surface(params, ws, (nu, nu), (L, L), n_nodes)
            except InadmissibleError as exc:
                last = exc
                continue
            if admissible_surface_check(surf, b1, b2, bbar):
                return surf
    raise InadmissibleError(f"no admissible surface for the tried dilations ({last})")


def component_energy(w: RadialFunction, params: SystemParams, first: bool) -> float:
    mu = params.mu1 if first else params.mu2
    g = w.grid
    a = float(g.stiff_weights @ (g.stiff_op @ w.values) ** 2)
    return 0.5 * a - 0.25 * mu * float(g.weights @ np.maximum(w.values, 0.0) ** 4)


def _build_surface(params: SystemParams, ws, nus, Ls, n: int) -> SurfaceOnProduct:
    from .radial import scale

    grid = ws[0].grid
    prob = SystemProblem(params)
    ms = (params.m1, params.m2)
    lin = np.linspace(0.0, 1.0, n)

    def dil(k: int, f: float) -> np.ndarray:
        return retract(scale(ws[k], f).values, grid.weights, ms[k])

    d1 = [dil(0, nus[0] ** (1 - x) * Ls[0] ** x) for x in lin]
    d2 = [dil(1, nus[1] ** (1 - x) * Ls[1] ** x) for x in lin]
    a1, b1 = d1[0], d1[-1]
    a2, b2 = d2[0], d2[-1]
    for pair in ((b1, a2), (a1, b2), (b1, b2)):
        if not prob.energy(0.0, grid, pair)[0] < 0:
            raise InadmissibleError("corner energy must be negative")

    def capped(k: int, x: float) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
        if k == 0:
            comps = (retract((1 - x) * a1 + x * b1, grid.weights, ms[0]), b2)
        else:
            comps = (b1, retract((1 - x) * a2 + x * b2, grid.weights, ms[1]))
        return float(np.log(capping_time(comps, grid, params))), comps

    # edges as (theta, comps) on the four sides
    bottom = [(0.0, (d1[i], a2)) for i in range(n)]          # t = 0
    left = [(0.0, (a1, d2[j])) for j in range(n)]            # s = 0
    top = [capped(0, x) for x in lin]                        # t = 1
    right = [capped(1, x) for x in lin]                      # s = 1

    def blend(i: int, j: int):
        s, t = lin[i], lin[j]
        terms = [
            (1 - t, bottom[i]), (t, top[i]), (1 - s, left[j]), (s, right[j]),
            (-(1 - s) * (1 - t), bottom[0]), (-s * (1 - t), bottom[-1]),
            (-(1 - s) * t, top[0]), (-s * t, top[-1]),
        ]
        th = sum(c * e[0] for c, e in terms)
        comps = [retract(sum(c * e[1][k] for c, e in terms), grid.weights, ms[k]) for k in (0, 1)]
        return th, comps

    nodes = []
    for i in range(n):
        row = []
        for j in range(n):
            if j == 0:
                th, comps = bottom[i]
            elif j == n - 1:
                th, comps = top[i]
            elif i == 0:
                th, comps = left[j]
            elif i == n - 1:
                th, comps = right[j]
            else:
                th, comps = blend(i, j)
            row.append(AugmentedPoint(float(th), prob.build(grid, list(comps)), prob))
        nodes.append(row)
    return SurfaceOnProduct(nodes, params)


def _snap_surface(surface: SurfaceOnProduct, samples: int = 2) -> tuple[SurfaceOnProduct, float]:
    """Surface maximum over cell samples, with the nearest interior node moved onto it."""
    n = surface.n
    h = 1.0 / (n - 1)
    vals = np.array([[q.J()[0] for q in row] for row in surface.nodes])
    best = float(vals.max())
    i0, j0 = np.unravel_index(np.argmax(vals), vals.shape)
    st = (i0 * h, j0 * h)
    offs = (np.arange(samples) + 0.5) / samples
    for i in range(n - 1):
        for j in range(n - 1):
            for a in offs:
                for b in offs:
                    e = surface.at((i + a) * h, (j + b) * h).J()[0]
                    if e > best:
                        best, st = float(e), ((i + a) * h, (j + b) * h)
    res = minimize(lambda x: -surface.at(x[0], x[1]).J()[0], np.array(st), method="Nelder-Mead",
                   options={"xatol": 1e-4 * h, "fatol": 1e-10 * max(1.0, abs(best)), "maxiter": 200})
    x = np.clip(res.x, 0.0, 1.0)
    if -res.fun > best:
        best, st = float(-res.fun), (float(x[0]), float(x[1]))
    k = (int(round(st[0] / h)), int(round(st[1] / h)))
    k = (min(max(k[0], 1), n - 2), min(max(k[1], 1), n - 2))
    if best > vals[k]:
        nodes = [list(row) for row in surface.nodes]
        nodes[k[0]][k[1]] = surface.at(*st)
        surface = SurfaceOnProduct(nodes, surface.params)
    return surface, best


def refine_surface(surface: SurfaceOnProduct) -> SurfaceOnProduct:
    """Double the node resolution; existing nodes are kept, new ones interpolated."""
    n = surface.n
    m = 2 * n - 1
    nodes = []
    for i in range(m):
        row = []
        for j in range(m):
            if i % 2 == 0 and j % 2 == 0:
                row.append(surface.nodes[i // 2][j // 2])
            else:
                row.append(surface.at(i / (m - 1), j / (m - 1)))
        nodes.append(row)
    return SurfaceOnProduct(nodes, surface.params)


def _grid_gaps(surface: SurfaceOnProduct) -> np.ndarray:
    n = surface.n
    gaps = np.full((n, n), np.inf)
    for i in range(n):
        for j in range(n):
            for di, dj in ((1, 0), (0, 1)):
                k, l = i + di, j + dj
                if k < n and l < n:
                    d = distance_M(surface.nodes[i][j], surface.nodes[k][l])
                    gaps[i, j] = min(gaps[i, j], d)
                    gaps[k, l] = min(gaps[k, l], d)
    return gaps


def _transfer(state: SystemState, grid: RadialGrid) -> SystemState:
    """Resample a state onto another grid and renormalise."""
    v1 = state.u1(grid.nodes)
    v2 = state.u2(grid.nodes)
    return SystemState.normalized(v1, v2, grid, state.params)


def sweep_grid_for(params: SystemParams, dimension: int = 3, n: int = 4096, nu_min: float = 0.25) -> RadialGrid:
    """Grid wide enough to host the spread edge dilations of the initial surface.

    The scalar ground state on ``S_{m_i}`` has frequency ``(M / (mu_i m_i))^2``
    with ``M = ||omega||_2^2``; its numerical support scales like the inverse
    square root of the frequency.
    """
    gs = ground_state_omega(make_grid(dimension, 20.0, 1024))
    tail = 19.0
    lam_min = min(scalar_b_i(params.m(i), params.mu(i), gs)[0] for i in (1, 2))
    r = 1.05 * tail / np.sqrt(lam_min) / (nu_min * 0.95)
    return make_grid(dimension, float(np.ceil(r / 10.0) * 10.0), n)


def surface_minimax(
    params: SystemParams,
    config: FlowConfig | None = None,
    grid: RadialGrid | None = None,
    sweep_grid: RadialGrid | None = None,
    n_nodes: int = 17,
    max_nodes: int = 65,
    max_sweeps: int = 300,
    flow_budget: int = 4,
    switch_tol: float = 0.15,
    stall_window: int = 10,
    delta: float | None = None,
    band: float = 0.5,
) -> MinimaxReport:
    """Deform the initial surface down to the two-parameter minimax level.

    Sweeps run on a grid wide enough for the spread edges (``sweep_grid``).
    Every node flows at the current surface maximum with
    ``eps_bar = min(band |level|, (level - boundary max) / 2)``, which keeps
    the boundary frozen; this is asserted bitwise after every sweep.  The
    surface maximum is tracked over cell samples and the nearest interior
    node is moved onto it.  When the level stalls the node count is doubled
    (up to ``max_nodes``).  The maximising node, once nearly critical or on
    a stall, is transferred to ``grid`` and refined by a bordered Newton
    iteration before validation.  The reported history is the running
    minimum of the surface maxima, an upper bound for the minimax value.
    """
    grid = make_grid(3, 20.0, 4096) if grid is None else grid
    sweep_grid = sweep_grid_for(params, grid.dimension) if sweep_grid is None else sweep_grid
    cfg0 = config or FlowConfig(level=1.0)
    gs = ground_state_omega(sweep_grid)
    (l1, b1), (l2, b2) = (scalar_b_i(params.m(i), params.mu(i), gs) for i in (1, 2))
    surf = initial_surface(params, gs, delta, n_nodes)
    vals = surface_values(surf)["J"]
    bmax = max(vals[i, j] for i, j in surf.boundary_index())
    surf, peak = _snap_surface(surf)
    best = peak
    history = [(0, best)]
    status, report, eps = "Stalled", None, 0.1 * abs(peak)
    arg = (0, 0)
    last_change = 0
    tried = False
    for sweep in range(1, max_sweeps + 1):
        n = surf.n
        ring = surf.boundary_index()
        frozen = {ij: surf.nodes[ij[0]][ij[1]] for ij in ring}
        eps = min(band * abs(peak), 0.5 * (peak - bmax))
        cfg = cfg0.at_level(peak, eps)
        gaps = _grid_gaps(surf)
        cells = [(i, j) for i in range(n) for j in range(n)]
        finals = _map(
            lambda ij: flow_integrate(
                surf.nodes[ij[0]][ij[1]],
                replace(cfg, max_step=min(cfg.max_step, 0.5 * gaps[ij] / flow_budget)),
                flow_budget,
            ).final,
            cells,
        )
        nodes = [[None] * n for _ in range(n)]
        for (i, j), f in zip(cells, finals):
            nodes[i][j] = f
        for (i, j), f in frozen.items():
            if nodes[i][j] is not f:
                raise AssertionError("surface boundary moved: the energy cutoff failed to freeze it")
        surf, peak = _snap_surface(SurfaceOnProduct(nodes, params))
        if peak < best * (1 - 1e-6):
            last_change = sweep
        best = min(best, peak)
        history.append((sweep, best))
        vals = np.array([[q.J()[0] for q in row] for row in surf.nodes])
        arg = tuple(int(x) for x in np.unravel_index(np.argmax(vals), vals.shape))
        top = surf.nodes[arg[0]][arg[1]]
        g = top.grid
        scale_a = np.exp(2 * top.theta) * sum(float(g.stiff_weights @ (g.stiff_op @ v) ** 2) for v in top.comps)
        stagnant = sweep - last_change >= stall_window
        if dJ_norm(top) <= switch_tol * np.sqrt(scale_a) or (stagnant and not tried):
            tried = tried or stagnant
            cand = _polish_system(top, grid, cfg0)
            if cand is not None and abs(cand.energy - peak) <= eps:
                report, status = cand, "Converged" if cand.converged else "Stalled"
                break
        if stagnant and 2 * surf.n - 1 <= max_nodes:
            log.info("surface stalled at %.6g; refining to %d nodes", best, 2 * surf.n - 1)
            surf = refine_surface(surf)
            last_change, tried = sweep, False
    if report is None:
        st = _transfer(project_pi(surf.nodes[arg[0]][arg[1]]), grid)
        from .system import system_gradient

        sg = system_gradient(st, check=False)
        report = validate_solution(st, sg.lambda1, sg.lambda2, energy_Istar(st), cfg0.tol_grad, cfg0.tol_pohozaev)
        status = "Converged" if report.converged else "Stalled"
    details = {
        "b1": b1, "b2": b2, "lower_bound_ok": bool(report.energy >= b1 + b2 - 1e-3),
        "sweeps": len(history) - 1, "eps_bar": eps, "surface_level": best, "n_nodes": surf.n,
        "sweep_r_max": sweep_grid.r_max, "flow_budget": flow_budget,
        "surface_J": [[q.J()[0] for q in row] for row in surf.nodes],
    }
    return MinimaxReport(report.energy, arg, history, report, status, details)


def _polish_system(top: AugmentedPoint, grid: RadialGrid, cfg: FlowConfig) -> SystemReport | None:
    st = _transfer(project_pi(top), grid)
    try:
        st, l1, l2, ok = newton_polish_system(st)
    except Exception as exc:
        log.debug("Newton refinement failed: %s", exc)
        return None
    if not ok:
        return None
    return validate_solution(st, l1, l2, energy_Istar(st), cfg.tol_grad, cfg.tol_pohozaev)


# --------------------------------------------------------------------------
# degree


class _ZeroHit(Exception):
    def __init__(self, point):
        super().__init__("exact zero on a cell boundary")
        self.point = point


def _angle_walk(f: Callable[[np.ndarray], np.ndarray], a: np.ndarray, b: np.ndarray,
                fa: np.ndarray, fb: np.ndarray, depth: int = 0) -> float:
    """Angle swept by ``f`` along the segment ``a -> b``, bisecting large jumps."""
    for v, p in ((fa, a), (fb, b)):
        if not np.any(v):
            raise _ZeroHit(p)
    d = np.angle(complex(fb[0], fb[1]) / complex(fa[0], fa[1]))
    if abs(d) <= np.pi / 4 or depth >= 30:
        return float(d)
    m = 0.5 * (a + b)
    fm = np.asarray(f(m), dtype=float)
    return _angle_walk(f, a, m, fa, fm, depth + 1) + _angle_walk(f, m, b, fm, fb, depth + 1)


def winding_number(f: Callable[[float, float], np.ndarray], box: tuple[float, float, float, float],
                   samples: int = 8, cache: dict | None = None) -> int:
    """Winding number of ``f`` around 0 along the counter-clockwise boundary of ``box``."""
    s0, s1, t0, t1 = box
    cache = {} if cache is None else cache

    def ev(p):
        key = (round(p[0], 15), round(p[1], 15))
        if key not in cache:
            cache[key] = np.asarray(f(*p), dtype=float)
        return cache[key]

    corners = [np.array(c) for c in ((s0, t0), (s1, t0), (s1, t1), (s0, t1))]
    total = 0.0
    for k in range(4):
        a, b = corners[k], corners[(k + 1) % 4]
        pts = [a + (b - a) * x for x in np.linspace(0.0, 1.0, samples + 1)]
        vals = [ev(p) for p in pts]
        for p, q, fp, fq in zip(pts[:-1], pts[1:], vals[:-1], vals[1:]):
            total += _angle_walk(ev, p, q, fp, fq)
    return int(round(total / (2 * np.pi)))


def _surface_pohozaev(surface: SurfaceOnProduct):
    def f(s: float, t: float) -> np.ndarray:
        _, p1, _, p2 = _component_values(surface.at(s, t))
        return np.array([p1, p2])

    def scale(s: float, t: float) -> float:
        q = surface.at(s, t)
        g = q.grid
        return float(np.exp(2 * q.theta) * sum(float(g.stiff_weights @ (g.stiff_op @ v) ** 2) for v in q.comps))

    return f, scale


def locate_zero(f: Callable[[float, float], np.ndarray], scale: Callable[[float, float], float],
                tol: float = 1e-6, box: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0),
                min_size: float = 1e-12) -> tuple[float, float]:
    """Zero of ``f`` in a box with nonzero winding: quadtree on cell windings, then a root solve."""
    cache: dict = {}

    def good(x) -> bool:
        return float(np.max(np.abs(f(*x)))) <= tol * scale(*x)

    try:
        return _locate(f, good, box, cache, min_size)
    except _ZeroHit as hit:
        return float(hit.point[0]), float(hit.point[1])


def _locate(f, good, box, cache, min_size) -> tuple[float, float]:
    if winding_number(f, box, cache=cache) == 0:
        raise InadmissibleError("zero winding number of the Pohozaev pair on the boundary")

    while True:
        s0, s1, t0, t1 = box
        c = np.array([0.5 * (s0 + s1), 0.5 * (t0 + t1)])
        w = max(s1 - s0, t1 - t0)
        if w <= 1e-2:
            sol = root(lambda x: f(*x), c, method="hybr", options={"xtol": 1e-14})
            x = sol.x
            if s0 - w <= x[0] <= s1 + w and t0 - w <= x[1] <= t1 + w and 0 <= x[0] <= 1 and 0 <= x[1] <= 1 and good(x):
                return float(x[0]), float(x[1])
        if good(c) and (w <= 1e-6 or not np.any(f(*c))):
            return float(c[0]), float(c[1])
        if w <= min_size:
            raise InadmissibleError("zero localised but the Pohozaev tolerance is not met")
        sm, tm = c
        children = ((s0, sm, t0, tm), (sm, s1, t0, tm), (s0, sm, tm, t1), (sm, s1, tm, t1))
        for child in children:
            if winding_number(f, child, cache=cache) != 0:
                box = child
                break
        else:
            raise InadmissibleError("winding number lost under subdivision")


def degree_intersection(
    surface: SurfaceOnProduct | None = None,
    functionals: Callable[[float, float], np.ndarray] | None = None,
    scale: Callable[[float, float], float] | None = None,
    tol: float = 1e-6,
) -> tuple[float, float]:
    """Parameters ``(s0, t0)`` where both component Pohozaev values vanish.

    The winding number of ``(s, t) -> (P1, P2)`` along the boundary of the
    unit square is nonzero for admissible surfaces; nested cells with nonzero
    winding localise a zero, which is then polished by a root solve until
    ``max |P_i| <= tol * (||grad u1||^2 + ||grad u2||^2)``.  ``functionals``
    and ``scale`` may be injected to test the search on synthetic maps.
    """
    if functionals is None:
        if surface is None:
            raise ValueError("need a surface or injected functionals")
        functionals, default_scale = _surface_pohozaev(surface)
        scale = scale or default_scale
    scale = scale or (lambda s, t: 1.0)
    return locate_zero(functionals, scale, tol)
