import numpy as np
import pytest

from normdeform.deformation import AugmentedPoint, ScalarProblem, distance_M
from normdeform.minimax import (
    GridTooSmallError,
    InadmissibleError,
    PathOnSphere,
    admissible_path_check,
    admissible_surface_check,
    capping_time,
    default_bbar,
    degree_intersection,
    dilation_path,
    initial_surface,
    path_pohozaev_crossing,
    path_values,
    refine_surface,
    reparametrize,
    surface_values,
    sweep_grid_for,
    winding_number,
)
from normdeform.scalar import PowerNonlinearity, SphereConstraint, fiber_maximize, gaussian_seed
from normdeform.system import SystemParams, ground_state_omega, scalar_b_i

SPEC = PowerNonlinearity(((1.0, 4.0), (0.5, 5.0)), 3)


@pytest.fixture(scope="module")
def instance(gs):
    params = SystemParams(1.0, 1.0, -0.5, gs.mass, gs.mass)
    grid = sweep_grid_for(params)
    wide = ground_state_omega(grid)
    surf = initial_surface(params, wide)
    b1 = scalar_b_i(params.m1, params.mu1, wide)[1]
    b2 = scalar_b_i(params.m2, params.mu2, wide)[1]
    return params, wide, surf, b1, b2


# --------------------------------------------------------------------------
# paths


def test_dilation_path_admissible(grid3):
    c = SphereConstraint(4.0)
    u = gaussian_seed(grid3, c)
    path = dilation_path(u, SPEC, c)
    b0 = fiber_maximize(u, SPEC).value
    assert admissible_path_check(path, SPEC, b0)
    j, p = path_values(path)
    assert p[0] > 0 > p[-1]


def test_constant_path_inadmissible(grid3):
    c = SphereConstraint(4.0)
    u = gaussian_seed(grid3, c)
    prob = ScalarProblem(SPEC, c)
    path = PathOnSphere([AugmentedPoint(0.0, u, prob) for _ in range(5)])
    assert not admissible_path_check(path, SPEC, 1.0)
    with pytest.raises(InadmissibleError):
        path_pohozaev_crossing(path, SPEC)


def test_high_energy_endpoints_inadmissible(grid3):
    c = SphereConstraint(4.0)
    u = gaussian_seed(grid3, c)
    t0 = fiber_maximize(u, SPEC).t
    # endpoints close to the fiber maximum carry almost the peak energy
    path = dilation_path(u, SPEC, c, nu=0.9 * t0, L=1.1 * t0)
    assert not admissible_path_check(path, SPEC, fiber_maximize(u, SPEC).value)
    with pytest.raises(ValueError):
        admissible_path_check(path, SPEC, -1.0)
    with pytest.raises(ValueError):
        dilation_path(u, SPEC, c, nu=2.0, L=1.0)


def test_crossing_is_fiber_maximiser(grid3):
    c = SphereConstraint(4.0)
    u = gaussian_seed(grid3, c, np.random.default_rng(3))
    path = dilation_path(u, SPEC, c)
    cr = path_pohozaev_crossing(path, SPEC)
    assert np.exp(cr.point.theta) == pytest.approx(fiber_maximize(u, SPEC).t, rel=1e-6)
    assert 0 < cr.t < 1


def test_positive_pohozaev_path_raises(grid3):
    c = SphereConstraint(4.0)
    u = gaussian_seed(grid3, c)
    t0 = fiber_maximize(u, SPEC).t
    path = dilation_path(u, SPEC, c, nu=0.01 * t0, L=0.5 * t0)
    assert np.all(path_values(path)[1] > 0)
    with pytest.raises(InadmissibleError, match="no sign change"):
        path_pohozaev_crossing(path, SPEC)


def test_reparametrize_equal_arclength(grid3):
    c = SphereConstraint(4.0)
    path = dilation_path(gaussian_seed(grid3, c), SPEC, c, n_nodes=9)
    rp = reparametrize(path)
    assert rp.n == path.n
    assert rp.nodes[0] is path.nodes[0] and rp.nodes[-1] is path.nodes[-1]
    seg = np.array([distance_M(a, b) for a, b in zip(rp.nodes[:-1], rp.nodes[1:])])
    assert np.ptp(seg) <= 1e-6 * seg.mean()


def test_path_needs_two_nodes(grid3):
    with pytest.raises(ValueError):
        PathOnSphere([])


# --------------------------------------------------------------------------
# surfaces


def test_initial_surface_too_small_grid(grid3, gs):
    params = SystemParams(1.0, 1.0, -0.5, gs.mass, gs.mass)
    with pytest.raises(GridTooSmallError) as exc:
        initial_surface(params, gs)
    assert exc.value.required_r_max > grid3.r_max


def test_initial_surface_admissible(instance):
    params, gs, surf, b1, b2 = instance
    bbar = default_bbar(b1, b2)
    assert admissible_surface_check(surf, b1, b2, bbar)
    v = surface_values(surf)
    n = surf.n
    for i, j in ((n - 1, 0), (0, n - 1), (n - 1, n - 1)):
        assert v["J"][i, j] < 0
    ring = [v["J"][i, j] for i, j in surf.boundary_index()]
    assert max(ring) < bbar
    assert v["J"].max() >= b1 + b2 - 1e-3


def test_admissible_surface_detects_flipped_sign(instance):
    params, gs, surf, b1, b2 = instance
    n = surf.n
    nodes = [list(row) for row in surf.nodes]
    # swap the two s-edges so P1 has the wrong sign on both
    nodes[0], nodes[n - 1] = nodes[n - 1], nodes[0]
    flipped = type(surf)(nodes, params)
    assert not admissible_surface_check(flipped, b1, b2, default_bbar(b1, b2))
    with pytest.raises(ValueError, match="bbar"):
        admissible_surface_check(surf, b1, b2, b1 + b2 + 1.0)


def test_capping_time_formula(instance):
    params, gs, surf, b1, b2 = instance
    grid = surf.grid
    n = surf.n
    for i in (0, n // 2, n - 1):
        q = surf.nodes[i][n - 1]
        v1, v2 = (c for c in q.comps)
        a = sum(float(grid.stiff_weights @ (grid.stiff_op @ v) ** 2) for v in (v1, v2))
        g4 = float(grid.weights @ (params.mu1 * np.maximum(v1, 0) ** 4 + params.mu2 * np.maximum(v2, 0) ** 4
                                   + 2 * params.beta * v1**2 * v2**2))
        assert np.exp(q.theta) == pytest.approx(max(1.0, 2 * a / g4), rel=1e-8)
        assert capping_time(q.comps, grid, params) == pytest.approx(max(1.0, 2 * a / g4), rel=1e-12)
        # the capped edge sits where the dilated energy turns nonpositive
        assert q.J()[0] <= 1e-9 * abs(b1)


def test_refine_surface_keeps_nodes(instance):
    params, gs, surf, b1, b2 = instance
    small = type(surf)([row[::4] for row in surf.nodes[::4]], params)
    fine = refine_surface(small)
    assert fine.n == 2 * small.n - 1
    for i in range(small.n):
        for j in range(small.n):
            assert fine.nodes[2 * i][2 * j] is small.nodes[i][j]


def test_surface_bilinear_at_nodes(instance):
    params, gs, surf, b1, b2 = instance
    n = surf.n
    q = surf.at(3 / (n - 1), 5 / (n - 1))
    node = surf.nodes[3][5]
    assert q.theta == pytest.approx(node.theta, abs=1e-12)
    assert np.max(np.abs(q.comps[0] - node.comps[0])) <= 1e-12 * np.max(np.abs(node.comps[0]))


# --------------------------------------------------------------------------
# degree


def test_winding_number_synthetic():
    assert winding_number(lambda s, t: np.array([s - 0.5, t - 0.5]), (0, 1, 0, 1)) == 1
    assert winding_number(lambda s, t: np.array([0.5 - s, t - 0.5]), (0, 1, 0, 1)) == -1
    assert winding_number(lambda s, t: np.array([s + 2.0, t]), (0, 1, 0, 1)) == 0
    f = lambda s, t: np.array([(s - 0.5) ** 2 - (t - 0.5) ** 2, 2 * (s - 0.5) * (t - 0.5)])
    assert winding_number(f, (0, 1, 0, 1)) == 2


def test_degree_intersection_synthetic():
    s0, t0 = degree_intersection(functionals=lambda s, t: np.array([s - 0.5, t - 0.5]))
    assert (s0, t0) == pytest.approx((0.5, 0.5), abs=1e-6)
    f = lambda s, t: np.array([np.tanh(3 * (0.3 - s)) + 0.1 * t, (0.7 - t) * (1 + s * s)])
    s0, t0 = degree_intersection(functionals=f)
    assert np.max(np.abs(f(s0, t0))) <= 1e-6
    with pytest.raises(InadmissibleError):
        degree_intersection(functionals=lambda s, t: np.array([s + 2.0, t]))
    with pytest.raises(ValueError):
        degree_intersection()


def test_degree_on_surface(instance):
    params, gs, surf, b1, b2 = instance

    def f(s, t):
        q = surf.at(s, t)
        v = surface_values(type(surf)([[q, q], [q, q]], params))
        return np.array([v["P1"][0, 0], v["P2"][0, 0]])

    assert abs(winding_number(f, (0, 1, 0, 1))) == 1
    s0, t0 = degree_intersection(surf)
    q = surf.at(s0, t0)
    v = surface_values(type(surf)([[q, q], [q, q]], params))
    g = q.grid
    scale_a = np.exp(2 * q.theta) * sum(float(g.stiff_weights @ (g.stiff_op @ c) ** 2) for c in q.comps)
    assert max(abs(v["P1"][0, 0]), abs(v["P2"][0, 0])) <= 1e-6 * scale_a
    assert q.J()[0] >= b1 + b2 - 1e-3


def test_mountain_pass_history_and_report(grid2):
    from normdeform.minimax import mountain_pass_single

    spec = PowerNonlinearity(((1.0, 5.0),), 2)
    rep = mountain_pass_single(SphereConstraint(3.0), spec, grid=grid2)
    levels = [v for _, v in rep.history]
    assert np.all(np.diff(levels) <= 0)
    assert rep.converged
    assert abs(rep.report.pohozaev) <= 1e-6 * rep.report.grad_sq
    assert rep.details["path_J"][0] < rep.level and rep.details["path_J"][-1] < rep.level
