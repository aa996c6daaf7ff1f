import numpy as np
import pytest

from normdeform.deformation import (
    AugmentedPoint,
    FlowConfig,
    FlowRecord,
    FlowTrace,
    ScalarProblem,
    SystemProblem,
    cutoffs,
    dJ_norm,
    distance_M,
    flow_integrate,
    lift_iota,
    metric_norm,
    project_pi,
    project_pi_exact,
    pseudo_gradient,
    psp_monitor,
)
from normdeform.radial import RadialFunction, grad_norm_sq, lp_integral, scale
from normdeform.scalar import PowerNonlinearity, SphereConstraint, energy_I, gaussian_seed, pohozaev_P, retract
from normdeform.system import SystemParams, SystemState

CUBIC = PowerNonlinearity(((1.0, 4.0),), 3)
ODD = PowerNonlinearity(((1.0, 4.0), (0.5, 5.0)), 3)


def scalar_point(grid, rng, theta=0.0, spec=ODD, m=5.0):
    prob = ScalarProblem(spec, SphereConstraint(m))
    return AugmentedPoint(theta, gaussian_seed(grid, prob.constraint, rng), prob)


def system_point(grid, rng, theta=0.0):
    p = SystemParams(1.0, 1.5, -0.5, 3.0, 2.0)
    s = SystemState(gaussian_seed(grid, SphereConstraint(3.0), rng), gaussian_seed(grid, SphereConstraint(2.0), rng), p)
    return AugmentedPoint(theta, s, SystemProblem(p))


def test_metric_norm_explicit(grid3, rng):
    at = scalar_point(grid3, rng, theta=np.log(2.0))
    v = gaussian_seed(grid3, SphereConstraint(1.0), rng)
    expect = np.sqrt(4 * grad_norm_sq(v) + lp_integral(v, 2))
    assert metric_norm(0.0, v, at) == pytest.approx(expect, rel=1e-12)
    at0 = AugmentedPoint(0.0, at.point, at.problem)
    assert metric_norm(0.7, v, at0) == pytest.approx(np.sqrt(0.49 + grad_norm_sq(v) + lp_integral(v, 2)), rel=1e-12)
    assert metric_norm(0.0, v, at) > metric_norm(0.0, v, at0)


def test_dJ_norm_vanishes_at_ground_state(grid3, gs):
    at = AugmentedPoint(0.0, gs.omega, ScalarProblem(CUBIC, SphereConstraint(gs.mass)))
    assert dJ_norm(at) <= 1e-6 * grad_norm_sq(gs.omega)


def test_dJ_norm_translation_covariance(grid3, rng):
    at = scalar_point(grid3, rng, theta=0.3)
    a = 0.2
    moved = AugmentedPoint(0.5, at.point, at.problem)
    u = RadialFunction(grid3, retract(scale(at.point, np.exp(a)).values, grid3.weights, 5.0))
    other = AugmentedPoint(0.3, u, at.problem)
    assert dJ_norm(moved) == pytest.approx(dJ_norm(other), rel=1e-3)
    assert dJ_norm(moved) >= abs(moved.J()[1])


@pytest.mark.parametrize("maker", [scalar_point, system_point])
def test_pseudo_gradient_pairing(grid3, maker):
    rng = np.random.default_rng(21)
    for _ in range(3):
        at = maker(grid3, rng, theta=rng.uniform(-0.3, 0.3))
        pg = pseudo_gradient(at)
        prob, grid = at.problem, at.grid
        h = 1e-6

        def J(s):
            comps = [retract(c + s * v, grid.weights, m) for c, v, m in zip(at.comps, pg.v, prob.masses)]
            return prob.energy(at.theta + s * pg.kappa, grid, comps)[0]

        pairing = (J(h) - J(-h)) / (2 * h)
        assert 0.99 <= pairing / pg.norm**2 <= 1.01
        ratio = metric_norm(pg.kappa, pg.v, at) / pg.norm
        assert 0.99 <= ratio <= 2.0


def test_pseudo_gradient_odd_equivariance(grid3, rng):
    at = scalar_point(grid3, rng)
    a, b = pseudo_gradient(at), pseudo_gradient(at.negate())
    assert a.kappa == pytest.approx(b.kappa, rel=1e-12)
    assert np.max(np.abs(a.v[0] + b.v[0])) <= 1e-10 * np.max(np.abs(a.v[0]))


def test_pseudo_gradient_rejects_critical_point(grid3, gs):
    at = AugmentedPoint(0.0, gs.omega, ScalarProblem(CUBIC, SphereConstraint(gs.mass)))
    with pytest.raises(ValueError, match="critical point"):
        pseudo_gradient(at, tol=1e-3)


def test_flow_config_validation():
    cfg = FlowConfig(level=-20.0)
    assert cfg.eps_bar == pytest.approx(2.0)
    for bad in (dict(eps_bar=0.0), dict(rho=-1.0), dict(max_step=np.inf), dict(tol_grad=0.0)):
        with pytest.raises(ValueError, match="must be positive"):
            FlowConfig(level=1.0, **bad)


def test_cutoff_bands(grid3, rng):
    at = scalar_point(grid3, rng)
    cfg = FlowConfig(level=10.0, eps_bar=1.0, rho=0.3)
    assert cutoffs(at, 10.0, cfg) == 1.0
    assert cutoffs(at, 10.4, cfg) == 1.0
    assert cutoffs(at, 10.75, cfg) == pytest.approx(0.5)
    assert cutoffs(at, 8.0, cfg) == 0.0
    assert cutoffs(at, 10.0, cfg, [at]) == 0.0
    far = scalar_point(grid3, rng, theta=5.0)
    assert distance_M(at, far) > 2 * cfg.rho / 3
    assert cutoffs(at, 10.0, cfg, [far]) == 1.0


def test_flow_identity_and_monotone(grid3):
    rng = np.random.default_rng(4)
    for maker in (scalar_point, system_point):
        at = maker(grid3, rng)
        j0 = at.J()[0]
        tr = flow_integrate(at, FlowConfig(level=j0, eps_bar=0.5 * abs(j0) + 1.0, max_step=0.5), budget=30)
        assert tr.records[0].J == j0 and tr.records[0].theta == at.theta
        js = np.array([r.J for r in tr.records])
        assert np.all(np.diff(js) <= 0.0)
        assert js[-1] < j0


def test_flow_frozen_below_band(grid3, rng):
    at = scalar_point(grid3, rng)
    j0 = at.J()[0]
    cfg = FlowConfig(level=j0 + 10.0, eps_bar=1.0)
    tr = flow_integrate(at, cfg, budget=10)
    assert tr.frozen and len(tr.records) == 1
    assert tr.final is at


def test_flow_odd_equivariance(grid3):
    rng = np.random.default_rng(9)
    at = scalar_point(grid3, rng)
    j0 = at.J()[0]
    cfg = FlowConfig(level=j0, eps_bar=abs(j0) + 1.0, max_step=0.5)
    a = flow_integrate(at, cfg, budget=15)
    b = flow_integrate(at.negate(), cfg, budget=15)
    assert a.final.theta == pytest.approx(b.final.theta, abs=1e-12)
    scale_ = np.max(np.abs(a.final.comps[0]))
    assert np.max(np.abs(a.final.comps[0] + b.final.comps[0])) <= 1e-8 * scale_


def test_flow_budget_validation(grid3, rng):
    with pytest.raises(ValueError):
        flow_integrate(scalar_point(grid3, rng), FlowConfig(level=1.0), budget=0)


def test_flow_trace_csv(grid3, rng, tmp_path):
    at = scalar_point(grid3, rng)
    j0 = at.J()[0]
    tr = flow_integrate(at, FlowConfig(level=j0, eps_bar=abs(j0) + 1.0), budget=3)
    tr.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,J,P,grad_norm,theta,step,cutoff"
    assert len(lines) == len(tr.records) + 1


def test_project_and_lift(grid3, rng):
    prob = ScalarProblem(ODD, SphereConstraint(5.0))
    u = gaussian_seed(grid3, prob.constraint, rng)
    assert project_pi(lift_iota(u, prob)) is u
    at = AugmentedPoint(0.25, u, prob)
    v = project_pi(at)
    assert lp_integral(v, 2) == pytest.approx(5.0, rel=1e-12)
    j, p = at.J()
    assert energy_I(v, ODD) == pytest.approx(j, rel=1e-5)
    assert pohozaev_P(v, ODD) == pytest.approx(p, rel=1e-4)
    ex = project_pi_exact(at)
    assert energy_I(ex, ODD) == pytest.approx(j, rel=1e-12)


def record(J, P, g, stalled=False):
    tr = FlowTrace([FlowRecord(0.0, J, P, g, 0.0, 0.0, 1.0)])
    tr.stalled = stalled
    return tr


def test_psp_monitor_states(grid3, gs):
    cfg = FlowConfig(level=5.0, tol_grad=1e-6, tol_pohozaev=1e-6, tol_energy=1e-6)
    assert psp_monitor(record(5.0, 0.0, 0.0), cfg).converged
    assert psp_monitor(record(5.0, 0.5, 0.0), cfg).status == "Flowing"
    assert psp_monitor(record(7.0, 1.0, 3.0, stalled=True), cfg).status == "Stalled"
    with pytest.raises(ValueError):
        psp_monitor(FlowTrace(), cfg)
    # a trace sitting at the ground state with b = M / 2
    at = AugmentedPoint(0.0, gs.omega, ScalarProblem(CUBIC, SphereConstraint(gs.mass)))
    j = at.J()[0]
    cfg = FlowConfig(level=0.5 * gs.mass, tol_grad=1e-5, tol_pohozaev=1e-5, tol_energy=1e-5 * gs.mass)
    tr = flow_integrate(at, cfg, budget=1)
    assert abs(j - 0.5 * gs.mass) <= 1e-6 * gs.mass
    assert psp_monitor(tr, cfg).converged
