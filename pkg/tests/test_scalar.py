import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from normdeform.radial import (
    RadialFunction,
    dilate_exact,
    grad_norm_sq,
    h1_inner,
    l2_inner,
    lp_integral,
    make_grid,
)
from normdeform.scalar import (
    GrowthConditionError,
    PowerNonlinearity,
    SphereConstraint,
    augmented_J,
    b0_estimate,
    critical_point_report,
    energy_I,
    fiber_maximize,
    gaussian_seed,
    newton_polish,
    normalize_h0,
    pohozaev_P,
    retract,
    riemannian_gradient,
    validate_growth,
)

CUBIC3 = PowerNonlinearity(((1.0, 4.0),), 3)
TWO_TERM = PowerNonlinearity(((1.0, 4.0), (0.5, 5.0)), 3)


def random_tangent(u, rng):
    g = u.grid
    r = g.nodes
    v = sum(rng.normal() * np.exp(-0.5 * ((r - rng.uniform(0, 3)) / rng.uniform(0.5, 2.0)) ** 2) for _ in range(3))
    v = RadialFunction(g, v)
    return v - u * (l2_inner(u, v) / lp_integral(u, 2))


# --------------------------------------------------------------------------
# growth conditions


@pytest.mark.parametrize(
    "terms,dim",
    [
        (((1.0, 3.0),), 3),  # mass-subcritical in 3D
        (((1.0, 10.0 / 3.0),), 3),  # exactly mass-critical
        (((1.0, 6.0),), 3),  # Sobolev-critical
        (((1.0, 4.0),), 2),  # mass-critical in 2D
        (((-1.0, 4.0),), 3),  # negative coefficient
        (((1.0, 4.0), (0.0, 5.0)), 3),
    ],
)
def test_validate_growth_rejects(terms, dim):
    with pytest.raises(GrowthConditionError):
        validate_growth(PowerNonlinearity(terms, dim))


def test_validate_growth_bracket():
    assert validate_growth(TWO_TERM) == (4.0, 5.0)
    assert validate_growth(PowerNonlinearity(((1.0, 6.0),), 2)) == (6.0, 6.0)


def test_sphere_constraint_rejects_nonpositive():
    with pytest.raises(ValueError):
        SphereConstraint(0.0)


# --------------------------------------------------------------------------
# fiber structure


def test_fiber_closed_form_single_quartic(grid3):
    # I(u_t) = t^2 A/2 - t^3 C with C = int u^4 / 4, so t0 = A / (3 C)
    u = gaussian_seed(grid3, SphereConstraint(3.0))
    a = grad_norm_sq(u)
    c = lp_integral(u, 4) / 4
    res = fiber_maximize(u, CUBIC3)
    t0 = a / (3 * c)
    assert res.t == pytest.approx(t0, rel=1e-12)
    assert res.value == pytest.approx(0.5 * t0**2 * a - t0**3 * c, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(theta=st.floats(-3.0, 3.0), seed=st.integers(0, 2**16))
def test_fiber_max_dominates(grid3, theta, seed):
    u = gaussian_seed(grid3, SphereConstraint(2.0), np.random.default_rng(seed))
    res = fiber_maximize(u, TWO_TERM)
    assert augmented_J(theta, u, TWO_TERM)[0] <= res.value + 1e-12 * abs(res.value)
    assert abs(augmented_J(res.theta, u, TWO_TERM)[1]) <= 1e-10 * grad_norm_sq(u) * res.t**2


def test_fiber_max_out_of_range_raises(grid3):
    u = gaussian_seed(grid3, SphereConstraint(1e-14))
    with pytest.raises(ValueError, match="refine the grid"):
        fiber_maximize(u, CUBIC3)


def test_augmented_J_matches_exact_dilation(grid3):
    u = gaussian_seed(grid3, SphereConstraint(4.0), np.random.default_rng(2))
    for th in (-0.4, 0.0, 0.7):
        val, dth = augmented_J(th, u, TWO_TERM)
        ut = dilate_exact(u, np.exp(th))
        assert val == pytest.approx(energy_I(ut, TWO_TERM), rel=1e-12)
        assert dth == pytest.approx(pohozaev_P(ut, TWO_TERM), rel=1e-12)


@pytest.mark.parametrize("dim", [2, 3])
def test_pohozaev_is_fiber_derivative(dim):
    grid = make_grid(dim, 20.0, 4096)
    spec = PowerNonlinearity(((1.0, 4.5), (0.5, 5.0)), dim)
    rng = np.random.default_rng(11)
    h = 1e-3
    for _ in range(3):
        u = gaussian_seed(grid, SphereConstraint(5.0), rng)
        p = pohozaev_P(u, spec)
        fd = (energy_I(dilate_exact(u, 1 + h), spec) - energy_I(dilate_exact(u, 1 - h), spec)) / (2 * h)
        assert abs(fd - p) <= 1e-6 * abs(p)


# --------------------------------------------------------------------------
# Riemannian calculus


def test_riemannian_gradient_matches_finite_differences(grid3):
    c = SphereConstraint(5.0)
    rng = np.random.default_rng(3)
    u = gaussian_seed(grid3, c, rng)
    g, _ = riemannian_gradient(u, TWO_TERM, c)
    h = 1e-5
    for _ in range(10):
        v = random_tangent(u, rng)

        def f(s):
            w = RadialFunction(grid3, retract((u + v * s).values, grid3.weights, c.m))
            return energy_I(w, TWO_TERM)

        fd = (f(h) - f(-h)) / (2 * h)
        an = h1_inner(g, v)
        assert abs(fd - an) <= 1e-5 * abs(an)


def test_riemannian_gradient_is_tangent(grid3):
    c = SphereConstraint(5.0)
    u = gaussian_seed(grid3, c, np.random.default_rng(4))
    g, _ = riemannian_gradient(u, TWO_TERM, c)
    assert abs(l2_inner(g, u)) <= 1e-10 * np.sqrt(l2_inner(g, g) * c.m)


def test_riemannian_gradient_rejects_off_sphere(grid3):
    c = SphereConstraint(5.0)
    u = gaussian_seed(grid3, c) * 1.01
    with pytest.raises(ValueError, match="off the sphere"):
        riemannian_gradient(u, TWO_TERM, c)


def test_multiplier_formula(grid3):
    c = SphereConstraint(5.0)
    u = gaussian_seed(grid3, c, np.random.default_rng(5))
    _, lam = riemannian_gradient(u, CUBIC3, c)
    expect = (lp_integral(u, 4) - grad_norm_sq(u)) / c.m
    assert lam == pytest.approx(expect, rel=1e-10)


def test_retract_rejects_zero(grid3):
    with pytest.raises(ValueError):
        retract(np.zeros(grid3.n), grid3.weights, 1.0)


# --------------------------------------------------------------------------
# odd normalisation and critical points


def test_normalize_h0_odd_and_on_sphere(grid3):
    c = SphereConstraint(3.0)
    u = gaussian_seed(grid3, SphereConstraint(1.7), np.random.default_rng(6))
    a, b = normalize_h0(u, c), normalize_h0(-u, c)
    assert np.max(np.abs(a.values + b.values)) <= 1e-14 * np.max(np.abs(a.values))
    assert lp_integral(a, 2) == pytest.approx(3.0, rel=1e-12)


def test_newton_recovers_ground_state(grid3, gs):
    # for g = u^3 in 3D the ground state on ||u||^2 = ||omega||^2 is omega
    c = SphereConstraint(gs.mass)
    start = RadialFunction(grid3, retract(1.05 * gs.omega.values * np.exp(-0.02 * grid3.nodes), grid3.weights, c.m))
    u, lam, ok = newton_polish(start, CUBIC3, c)
    assert ok
    assert lam == pytest.approx(1.0, rel=1e-6)
    rep = critical_point_report(u, CUBIC3, c)
    assert rep.converged
    assert rep.energy == pytest.approx(0.5 * gs.mass, rel=1e-6)
    assert abs(rep.pohozaev) <= 1e-6 * rep.grad_sq
    assert rep.decay == pytest.approx(1.0, abs=0.05)


def test_b0_estimate_single_cubic(grid3, gs):
    est = b0_estimate(SphereConstraint(gs.mass), CUBIC3, grid3, seeds=2)
    assert float(est) == pytest.approx(0.5 * gs.mass, rel=1e-4)
    assert est.value == min(est.per_seed)


def test_functionals_are_even(grid3, rng):
    u = gaussian_seed(grid3, SphereConstraint(2.0), rng)
    assert energy_I(-u, TWO_TERM) == energy_I(u, TWO_TERM)
    assert pohozaev_P(-u, TWO_TERM) == pohozaev_P(u, TWO_TERM)


def test_dilation_asymptotics(grid3):
    u = gaussian_seed(grid3, SphereConstraint(3.0))
    assert augmented_J(np.log(1e-2), u, CUBIC3)[0] > 0
    assert augmented_J(np.log(1e2), u, CUBIC3)[0] < 0


def test_fiber_derivative_single_root(grid3):
    u = gaussian_seed(grid3, SphereConstraint(3.0), np.random.default_rng(9))
    th = np.linspace(-4.0, 4.0, 100)
    d = np.array([augmented_J(x, u, TWO_TERM)[1] for x in th])
    assert np.count_nonzero(np.diff(np.sign(d))) == 1
