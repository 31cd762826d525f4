import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contacthj.lagrangian import (
    DomainDescriptor,
    check_conditions,
    finite_difference_check,
    free_particle,
    hamiltonian_to_lagrangian,
    legendre_to_hamiltonian,
    make_discounted,
    make_nonlinear_concave,
    make_time_rescaled,
    mechanical,
)

from .conftest import COS

finite = st.floats(-5, 5, allow_nan=False)


def test_discounted_value(domain):
    m = make_discounted(free_particle(domain), 1.0)
    assert m.L(0.0, np.array([0.3]), np.array([2.0]), 5.0) == pytest.approx(-3.0, abs=1e-14)


def test_discounted_lambda_zero_has_no_u_dependence(cos_L0):
    m = make_discounted(cos_L0, 0.0)
    rng = np.random.default_rng(0)
    x, v, u = rng.uniform(0, 1, (50, 1)), rng.normal(size=(50, 1)), rng.normal(size=50) * 10
    assert np.all(m.L_u(0.0, x, v, u) == 0.0)


def test_discounted_lu_constant(domain):
    m = make_discounted(free_particle(domain), 0.5)
    assert np.all(m.L_u(0.3, np.array([[0.1], [0.7]]), np.array([[1.0], [-3.0]]), np.array([4.0, -2.0])) == -0.5)
    assert m.lu_constant == -0.5


def test_nonlinear_lu_limits(cos_L0):
    m = make_nonlinear_concave(cos_L0, 1.0, 0.5)
    x, v = np.array([0.2]), np.array([0.4])
    assert m.L_u(0.0, x, v, 0.0) == pytest.approx(-1.0, abs=1e-15)
    assert m.L_u(0.0, x, v, 1e8) == pytest.approx(-1.5, abs=1e-12)


def test_nonlinear_concave_in_u(cos_L0):
    m = make_nonlinear_concave(cos_L0, 1.0, 0.5)
    rng = np.random.default_rng(1)
    n = 1000
    s, x, v = rng.uniform(0, 1, n), rng.uniform(0, 1, (n, 1)), rng.uniform(-5, 5, (n, 1))
    u1, u2 = rng.uniform(-10, 10, n), rng.uniform(-10, 10, n)
    mid = m.L(s, x, v, 0.5 * (u1 + u2))
    assert np.all(mid >= 0.5 * (m.L(s, x, v, u1) + m.L(s, x, v, u2)) - 1e-12)


def test_nonlinear_rejects_eps_above_lambda(cos_L0):
    with pytest.raises(ValueError):
        make_nonlinear_concave(cos_L0, 0.5, 0.5)


def test_legendre_closed_form(discounted):
    H = legendre_to_hamiltonian(discounted)
    val = H.H(0.0, np.array([0.25]), np.array([1.5]), 2.0)
    assert val == pytest.approx(1.125 + np.cos(np.pi / 2) + 2.0, abs=1e-10)


def test_legendre_zero_momentum(domain):
    H = legendre_to_hamiltonian(make_discounted(free_particle(domain), 1.0))
    u = np.array([-3.0, 0.0, 2.5])
    np.testing.assert_allclose(H.H(0.0, np.zeros((3, 1)), np.zeros((3, 1)), u), u, atol=1e-12)
    np.testing.assert_allclose(H.H_p(0.0, np.zeros((3, 1)), np.zeros((3, 1)), u), 0.0, atol=1e-12)


@pytest.mark.parametrize("family", ["discounted", "nonlinear", "rescaled", "aniso2d"])
def test_legendre_involution(family):
    rng = np.random.default_rng(2)
    if family == "aniso2d":
        dom = DomainDescriptor(2, (1.0, 2.0))
        L0 = mechanical(dom, [[1, 0, 1.0, 0.0], [1, 1, 0.0, 0.5]], kinetic=[[2.0, 0.5], [0.5, 1.0]])
        m = make_nonlinear_concave(L0, 1.0, 0.3)
    else:
        dom = DomainDescriptor()
        L0 = mechanical(dom, COS)
        m = {"discounted": make_discounted(L0, 1.0), "nonlinear": make_nonlinear_concave(L0, 1.0, 0.5),
             "rescaled": make_time_rescaled(L0, 0.5)}[family]
    d = dom.dimension
    s, x = rng.uniform(0, 1, 100), rng.uniform(0, 1, (100, d)) * dom.periods
    v, u = rng.uniform(-4, 4, (100, d)), rng.uniform(-5, 5, 100)
    back = hamiltonian_to_lagrangian(legendre_to_hamiltonian(m))
    np.testing.assert_allclose(back(s, x, v, u), m.L(s, x, v, u), atol=1e-8, rtol=0)


def test_conditions_discounted_all_pass(discounted):
    rep = check_conditions(discounted, samples=1000)
    assert all(r.passed for r in rep.results.values())


def test_conditions_lambda_zero_fails_L6(cos_L0):
    rep = check_conditions(make_discounted(cos_L0, 0.0), samples=1000)
    assert not rep.results["L6"].passed
    assert all(rep.results[k].passed for k in ("L1", "L2", "L3", "L4", "L5"))
    assert rep.declared_pass


def test_conditions_free_particle_growth(domain):
    m = make_discounted(free_particle(domain), 0.0)
    assert m.theta == (0.5, 2.0) and m.c0 == 0.0
    assert check_conditions(m, samples=500).results["L2"].passed


def test_conditions_detect_undeclared_convexity_failure(cos_L0):
    import dataclasses

    m = make_discounted(cos_L0, 1.0)
    bad = dataclasses.replace(m, L=lambda s, x, v, u: -np.sum(v * v, axis=-1) - u)
    assert not check_conditions(bad, samples=200).results["L1"].passed


@pytest.mark.parametrize("maker", [
    lambda L0: make_discounted(L0, 1.0),
    lambda L0: make_nonlinear_concave(L0, 1.0, 0.5),
    lambda L0: make_time_rescaled(L0, 0.7),
])
def test_declared_partials_match_finite_differences(cos_L0, maker):
    worst = finite_difference_check(maker(cos_L0), samples=1000, step=1e-5)
    assert max(worst.values()) < 1e-4, worst


@settings(max_examples=50, deadline=None)
@given(x=finite, p=finite, u=finite, v=finite, s=st.floats(0, 1))
def test_fenchel_young(x, p, u, v, s):
    dom = DomainDescriptor()
    m = make_nonlinear_concave(mechanical(dom, COS), 1.0, 0.5)
    H = legendre_to_hamiltonian(m)
    xa, pa, va = np.array([x]), np.array([p]), np.array([v])
    Hv = H.H(s, xa, pa, u)
    assert p * v <= m.L(s, xa, va, u) + Hv + 1e-7
    vstar = H.H_p(s, xa, pa, u)
    assert float(pa @ vstar) == pytest.approx(float(m.L(s, xa, vstar, u) + Hv), abs=1e-7)


@settings(max_examples=50, deadline=None)
@given(x=st.floats(0, 1), k=st.integers(-3, 3), v=finite, u=finite, s=st.floats(-1, 1))
def test_periodic_in_x(x, k, v, u, s):
    dom = DomainDescriptor()
    for m in (make_discounted(mechanical(dom, COS), 1.0), make_time_rescaled(mechanical(dom, [[2, 0.3, -0.4]]), 0.5)):
        a = m.L(s, np.array([x]), np.array([v]), u)
        b = m.L(s, np.array([x + k]), np.array([v]), u)
        assert a == pytest.approx(b, abs=1e-12)
