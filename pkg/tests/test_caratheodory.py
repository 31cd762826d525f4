import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contacthj.caratheodory import (
    Curve,
    DivergenceError,
    GaugeFunction,
    gaugeF_splitting_value,
    gronwall_bound,
    hatLu_splitting_value,
    integrating_factor_value,
    solve_caratheodory,
    solve_linearized,
)
from contacthj.lagrangian import DomainDescriptor, free_particle, make_discounted, make_nonlinear_concave, mechanical

from .conftest import COS, random_lifted


def _curve(domain, lifted, t1=0.0, t2=1.0):
    return Curve.from_lifted(domain, t1, t2, lifted)


def test_rest_point_decay(free_discounted, domain):
    c = Curve.straight(domain, 0.0, 1.0, [0.4], [0.4], 16)
    tr = solve_caratheodory(free_discounted, c, 1.0)
    assert tr.u_end == pytest.approx(math.exp(-1.0), abs=1e-6)


def test_zero_rhs_keeps_u0(domain):
    m = make_discounted(free_particle(domain), 0.0)
    c = Curve.straight(domain, 0.0, 2.0, [0.1], [0.1], 8)
    tr = solve_caratheodory(m, c, 3.25)
    assert np.all(tr.u_values == 3.25)


def test_constant_speed_segment(free_discounted, domain):
    c = Curve.straight(domain, 0.0, 1.0, [0.0], [0.5], 16)
    tr = solve_caratheodory(free_discounted, c, 0.0)
    assert tr.u_end == pytest.approx(0.125 * (1 - math.exp(-1.0)), abs=1e-6)


def test_error_estimate_reported(nonlinear, domain):
    c = _curve(domain, random_lifted(np.random.default_rng(0), 1, 16)[0])
    tr = solve_caratheodory(nonlinear, c, 0.5)
    assert 0 <= tr.integrator_stats["error_estimate"] < 1e-6


def test_divergence_raises(domain):
    m = make_discounted(free_particle(domain), -60.0)
    c = Curve.straight(domain, 0.0, 1.0, [0.0], [0.0], 4)
    with pytest.raises(DivergenceError):
        solve_caratheodory(m, c, 1.0, substeps=1)


def test_linearization_at_frozen_curve(nonlinear, domain):
    c = _curve(domain, random_lifted(np.random.default_rng(1), 1, 16)[0])
    tr = solve_caratheodory(nonlinear, c, 0.7)
    lin = solve_linearized(nonlinear, c, tr, 0.7)
    assert np.max(np.abs(lin.u_values - tr.u_values)) < 1e-8


def test_linearization_exact_for_affine_model(discounted, domain):
    rng = np.random.default_rng(2)
    frozen = solve_caratheodory(discounted, _curve(domain, random_lifted(rng, 1, 16)[0]), 0.3)
    for Z in random_lifted(rng, 10, 16):
        eta = _curve(domain, Z)
        lin = solve_linearized(discounted, eta, frozen, -1.2)
        direct = solve_caratheodory(discounted, eta, -1.2)
        assert np.max(np.abs(lin.u_values - direct.u_values)) < 1e-12


def test_comparison_inequality_under_concavity(nonlinear, domain):
    rng = np.random.default_rng(3)
    for _ in range(30):
        Z = random_lifted(rng, 2, 16)
        Z[1] += Z[0, 0] - Z[1, 0]
        Z[1, -1] = Z[0, -1]
        frozen = solve_caratheodory(nonlinear, _curve(domain, Z[0]), 0.4)
        eta = _curve(domain, Z[1])
        u = solve_caratheodory(nonlinear, eta, 0.4).u_end
        v = solve_linearized(nonlinear, eta, frozen, 0.4).u_end
        assert u <= v + 1e-8


def test_integrating_factor_closed_form_discounted(domain, cos_L0):
    lam = 0.8
    m = make_discounted(cos_L0, lam)
    c = _curve(domain, random_lifted(np.random.default_rng(4), 1, 32)[0], 0.0, 1.5)
    tr = solve_caratheodory(m, c, 0.9)
    # independent oracle: 20-point Gauss-Legendre on every (smooth) segment
    g, w = np.polynomial.legendre.leggauss(20)
    Z, vel = c.lifted(), c.velocities
    ref = math.exp(-lam * 1.5) * 0.9
    for i in range(c.n_segments):
        th = 0.5 * (g + 1)
        s = c.times[i] + th * c.dt
        x = Z[i] + th[:, None] * (Z[i + 1] - Z[i])
        ref += 0.5 * c.dt * np.sum(w * np.exp(lam * (s - 1.5)) * cos_L0.value(x, vel[i]))
    assert integrating_factor_value(m, tr) == pytest.approx(ref, abs=1e-6)
    assert tr.u_end == pytest.approx(ref, abs=1e-6)


def test_lambda_zero_plain_action(domain, cos_L0):
    m = make_discounted(cos_L0, 0.0)
    c = _curve(domain, random_lifted(np.random.default_rng(5), 1, 16)[0])
    tr = solve_caratheodory(m, c, 2.0)
    assert integrating_factor_value(m, tr) == pytest.approx(tr.u_end, abs=1e-6)
    assert gaugeF_splitting_value(m, tr, GaugeFunction("constant", 0.0)) == pytest.approx(tr.u_end, abs=1e-6)


def test_hatLu_zero_path(domain):
    m = make_nonlinear_concave(free_particle(domain), 1.0, 0.0)
    c = Curve.straight(domain, 0.0, 1.0, [0.3], [0.3], 8)
    tr = solve_caratheodory(m, c, 0.0)
    assert hatLu_splitting_value(m, tr) == 0.0


def test_canonical_gauge_is_integrating_factor(nonlinear, domain):
    c = _curve(domain, random_lifted(np.random.default_rng(6), 1, 16)[0])
    tr = solve_caratheodory(nonlinear, c, -0.4)
    a = gaugeF_splitting_value(nonlinear, tr, GaugeFunction("canonical"))
    assert a == pytest.approx(integrating_factor_value(nonlinear, tr), abs=1e-13)


def test_wrong_signed_gauge(discounted, domain):
    c = _curve(domain, random_lifted(np.random.default_rng(7), 1, 16)[0])
    tr = solve_caratheodory(discounted, c, 1.1)
    assert gaugeF_splitting_value(discounted, tr, GaugeFunction("constant", 1.0)) == pytest.approx(tr.u_end, abs=1e-5)


def test_gauge_parse():
    assert GaugeFunction.parse("lu").kind == "canonical"
    assert GaugeFunction.parse("const:-1").value == -1.0
    g = GaugeFunction.parse("sin:1:2:0.5")
    assert (g.amplitude, g.frequency, g.value) == (1.0, 2.0, 0.5)
    with pytest.raises(ValueError):
        GaugeFunction.parse("cubic:1")


@pytest.mark.parametrize("N", [8, 16, 64])
def test_four_evaluators_agree(N):
    dom = DomainDescriptor()
    rng = np.random.default_rng(N)
    L0 = mechanical(dom, COS)
    models = [make_discounted(L0, 1.0), make_nonlinear_concave(L0, 1.0, 0.5), make_discounted(L0, 0.0)]
    for k in range(34):
        m = models[k % 3]
        c = _curve(dom, random_lifted(rng, 1, N)[0], 0.0, rng.uniform(0.2, 2.0))
        u0 = rng.uniform(-3, 3)
        tr = solve_caratheodory(m, c, u0, estimate_error=False)
        F = GaugeFunction("sine", rng.uniform(-1, 1), rng.uniform(0, 2), rng.uniform(0.5, 3), rng.uniform(0, 6))
        vals = [tr.u_end, integrating_factor_value(m, tr), hatLu_splitting_value(m, tr),
                gaugeF_splitting_value(m, tr, F)]
        assert max(vals) - min(vals) <= 1e-5 * (1 + abs(tr.u_end))


def test_hatLu_nonlinear_100_curves(nonlinear, domain):
    rng = np.random.default_rng(8)
    for Z in random_lifted(rng, 100, 16):
        tr = solve_caratheodory(nonlinear, _curve(domain, Z), rng.uniform(-2, 2), estimate_error=False)
        assert abs(hatLu_splitting_value(nonlinear, tr) - tr.u_end) < 1e-5


def test_integrating_factor_nonlinear_N64(nonlinear, domain):
    rng = np.random.default_rng(9)
    tr = solve_caratheodory(nonlinear, _curve(domain, random_lifted(rng, 1, 64)[0]), 1.3)
    assert abs(integrating_factor_value(nonlinear, tr) - tr.u_end) < 1e-5


def test_gronwall_bound_dominates(nonlinear, domain):
    rng = np.random.default_rng(10)
    for Z in random_lifted(rng, 20, 16):
        tr = solve_caratheodory(nonlinear, _curve(domain, Z), rng.uniform(-2, 2), estimate_error=False)
        assert np.max(np.abs(tr.u_values)) <= gronwall_bound(nonlinear, tr) * (1 + 1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_gronwall_envelope_in_u0(seed, a, b):
    dom = DomainDescriptor()
    m = make_nonlinear_concave(mechanical(dom, COS), 1.0, 0.5)
    c = _curve(dom, random_lifted(np.random.default_rng(seed), 1, 8)[0])
    ua = solve_caratheodory(m, c, a, substeps=4, estimate_error=False)
    ub = solve_caratheodory(m, c, b, substeps=4, estimate_error=False)
    env = np.exp(m.K * (ua.times - c.t_start)) * abs(a - b)
    assert np.all(np.abs(ua.u_values - ub.u_values) <= env + 1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), u0=st.floats(-3, 3))
def test_comparison_property(seed, u0):
    dom = DomainDescriptor()
    m = make_nonlinear_concave(mechanical(dom, COS), 1.0, 0.5)
    rng = np.random.default_rng(seed)
    Z = random_lifted(rng, 2, 8)
    Z[1] += Z[0, 0] - Z[1, 0]
    frozen = solve_caratheodory(m, _curve(dom, Z[0]), u0, substeps=4, estimate_error=False)
    eta = _curve(dom, Z[1])
    u = solve_caratheodory(m, eta, u0, substeps=4, estimate_error=False).u_end
    assert u <= solve_linearized(m, eta, frozen, u0, estimate_error=False).u_end + 1e-8
