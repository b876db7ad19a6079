import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qla import (
    FieldSample,
    LimitLaw,
    LocalChart,
    ModelSpec,
    ParameterSpace,
    ScalingSchedule,
    delta,
    gamma_at,
    laq_remainder,
    laq_remainder_integral,
    limit_u_hat,
    limit_z,
    linear_prior,
    truncated_normal_prior,
    u_domain_contains,
    uniform_prior,
    y_field,
    z_field,
)
from qla.core import log_z
from qla.errors import DomainError
from qla.models import quadratic_field
from qla.rng import stream

import oracles


def quad1(lin, quad, lo=-2.0, hi=2.0, ts=0.0, a=1.0):
    space = ParameterSpace([lo], [hi], [ts])
    return LocalChart(quadratic_field(space, 1.0, [lin], [[quad]]), np.array([[a]]))


# -- ParameterSpace / ScalingSchedule --------------------------------------

def test_space_rejects_bad_boxes():
    with pytest.raises(DomainError):
        ParameterSpace([1.0], [0.0], [0.5])
    with pytest.raises(DomainError):
        ParameterSpace([0.0], [1.0], [1.5])
    with pytest.raises(DomainError):
        ParameterSpace([0.0], [1.0], [0.5], r0=0.6)


def test_space_default_r0_is_half_boundary_distance():
    sp = ParameterSpace([0.1], [3.0], [1.0])
    assert sp.r0 == pytest.approx(0.45)


def test_schedule_sandwich_and_monotone_b():
    q = np.array([[2.0, 0.3], [0.0, 0.5]])
    s = ScalingSchedule([10, 100, 1000], q=q)
    bs = [s.b(t) for t in s.times]
    assert all(b2 > b1 for b1, b2 in zip(bs, bs[1:]))
    assert all(s.sandwich_holds(t) for t in s.times)
    assert s.c0 >= 1
    norms = [np.linalg.norm(s.a(t), 2) for t in s.times]
    assert norms == sorted(norms, reverse=True)


def test_schedule_rejects_nonincreasing():
    with pytest.raises(ValueError):
        ScalingSchedule([10, 10])


# -- delta / gamma ------------------------------------------------------------

def test_delta_explicit_quadratic():
    assert delta(quad1(0.3, 0.5))[0] == pytest.approx(0.3)


def test_delta_constant_field_is_zero():
    assert delta(quad1(0.0, 0.0, a=0.37))[0] == 0.0


def test_delta_ou_matches_path_summation():
    spec = ModelSpec("ou-drift", theta_star=1.0, horizon=100, mesh=0.01)
    s = spec.simulate(stream(42))
    chart = LocalChart(s, np.array([[100 ** -0.5]]))
    want = oracles.ou_delta(s.extras["path"], 0.01, 1.0, 100)
    assert delta(chart)[0] == pytest.approx(want, abs=1e-12, rel=1e-12)


def test_gamma_constant_second_derivative():
    c = quad1(0.3, 0.5)
    for th in (-1.5, 0.0, 1.9):
        assert gamma_at(c, [th])[0, 0] == pytest.approx(0.5)


def test_gamma_2d_diag():
    space = ParameterSpace([-1, -1], [1, 1], [0, 0])
    c = LocalChart(quadratic_field(space, 1.0, [0, 0], np.eye(2)), np.diag([1.0, 2.0]))
    assert np.allclose(gamma_at(c, [0.2, -0.3]), np.diag([1.0, 4.0]))


def test_gamma_vol_matches_increment_sum():
    spec = ModelSpec("vol-contrast", horizon=400)
    s = spec.simulate(stream(7))
    chart = LocalChart(s, np.array([[400 ** -0.5]]))
    want = oracles.vol_gamma_star(s.extras["increments"], spec.mesh)
    assert gamma_at(chart, [0.0])[0, 0] == pytest.approx(want, abs=1e-12, rel=1e-12)


def test_gamma_outside_closure_raises():
    with pytest.raises(DomainError):
        gamma_at(quad1(0.3, 0.5), [2.5])


# -- Y, U, Z ------------------------------------------------------------------

def test_y_field_zero_at_theta_star():
    spec = ModelSpec("vol-contrast", horizon=100)
    c = LocalChart(spec.simulate(stream(3)), np.array([[0.1]]))
    assert y_field(c, [0.0]) == 0.0


def test_y_field_cancels_b():
    b = 250.0
    c = quad1(0.0, b, a=b ** -0.5)
    assert y_field(c, [0.7]) == pytest.approx(-0.5 * 0.49)


def test_y_field_ou_near_limit():
    spec = ModelSpec("ou-drift", horizon=400)
    vals = []
    for k in range(200):
        s = spec.simulate(stream(11, k), keep_path=False)
        vals.append(y_field(LocalChart(s, np.array([[400 ** -0.5]])), [1.5]))
    vals = np.array(vals)
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - (-0.25 / 4)) < 3 * se + 1e-3


def test_u_domain_membership():
    c = quad1(0.0, 1.0, lo=-1, hi=1, a=0.1)
    assert u_domain_contains(c, [0.0])
    assert not u_domain_contains(c, [20.0])
    assert u_domain_contains(c, [9.99])
    assert not u_domain_contains(c, [10.0])


def test_z_field_examples():
    c = quad1(0.3, 0.5)
    assert z_field(c, [0.0]) == 1.0
    assert z_field(c, [0.6]) == pytest.approx(math.exp(0.09), rel=1e-14)
    with pytest.raises(DomainError):
        z_field(c, [5.0])


def test_z_field_ou_matches_path_summation():
    spec = ModelSpec("ou-drift", horizon=100)
    s = spec.simulate(stream(42))
    a = 0.1
    c = LocalChart(s, np.array([[a]]))
    path = s.extras["path"]
    want = math.exp(oracles.ou_loglik(path, 0.01, 1 + a) - oracles.ou_loglik(path, 0.01, 1.0))
    assert z_field(c, [1.0]) == pytest.approx(want, rel=1e-12)


def test_chain_consistency():
    spec = ModelSpec("vol-contrast", horizon=400)
    c = LocalChart(spec.simulate(stream(5)), np.array([[0.05]]))
    for u in (-3.0, -0.4, 1.1, 6.0):
        th = c.to_theta(np.array([u]))
        assert math.log(z_field(c, [u])) == pytest.approx(c.b * y_field(c, th), rel=1e-12, abs=1e-12)


# -- r_T -----------------------------------------------------------------------

def test_remainder_outside_domain_is_one():
    c = quad1(0.3, 0.5, a=1.0)
    assert laq_remainder(c, [10.0], np.array([[0.5]])) == 1.0


def test_remainder_exact_quadratic_is_zero():
    c = quad1(0.3, 0.5)
    for u in (-1.9, 0.4, 1.3):
        assert abs(laq_remainder(c, [u], np.array([[0.5]]))) <= 1e-12
        assert laq_remainder_integral(c, [u], np.array([[0.5]])) == 0.0


def test_remainder_vol_integral_agrees():
    spec = ModelSpec("vol-contrast", horizon=400)
    c = LocalChart(spec.simulate(stream(7)), np.array([[0.05]]))
    g = np.array([[2.0]])
    assert laq_remainder(c, [0.8], g) == pytest.approx(laq_remainder_integral(c, [0.8], g, 256), abs=1e-8)


def test_remainder_integral_converges_under_doubling():
    spec = ModelSpec("vol-contrast", horizon=100)
    c = LocalChart(spec.simulate(stream(9)), np.array([[0.1]]))
    g = np.array([[2.0]])
    exact = laq_remainder(c, [4.0], g)
    errs = [abs(laq_remainder_integral(c, [4.0], g, n) - exact) for n in (8, 16, 32)]
    assert errs[-1] <= errs[0]
    assert errs[-1] < 1e-10


def test_remainder_integral_linear_gamma():
    # H with third derivative -c gives Gamma_T(theta) = Gamma + c a^2 (theta - theta*)
    cc, a = 0.7, 0.3
    space = ParameterSpace([-2.0], [2.0], [0.0])
    h = FieldSample(
        lambda t: -0.5 * np.asarray(t)[..., 0] ** 2 - cc * np.asarray(t)[..., 0] ** 3 / 6,
        lambda t: np.atleast_1d(-t[..., 0] - cc * t[..., 0] ** 2 / 2),
        lambda t: np.atleast_2d(-1.0 - cc * np.asarray(t)[..., 0]),
        space, 1.0)
    chart = LocalChart(h, np.array([[a]]))
    gam = np.array([[a * a]])
    for u in (0.5, 2.0, -3.0):
        # Gamma_T(theta* + s a u) - Gamma = c a^2 (s a u) so the slope per theta is c a^2
        want = oracles.linear_remainder(cc * a * a, a, u)
        assert laq_remainder_integral(chart, [u], gam) == pytest.approx(want, rel=1e-12)


def test_remainder_integral_rejects_segment_outside():
    with pytest.raises(DomainError):
        laq_remainder_integral(quad1(0.3, 0.5), [3.0], np.array([[0.5]]))
    with pytest.raises(ValueError):
        laq_remainder_integral(quad1(0.3, 0.5), [1.0], np.array([[0.5]]), quad_nodes=4)


def test_laq_median_decreases_for_vol():
    g = np.array([[2.0]])
    meds = []
    for n in (100, 400, 1600, 6400):
        spec = ModelSpec("vol-contrast", horizon=n)
        r = [abs(laq_remainder(LocalChart(spec.simulate(stream(1, n, k), keep_path=False),
                                          np.array([[n ** -0.5]])), [1.0], g)) for k in range(500)]
        meds.append(np.median(r))
    assert all(m2 < m1 for m1, m2 in zip(meds, meds[1:]))


# -- limit field -------------------------------------------------------------

def test_limit_z_examples():
    law = LimitLaw.deterministic([[1.0]])
    assert limit_z(law, [0.3], [[0.5]], [0.0]) == 1.0
    g2 = np.eye(2)
    u = np.array([0.6, 0.8]) * 2.5
    assert limit_z(law, [0, 0], g2, u) == pytest.approx(math.exp(-2.5**2 / 2))
    arg = oracles.grid_argmax(lambda x: 0.3 * x - 0.25 * x * x, -5, 5, 1e-4)
    assert arg == pytest.approx(0.6, abs=1e-9)
    assert limit_u_hat([0.3], [[0.5]])[0] == pytest.approx(0.6)
    with pytest.raises(ValueError):
        limit_z(law, [0.3], [[-0.5]], [1.0])


def test_limit_law_draws_are_pd_and_constant_when_deterministic():
    law = LimitLaw.deterministic([[2.0]])
    d, g = law.draw(stream(0), 1000)
    assert np.all(g == 2.0)
    assert abs(d.std() - math.sqrt(2)) < 0.1


# -- priors --------------------------------------------------------------------

def test_priors_respect_bounds():
    sp = ParameterSpace([-1.0], [1.0], [0.0])
    for pr in (uniform_prior(sp), linear_prior(sp, 0.5), truncated_normal_prior(sp, 0.2, 0.7)):
        osc = pr.check(sp)
        assert osc < pr.check(sp, per_dim=11) + 1e-15
    with pytest.raises(ValueError):
        linear_prior(sp, 2.0)


# -- invariants ------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32), kind=st.sampled_from(["ou-drift", "vol-contrast", "synthetic-laq"]),
       frac=st.floats(0.05, 0.95))
def test_derivatives_match_finite_differences(seed, kind, frac):
    spec = ModelSpec(kind, horizon=100)
    s = spec.simulate(stream(seed), keep_path=False)
    th = np.array([spec.lower + frac * (spec.upper - spec.lower)])
    g = s.gradient(th)
    fd = oracles.fd_gradient(s.value, th)
    assert np.allclose(g, fd, rtol=1e-5, atol=1e-5 * (1 + abs(s.value(th))))
    h = s.hessian(th)
    assert np.allclose(h, oracles.fd_hessian(s.gradient, th), rtol=1e-5, atol=1e-5 * (1 + np.abs(h).max()))
    assert np.allclose(h, h.T, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(u=st.floats(-30, 30), a=st.floats(0.01, 1.0))
def test_remainder_is_one_exactly_off_domain(u, a):
    c = quad1(0.3, 0.5, a=a)
    inside = u_domain_contains(c, [u])
    r = laq_remainder(c, [u], np.array([[0.5 * a * a]]))
    if not inside:
        assert r == 1.0
    else:
        assert abs(r) < 1e-9 * (1 + u * u)


def test_batched_log_z_matches_scalar():
    spec = ModelSpec("vol-contrast", horizon=100)
    c = LocalChart(spec.simulate(stream(2)), np.array([[0.1]]))
    us = np.linspace(-5, 5, 11)[:, None]
    batch = log_z(c, us)
    assert np.allclose(batch, [log_z(c, u) for u in us], rtol=0, atol=0)
