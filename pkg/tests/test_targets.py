import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from neo.core import InvalidInputError, RngStream
from neo.targets import (
    GAUSSIAN_L_1D_SECOND_MOMENT,
    GAUSSIAN_L_1D_Z,
    PhaseTarget,
    cauchy_pdf,
    make_cauchy_mixture,
    make_funnel,
    make_gaussian_L_1d,
    make_gaussian_proposal,
    make_mg25,
    make_target,
    mg25_log_density_direct,
)

# Frozen values from a 30-digit mpmath evaluation.
LOG_RHO0_D1_S5 = -1.72365748942172292908
MG25_PI0_D2 = 0.63661977236758134308
CAUCHY_AT_MU = 0.16073073460765667573


def test_gaussian_proposal_log_density_at_origin():
    t = make_gaussian_proposal(1, 5.0)
    assert t.log_rho(np.zeros((1, 1)))[0] == pytest.approx(LOG_RHO0_D1_S5, abs=1e-12)


def test_gaussian_proposal_sample_mean_clt_band():
    t = make_gaussian_proposal(10, 5.0)
    x = t.sample_rho(RngStream(3), 100_000)
    band = 3 * np.sqrt(5.0 / x.shape[0])
    assert np.all(np.abs(x.mean(axis=0)) < band + 1e-3)


def test_gaussian_proposal_rejects_bad_variance():
    with pytest.raises(InvalidInputError):
        make_gaussian_proposal(2, 0.0)


def test_mg25_density_at_center_matches_direct_sum():
    t = make_mg25(2)
    x = np.zeros((1, 2))
    log_pi = t.log_rho(x) + t.log_L(x)
    assert np.exp(log_pi[0]) == pytest.approx(MG25_PI0_D2, rel=1e-10)
    assert log_pi[0] == pytest.approx(mg25_log_density_direct(x, 2)[0], abs=1e-10)


@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_mg25_factorized_equals_direct(vals):
    x = np.array(vals)[None]
    t = make_mg25(4)
    assert (t.log_rho(x) + t.log_L(x))[0] == pytest.approx(
        mg25_log_density_direct(x, 4)[0], abs=1e-9)


def test_mg25_requires_dim_two():
    with pytest.raises(InvalidInputError):
        make_mg25(1)


def test_mg25_cov_override_changes_widths():
    a, b = make_mg25(3), make_mg25(3, cov_override=0.005)
    x = np.zeros((1, 3))
    assert b.log_L(x)[0] > a.log_L(x)[0]


def test_funnel_log_density_at_origin():
    t = make_funnel(2)
    x = np.zeros((1, 2))
    assert (t.log_rho(x) + t.log_L(x))[0] == pytest.approx(-np.log(2 * np.pi), abs=1e-12)


def test_cauchy_component_value_at_mu():
    t = make_cauchy_mixture(1, mu=5.0, sigma=1.0)
    x = np.full((1, 1), 5.0)
    assert np.exp(t.log_rho(x) + t.log_L(x))[0] == pytest.approx(CAUCHY_AT_MU, rel=1e-12)
    assert cauchy_pdf(5.0, 5.0, 1.0) == pytest.approx(1 / np.pi)


def test_gaussian_L_fixture_constants():
    t = make_gaussian_L_1d()
    assert np.exp(t.log_Z) == pytest.approx(GAUSSIAN_L_1D_Z, rel=1e-14)
    assert GAUSSIAN_L_1D_Z == pytest.approx(0.7071067811865475)
    assert GAUSSIAN_L_1D_SECOND_MOMENT == pytest.approx(1.1547005383792515)
    assert t.log_L(np.zeros((1, 1)))[0] == 0.0


def _integrand_1d(t):
    return lambda x: float(np.exp(t.log_rho(np.array([[x]])) + t.log_L(np.array([[x]])))[0])


@pytest.mark.parametrize("target", [
    make_gaussian_L_1d(),
    make_cauchy_mixture(1),
    make_target("gaussian", 1),
])
def test_quadrature_reproduces_Z_1d(target):
    s = np.sqrt(target.rho_var[0])
    f = _integrand_1d(target)
    if target.name == "cauchy_mixture":
        # heavy tails: integrate the density over the whole line
        val = sum(integrate.quad(f, lo, hi, limit=400, epsabs=1e-13)[0]
                  for lo, hi in [(-np.inf, -5), (-5, 5), (5, np.inf)])
    else:
        val = integrate.quad(f, -12 * s, 12 * s, limit=400, epsabs=1e-13)[0]
    assert val == pytest.approx(np.exp(target.log_Z), rel=1e-6)


def test_quadrature_reproduces_Z_mg25_2d():
    t = make_mg25(2)
    # tensor Simpson rule; 20 nodes per component standard deviation
    g = np.linspace(-6.0, 6.0, 2401)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    p = np.stack([xx.ravel(), yy.ravel()], axis=1)
    dens = np.exp(t.log_rho(p) + t.log_L(p)).reshape(xx.shape)
    total = integrate.simpson(integrate.simpson(dens, x=g, axis=1), x=g)
    assert total == pytest.approx(1.0, rel=1e-6)


def test_quadrature_reproduces_Z_funnel_2d():
    t = make_funnel(2)

    def f(y, x):
        p = np.array([[x, y]])
        return float(np.exp(t.log_rho(p) + t.log_L(p))[0])

    total = integrate.dblquad(f, -12, 12, lambda x: -12 * np.exp(0.5 * x),
                              lambda x: 12 * np.exp(0.5 * x), epsabs=1e-12)[0]
    assert total == pytest.approx(1.0, rel=1e-6)


def _fd_grad(t, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = eps
        up = -(t.log_rho(x + e) + t.log_L(x + e))
        dn = -(t.log_rho(x - e) + t.log_L(x - e))
        g.flat[i] = (up - dn)[0] / (2 * eps)
    return g


@pytest.mark.parametrize("target", [
    make_mg25(3), make_funnel(3), make_cauchy_mixture(2), make_gaussian_L_1d(),
])
def test_grad_U_matches_finite_differences(target):
    rng = np.random.default_rng(0)
    for _ in range(5):
        if target.name == "mg25":
            x = rng.normal(scale=[0.5, 0.5, 0.3][: target.dim], size=(1, target.dim))
        else:
            x = rng.normal(scale=1.0, size=(1, target.dim))
        g = np.asarray(target.grad_U(x)).reshape(-1)
        fd = _fd_grad(target, x).reshape(-1)
        np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-6)


def test_phase_target_momentum_block_normalized():
    base = make_gaussian_L_1d()
    ph = PhaseTarget(base, 2.0)
    # integrate out p at q=0.4 and compare with the base proposal
    q = 0.4
    val = integrate.quad(lambda p: float(np.exp(ph.log_rho(np.array([[q, p]])))[0]), -40, 40)[0]
    assert val == pytest.approx(float(np.exp(base.log_rho(np.array([[q]])))[0]), rel=1e-10)


def test_phase_target_q_marginal_reproduces_Z():
    base = make_gaussian_L_1d()
    ph = PhaseTarget(base, 1.0)
    p = ph.sample_rho(RngStream(5), 200_000)[:, 1]
    # MC over momentum, quadrature over position: the integrand factorizes
    qgrid = np.linspace(-12, 12, 4001)
    z_q = integrate.simpson(np.exp(base.log_rho(qgrid[:, None]) + base.log_L(qgrid[:, None])), x=qgrid)
    mc = np.mean(np.exp(ph.log_L(np.stack([np.zeros_like(p), p], axis=1))))
    assert z_q * mc == pytest.approx(GAUSSIAN_L_1D_Z, rel=0.01)
    assert ph.dim == 2 and ph.log_Z == base.log_Z


def test_make_target_unknown_name():
    with pytest.raises(InvalidInputError):
        make_target("banana", 2)
