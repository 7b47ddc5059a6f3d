import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from gated_spectra import mft
from gated_spectra.errors import DivergenceError, InvariantError, ParameterError
from gated_spectra.mft import Branch, CorrelationSet
from gated_spectra.net import run_to_steady, sample_network
from gated_spectra.params import GatedNetParams, sigmoid, sigmoid_prime


def _quad_gauss(f, mean, var):
    """Independent oracle: adaptive quadrature against the normal density."""
    sd = np.sqrt(var)
    g = lambda x: f(mean + sd * x) * np.exp(-0.5 * x * x) / np.sqrt(2 * np.pi)
    return integrate.quad(g, -40, 40, limit=400, epsabs=1e-13, epsrel=1e-12, points=[0.0])[0]


# ---------------------------------------------------------------- quadrature


def test_gauss_expect_identity_mean():
    assert mft.gauss_expect(lambda x: x, 0.7, 5.0) == pytest.approx(0.7, abs=1e-12)


@given(st.floats(0.0, 1e4))
def test_gauss_expect_sigmoid_is_half(var):
    assert mft.gauss_expect(sigmoid, 0.0, var) == pytest.approx(0.5, abs=1e-10)


@given(st.floats(-3, 3), st.floats(1e-4, 1e4))
def test_gauss_expect_matches_independent_quadrature(mean, var):
    f = lambda x: sigmoid(x) ** 2
    assert mft.gauss_expect(f, mean, var, breakpoints=[mean]) == pytest.approx(_quad_gauss(f, mean, var), abs=1e-9)


def test_gauss_expect_narrow_feature_asymptotics():
    a, c = 1000.0, 1.0
    val = mft.gauss_expect(lambda x: sigmoid_prime(x) ** 2, 0.0, a * a * c, breakpoints=[0.0])
    assert val == pytest.approx(1 / (6 * a * np.sqrt(2 * np.pi * c)), rel=1e-3)


def test_gauss_expect_rejects_negative_variance():
    with pytest.raises(ParameterError):
        mft.gauss_expect(np.tanh, 0.0, -1.0)


def test_gauss_expect2_independent_factorizes():
    v = mft.gauss_expect2(np.tanh, np.tanh, 0.3, 0.3, 2.0, 2.0, 0.0)
    assert v == pytest.approx(mft.gauss_expect(np.tanh, 0.3, 2.0) ** 2, abs=1e-9)
    w = mft.gauss_expect2(np.tanh, np.tanh, 0.0, 0.0, 2.0, 2.0, 2.0)
    assert w == pytest.approx(mft.gauss_expect(lambda x: np.tanh(x) ** 2, 0.0, 2.0), abs=1e-9)


# ---------------------------------------------------------------- kernels


def test_kernels_at_zero_variance():
    k = mft.gru_kernels(0.0, GatedNetParams.gru(n=2, a_z=3, a_r=3))
    assert (k.c_r, k.c_z, k.kappa, k.c_phi, k.c_phiprime) == pytest.approx((0.25, 0.25, 0.5, 0.0, 1.0))


def test_kernels_saturated_reset():
    k = mft.gru_kernels(0.5, GatedNetParams.gru(n=2, a_r=1.0, b_r=60.0))
    assert k.c_r == pytest.approx(1.0, abs=1e-12)
    assert k.c_rprime == pytest.approx(0.0, abs=1e-12)


def test_reset_kernel_against_two_oracles():
    k = mft.gru_kernels(1.0, GatedNetParams.gru(n=2, a_r=2.0))
    f = lambda x: sigmoid(x) ** 2
    assert k.c_r == pytest.approx(_quad_gauss(f, 0.0, 4.0), abs=1e-9)
    x = np.random.default_rng(0).standard_normal(10 ** 7) * 2.0
    v = f(x)
    assert abs(k.c_r - v.mean()) < 4 * v.std() / np.sqrt(v.size)


@given(st.floats(0.0, 1.0), st.floats(0.0, 50.0), st.floats(0.0, 5.0))
def test_kernel_invariants(c_h, a_r, a_h):
    k = mft.gru_kernels(c_h, GatedNetParams.gru(n=2, a_h=a_h, a_r=a_r, a_z=a_r))
    assert 0.25 - 1e-12 <= k.c_r <= 0.5 + 1e-12
    assert k.c_y == pytest.approx(k.c_r * c_h, abs=1e-15)
    assert 0 <= k.c_phiprime <= 1 + 1e-12 and 0 <= k.eta <= 1 + 1e-12
    assert 0 < k.kappa < 1


# ---------------------------------------------------------------- fixed points


def test_fp_only_zero_below_threshold():
    sols = mft.gru_fp_solve(GatedNetParams.gru(n=2, a_h=1.9, a_r=0.5))
    assert [s.branch for s in sols] == [Branch.ZERO]
    assert sols[0].stable and sols[0].rho0 == pytest.approx(0.95)


def test_fp_small_branch_above_threshold():
    eps = 0.01
    sols = mft.gru_fp_solve(GatedNetParams.gru(n=2, a_h=2 + eps, a_r=1.0))
    nz = [s for s in sols if s.branch != Branch.ZERO]
    assert len(nz) == 1
    assert nz[0].c_h == pytest.approx(4 * eps / 7, rel=0.15)


def test_fp_three_solutions_above_bifurcation():
    sols = mft.gru_fp_solve(GatedNetParams.gru(n=2, a_h=1.8, a_r=10.0))
    assert [s.branch for s in sols] == [Branch.ZERO, Branch.LOWER, Branch.UPPER]


@settings(max_examples=15)
@given(st.floats(1.0, 3.5), st.floats(0.0, 15.0))
def test_fp_residual_and_stability_flag(a_h, a_r):
    p = GatedNetParams.gru(n=2, a_h=a_h, a_r=a_r)
    for s in mft.gru_fp_solve(p, grid=150):
        assert s.residual < 1e-9
        assert s.stable == (s.rho0 < 1)
        if s.branch != Branch.ZERO:
            assert s.rho0 > 1  # every nonzero fixed point is unstable


def test_perturbative_closed_forms():
    p = GatedNetParams.gru(n=2, a_r=0.0)
    assert mft.gru_fp_perturbative(p, 0.01) == [(Branch.UPPER, pytest.approx(0.005))]
    assert mft.gru_fp_perturbative(p.with_gains(r=1.0), -0.01) == []
    with pytest.raises(ParameterError):
        mft.gru_fp_perturbative(p.with_gains(r=np.sqrt(2) * 2.01), 0.01)
    with pytest.raises(ParameterError):
        mft.gru_fp_perturbative(p.with_biases(r=1.0), 0.01)


def test_perturbative_branches_against_solver():
    eps = 1e-4
    p = GatedNetParams.gru(n=2, a_h=2 - eps, a_r=4.0)
    num = [s.c_h for s in mft.gru_fp_solve(p) if s.branch == Branch.LOWER]
    ana = dict(mft.gru_fp_perturbative(p, -eps))
    assert num[0] == pytest.approx(ana[Branch.LOWER], rel=0.01)
    p = GatedNetParams.gru(n=2, a_h=2 + eps, a_r=2.9)
    num = [s.c_h for s in mft.gru_fp_solve(p) if s.branch != Branch.ZERO]
    assert num[0] == pytest.approx(mft.gru_fp_perturbative(p, eps)[0][1], rel=0.10)


def test_critical_branch():
    assert mft.gru_fp_critical_branch(0.01) == pytest.approx(0.025)
    assert mft.gru_fp_critical_branch(0.01, exact=True) == pytest.approx(np.sqrt(0.48 / 496))
    assert mft.gru_fp_critical_branch(-0.01) == 0.0


def test_fpoly_sign():
    assert mft.fpoly(np.sqrt(8) + 0.1) > 0
    c1, c2, c3 = mft.series_coefficients(0.0)
    assert c1 == pytest.approx(0.25) and c2 == pytest.approx(1 / 16) and c3 == pytest.approx(-1 / 32)


# ---------------------------------------------------------------- Monte Carlo


def test_mc_subcritical_decays():
    mc = mft.single_site_mc_gru(GatedNetParams.gru(n=2, a_h=1.0), paths=4000, seed=1)
    assert mc.c_h < 1e-3


@pytest.fixture(scope="module")
def mc_chaotic():
    p = GatedNetParams.gru(n=1000, a_h=3.0, a_z=1.0, a_r=1.0)
    return p, mft.single_site_mc_gru(p, seed=1)


def test_mc_bound_and_lags(mc_chaotic):
    p, mc = mc_chaotic
    assert mc.c_h <= mc.c_phi
    assert np.all(np.abs(mc.c_h_lag) <= mc.c_h_lag[0] + 1e-15)
    assert 0 <= mc.alpha <= 1 and 0 <= mc.eta <= 1
    CorrelationSet.from_json(mc.to_json()).check()


@pytest.mark.slow
def test_mc_matches_network(mc_chaotic):
    p, mc = mc_chaotic
    ch = np.mean([run_to_steady(sample_network(p, s), 500, 200, seed=s, keep=1).mean_sq.mean()
                  for s in (1, 2)])
    assert mc.c_h == pytest.approx(ch, rel=0.05)


def test_dmft_residual_zero_at_fixed_point():
    p = GatedNetParams.gru(n=2, a_h=3.0, a_r=1.0)
    sol = max(mft.gru_fp_solve(p), key=lambda s: s.c_h)
    corr = mft.fp_correlation_set(sol, p)
    assert np.max(mft.dmft_steady_residual(corr, p)) < 1e-8


def test_dmft_residual_rejects_unbounded_lags():
    p = GatedNetParams.gru(n=2, a_h=3.0)
    bad = CorrelationSet(c_h=0.3, c_h_lag=np.array([0.3, 0.31, 0.2]))
    with pytest.raises(InvariantError):
        mft.dmft_steady_residual(bad, p)
    with pytest.raises(ParameterError):
        mft.dmft_steady_residual(CorrelationSet(c_h=0.3), p)


def test_dmft_residual_constant_update_gate():
    """With a fixed update gate the effective process closes exactly."""
    p = GatedNetParams.gru(n=2, a_h=3.0, a_r=1.0)
    mc = mft.single_site_mc_gru(p, seed=2)
    res = mft.dmft_steady_residual(mc, p, lags=[0, 1, 2, 4])
    se = mft.dmft_residual_stderr(mc, p, lags=[0, 1, 2, 4])
    assert np.all(res <= 3 * se + 1e-4)


def test_lstm_mc_zero_gates():
    p = GatedNetParams.lstm(n=2, a_h=3.0)
    mc = mft.single_site_mc_lstm(p, paths=4000, seed=1)
    s = mc.samples
    assert mc.lstm_q == 0.0
    d = 1 - np.tanh(s["c"]) ** 2
    e = 1 - np.tanh(s["y"]) ** 2
    # mc.lstm_p averages the whole window; the samples are its final slice
    assert mc.lstm_p == pytest.approx(0.0625 * 9 * np.mean(d ** 2 * e ** 2), rel=0.02)


def test_lstm_mc_zero_fp_limit():
    p = GatedNetParams.lstm(n=2, a_h=1.0)
    mc = mft.single_site_mc_lstm(p, paths=4000, seed=1)
    assert mc.c_h < 1e-6
    assert mc.lstm_p == pytest.approx(0.0625, rel=1e-3)


def test_lstm_mc_divergence_reported():
    p = GatedNetParams.lstm(n=2, a_h=3.0, b_f=30.0, b_i=5.0)
    with pytest.raises(DivergenceError):
        mft.single_site_mc_lstm(p, paths=400, seed=1, c_limit=10.0)


def test_qp_helpers():
    p = GatedNetParams.lstm(n=2, a_h=2.0, a_o=2.0, a_i=1.0, a_f=1.0)
    o, c = np.array([0.5]), np.array([0.0])
    assert mft.lstm_q_values(p, o, c)[0] == 0.0
    pv = mft.lstm_p_values(p, np.array([0.5]), np.array([0.5]), o, np.array([0.0]), c, np.array([0.0]))
    assert pv[0] == pytest.approx(0.25 * 4 * 0.25)
