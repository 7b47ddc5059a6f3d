import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erfinv

from gated_spectra import contour as ct
from gated_spectra import mft
from gated_spectra import spectral as sp
from gated_spectra.errors import (EmptySpectrumError, FitError, NoMarginalStabilityError, NotApplicableError,
                                  ParameterError, PoleProximityError, ShapeError, UnsupportedRegimeError)
from gated_spectra.net import run_to_steady, sample_network
from gated_spectra.params import Activation, GatedNetParams, sigmoid

P3 = GatedNetParams.gru(n=1000, a_h=3.0)


def _gru_samples(rng, n=3000, spread=1.0):
    """Synthetic per-neuron joint samples with the right gate/derivative coupling."""
    z = sigmoid(spread * rng.standard_normal(n))
    r = sigmoid(spread * rng.standard_normal(n))
    return dict(z=z, zprime=z * (1 - z), r=r, rprime=r * (1 - r),
                h_prev=0.5 * rng.standard_normal(n), y=rng.standard_normal(n))


def _lstm_samples(rng, n=3000):
    f, i, o = (sigmoid(rng.standard_normal(n)) for _ in range(3))
    return dict(f=f, fprime=f * (1 - f), i=i, iprime=i * (1 - i), o=o, oprime=o * (1 - o),
                c=rng.standard_normal(n), c_prev=rng.standard_normal(n), y=rng.standard_normal(n))


@pytest.fixture(scope="module")
def gru_moments():
    rng = np.random.default_rng(3)
    p = GatedNetParams.gru(n=1000, a_h=3.0, a_z=1.0, a_r=1.0)
    return p, sp.SampleMoments(p.arch, _gru_samples(rng), sp.Source.NETWORK, 0.2)


@pytest.fixture(scope="module")
def lstm_moments():
    rng = np.random.default_rng(4)
    p = GatedNetParams.lstm(n=1000, a_h=3.0, a_f=1.0, a_i=1.0, a_o=1.0)
    return p, sp.SampleMoments(p.arch, _lstm_samples(rng), sp.Source.NETWORK, 0.2)


# ---------------------------------------------------------------- sample moments


def test_sample_moment_validation(rng):
    s = _gru_samples(rng, 10)
    bad = dict(s, z=s["z"] + 2)
    with pytest.raises(ParameterError):
        sp.SampleMoments("gru", bad, "NetworkSim", 0.1)
    with pytest.raises(ParameterError):
        sp.SampleMoments("gru", dict(s, zprime=s["zprime"] + 0.01), "NetworkSim", 0.1)
    with pytest.raises(ShapeError):
        sp.SampleMoments("gru", dict(s, y=s["y"][:5]), "NetworkSim", 0.1)
    with pytest.raises(ParameterError):
        sp.SampleMoments("gru", {"z": s["z"]}, "NetworkSim", 0.1)


def test_analytic_zero_fp_requires_fixed_point():
    with pytest.raises(NotApplicableError):
        sp.SampleMoments.analytic_zero_fp(GatedNetParams.gru(n=4, b_h=0.5))
    with pytest.raises(NotApplicableError):
        sp.gru_zero_fp(GatedNetParams.gru(n=4, v_z=1.0))


# ---------------------------------------------------------------- pole sums


def test_pole_sum_merges_and_flags():
    ps = sp.PoleSum([0.2, 0.2, 0.5], [1.0, 1.0, 2.0])
    assert ps.poles.tolist() == [0.2, 0.5]
    assert ps.weights == pytest.approx([2 / 3, 2 / 3])
    with pytest.raises(PoleProximityError):
        ps(0.2 + 0j)
    ex = sp.PoleSum([0.2, 0.5], [1.0, 1.0], on_pole="exclude")
    ex(np.array([0.2 + 0j, 1j]))
    assert ex.excluded == 1 and ex.flagged
    with pytest.raises(ParameterError):
        sp.PoleSum([0.1], [1.0], on_pole="ignore")


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=20), st.floats(0.01, 5.0))
def test_largest_real_root_is_a_root(poles, w):
    ps = sp.PoleSum(poles, w)
    x = ps.largest_real_root()
    assert x > max(poles)
    assert abs(ps(complex(x))) < 1e-8 * max(1.0, np.mean(w) / (x - max(poles)) ** 2)


# ---------------------------------------------------------------- GRU


def test_zero_fp_prediction():
    pred = sp.gru_zero_fp(P3)
    assert pred.center == 0.5 and pred.flat_density.radius == pytest.approx(0.75)
    assert pred.flat_density.value == pytest.approx(1 / (0.5625 * np.pi))
    assert not pred.stable and pred.radius == pytest.approx(1.25)
    assert pred.total_mass() == pytest.approx(1.0)
    assert sp.gru_zero_fp(P3.with_gains(h=1.9)).stable
    assert sp.gru_zero_fp(P3.with_biases(z=4.0)).flat_density.radius == pytest.approx(
        (1 - sigmoid(4.0)) * 1.5, rel=1e-12)
    assert sp.gru_zero_fp(P3.with_biases(z=4.0)).flat_density.radius == pytest.approx(0.02698, abs=1e-5)


def test_zero_fp_boundary_and_radius():
    m = sp.SampleMoments.analytic_zero_fp(P3)
    S = sp.gru_s_function(m, P3)
    assert S(complex(0.5, 0.75)) == pytest.approx(0.0, abs=1e-12)
    assert sp.gru_spectral_radius_theory(m, P3) == pytest.approx(1.25, abs=1e-8)
    pred = sp.gru_boundary(m, P3, grid=300)
    assert ct.hausdorff(pred.boundary[np.isfinite(pred.boundary)], ct.circle(0.5, 0.75, 5000)) < 1e-4


def test_S_limits_and_conjugation(gru_moments):
    p, m = gru_moments
    S = sp.gru_s_function(m, p)
    assert S(complex(1e6, 1e6)) == pytest.approx(-1.0, abs=1e-9)
    lam = np.array([0.3 + 0.4j, -1 + 0.1j, 2 - 1j])
    assert np.array_equal(S(lam), S(np.conj(lam)))


def test_radius_closed_form_without_update_gain(rng):
    p = GatedNetParams.gru(n=1000, a_h=3.0, a_r=5.0, b_z=0.7)
    s = _gru_samples(rng, 2000)
    s["z"] = np.full(2000, sigmoid(0.7))
    s["zprime"] = s["z"] * (1 - s["z"])
    m = sp.SampleMoments(p.arch, s, "NetworkSim", 0.3)
    rho = np.sqrt(sp.gru_shaping_sq(m, p))
    z = sigmoid(0.7)
    assert sp.gru_spectral_radius_theory(m, p) == pytest.approx(z + (1 - z) * rho, abs=1e-8)


def test_boundary_sign_convention(gru_moments):
    p, m = gru_moments
    pred = sp.gru_boundary(m, p, grid=300)
    S = pred.s_evaluator
    for ang in np.linspace(0.1, np.pi - 0.1, 7):
        R = ct.ray_radius(pred.rings, 0.0, ang)
        d = np.exp(1j * ang)
        assert S(0.97 * R * d) > 0 and S(1.03 * R * d) < 0
    b = pred.boundary[np.isfinite(pred.boundary)]
    assert ct.hausdorff(b, np.conj(b)) < 1e-6


def test_bounding_curves_nest(gru_moments):
    p, m = gru_moments
    inner, outer = sp.gru_bounding_curves(m, p, grid=300)
    exact = sp.gru_boundary(m, p, grid=300)
    assert inner.radius <= exact.radius <= outer.radius
    for ang in np.linspace(0.05, np.pi - 0.05, 9):
        ri, re_, ro = (ct.ray_radius(x.rings, 0.0, ang) for x in (inner, exact, outer))
        assert ri <= re_ + 1e-6 and re_ <= ro + 1e-6


def test_bounding_curves_collapse_when_gap_vanishes():
    p = GatedNetParams.gru(n=100, a_h=3.0, a_z=2.0)
    m = sp.SampleMoments.analytic_zero_fp(p)
    inner, outer = sp.gru_bounding_curves(m, p, grid=200)
    assert inner.radius == pytest.approx(outer.radius)


def test_binary_update_density():
    p = GatedNetParams.gru(n=10, a_h=3.0)
    pred = sp.gru_binary_update_density(p, 0.5, 1.0)
    assert pred.atoms == [(1 + 0j, 0.5)]
    assert pred.flat_density.radius == pytest.approx(np.sqrt(0.5) * 1.5)
    with pytest.raises(ParameterError):
        sp.gru_binary_update_density(p, 1.5, 0.2)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.1, 5), st.floats(-3, 3))
def test_binary_update_mass(alpha, eta, a_h, b_r):
    p = GatedNetParams.gru(n=10, a_h=a_h, b_r=b_r)
    assert sp.gru_binary_update_density(p, alpha, eta).total_mass() == pytest.approx(1.0, abs=1e-12)


def test_closed_gate_fraction_at_zero_scaled_bias():
    k = mft.gru_kernels(0.4, GatedNetParams.gru(n=2, a_z=50.0))
    assert k.alpha == pytest.approx(0.5)


# ---------------------------------------------------------------- update-only resolvent


@pytest.fixture(scope="module")
def update_only():
    rng = np.random.default_rng(9)
    p = GatedNetParams.gru(n=100, a_h=3.0, a_z=2.0)
    s = _gru_samples(rng, 800)
    s["r"] = np.full(800, 0.5)
    s["rprime"] = np.full(800, 0.25)
    return p, sp.SampleMoments(p.arch, s, "NetworkSim", 0.25)


def test_resolvent_far_field(update_only):
    p, m = update_only
    lam = 40 + 30j
    G, F = sp.gru_resolvent_update_only(lam, m, p, return_f=True)
    assert F == 0.0
    assert abs(G * lam - 1) < 0.05


def test_resolvent_zero_fp_interior():
    p = GatedNetParams.gru(n=10, a_h=3.0)
    m = sp.SampleMoments.analytic_zero_fp(p)
    lam = 0.6 + 0.2j
    assert sp.gru_resolvent_update_only(lam, m, p) == pytest.approx(np.conj(lam - 0.5) / 0.5625, abs=1e-10)
    assert sp.gru_resolvent_update_only(2.0, m, p) == pytest.approx(1 / 1.5, abs=1e-12)


def test_resolvent_rejects_reset_gain(gru_moments):
    p, m = gru_moments
    with pytest.raises(UnsupportedRegimeError):
        sp.gru_resolvent_update_only(0.5j, m, p)


def test_resolvent_continuous_across_boundary(update_only):
    p, m = update_only
    pred = sp.gru_boundary(m, p, grid=300)
    b = pred.rings[0][::40]
    b = b[np.abs(b.imag) > 1e-3]
    _, z, st_ = None, *sp._update_only_parts(m, p)
    G = sp.gru_resolvent_update_only(b, m, p)
    holo = np.array([np.mean(1 / (l - z)) for l in b])
    assert np.max(np.abs(G - holo)) < 1e-4


def test_update_only_density_normalised(update_only):
    p, m = update_only
    R = sp.gru_spectral_radius_theory(m, p)
    h = 2 * 1.1 * R / 160
    xs = -1.1 * R + h * (np.arange(160) + 0.5)
    X, Y = np.meshgrid(xs, xs)
    lam = X + 1j * Y
    d = 1e-5
    G = lambda l: sp.gru_resolvent_update_only(l, m, p)
    # Wirtinger derivative d/d(conj lam) = (d/dx + i d/dy) / 2
    dG = ((G(lam + d) - G(lam - d)) / (2 * d) + 1j * (G(lam + 1j * d) - G(lam - 1j * d)) / (2 * d)) / 2
    mass = np.sum(dG.real / np.pi) * h * h
    assert mass == pytest.approx(1.0, abs=0.02)


# ---------------------------------------------------------------- pinching


def test_pinching_constant():
    assert sp.pinching_c(np.sqrt(2.0), 0.0, 0.3) == pytest.approx(0.0, abs=1e-12)
    assert sp.pinching_c(np.sqrt(4 / 3), 0.0, 0.3) == pytest.approx(np.sqrt(2) * erfinv(0.5), abs=1e-12)
    assert sp.pinching_c(np.sqrt(4 / 3), 0.0, 0.3) == pytest.approx(0.6745, abs=1e-4)
    with pytest.raises(NoMarginalStabilityError):
        sp.pinching_c(np.sqrt(3.0), 0.0, 0.3)
    with pytest.raises(NoMarginalStabilityError):
        sp.pinching_c(0.9, 0.0, 0.3)


@given(st.floats(1.01, 1.999), st.floats(-1.0, 1.0), st.floats(0.05, 1.0))
def test_pinching_constant_solves_defining_equation(r2, beta, c_h):
    from scipy.special import erf, erfc
    alpha = 0.5 * erfc(beta / np.sqrt(2 * c_h))
    if r2 * alpha >= 1:
        with pytest.raises(NoMarginalStabilityError):
            sp.pinching_c(np.sqrt(r2), beta, c_h)
        return
    c = sp.pinching_c(np.sqrt(r2), beta, c_h)
    assert erf((c - beta / np.sqrt(c_h)) / np.sqrt(2)) == pytest.approx(2 / r2 - 1, abs=1e-9)


def test_fixed_point_stability_matches_S_at_one():
    for a_r in (0.5, 1.0, 3.0):
        p = GatedNetParams.gru(n=2, a_h=3.0, a_r=a_r)
        sol = max(mft.gru_fp_solve(p), key=lambda s: s.c_h)
        assert sp.fp_S(1.0 + 0j, sol.rho0 ** 2, sol.c_h, 0.0) == pytest.approx(sol.rho0 ** 2 - 1, abs=1e-12)
        assert sol.stable == (sp.fp_S(1.0 + 1e-12j, sol.rho0 ** 2, sol.c_h, 0.0) < 0)


def test_fp_radius_decays_with_update_gain():
    r2, c_h = 1.118581 ** 2, 0.379891
    d = [sp.fp_radius(r2, c_h, a) - 1 for a in (5.0, 10.0, 20.0)]
    assert d[0] > d[1] > d[2] > 0
    with pytest.raises(NotApplicableError):
        sp.fp_radius(0.9, c_h, 5.0)
    y = [sp.real_one_intercept(lambda l, a=a: sp.fp_S(l, r2, c_h, a)) for a in (5.0, 10.0, 20.0)]
    assert y[0] > y[1] > y[2] > 0


def test_fp_S_without_update_gain_is_closed_form():
    assert sp.fp_S(1.3 + 0.2j, 1.5, 0.3, 0.0) == pytest.approx(1.5 * 0.25 / abs(0.8 + 0.2j) ** 2 - 1)


# ---------------------------------------------------------------- CDF scaling


def test_cdf_fit_recovers_synthetic_parameters():
    a = np.array([1.0, 2, 3, 4, 6, 8, 10])
    y = 0.4 * __import__("scipy").special.erfc(3.0 / a)
    c1, c2, r2 = sp.cdf_scaling_fit(a, y)
    assert c1 == pytest.approx(0.4, rel=0.01) and c2 == pytest.approx(3.0, rel=0.01) and r2 > 0.9999


def test_cdf_fit_bounds_and_errors():
    a = np.array([1.0, 2, 4, 8])
    c1, _, _ = sp.cdf_scaling_fit(a, np.array([0.5, 0.9, 1.0, 1.0]))
    assert c1 <= 1.0
    with pytest.raises(FitError):
        sp.cdf_scaling_fit(a, np.full(4, 0.2))
    with pytest.raises(FitError):
        sp.cdf_scaling_fit(a[:3], np.array([0.1, 0.2, 0.3]))


def test_cdf_analytic_limit():
    assert sp.cdf_near_one_analytic(0.05, 1e9, 0.3) == pytest.approx(0.5, abs=1e-6)
    v = sp.cdf_near_one_analytic(0.05, [1.0, 4.0, 16.0], 0.3)
    assert np.all(np.diff(v) > 0)


# ---------------------------------------------------------------- LSTM


def test_lstm_zero_fp():
    p = GatedNetParams.lstm(n=10, a_h=3.0)
    pred = sp.lstm_zero_fp(p)
    assert pred.center == 0.5 and pred.flat_density.radius == pytest.approx(0.75)
    assert not pred.stable and pred.atoms == [(0j, 1.0)]
    assert pred.total_mass() == pytest.approx(2.0)
    assert sp.lstm_zero_fp(p.with_gains(h=1.9)).stable
    assert sp.lstm_zero_fp(p.with_biases(i=-4.0)).flat_density.radius == pytest.approx(0.5 * sigmoid(-4.0) * 3)
    m = sp.SampleMoments.analytic_zero_fp(p)
    S = sp.lstm_s_function(m, p)
    assert S.q_mean == 0.0 and S(0.5 + 0.75j) == pytest.approx(0.0, abs=1e-12)


def test_lstm_S_limits_and_poles(lstm_moments):
    p, m = lstm_moments
    S = sp.lstm_s_function(m, p)
    assert S(1e7 + 0j) == pytest.approx(-1.0, abs=1e-9)
    with pytest.raises(PoleProximityError):
        S(0j)
    lam = np.array([0.2 + 0.3j, 1.5 - 0.2j])
    assert np.array_equal(S(lam), S(np.conj(lam)))


def test_lstm_resolvent_outside_support(lstm_moments):
    p, m = lstm_moments
    R = sp.lstm_spectral_radius_theory(m, p)
    lam = 1.5 * R * np.exp(0.7j)
    G, F = sp.lstm_resolvent(lam, m, p)
    assert F == 0.0
    assert G == pytest.approx(1 / lam + np.mean(1 / (lam - m["f"])), abs=1e-12)


def test_lstm_resolvent_zero_fp_density():
    p = GatedNetParams.lstm(n=10, a_h=3.0)
    m = sp.SampleMoments.analytic_zero_fp(p)
    mu = sp.lstm_interior_density(np.array([0.6 + 0.3j, 0.2 - 0.1j]), m, p)
    assert mu == pytest.approx(np.full(2, 1 / (np.pi * 0.5625)), rel=1e-9)
    with pytest.raises(NotApplicableError):
        sp.lstm_interior_density(1.5 + 0j, m, p)
    assert sp.lstm_interior_density(1.5 + 0.1j, m, p, strict=False) == 0.0


def test_lstm_density_equals_wirtinger_derivative(lstm_moments):
    p, m = lstm_moments
    S = sp.lstm_s_function(m, p)
    R = sp.lstm_spectral_radius_theory(m, p)
    g = R * np.linspace(-0.9, 0.9, 12)
    lam = (g[:, None] + 1j * g[None, :]).ravel()
    lam = lam[(S(lam) > 0.05) & (np.abs(lam) > 0.1 * R) & (np.abs(lam.imag) > 0.02 * R)]
    assert lam.size >= 5
    d = 1e-5
    G = lambda l: sp.lstm_resolvent(l, m, p)[0]
    dG = ((G(lam + d) - G(lam - d)) / (2 * d) + 1j * (G(lam + 1j * d) - G(lam - 1j * d)) / (2 * d)) / 2
    assert sp.lstm_interior_density(lam, m, p) == pytest.approx(dG.real / np.pi, rel=1e-5)


def test_lstm_resolvent_counts_both_blocks(lstm_moments):
    p, m = lstm_moments
    lam = 1e4 * np.exp(0.3j)
    assert lam * sp.lstm_resolvent(lam, m, p)[0] == pytest.approx(2.0, abs=1e-3)


def test_lstm_F_equation_monotone(lstm_moments):
    p, m = lstm_moments
    lam = np.array([0.2 + 0.3j])
    _, q, pv, l, a2, b2, Q = sp._lstm_parts(lam, m, p)
    rhs = [float(np.mean(Q / (a2 * b2 + F * Q))) for F in np.linspace(0, 2, 30)]
    assert np.all(np.diff(rhs) < 0)
    F = sp._lstm_F(a2, b2, Q)[0]
    assert 0 < F <= 1
    assert np.mean(Q / (a2 * b2 + F * Q)) == pytest.approx(1.0, abs=1e-12)


def test_lstm_binary_forget():
    p = GatedNetParams.lstm(n=10, a_h=3.0)
    pred = sp.lstm_binary_forget_density(p, 1.0)
    assert pred.atoms == [(0j, 1.0), (1 + 0j, 0.5)]
    assert pred.flat_density.radius == pytest.approx(0.75 / np.sqrt(2))
    with pytest.raises(ParameterError):
        sp.lstm_binary_forget_density(p, 1.2)


@given(st.floats(0, 1), st.floats(0.1, 5), st.floats(-2, 2), st.floats(-2, 2))
def test_lstm_binary_forget_mass(eta, a_h, b_i, b_o):
    p = GatedNetParams.lstm(n=10, a_h=a_h, b_i=b_i, b_o=b_o)
    assert sp.lstm_binary_forget_density(p, eta).total_mass() == pytest.approx(2.0, abs=1e-12)


def test_lstm_boundary_encloses_network_cloud():
    p = GatedNetParams.lstm(n=400, a_h=3.0, a_f=1.0, a_i=1.0, a_o=4.0)
    net = sample_network(p, 1)
    st_ = run_to_steady(net, 500, 1, seed=1).last
    from gated_spectra.empirics import compare, jacobian_cloud
    pred = sp.lstm_boundary(sp.SampleMoments.from_states(st_, p), p, grid=300)
    assert compare(jacobian_cloud(net, st_), pred).inside_fraction >= 0.97


# ---------------------------------------------------------------- long products


def test_gelfand_binary():
    p = GatedNetParams.gru(n=10)
    assert sp.gelfand_moment_theory(p, np.sqrt(0.5), np.inf, "BinaryUpdate", alpha=0.5) == pytest.approx(2 / 3)
    assert sp.gelfand_moment_theory(p, 1.0, 3, "BinaryUpdate") == pytest.approx(0.5 * (1 + 0.5 + 0.25 + 0.125))
    assert sp.gelfand_moment_theory(p, 2.0, np.inf, "BinaryUpdate") == np.inf
    with pytest.raises(ParameterError):
        sp.gelfand_moment_theory(p.with_biases(z=1.0), 1.0, 3, "BinaryUpdate")


@given(st.floats(0.0, 3.0), st.floats(-3, 3))
def test_gelfand_constant_first_moment(rho, b_z):
    p = GatedNetParams.gru(n=10, b_z=b_z)
    s = sigmoid(b_z)
    assert sp.gelfand_moment_theory(p, rho, 1, "ConstantUpdate") == pytest.approx(s ** 2 + (1 - s) ** 2 * rho ** 2)


def test_gelfand_constant_root_converges():
    p = GatedNetParams.gru(n=10)
    vals = [sp.gelfand_moment_theory(p, 1.5, n, "ConstantUpdate") ** (1 / (2 * n)) for n in (50, 300, 1500)]
    target = sp.gelfand_radius_theory(p, 1.5)
    assert target == 1.25
    errs = [abs(v - target) for v in vals]
    assert errs[0] > errs[1] > errs[2] and errs[2] < 0.01
