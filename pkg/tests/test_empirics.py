import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gated_spectra import contour as ct
from gated_spectra import empirics as em
from gated_spectra import spectral as sp
from gated_spectra.errors import ComparisonError, ParameterError, ShapeError
from gated_spectra.params import GatedNetParams


def test_eig_dense_known_spectra():
    assert sorted(em.eig_dense(np.diag([3.0, -1.0, 0.5])).values.real) == [-1.0, 0.5, 3.0]
    # companion matrix of (x - 1)(x - 2)(x - 3)
    c = np.array([[6.0, -11.0, 6.0], [1, 0, 0], [0, 1, 0]])
    assert np.sort(em.eig_dense(c).values.real) == pytest.approx([1, 2, 3], abs=1e-10)
    rot = em.eig_dense(np.array([[0.0, -1.0], [1.0, 0.0]]))
    assert np.sort_complex(rot.values) == pytest.approx([-1j, 1j])


@settings(max_examples=15)
@given(st.integers(2, 40), st.integers(0, 10_000))
def test_eig_dense_trace_and_conjugation(n, seed):
    m = np.random.default_rng(seed).standard_normal((n, n))
    c = em.eig_dense(m)
    assert c.values.sum().real == pytest.approx(np.trace(m), abs=1e-8 * n)
    assert c.conjugation_gap() < 1e-8 * max(1, c.radius)


def test_eig_dense_rejects_bad_input():
    with pytest.raises(ShapeError):
        em.eig_dense(np.zeros((2, 3)))
    with pytest.raises(ParameterError):
        em.eig_dense(np.array([[np.nan]]))
    with pytest.raises(ParameterError):
        em.eig_dense(np.eye(2, dtype=complex))


def test_cdf_near_one_counts_units():
    c = em.EigenCloud(np.array([1.0, 1.01, 0.9, 1 + 0.04j]), 4)
    assert em.cdf_near_one(c, 0.05) == 0.75
    lstm = em.EigenCloud(np.array([1.0, 1.01, 0.0, 0.0]), 4, {"arch": "lstm"})
    assert em.cdf_near_one(lstm, 0.05) == 1.0
    with pytest.raises(ParameterError):
        em.cdf_near_one(c, 0.0)


def test_compare_uniform_disk(rng):
    p = GatedNetParams.gru(n=10, a_h=3.0)
    pred = sp.gru_zero_fp(p)
    r = 0.75 * np.sqrt(rng.uniform(size=2000))
    vals = 0.5 + r * np.exp(2j * np.pi * rng.uniform(size=2000))
    vals = np.concatenate([vals, np.conj(vals)])
    rep = em.compare(em.EigenCloud(vals, vals.size, {"arch": "gru"}), pred)
    assert rep.inside_fraction == 1.0
    assert rep.radius_gap < 0.01
    assert rep.hausdorff_gap < 0.02
    with pytest.raises(ComparisonError):
        em.compare(em.EigenCloud(vals, vals.size, {"arch": "lstm"}), pred)


def test_compare_excludes_atoms():
    p = GatedNetParams.lstm(n=10, a_h=3.0)
    pred = sp.lstm_zero_fp(p)
    vals = np.concatenate([np.full(5, 1e-3), 0.5 + 0.7 * np.exp(1j * np.linspace(0, 2 * np.pi, 5, endpoint=False))])
    rep = em.compare(em.EigenCloud(vals, 10, {"arch": "lstm"}), pred)
    assert rep.inside_fraction == 1.0
    assert rep.radius_empirical == pytest.approx(1.2)


def test_gelfand_moments_of_scaled_identity():
    s = em.gelfand_moments_empirical(0.5 * np.eye(6), 10)
    assert s.moments == pytest.approx([0.25 ** k for k in range(1, 11)])
    assert s.radius_estimates() == pytest.approx(np.full(10, 0.5))
    assert em.gelfand_moments_empirical(1e40 * np.eye(2), 10).truncated
    with pytest.raises(ParameterError):
        em.gelfand_moments_empirical(np.eye(2), 65)


def test_loglog_slope():
    x = np.array([1.0, 10, 100])
    assert em.loglog_slope(x, 3 * x ** 0.5) == pytest.approx(0.5)
    assert np.isnan(em.loglog_slope([1.0], [1.0]))


def test_sweep_validation_and_shape():
    p = GatedNetParams.gru(n=40, a_h=2.5)
    with pytest.raises(ParameterError):
        em.radius_scaling_sweep(p, "r", [10, 1], [1])
    with pytest.raises(ParameterError):
        em.radius_scaling_sweep(p, "r", [1, 10], [])
    tab = em.radius_scaling_sweep(p, "r", [1.0, 10.0], [1, 2], burn_in=50, collect=5,
                                  theory=lambda s, q: 1.0)
    assert tab.radii.shape == (2, 2) and np.all(tab.theory_radii == 1.0)
    assert len(tab.rows()) == 2


def test_steady_clouds_snapshots():
    p = GatedNetParams.gru(n=40, a_h=2.5)
    s = em.steady_clouds(p, 1, burn_in=50, collect=30, snapshots=3, spacing=10)
    assert [c.meta["step"] for c in s.clouds] == [60, 70, 80]
    with pytest.raises(ParameterError):
        em.steady_clouds(p, 1, burn_in=10, collect=5, snapshots=3, spacing=10)
