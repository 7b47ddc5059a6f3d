import numpy as np
import pytest

from gated_spectra import phase
from gated_spectra.errors import NotApplicableError, ParameterError


@pytest.mark.parametrize("a_h, a_r, region", [(1.2, 20.0, "Blue"), (1.8, 10.0, "Green"), (3.0, 1.0, "Orange"),
                                              (1.8, 0.0, "Blue"), (2.5, 12.0, "Orange")])
def test_classify_examples(a_h, a_r, region):
    pt = phase.classify(a_h, a_r)
    assert pt.region.value == region
    assert pt.zero_stable == (region != "Orange")
    if region == "Green":
        assert len(pt.rho0) == 2 and pt.n_fixed_points == 3
    if region == "Blue":
        assert pt.n_fixed_points == 1


def test_orange_point_is_marginal():
    pt = phase.classify(3.0, 1.0)
    assert pt.marginal and len(pt.rho0) == 1 and pt.rho0[0] ** 2 < 2
    assert phase.marginal_region(3.0, 1.0)
    with pytest.raises(NotApplicableError):
        phase.marginal_region(1.2, 20.0)


def test_alpha_fraction_and_marginal_condition():
    assert phase.alpha_fraction(0.0, 0.4) == 0.5
    assert phase.alpha_fraction(-5.0, 0.01) == pytest.approx(1.0)
    assert phase.marginal_condition(1.3, 0.0, 0.4) and not phase.marginal_condition(1.5, 0.0, 0.4)


def test_critical_bias_line():
    assert phase.critical_bias_line(0.0) == 2.0
    assert phase.critical_bias_line([0.0, np.log(2)]) == pytest.approx([2.0, 1.5])
    for b_r in (-0.5, 0.5):
        a = float(phase.critical_bias_line(b_r))
        rest = {"b_r": b_r}
        assert phase.classify(a - 0.02, 0.5, rest).zero_stable
        assert not phase.classify(a + 0.02, 0.5, rest).zero_stable


def test_sweep_is_deterministic_and_row_major():
    ah, ar = np.linspace(1.0, 3.0, 4), np.linspace(0.0, 12.0, 3)
    g1 = phase.sweep(ah, ar, grid=120)
    g2 = phase.sweep(ah, ar, grid=120, threads=2)
    assert np.array_equal(g1.region_raster(), g2.region_raster())
    assert g1.region_raster().shape == (3, 4)
    assert g1.points[1].a_h == ah[1] and g1.points[4].a_r == ar[1]
    assert not g1.errors


def test_no_green_without_reset_gain():
    g = phase.sweep(np.linspace(1.0, 1.99, 12), [0.0], grid=120)
    assert all(p.region != phase.Region.GREEN for p in g.points)


def test_bifurcation_curve_decreasing():
    pts = phase.bifurcation_curve([1.6, 1.75, 1.9], resolution=1e-2)
    a = [b.a_r_star for b in pts]
    assert all(b.found for b in pts) and a[0] > a[1] > a[2]
    with pytest.raises(ParameterError):
        phase.bifurcation_curve([1.3])
    with pytest.raises(ParameterError):
        phase.critical_reset_gain(2.0)


def test_pair_appears_past_threshold():
    b = phase.critical_reset_gain(1.8, resolution=1e-2)
    assert not phase.has_nonzero_pair(1.8, b.a_r_star - 0.05)
    assert phase.has_nonzero_pair(1.8, b.a_r_star + 0.05)


def test_pitchfork_is_continuous():
    # just past a_h = 2 the nonzero branch starts at zero variance
    c = [phase.classify(a, 1.0).c_h for a in (2.001, 2.01, 2.05)]
    assert all(len(x) == 1 for x in c)
    assert c[0][0] < c[1][0] < c[2][0] and c[0][0] < 1e-2
