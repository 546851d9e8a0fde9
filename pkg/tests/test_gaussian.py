import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eptv.gaussian import (DiagGaussian, NaturalSite, cavity, damp, multiply, product, repair_variances,
                           site_from_tilted)

finite = st.floats(-1e3, 1e3, allow_nan=False)
positive = st.floats(1e-3, 1e3)


def sites(n, prec=positive):
    return st.builds(NaturalSite, arrays(float, n, elements=prec), arrays(float, n, elements=finite))


def test_multiply_examples():
    out = multiply(NaturalSite([1, 2], [0, 0]), NaturalSite([3, 4], [1, 1]))
    np.testing.assert_array_equal(out.precision, [4, 6])
    np.testing.assert_array_equal(out.shift, [1, 1])
    b = NaturalSite([0.5, 2.0], [1.0, -3.0])
    out = multiply(NaturalSite.flat(2), b)
    np.testing.assert_array_equal(out.precision, b.precision)
    np.testing.assert_array_equal(out.shift, b.shift)
    g = NaturalSite.from_moments([1.5], [4.0])
    sq = multiply(g, g).to_moments()
    assert sq.variance[0] == pytest.approx(2.0)
    assert sq.mean[0] == pytest.approx(1.5)


def test_multiply_length_mismatch():
    with pytest.raises(ValueError):
        multiply(NaturalSite.flat(2), NaturalSite.flat(3))


def test_natural_site_rejects_nonfinite():
    with pytest.raises(FloatingPointError):
        NaturalSite([np.nan], [0.0])
    with pytest.raises(FloatingPointError):
        NaturalSite([1.0], [np.inf])


@given(sites(5), sites(5), sites(5))
def test_multiply_commutative_associative(a, b, c):
    ab, ba = multiply(a, b), multiply(b, a)
    np.testing.assert_allclose(ab.precision, ba.precision, rtol=1e-12)
    np.testing.assert_allclose(ab.shift, ba.shift, rtol=1e-12)
    left, right = multiply(multiply(a, b), c), multiply(a, multiply(b, c))
    np.testing.assert_allclose(left.precision, right.precision, rtol=1e-12)
    np.testing.assert_allclose(left.shift, right.shift, rtol=1e-12, atol=1e-9)
    np.testing.assert_allclose(product([a, b, c]).precision, left.precision, rtol=1e-12)


def test_cavity_examples():
    g = DiagGaussian([0.3, -1.0], [2.0, 0.5])
    cav, bad = cavity(g, NaturalSite.flat(2))
    np.testing.assert_allclose(cav.mean, g.mean)
    np.testing.assert_allclose(cav.variance, g.variance)
    assert not bad.any()
    cav, bad = cavity(DiagGaussian([0.0], [0.25]), NaturalSite([3.0], [0.0]))
    assert cav.variance[0] == pytest.approx(1.0) and cav.mean[0] == 0.0
    cav, bad = cavity(DiagGaussian([0.0, 0.0], [1.0, 1.0]), NaturalSite([2.0, 0.5], [0.0, 0.0]))
    assert bad.tolist() == [True, False]
    assert np.isnan(cav.mean[0]) and cav.variance[1] == pytest.approx(2.0)


@given(sites(6), sites(6))
def test_cavity_round_trip(glob_site, site):
    total = multiply(glob_site, site)
    q = total.to_moments()
    cav, bad = cavity(q, site)
    assert not bad.any()
    back = multiply(cav.to_natural(), site).to_moments()
    np.testing.assert_allclose(back.variance, q.variance, rtol=1e-12)
    np.testing.assert_allclose(back.mean, q.mean, rtol=1e-9, atol=1e-9 * np.abs(q.mean).max())


def test_damp_examples():
    old, new = NaturalSite([0.0], [0.0]), NaturalSite([1.0], [2.0])
    out = damp(old, new, 0.9)
    assert out.precision[0] == pytest.approx(0.9) and out.shift[0] == pytest.approx(1.8)
    assert damp(old, new, 1.0) is new
    out = damp(new, new, 0.37)
    np.testing.assert_allclose(out.precision, new.precision)
    with pytest.raises(ValueError):
        damp(old, new, 0.0)
    with pytest.raises(ValueError):
        damp(old, new, 1.5)


@given(sites(4, finite), sites(4, finite), st.floats(1e-6, 1.0))
def test_damp_is_convex(old, new, eta):
    out = damp(old, new, eta)
    for a, b, c in ((old.precision, new.precision, out.precision), (old.shift, new.shift, out.shift)):
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        tol = 1e-12 * (1 + np.abs(hi))
        assert np.all(c >= lo - tol) and np.all(c <= hi + tol)


def test_repair_examples():
    out = repair_variances(NaturalSite([-0.5], [1.0]), 1e8)
    assert out.precision[0] == 1e-8
    # mean of the original site (-2) survives
    assert out.shift[0] / out.precision[0] == pytest.approx(-2.0)
    site = NaturalSite([1.0, 2.0], [3.0, 4.0])
    assert repair_variances(site) is site
    out = repair_variances(NaturalSite([0.0], [0.0]))
    assert out.precision[0] == 1e-8 and out.shift[0] == 0.0
    with pytest.raises(ValueError):
        repair_variances(site, 0.0)


@given(sites(6, finite))
def test_repair_idempotent_and_positive(site):
    once = repair_variances(site)
    twice = repair_variances(once)
    assert np.all(once.precision > 0)
    np.testing.assert_array_equal(once.precision, twice.precision)
    np.testing.assert_array_equal(once.shift, twice.shift)


def test_site_from_tilted_keeps_tilted_mean_when_capped():
    cav = DiagGaussian([1.0, 0.0], [1.0, 1.0])
    # second coordinate: tilted variance larger than the cavity's -> negative site precision
    site, n_bad = site_from_tilted([2.0, 0.5], [0.5, 2.0], cav)
    assert n_bad == 1
    q = multiply(cav.to_natural(), site).to_moments()
    np.testing.assert_allclose(q.mean, [2.0, 0.5], rtol=1e-12)
    assert q.variance[0] == pytest.approx(0.5)
    assert site.precision[1] == 1e-8
