import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eptv.gaussian import DiagGaussian, NaturalSite, multiply
from eptv.likelihood import (RBMC, CGConvergenceError, ExactDiagonal, StrategyError, Woodbury, pcg,
                             select_strategy, tilted_mean, tilted_moments, tilted_variances,
                             update_likelihood_site)
from eptv.oracles import dense_matrix, dense_posterior, dense_reference_diag, dense_reference_solve
from eptv.operators import Conv2D, GaussianIID, Identity, build_hadamard, uniform_kernel


def random_cavity(n, seed=0, scale=1.0):
    r = np.random.default_rng(seed)
    return DiagGaussian(r.normal(0, 3, n), scale * np.exp(r.normal(0, 1, n)))


def test_identity_examples():
    op = Identity((2, 3))
    y = np.arange(6.0)
    cav = DiagGaussian(np.zeros(6), np.full(6, 1e8))
    mean, _ = tilted_mean(op, y, 1.0, cav)
    np.testing.assert_allclose(mean, y, rtol=1e-7)
    cav = DiagGaussian(np.full(6, 2.0), np.full(6, 0.7))
    mean, _ = tilted_mean(op, y, 0.7, cav, cg_tol=1e-12)
    np.testing.assert_allclose(mean, (y + 2.0) / 2, rtol=1e-12)
    var = tilted_variances(op, 1.0, DiagGaussian(np.zeros(6), np.ones(6)), ExactDiagonal())
    np.testing.assert_array_equal(var, 0.5)


def test_identity_pipeline_exact():
    op = Identity((3, 3))
    r = np.random.default_rng(2)
    y = r.normal(size=9)
    cav = random_cavity(9, 1)
    xi = 0.3
    lm = tilted_moments(op, y, xi, cav, ExactDiagonal())
    site, n_bad = update_likelihood_site(lm.mean, lm.variance, cav, NaturalSite.flat(9), eta=1.0)
    assert n_bad == 0
    q = multiply(cav.to_natural(), site).to_moments()
    ref_mean, ref_cov = dense_posterior(np.eye(9), y, xi, cav.mean, cav.variance)
    np.testing.assert_allclose(q.mean, ref_mean, rtol=1e-12)
    np.testing.assert_allclose(q.variance, np.diag(ref_cov), rtol=1e-12)


def test_update_examples():
    cav = random_cavity(5)
    site, n_bad = update_likelihood_site(cav.mean, cav.variance, cav, NaturalSite.flat(5), eta=1.0)
    # a zero proposal is repaired to the flat floor (variance 1e8)
    assert np.all(site.precision <= 1e-8) and np.all(site.precision > 0)
    np.testing.assert_allclose(site.shift, 0.0, atol=1e-7)
    site, n_bad = update_likelihood_site(cav.mean, cav.variance * 2, cav, NaturalSite.flat(5), eta=1.0)
    assert n_bad == 5
    np.testing.assert_array_equal(site.precision, 1e-8)


def test_conv_cg_matches_dense():
    op = Conv2D(uniform_kernel(3), (8, 8))
    cav = random_cavity(64, 4)
    y = np.random.default_rng(0).normal(size=64)
    mean, _ = tilted_mean(op, y, 0.05, cav, cg_tol=1e-12)
    np.testing.assert_allclose(mean, dense_reference_solve(op, y, 0.05, cav), rtol=1e-8, atol=1e-10)


def test_cg_error_norm_decreases():
    # CG minimises the A-norm of the error over growing Krylov spaces; the
    # residual norm itself need not decrease monotonically.
    r = np.random.default_rng(5)
    q, _ = np.linalg.qr(r.normal(size=(40, 40)))
    a = q @ np.diag(np.logspace(0, 4, 40)) @ q.T
    b = r.normal(size=40)
    exact = np.linalg.solve(a, b)
    errs = []
    pcg(lambda x: x @ a, b, tol=1e-12, max_iter=200,
        callback=lambda x: errs.append(float((x - exact) @ a @ (x - exact))))
    assert all(e1 <= e0 * (1 + 1e-10) for e0, e1 in zip(errs, errs[1:]))


def test_cg_failure_reports_residual():
    a = np.diag(np.logspace(0, 6, 50))
    with pytest.raises(CGConvergenceError) as err:
        pcg(lambda x: x @ a, np.ones(50), tol=1e-14, max_iter=3)
    assert err.value.iterations == 3 and err.value.residual > 0


def test_batched_cg_rows_independent():
    a = np.diag(np.linspace(1, 10, 20))
    b = np.random.default_rng(0).normal(size=(3, 20))
    xb, _ = pcg(lambda x: x @ a, b, tol=1e-10)
    x1, _ = pcg(lambda x: x @ a, b[1], tol=1e-10)
    np.testing.assert_array_equal(xb[1], x1)


@given(st.integers(1, 32), st.integers(0, 1000), st.booleans())
def test_woodbury_matches_dense(m, seed, hadamard):
    dims = (8, 8)
    m = min(m, 32)
    op = build_hadamard(dims, m, seed) if hadamard else GaussianIID(dims, m, seed)
    cav = random_cavity(64, seed)
    y = np.random.default_rng(seed).normal(size=m)
    xi = 0.1
    lm = tilted_moments(op, y, xi, cav, Woodbury())
    ref = dense_reference_diag(op, xi, cav)
    np.testing.assert_allclose(lm.variance, ref, rtol=1e-10)
    np.testing.assert_allclose(lm.mean, dense_reference_solve(op, y, xi, cav), rtol=1e-9, atol=1e-9)


def test_woodbury_small_gaussian():
    op = GaussianIID((4, 4), 4, seed=1)
    cav = random_cavity(16, 2)
    np.testing.assert_allclose(tilted_variances(op, 0.5, cav, Woodbury()), dense_reference_diag(op, 0.5, cav),
                               rtol=1e-10)


# The estimator's relative error grows as the data dominate the cavity
# (about 86% of pixels within 5% at xi = 0.05), so the checks use xi = 0.5.
def test_rbmc_512_samples():
    op = Conv2D(uniform_kernel(3), (8, 8))
    cav = random_cavity(64, 7)
    ref = dense_reference_diag(op, 0.5, cav)
    est = tilted_variances(op, 0.5, cav, RBMC(num_samples=512, cg_tol=1e-10))
    rel = np.abs(est - ref) / ref
    assert np.mean(rel <= 0.05) >= 0.95


def test_rbmc_unbiased_over_seeds():
    op = Conv2D(uniform_kernel(3), (8, 8))
    cav = random_cavity(64, 7)
    ref = dense_reference_diag(op, 0.5, cav)
    est = np.mean([tilted_variances(op, 0.5, cav, RBMC(num_samples=64, cg_tol=1e-10, seed=s))
                   for s in range(50)], axis=0)
    assert np.max(np.abs(est - ref) / ref) <= 0.01


def test_rbmc_deterministic_per_seed():
    op = Conv2D(uniform_kernel(3), (8, 8))
    cav = random_cavity(64, 1)
    a = tilted_variances(op, 0.1, cav, RBMC(num_samples=8, seed=3), stream=2)
    b = tilted_variances(op, 0.1, cav, RBMC(num_samples=8, seed=3), stream=2)
    c = tilted_variances(op, 0.1, cav, RBMC(num_samples=8, seed=3), stream=3)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_strategy_selection_and_checks():
    assert isinstance(select_strategy(Identity((2, 2))), ExactDiagonal)
    assert isinstance(select_strategy(GaussianIID((4, 4), 8)), Woodbury)
    assert isinstance(select_strategy(GaussianIID((4, 4), 9)), RBMC)
    assert isinstance(select_strategy(build_hadamard((4, 4), 4)), Woodbury)
    assert isinstance(select_strategy(Conv2D(uniform_kernel(3), (4, 4))), RBMC)
    assert select_strategy(Conv2D(uniform_kernel(3), (4, 4)), "rbmc", num_samples=7).num_samples == 7
    with pytest.raises(StrategyError):
        select_strategy(Conv2D(uniform_kernel(3), (4, 4)), "exact")
    with pytest.raises(StrategyError):
        select_strategy(Identity((2, 2)), "woodbury")
    with pytest.raises(StrategyError):
        select_strategy(Identity((2, 2)), "cholesky")
    with pytest.raises(ValueError):
        RBMC(num_samples=1)
    with pytest.raises(ValueError):
        RBMC(cg_tol=0.0)
    with pytest.raises(ValueError):
        tilted_mean(Identity((2, 2)), np.zeros(4), 0.0, random_cavity(4))
