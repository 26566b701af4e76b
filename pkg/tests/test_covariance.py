import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lattice_me.covariance import (ExpCovParams, FactorizationError, VariogramEstimate,
                                   VariogramFitError, bilinear_form, empirical_variogram,
                                   exp_corr_from_dist, exp_cov_matrix, exp_semivariogram,
                                   factorize, fit_exp_variogram, pool_variograms, quad_form,
                                   sample_mvn)
from lattice_me.imaging import pairwise_distances

coords_st = st.integers(2, 30).flatmap(
    lambda n: st.lists(st.tuples(st.floats(0, 50), st.floats(0, 50)), min_size=n, max_size=n))


def test_entries():
    c = np.array([[0.0, 0.0], [3.0, 4.0]])
    m = exp_cov_matrix(c, ExpCovParams(2.0, 0.6, 5.0))
    assert m[0, 0] == 2.0 and m[1, 1] == 2.0
    assert m[0, 1] == pytest.approx(2.0 * 0.6 * np.exp(-1.0), rel=1e-15)
    np.testing.assert_array_equal(exp_cov_matrix(c, ExpCovParams(3.0, 0.0, 5.0)), 3.0 * np.eye(2))


@pytest.mark.parametrize("bad", [dict(sigma2=0.0, r=0.5, rho=1.0), dict(sigma2=1.0, r=1.2, rho=1.0),
                                 dict(sigma2=1.0, r=0.5, rho=0.0)])
def test_invalid_params(bad):
    with pytest.raises(ValueError):
        ExpCovParams(**bad)


@settings(max_examples=60, deadline=None)
@given(coords=coords_st, r=st.floats(0.0, 0.99), rho=st.floats(0.1, 40.0),
       s2=st.floats(1e-3, 1e4))
def test_symmetric_and_factorizable(coords, r, rho, s2):
    xy = np.asarray(coords, float)
    xy = xy + 1e-3 * np.arange(len(xy))[:, None]  # distinct points
    m = exp_cov_matrix(xy, ExpCovParams(s2, r, rho))
    assert np.array_equal(m, m.T)
    f = factorize(m)
    np.testing.assert_allclose(f.lower @ f.lower.T, m, rtol=1e-10, atol=1e-10 * s2)
    assert f.log_det == pytest.approx(2 * np.sum(np.log(np.diag(f.lower))))


def test_factor_examples():
    f = factorize(np.eye(4))
    np.testing.assert_array_equal(f.lower, np.eye(4))
    assert f.log_det == 0.0
    f = factorize(4.0 * np.eye(3))
    np.testing.assert_allclose(f.lower, 2.0 * np.eye(3))
    assert f.log_det == pytest.approx(3 * np.log(4.0))


def test_non_pd_reports_pivot():
    m = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 2.0], [0.0, 2.0, 1.0]])
    with pytest.raises(FactorizationError) as err:
        factorize(m)
    assert err.value.pivot == 2


def test_quad_form_examples():
    f = factorize(np.eye(2))
    assert quad_form(f, [3.0, 4.0]) == 25.0
    assert quad_form(f, [0.0, 0.0]) == 0.0
    with pytest.raises(ValueError):
        quad_form(f, [1.0, 2.0, 3.0])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 50))
def test_quad_form_against_dense_inverse(seed, n):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0, 20, (n, 2))
    m = exp_cov_matrix(xy, ExpCovParams(2.5, 0.8, 3.0))
    u, v = rng.standard_normal(n), rng.standard_normal(n)
    inv = np.linalg.inv(m)
    f = factorize(m)
    assert quad_form(f, v) == pytest.approx(v @ inv @ v, rel=1e-8)
    assert bilinear_form(f, u, v) == pytest.approx(u @ inv @ v, rel=1e-8, abs=1e-10)


def test_sample_covariance_and_reproducibility():
    cov = exp_cov_matrix(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]]), ExpCovParams(2.0, 0.7, 1.5))
    f = factorize(cov)
    x = sample_mvn(np.zeros(3), f, np.random.default_rng(0), size=100_000)
    np.testing.assert_allclose(np.cov(x.T), cov, rtol=0.02, atol=0.02 * 2.0)
    a = sample_mvn(np.ones(3), f, np.random.default_rng(5))
    b = sample_mvn(np.ones(3), f, np.random.default_rng(5))
    assert np.array_equal(a, b)
    tiny = factorize(1e-12 * np.eye(3))
    np.testing.assert_allclose(sample_mvn(np.ones(3), tiny, np.random.default_rng(1)), 1.0, atol=1e-4)


def test_variogram_examples():
    vg = empirical_variogram(np.array([[0.0, 0.0], [3.0, 0.0]]), np.array([0.0, 2.0]), 1, 3.0)
    assert vg.semivariances[0] == 2.0 and vg.counts[0] == 1
    rng = np.random.default_rng(0)
    xy = rng.uniform(0, 10, (50, 2))
    vg = empirical_variogram(xy, np.full(50, 3.0), 5)
    assert np.all(vg.semivariances[vg.valid()] == 0.0)


def test_variogram_against_brute_force():
    rng = np.random.default_rng(3)
    xy = rng.uniform(0, 10, (40, 2))
    z = rng.standard_normal(40)
    vg = empirical_variogram(xy, z, 6, 5.0)
    edges = np.linspace(0, 5.0, 7)
    for b in range(6):
        pairs = [(z[i] - z[j]) ** 2 for i in range(40) for j in range(i + 1, 40)
                 if edges[b] <= np.hypot(*(xy[i] - xy[j])) < edges[b + 1]]
        assert vg.counts[b] == len(pairs)
        assert vg.semivariances[b] == pytest.approx(0.5 * np.mean(pairs))


def test_iid_residuals_give_unit_semivariance():
    rng = np.random.default_rng(4)
    xy = rng.uniform(0, 100, (3000, 2))
    vg = empirical_variogram(xy, rng.standard_normal(3000), 10, 30.0)
    np.testing.assert_allclose(vg.semivariances, 1.0, rtol=0.05)


def test_empty_bins_are_marked_missing():
    vg = empirical_variogram(np.array([[0.0, 0.0], [10.0, 0.0]]), np.array([1.0, 2.0]), 4, 10.0)
    assert vg.counts.tolist() == [0, 0, 0, 1]
    assert np.isnan(vg.semivariances[:3]).all()


def test_bins_are_increasing():
    vg = empirical_variogram(np.random.default_rng(0).uniform(0, 9, (20, 2)), np.arange(20.0), 7)
    assert np.all(np.diff(vg.bin_centers) > 0)


def test_exact_variogram_is_recovered():
    d = np.linspace(0.5, 40.0, 25)
    p = ExpCovParams(1.0, 0.5, 10.0)
    vg = VariogramEstimate(d, exp_semivariogram(d, p), np.full(25, 100))
    fit = fit_exp_variogram(vg)
    assert fit.sigma2 == pytest.approx(1.0, abs=1e-4)
    assert fit.r == pytest.approx(0.5, abs=1e-4)
    assert fit.rho == pytest.approx(10.0, abs=1e-4)


def test_pure_nugget_gives_small_r():
    rng = np.random.default_rng(2)
    xy = rng.uniform(0, 60, (1500, 2))
    fit = fit_exp_variogram(empirical_variogram(xy, rng.standard_normal(1500), 15, 20.0))
    assert fit.r < 0.05


def test_too_few_bins():
    d = np.array([1.0, 2.0, 3.0])
    vg = VariogramEstimate(d, np.array([1.0, np.nan, 2.0]), np.array([5, 0, 5]))
    with pytest.raises(VariogramFitError):
        fit_exp_variogram(vg)


def field_recovery(seed=0, n=2000, side=100.0, truth=(4.0, 0.7, 2.0)):
    """Relative errors of the variogram fit on one simulated exponential field."""
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0, side, (n, 2))
    s2, r, rho = truth
    cov = s2 * exp_corr_from_dist(pairwise_distances(xy), r, rho)
    z = np.linalg.cholesky(cov) @ rng.standard_normal(n)
    fit = fit_exp_variogram(empirical_variogram(xy, z, 20, 6 * rho))
    return (abs(fit.sigma2 / s2 - 1), abs(fit.r / r - 1), abs(fit.rho / rho - 1))


@pytest.mark.parametrize("seed", range(3))
def test_field_parameters_within_twenty_percent(seed):
    assert max(field_recovery(seed)) < 0.20


def test_pooling_adds_pair_counts():
    a = VariogramEstimate(np.array([1.0, 2.0]), np.array([1.0, np.nan]), np.array([2, 0]))
    b = VariogramEstimate(np.array([1.0, 2.0]), np.array([3.0, 5.0]), np.array([2, 1]))
    p = pool_variograms([a, b])
    assert p.counts.tolist() == [4, 1]
    np.testing.assert_allclose(p.semivariances, [2.0, 5.0])
