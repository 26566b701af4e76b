"""The reference implementations themselves, checked against scipy.stats."""

import numpy as np
import pytest
from scipy import stats

from oracles import (conditional_moments, exhaustive_hpd, gaussian_logpdf, invgamma_logpdf,
                     lognormal_logpdf)


def test_density_formulas_match_scipy():
    assert invgamma_logpdf(2.3, 3.1, 1.7) == pytest.approx(
        stats.invgamma.logpdf(2.3, 3.1, scale=1.7), abs=1e-12)
    assert lognormal_logpdf(2.3, 1.7) == pytest.approx(
        stats.lognorm.logpdf(2.3, np.sqrt(1.7)), abs=1e-12)
    rng = np.random.default_rng(0)
    a = rng.standard_normal((5, 5))
    cov = a @ a.T + np.eye(5)
    x = rng.standard_normal(5)
    assert gaussian_logpdf(x, cov) == pytest.approx(
        stats.multivariate_normal(np.zeros(5), cov).logpdf(x), abs=1e-10)


def test_quadrature_moments_of_known_densities():
    m, v = conditional_moments(lambda x: stats.norm.logpdf(x, 3.0, 0.2), 2.9)
    assert m == pytest.approx(3.0, rel=1e-9) and v == pytest.approx(0.04, rel=1e-9)
    shape, rate = 7.5, 3.0
    m, v = conditional_moments(lambda x: invgamma_logpdf(x, shape, rate), 0.4, positive=True)
    assert m == pytest.approx(rate / (shape - 1), rel=1e-9)
    assert v == pytest.approx(rate ** 2 / ((shape - 1) ** 2 * (shape - 2)), rel=1e-8)


def test_exhaustive_hpd_on_uniform_grid():
    lo, hi = exhaustive_hpd(np.arange(200.0), 0.9)
    assert (lo, hi) == (0.0, 180.0)
