import warnings

import numpy as np
import pytest

from lattice_me.baseline import (BaselineData, UnconvergedFitError, build_baseline_data,
                                 run_simple_lr, run_spatial_lr)
from lattice_me.detect import GaussianPeakFit
from lattice_me.lattice import build_geometry, displacement_and_covariate
from lattice_me.simulate import SimConfig, simulate_dataset


def _fit(loc, amp, bg=0.0, ok=True):
    return GaussianPeakFit(amp, loc[0], loc[1], 0.0, 3.0, 3.0, bg, 0.0, ok, 5)


def _truth_fits(ds, bg=0.0):
    fa = [_fit(s, b, bg) for s, b in zip(ds.s_A, ds.beta_A)]
    fb = [_fit(s, b, bg) for s, b in zip(ds.s_B, ds.beta_B)]
    return fa, fb


@pytest.fixture(scope="module")
def ds():
    return simulate_dataset(SimConfig(n_b_per_side=10), np.random.default_rng(7))


def test_truth_fed_fits_reproduce_truth(ds):
    fa, fb = _truth_fits(ds)
    d = build_baseline_data(fa, fb, ds.geometry, weight="amplitude")
    delta, psi = displacement_and_covariate(ds.s_A, ds.s_B, ds.beta_B, ds.geometry.neighbor_map)
    np.testing.assert_allclose(d.delta, delta, atol=1e-6)
    np.testing.assert_allclose(d.psi, psi, atol=1e-6)
    # with zero background the peak height is the amplitude
    np.testing.assert_array_equal(build_baseline_data(fa, fb, ds.geometry).psi, d.psi)
    assert d.pooled_delta.shape == (2 * d.n_A,)
    np.testing.assert_array_equal(d.pooled_delta[:d.n_A], d.delta[:, 0])


def test_equal_intensities_give_zero_covariate(ds):
    fa = [_fit(s, 100.0) for s in ds.s_A]
    fb = [_fit(s, 100.0) for s in ds.s_B]
    np.testing.assert_allclose(build_baseline_data(fa, fb, ds.geometry).psi, 0.0, atol=1e-12)


def test_unconverged_fits(ds):
    fa, fb = _truth_fits(ds)
    fb[0] = _fit(ds.s_B[0], 1.0, ok=False)
    with pytest.raises(UnconvergedFitError):
        build_baseline_data(fa, fb, ds.geometry, strict=True)
    with pytest.warns(RuntimeWarning):
        d = build_baseline_data(fa, fb, ds.geometry)
    assert d.n_A == ds.geometry.n_a - 1 and 0 not in d.a_ids
    with pytest.raises(ValueError):
        build_baseline_data(fa, fb, ds.geometry, weight="area")


def test_truth_covariate_recovers_slope(ds):
    fa, fb = _truth_fits(ds)
    ch = run_simple_lr(build_baseline_data(fa, fb, ds.geometry, weight="amplitude"), 3000, 1000,
                       seed=1)
    a1 = ch["alpha1"]
    assert len(a1) == 2000
    assert abs(a1.mean() + 0.15) < 3 * a1.std()


def test_zero_covariate_leaves_prior_on_slope():
    rng = np.random.default_rng(0)
    n = 40
    d = BaselineData(rng.normal(0, 0.4, (n, 2)), np.zeros((n, 2)), rng.uniform(0, 100, (n, 2)),
                     np.arange(n))
    ch = run_simple_lr(d, 4000, 500, seed=3)
    assert ch["alpha1"].std() == pytest.approx(1000.0, rel=0.05)


def _spatial_data(seed=2, n=30):
    rng = np.random.default_rng(seed)
    psi = rng.normal(0, 0.1, (n, 2))
    return BaselineData(-0.08 - 0.15 * psi + rng.normal(0, 0.4, (n, 2)), psi,
                        rng.uniform(0, 200, (n, 2)), np.arange(n))


def test_spatial_with_zero_correlation_equals_simple():
    d = _spatial_data()
    a = run_simple_lr(d, 600, 100, seed=11)
    b = run_spatial_lr(d, 600, 100, seed=11, fixed_corr=(0.0, 7.0))
    for name in ("alpha0", "alpha1", "sigma2_A"):
        np.testing.assert_array_equal(a[name], b[name])


def test_zero_step_is_always_accepted():
    ch = run_spatial_lr(_spatial_data(), 400, 100, seed=4, step=0.0)
    assert ch.acceptance["proc"] == 1.0


def test_spatial_chain_shapes_and_rates():
    ch = run_spatial_lr(_spatial_data(), 1000, 200, thin=2, seed=5)
    assert all(len(ch[n]) == 400 for n in ch.names)
    assert {"alpha0", "alpha1", "sigma2_A", "r", "rho"} <= set(ch.names)
    assert 0.0 <= ch.acceptance["proc"] <= 1.0
    assert np.all((ch["r"] >= 0) & (ch["r"] <= 1)) and np.all(ch["rho"] > 0)
    with pytest.raises(ValueError):
        run_spatial_lr(_spatial_data(), 100, 100)


def test_seeded_runs_repeat():
    d = _spatial_data()
    a, b = run_spatial_lr(d, 300, 50, seed=9), run_spatial_lr(d, 300, 50, seed=9)
    for n in a.names:
        np.testing.assert_array_equal(a[n], b[n])
