import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lattice_me.detect import (detect_sites, fit_gaussian_peak, gaussian_surface,
                               read_detection_csv, trace_diagnostic, weighted_centroid,
                               write_detection_csv)
from lattice_me.imaging import Image, Window, extract_window, window_offsets
from lattice_me.simulate import SimConfig, simulate_dataset


def surface(coords, amp, x0, y0, theta, s1, s2, z):
    """Rotated elliptical Gaussian plus a constant, written out directly."""
    dx, dy = coords[:, 0] - x0, coords[:, 1] - y0
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = dx * np.sin(theta) - dy * np.cos(theta)
    return amp * np.exp(-(u ** 2 / s1 ** 2 + v ** 2 / s2 ** 2)) + z


def _window(values_fn, h=6, center=(20, 20)):
    coords = window_offsets(h) + np.array(center, float)
    return Window(0, h, center, coords, values_fn(coords))


def random_peak(rng, center=(20, 20)):
    return dict(amp=rng.uniform(300.0, 5000.0), x0=center[0] + rng.uniform(-1.0, 1.0),
                y0=center[1] + rng.uniform(-1.0, 1.0), theta=rng.uniform(0.0, np.pi),
                s1=rng.uniform(2.5, 6.0), s2=rng.uniform(2.5, 6.0), z=rng.uniform(0.0, 300.0))


def detection_errors(n=100, seed=0):
    rng = np.random.default_rng(seed)
    worst_center, worst_amp, all_converged = 0.0, 0.0, True
    for _ in range(n):
        p = random_peak(rng)
        fit = fit_gaussian_peak(_window(lambda c: surface(c, **p)))
        all_converged &= fit.converged
        worst_center = max(worst_center, np.hypot(fit.x0 - p["x0"], fit.y0 - p["y0"]))
        worst_amp = max(worst_amp, abs(fit.amplitude - p["amp"]) / p["amp"])
    return worst_center, worst_amp, all_converged


def test_noiseless_peaks_are_recovered():
    center, amp, ok = detection_errors()
    assert ok
    assert center < 1e-3
    assert amp < 1e-3


def test_surface_matches_module_parameterisation():
    rng = np.random.default_rng(3)
    p = random_peak(rng)
    coords = window_offsets(4) + 20.0
    params = [p["amp"], p["x0"], p["y0"], p["theta"], p["s1"], p["s2"], p["z"]]
    np.testing.assert_allclose(gaussian_surface(params, coords), surface(coords, **p), rtol=1e-13)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1))
def test_canonical_axes_and_angle(seed):
    p = random_peak(np.random.default_rng(seed))
    fit = fit_gaussian_peak(_window(lambda c: surface(c, **p)))
    assert fit.sigma1 >= fit.sigma2 > 0
    assert 0.0 <= fit.theta < np.pi
    assert fit.peak_height == pytest.approx(fit.amplitude + fit.background)


def test_fit_does_not_increase_rss():
    rng = np.random.default_rng(11)
    p = random_peak(rng)
    noise = rng.normal(0.0, 50.0, (13 * 13,))
    fit = fit_gaussian_peak(_window(lambda c: surface(c, **p) + noise))
    h = np.asarray(fit.rss_history)
    assert np.all(np.diff(h) <= 0)


def test_flat_window_is_flagged_not_raised():
    fit = fit_gaussian_peak(_window(lambda c: np.full(len(c), 7.0)))
    assert not fit.converged
    assert np.all(np.isfinite(fit.center))


def test_weighted_centroid_of_symmetric_peak():
    w = _window(lambda c: surface(c, 100.0, 20.0, 20.0, 0.0, 2.0, 2.0, 5.0))
    np.testing.assert_allclose(weighted_centroid(w), [20.0, 20.0], atol=1e-12)


def simulated_trace_correlations(n_b=6, seed=5):
    cfg = SimConfig(n_b_per_side=n_b)
    ds = simulate_dataset(cfg, np.random.default_rng(seed))
    from lattice_me.imaging import window_at

    out = {}
    for t, locs, h in (("A", ds.s_A, cfg.h_A), ("B", ds.s_B, cfg.h_B)):
        tr = trace_diagnostic([window_at(ds.image, s, h) for s in locs])
        out[t] = min(tr.horizontal_corr, tr.vertical_corr)
    return out


def test_trace_diagnostic_on_simulated_windows():
    corr = simulated_trace_correlations()
    assert corr["A"] >= 0.999 and corr["B"] >= 0.999


def test_trace_diagnostic_rejects_mixed_sizes():
    img = Image(np.random.default_rng(0).normal(size=(30, 30)))
    with pytest.raises(ValueError):
        trace_diagnostic([extract_window(img, (10, 10), 2), extract_window(img, (20, 20), 3)])


def test_detection_csv_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    canvas = rng.normal(50.0, 5.0, (40, 40))
    coords = np.array([[x, y] for y in range(1, 41) for x in range(1, 41)], float)
    canvas += surface(coords, 900.0, 12.3, 14.6, 0.4, 3.0, 2.5, 0.0).reshape(40, 40)
    sites = detect_sites(Image(canvas), [(12, 15)], 5, "A")
    path = tmp_path / "det.csv"
    write_detection_csv(sites, path)
    back = read_detection_csv(path)
    assert len(back) == 1
    f0, f1 = sites[0].fit, back[0].fit
    assert (f1.x0, f1.y0, f1.amplitude, f1.converged) == (f0.x0, f0.y0, f0.amplitude, f0.converged)


def test_analytic_jacobian_matches_finite_differences():
    from lattice_me.detect import _model_and_jacobian

    rng = np.random.default_rng(4)
    p = random_peak(rng)
    params = np.array([p["amp"], p["x0"], p["y0"], p["theta"], p["s1"], p["s2"], p["z"]])
    coords = window_offsets(5) + 20.0
    _, jac = _model_and_jacobian(params, coords)
    for k in range(7):
        h = 1e-6 * max(1.0, abs(params[k]))
        up, dn = params.copy(), params.copy()
        up[k] += h
        dn[k] -= h
        num = (gaussian_surface(up, coords) - gaussian_surface(dn, coords)) / (2 * h)
        np.testing.assert_allclose(jac[:, k], num, rtol=1e-5, atol=1e-6 * p["amp"])
