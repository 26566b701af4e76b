import numpy as np
import pytest

from lattice_me.errors import ConfigError
from lattice_me.imaging import round_half_away
from lattice_me.simulate import SimConfig, empirical_checks, simulate_dataset


def test_defaults_give_full_lattice():
    ds = simulate_dataset(SimConfig(), np.random.default_rng(0))
    assert len(ds.s_B) == 361 and len(ds.s_A) == 324
    assert ds.image.width == ds.image.height == 760
    assert len(ds.sites()) == 685


def test_rerun_is_bit_identical():
    cfg = SimConfig(n_b_per_side=4)
    a = simulate_dataset(cfg, np.random.default_rng(9))
    b = simulate_dataset(cfg, np.random.default_rng(9))
    assert np.array_equal(a.image.intensities, b.image.intensities)
    assert np.array_equal(a.s_A, b.s_A)
    c = simulate_dataset(cfg.replace(seed=9))
    assert np.array_equal(a.image.intensities, c.image.intensities)


def test_noiseless_process_puts_a_at_unweighted_centers():
    cfg = SimConfig(n_b_per_side=5, sigma_A=1e-9, alpha0=0.0, alpha1=0.0)
    ds = simulate_dataset(cfg, np.random.default_rng(2))
    u = ds.s_B[ds.geometry.neighbor_map].mean(axis=1)
    np.testing.assert_allclose(ds.s_A, u, atol=1e-6)


def test_invalid_configs():
    with pytest.raises(ConfigError) as e:
        SimConfig(r_pix=1.5)
    assert e.value.field == "r_pix"
    with pytest.raises(ConfigError):
        SimConfig(spacing=12.0)
    with pytest.raises(ConfigError):
        SimConfig(sigma=0.0)


def test_overlapping_boxes_raise():
    # a tight lattice with large process noise pushes A boxes into B boxes
    cfg = SimConfig(n_b_per_side=4, spacing=16.0, h_A=6, h_B=5, buffer=0, sigma_A=3.0)
    with pytest.raises(ConfigError):
        for seed in range(20):
            simulate_dataset(cfg, np.random.default_rng(seed))


def test_background_outside_boxes():
    cfg = SimConfig(n_b_per_side=4)
    ds = simulate_dataset(cfg, np.random.default_rng(3))
    mask = np.ones(ds.image.intensities.shape, bool)
    for locs, h in ((ds.s_A, cfg.h_A + cfg.buffer), (ds.s_B, cfg.h_B + cfg.buffer)):
        for cx, cy in round_half_away(locs):
            mask[cy - h - 1:cy + h, cx - h - 1:cx + h] = False
    bg = ds.image.intensities[mask]
    assert bg.mean() == pytest.approx(cfg.beta0, abs=4 * 25.0 / np.sqrt(bg.size))
    assert bg.std() == pytest.approx(25.0, rel=0.05)


def test_pooled_moments_match_generating_values():
    """Four standard errors: the check runs on one fixed block of seeds."""
    cfg = SimConfig(n_b_per_side=8)
    stats = [empirical_checks(simulate_dataset(cfg, np.random.default_rng(s))) for s in range(100)]
    slope = np.mean([s["ols_alpha1"] for s in stats])
    slope_se = np.std([s["ols_alpha1"] for s in stats], ddof=1) / 10
    assert abs(slope - cfg.alpha1) < 4 * slope_se
    nb = stats[0]["n_B"]
    mb = np.mean([s["beta_B_mean"] for s in stats])
    assert abs(mb - 1425.0) < 4 * 150.0 / np.sqrt(100 * nb)
    disp = np.sqrt(np.mean([s["b_displacement_sd"] ** 2 for s in stats]))
    assert abs(disp - 0.25) < 4 * 0.25 / np.sqrt(2 * 2 * 100 * nb)
