import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lattice_me.hier import HierData, HierPriors, HierSampler, HierState  # noqa: E402
from lattice_me.imaging import Image, round_half_away  # noqa: E402
from lattice_me.lattice import build_geometry, weighted_center  # noqa: E402

from oracles import exp_corr, kernel_mean, window_grid  # noqa: E402


def make_instance(n_side=2, spacing=8.0, h_A=2, h_B=1, seed=0, alpha1=-0.6, sigma2=4.0,
                  priors=None, **state_kw):
    """A tiny synthetic lattice with its windows, informative priors and a state near truth.

    ``n_side=2`` gives 4 B sites and 1 A site; ``n_side=3`` gives 9 and 4.
    """
    rng = np.random.default_rng(seed)
    geom = build_geometry(n_side, spacing, (5.0, 5.0))
    s_B = geom.b_grid_means + 0.15 * rng.standard_normal((geom.n_b, 2))
    beta_B = 40.0 + 6.0 * rng.standard_normal(geom.n_b)
    beta_A = 60.0 + 6.0 * rng.standard_normal(geom.n_a)
    nb = s_B[geom.neighbor_map]
    u = nb.mean(axis=1)
    w = weighted_center(nb, beta_B[geom.neighbor_map])
    s_A = u + 0.05 + alpha1 * (w - u) + 0.1 * rng.standard_normal((geom.n_a, 2))
    psi_A, psi_B, beta0, r_pix, rho_pix = 1.2, 0.9, 10.0, 0.4, 1.5

    size = int(spacing * n_side + 2)
    canvas = beta0 + np.sqrt(sigma2) * rng.standard_normal((size, size))
    for locs, betas, psi, h in ((s_A, beta_A, psi_A, h_A), (s_B, beta_B, psi_B, h_B)):
        for s, b in zip(locs, betas):
            c = round_half_away(s)
            coords = window_grid(c, h)
            cov = sigma2 * exp_corr(coords, r_pix, rho_pix)
            vals = rng.multivariate_normal(kernel_mean(coords, s, beta0, b, psi), cov)
            side = 2 * h + 1
            canvas[c[1] - h - 1:c[1] + h, c[0] - h - 1:c[0] + h] = vals.reshape(side, side)
    img = Image(canvas)
    data = HierData.from_image(img, round_half_away(s_A), round_half_away(s_B), geom, h_A, h_B)
    if priors is None:
        priors = HierPriors(beta0_var=50.0 ** 2, mu_beta_mean_A=55.0, mu_beta_mean_B=45.0,
                            mu_beta_var=20.0 ** 2, a_A=5.0, b_A=150.0, a_B=6.0, b_B=200.0,
                            log_psi_var=2.0, log_rho_pix_var=3.0, log_rho_var=2.5,
                            sigma2_shape=3.0, sigma2_rate=8.0, sigma2_A_shape=4.0,
                            sigma2_A_rate=0.05, sigma2_B_shape=5.0, sigma2_B_rate=0.1,
                            alpha_var=2.0 ** 2)
    state = HierState(beta0=beta0 + 0.5, beta_A=beta_A + 1.0, beta_B=beta_B - 1.0,
                      mu_beta_A=58.0, mu_beta_B=41.0, var_beta_A=30.0, var_beta_B=35.0,
                      psi_A=psi_A * 1.02, psi_B=psi_B * 0.98, sigma2=sigma2 * 1.1,
                      r_pix=0.35, rho_pix=1.4, s_A=s_A + 0.02, s_B=s_B - 0.01, alpha0=0.04,
                      alpha1=alpha1 * 0.9, sigma2_A=0.012, sigma2_B=0.03, r=0.5,
                      rho=2.0, gamma=alpha1, eta=1)
    for k, v in state_kw.items():
        setattr(state, k, v)
    truth = dict(s_A=s_A, s_B=s_B, beta_A=beta_A, beta_B=beta_B)
    return data, priors, state, truth


@pytest.fixture
def tiny():
    data, priors, state, truth = make_instance()
    sampler = HierSampler(data, priors, state, np.random.default_rng(1))
    return sampler


@pytest.fixture
def tiny3():
    data, priors, state, truth = make_instance(n_side=3, seed=4)
    return HierSampler(data, priors, state, np.random.default_rng(2))


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, if the acceptance suite ran."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
