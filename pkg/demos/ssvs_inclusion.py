"""Spike-and-slab selection of the B-intensity slope.

With a real effect the inclusion indicator is almost always on; with no
effect and heavy pixel noise it mostly switches off.

    python demos/ssvs_inclusion.py
"""

import numpy as np

from lattice_me.harness import Scenario, fit_dataset
from lattice_me.simulate import SimConfig, simulate_dataset

for alpha1, sigma, seed in ((-0.15, 140.0, 11), (0.0, 300.0, 12)):
    ds = simulate_dataset(SimConfig(n_b_per_side=10, alpha1=alpha1, sigma=sigma),
                          np.random.default_rng(seed))
    _, chains = fit_dataset(ds, Scenario("ssvs", ssvs=True), ("hier",), 6000, 2000, 1,
                            np.random.SeedSequence(seed), record_chains=True)
    p = np.mean(chains["hier"]["eta"])
    print(f"alpha1 {alpha1:+.2f}, sigma {sigma:.0f}: P(slope included) = {p:.3f}")
