"""OLS residuals used to check the exponential covariance choice.

Pixel residuals come from per-window regressions of intensity on the
Gaussian kernel with fixed bandwidths; displacement residuals from the
pooled regression of A-site displacement on the weighted-minus-unweighted
neighbour centre.
"""

from __future__ import annotations

import numpy as np

from .covariance import empirical_variogram, pool_variograms
from .imaging import window_at
from .kernel import kernel_rows
from .lattice import displacement_and_covariate


def pixel_residual_blocks(img, centers, half_width: int, psi: float):
    """``[(coords, residuals)]`` per window after OLS on ``[1, kernel]``."""
    out = []
    for k, s in enumerate(np.asarray(centers, dtype=float)):
        w = window_at(img, s, half_width, k)
        x = kernel_rows(w.coords - np.asarray(w.center_pixel, float), (s - w.center_pixel)[None, :],
                        psi)[0]
        design = np.column_stack([np.ones_like(x), x])
        coef, *_ = np.linalg.lstsq(design, w.values, rcond=None)
        out.append((w.coords.astype(float), w.values - design @ coef))
    return out


def pixel_variogram(blocks, n_bins: int = 15, max_dist=None):
    """Within-window pairs only, pooled over windows."""
    if max_dist is None:
        max_dist = max(float(np.ptp(c[:, 0])) for c, _ in blocks)
    return pool_variograms(empirical_variogram(c, r, n_bins, max_dist) for c, r in blocks)


def displacement_residuals(s_A, s_B, weights_B, geometry):
    """``(N_A, 2)`` OLS residuals of displacement on the covariate, x and y pooled."""
    delta, psi = displacement_and_covariate(s_A, s_B, weights_B, geometry.neighbor_map)
    x, y = psi.T.ravel(), delta.T.ravel()
    design = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return (y - design @ coef).reshape(2, -1).T


def displacement_variogram(a_coords, resid, n_bins: int = 15, max_dist=None):
    """x and y residuals treated as two independent replicates over the A sites."""
    a_coords = np.asarray(a_coords, dtype=float)
    if max_dist is None:
        d = np.sqrt(((a_coords[:, None] - a_coords[None]) ** 2).sum(-1))
        max_dist = 0.5 * d.max()
    return pool_variograms(empirical_variogram(a_coords, resid[:, l], n_bins, max_dist)
                           for l in range(2))
