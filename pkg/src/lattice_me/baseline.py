"""Fixed-location comparators: simple and spatial linear regression.

Detected A and B locations (and fitted B intensities for the weighted
neighbour centres) are treated as known.  The displacement regression

    delta_l = alpha0 + alpha1 Psi_l + e_l,   l = x, y,

is then fitted with either iid errors or the exponential-with-nugget
correlation over A sites; x and y are independent replicates sharing
``(alpha0, alpha1, sigma2_A, r, rho)``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .imaging import pairwise_distances
from .lattice import LatticeGeometry, displacement_and_covariate
from .process import (ProcessCorr, alpha0_conditional, alpha1_conditional, draw_inv_gamma,
                      expit, log_uniform01_on_logit, logit, process_loglik,
                      sigma2_A_conditional)
from .summaries import Chain

log = logging.getLogger(__name__)


class UnconvergedFitError(RuntimeError):
    pass


@dataclass
class BaselineData:
    delta: np.ndarray     # (N_A, 2): column 0 is x, column 1 is y
    psi: np.ndarray       # (N_A, 2)
    a_coords: np.ndarray  # (N_A, 2)
    a_ids: np.ndarray     # indices of the A sites kept

    def __post_init__(self):
        if self.delta.shape != self.psi.shape:
            raise ValueError("delta and psi must have the same shape")

    @property
    def n_A(self) -> int:
        return self.delta.shape[0]

    @property
    def pooled_delta(self) -> np.ndarray:
        return self.delta.T.ravel()

    @property
    def pooled_psi(self) -> np.ndarray:
        return self.psi.T.ravel()


def build_baseline_data(fits_A, fits_B, geometry: LatticeGeometry,
                        strict: bool = False, weight: str = "peak") -> BaselineData:
    """Displacements and covariates from detection fits.

    B weights are the fitted intensity at each fitted centre: ``"peak"``
    uses the surface value there (amplitude plus background), ``"amplitude"``
    the background-free height.  The background and amplitude estimates are
    strongly anti-correlated in small windows, so the peak value is the far
    less noisy of the two.

    An A site is dropped if its own fit or any neighbouring B fit did not
    converge (an error when ``strict``).
    """
    if weight not in ("peak", "amplitude"):
        raise ValueError("weight must be 'peak' or 'amplitude'")
    ok_A = np.array([f.converged for f in fits_A])
    ok_B = np.array([f.converged for f in fits_B])
    nbr = geometry.neighbor_map
    keep = ok_A & ok_B[nbr].all(axis=1)
    if not keep.all():
        msg = f"{int((~keep).sum())} A sites dropped after unconverged fits"
        if strict:
            raise UnconvergedFitError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    s_A = np.array([f.center for f in fits_A])
    s_B = np.array([f.center for f in fits_B])
    amp_B = np.array([f.peak_height if weight == "peak" else f.amplitude for f in fits_B])
    delta, psi = displacement_and_covariate(s_A, s_B, amp_B, nbr)
    ids = np.flatnonzero(keep)
    return BaselineData(delta[ids], psi[ids], s_A[ids], ids)


@dataclass
class LRPriors:
    alpha_var: float = 1000.0 ** 2
    sigma2_A_shape: float = 0.01
    sigma2_A_rate: float = 0.01
    log_rho_var: float = 10.0


def _ols_start(data: BaselineData):
    x, y = data.pooled_psi, data.pooled_delta
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    s2 = float(np.mean((y - X @ coef) ** 2))
    return float(coef[0]), float(coef[1]), max(s2, 1e-8)


def run_spatial_lr(data: BaselineData, n_iter: int, burn_in: int, thin: int = 1, seed: int = 0,
                   priors: LRPriors | None = None, step: float = 0.5,
                   fixed_corr: tuple[float, float] | None = None,
                   adapt_every: int = 50) -> Chain:
    """Gibbs for the regression and variance, joint Metropolis on ``(logit r, log rho)``.

    With ``fixed_corr=(r, rho)`` the correlation is held fixed and no
    Metropolis step is taken, so ``fixed_corr=(0, 1)`` gives the iid model.
    """
    if not 0 <= burn_in < n_iter or thin < 1:
        raise ValueError("need 0 <= burn_in < n_iter and thin >= 1")
    pr = priors or LRPriors()
    rng = np.random.default_rng(seed)
    dist = pairwise_distances(data.a_coords)
    alpha0, alpha1, s2A = _ols_start(data)
    if fixed_corr is None:
        r, rho = 0.5, float(np.median(dist[dist > 0])) if data.n_A > 1 else 1.0
    else:
        r, rho = fixed_corr
    corr = ProcessCorr(dist, r, rho)
    delta, psi = data.delta, data.psi

    names = ["alpha0", "alpha1", "sigma2_A", "sigma_A"]
    if fixed_corr is None:
        names += ["r", "rho"]
    n_keep = (n_iter - burn_in) // thin
    draws = {k: np.empty(n_keep) for k in names}
    acc_win = [0, 0]
    acc_post = [0, 0]
    chol = np.eye(2)
    shaped = False
    hist = []
    kept = 0
    for it in range(1, n_iter + 1):
        m, v = alpha0_conditional(delta, psi, alpha1, corr.Rinv, s2A, pr.alpha_var)
        alpha0 = m + np.sqrt(v) * rng.standard_normal()
        m, v = alpha1_conditional(delta, psi, alpha0, corr.Rinv, s2A, pr.alpha_var)
        alpha1 = m + np.sqrt(v) * rng.standard_normal()
        resid = delta - alpha0 - alpha1 * psi
        shape, rate = sigma2_A_conditional(resid, corr.Rinv, pr.sigma2_A_shape, pr.sigma2_A_rate)
        s2A = draw_inv_gamma(rng, shape, rate)

        if fixed_corr is None:
            x = np.array([logit(corr.r), np.log(corr.rho)])
            x_new = x + step * (chol @ rng.standard_normal(2))
            log_u = np.log(rng.uniform())
            r_new, rho_new = float(expit(x_new[0])), float(np.exp(x_new[1]))
            ok = False
            if 0.0 < r_new < 1.0 and np.isfinite(rho_new) and rho_new > 0.0:
                new = corr.with_params(r_new, rho_new)
                ratio = (process_loglik(resid, new, s2A) - process_loglik(resid, corr, s2A)
                         + log_uniform01_on_logit(x_new[0]) - log_uniform01_on_logit(x[0])
                         - 0.5 * (x_new[1] ** 2 - x[1] ** 2) / pr.log_rho_var)
                ok = log_u < ratio
                if ok:
                    corr = new
            if it <= burn_in:
                acc_win[0] += ok
                acc_win[1] += 1
                hist.append((logit(corr.r), np.log(corr.rho)))
                if it % adapt_every == 0:
                    rate_w = acc_win[0] / acc_win[1]
                    step *= 0.75 if rate_w < 0.30 else (1.25 if rate_w > 0.45 else 1.0)
                    acc_win = [0, 0]
                    if len(hist) >= 200:
                        cov = np.cov(np.asarray(hist[len(hist) // 2:]).T)
                        try:
                            c = np.linalg.cholesky(cov + 1e-10 * np.eye(2))
                        except np.linalg.LinAlgError:
                            c = None
                        if c is not None and np.all(np.isfinite(c)):
                            chol = c
                            if not shaped:
                                step, shaped = 2.38 / np.sqrt(2.0), True
            else:
                acc_post[0] += ok
                acc_post[1] += 1

        if it > burn_in and (it - burn_in) % thin == 0 and kept < n_keep:
            draws["alpha0"][kept] = alpha0
            draws["alpha1"][kept] = alpha1
            draws["sigma2_A"][kept] = s2A
            draws["sigma_A"][kept] = np.sqrt(s2A)
            if fixed_corr is None:
                draws["r"][kept] = corr.r
                draws["rho"][kept] = corr.rho
            kept += 1
    acceptance = {"proc": acc_post[0] / acc_post[1]} if acc_post[1] else {}
    return Chain(draws, burn_in, n_iter, thin, acceptance, seed)


def run_simple_lr(data: BaselineData, n_iter: int, burn_in: int, thin: int = 1, seed: int = 0,
                  priors: LRPriors | None = None) -> Chain:
    """Bayesian linear regression with iid errors (Gibbs only)."""
    return run_spatial_lr(data, n_iter, burn_in, thin, seed, priors, fixed_corr=(0.0, 1.0))
