"""Process layer shared by the hierarchical and the fixed-location samplers.

The x and y displacements ``delta_l`` (l = x, y) of the A sites are
independent replicates of

    delta_l ~ N(alpha0 1 + alpha1 Psi_l, sigma2_A R(r, rho)),
    R(r, rho) = (1 - r) I + r exp(-D / rho),

with ``D`` a fixed A-A distance matrix.  Conditionals below work on the
correlation scale; ``Rinv`` is ``R^{-1}``.
"""

from __future__ import annotations

import numpy as np
from numba import njit
from scipy.special import expit, logit

from .covariance import exp_corr_from_dist, factorize

LOG_2PI = float(np.log(2.0 * np.pi))


class ProcessCorr:
    """Factorised process-layer correlation for one ``(r, rho)``."""

    def __init__(self, dist: np.ndarray, r: float, rho: float):
        self.dist = dist
        self.r = float(r)
        self.rho = float(rho)
        self.factor = factorize(exp_corr_from_dist(dist, self.r, self.rho))
        self.Rinv = self.factor.inverse()
        self.Rinv = 0.5 * (self.Rinv + self.Rinv.T)
        self.log_det = self.factor.log_det

    @property
    def n(self) -> int:
        return self.dist.shape[0]

    def with_params(self, r: float, rho: float) -> "ProcessCorr":
        return ProcessCorr(self.dist, r, rho)


def process_loglik(resid: np.ndarray, corr: ProcessCorr, sigma2_A: float) -> float:
    """Log density of the ``(N_A, 2)`` residual matrix ``delta - mean``."""
    z = corr.factor.whiten(resid)
    n = corr.n
    return float(-0.5 * np.sum(z * z) / sigma2_A
                 - n * np.log(sigma2_A) - corr.log_det - n * LOG_2PI)


def alpha0_conditional(delta, psi, alpha1, Rinv, sigma2_A, prior_var):
    one = np.ones(delta.shape[0])
    r1 = Rinv @ one
    V = 2.0 * (one @ r1) / sigma2_A + 1.0 / prior_var
    M = float(np.sum((delta - alpha1 * psi).T @ r1)) / sigma2_A
    return M / V, 1.0 / V


def alpha1_conditional(delta, psi, alpha0, Rinv, sigma2_A, prior_var):
    rp = Rinv @ psi
    V = float(np.sum(psi * rp)) / sigma2_A + 1.0 / prior_var
    M = float(np.sum((delta - alpha0) * rp)) / sigma2_A
    return M / V, 1.0 / V


def sigma2_A_conditional(resid, Rinv, shape0, rate0):
    n = resid.shape[0]
    quad = float(np.sum(resid * (Rinv @ resid)))
    return shape0 + n, rate0 + 0.5 * quad


def ssvs_eta_logodds(delta, psi, alpha0, gamma, Rinv, sigma2_A, prior_incl):
    """Log odds of ``eta = 1`` given ``gamma``: slope ``gamma`` vs slope 0."""
    r0 = delta - alpha0
    r1 = r0 - gamma * psi
    q0 = float(np.sum(r0 * (Rinv @ r0)))
    q1 = float(np.sum(r1 * (Rinv @ r1)))
    return np.log(prior_incl) - np.log1p(-prior_incl) - 0.5 * (q1 - q0) / sigma2_A


def draw_inv_gamma(rng, shape, rate):
    return rate / rng.gamma(shape)


def log_uniform01_on_logit(x):
    """Log density of ``logit(r)`` when ``r ~ Uniform(0, 1)``."""
    return -np.logaddexp(0.0, x) - np.logaddexp(0.0, -x)


# -- sequential site sweeps (numba) -------------------------------------------------

@njit(cache=True)
def a_site_sweep(log_base, d, log_u, e, Pe, Rinv, inv_s2A):
    """Metropolis accept loop over A sites whose proposals move ``e[j]`` by ``d[j]``.

    ``log_base`` already holds the data-layer log ratio (``-inf`` to reject).
    ``e`` and ``Pe = Rinv @ e`` are updated in place for accepted moves.
    """
    n = e.shape[0]
    acc = np.zeros(n, dtype=np.bool_)
    for j in range(n):
        lb = log_base[j]
        if lb == -np.inf:
            continue
        dx = d[j, 0]
        dy = d[j, 1]
        rjj = Rinv[j, j]
        dq = 2.0 * (dx * Pe[j, 0] + dy * Pe[j, 1]) + (dx * dx + dy * dy) * rjj
        if log_u[j] < lb - 0.5 * dq * inv_s2A:
            acc[j] = True
            e[j, 0] += dx
            e[j, 1] += dy
            for i in range(n):
                Pe[i, 0] += Rinv[i, j] * dx
                Pe[i, 1] += Rinv[i, j] * dy
    return acc


@njit(cache=True)
def b_site_sweep(log_base, log_u, s_B, beta_B, prop_s, prop_beta, s_A, e, Pe, Rinv,
                 nbr, a_of_b, alpha0, alpha1, inv_s2A):
    """Metropolis accept loop over B sites.

    A B-site move (location and/or intensity) changes ``u`` and ``w`` of the
    A sites listed in ``a_of_b[k]`` (``-1`` padded).  ``s_B``, ``beta_B``,
    ``e`` and ``Pe`` are updated in place for accepted moves.
    """
    nb = s_B.shape[0]
    n_a = e.shape[0]
    acc = np.zeros(nb, dtype=np.bool_)
    new_e = np.empty((4, 2))
    idx = np.empty(4, dtype=np.int64)
    for k in range(nb):
        lb = log_base[k]
        if lb == -np.inf:
            continue
        old_x = s_B[k, 0]
        old_y = s_B[k, 1]
        old_b = beta_B[k]
        s_B[k, 0] = prop_s[k, 0]
        s_B[k, 1] = prop_s[k, 1]
        beta_B[k] = prop_beta[k]
        m = 0
        for t in range(a_of_b.shape[1]):
            j = a_of_b[k, t]
            if j < 0:
                continue
            ux = 0.0
            uy = 0.0
            wx = 0.0
            wy = 0.0
            bs = 0.0
            for q in range(4):
                kk = nbr[j, q]
                ux += s_B[kk, 0]
                uy += s_B[kk, 1]
                wx += beta_B[kk] * s_B[kk, 0]
                wy += beta_B[kk] * s_B[kk, 1]
                bs += beta_B[kk]
            ux *= 0.25
            uy *= 0.25
            if bs <= 0.0:
                m = -1
                break
            wx /= bs
            wy /= bs
            new_e[m, 0] = s_A[j, 0] - ux - alpha0 - alpha1 * (wx - ux)
            new_e[m, 1] = s_A[j, 1] - uy - alpha0 - alpha1 * (wy - uy)
            idx[m] = j
            m += 1
        ok = m >= 0
        dq = 0.0
        if ok:
            for a in range(m):
                ja = idx[a]
                dax = new_e[a, 0] - e[ja, 0]
                day = new_e[a, 1] - e[ja, 1]
                dq += 2.0 * (dax * Pe[ja, 0] + day * Pe[ja, 1])
                for b in range(m):
                    jb = idx[b]
                    dbx = new_e[b, 0] - e[jb, 0]
                    dby = new_e[b, 1] - e[jb, 1]
                    dq += Rinv[ja, jb] * (dax * dbx + day * dby)
        if ok and log_u[k] < lb - 0.5 * dq * inv_s2A:
            acc[k] = True
            for a in range(m):
                ja = idx[a]
                dax = new_e[a, 0] - e[ja, 0]
                day = new_e[a, 1] - e[ja, 1]
                e[ja, 0] = new_e[a, 0]
                e[ja, 1] = new_e[a, 1]
                for i in range(n_a):
                    Pe[i, 0] += Rinv[i, ja] * dax
                    Pe[i, 1] += Rinv[i, ja] * day
        else:
            s_B[k, 0] = old_x
            s_B[k, 1] = old_y
            beta_B[k] = old_b
    return acc


def a_sites_of_b(neighbor_map: np.ndarray, n_b: int) -> np.ndarray:
    """``(N_B, 4)`` array of A sites neighbouring each B site, ``-1`` padded."""
    out = -np.ones((n_b, 4), dtype=np.int64)
    fill = np.zeros(n_b, dtype=int)
    for j, nb in enumerate(neighbor_map):
        for k in nb:
            out[k, fill[k]] = j
            fill[k] += 1
    return out

