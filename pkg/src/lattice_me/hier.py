"""Hierarchical measurement-error sampler with a non-contiguous block likelihood.

Pixels are only modelled inside fixed square windows around each column;
windows are mutually independent, and inside a window the residuals follow
the exponential covariance with nugget.  Every window of one site type has
the same shape, so a single Cholesky factor per type (for the current
``r_pix``, ``rho_pix``) serves all windows of that type.

One sweep updates, in order:

    beta0, sigma2                      (Gibbs)
    beta_A (Gibbs), beta_B (independence Metropolis)
    s_A, s_B                           (random-walk Metropolis, per site)
    alpha0, alpha1, sigma2_A           (Gibbs)
    (r, rho)                           (joint Metropolis, logit / log scale)
    mu_beta_*, var_beta_*, sigma2_B    (Gibbs)
    psi_A, psi_B                       (Metropolis, log scale)
    (r_pix, rho_pix)                   (joint Metropolis, logit / log scale)
    eta, gamma                         (Gibbs, only with SSVS)

Random-walk step sizes (and, for the two-parameter blocks, the proposal
covariance) adapt during burn-in and are frozen afterwards.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.linalg.lapack import dtrtri

from .covariance import CovFactor, exp_corr_from_dist, factorize
from .imaging import Window, check_disjoint, pairwise_distances, window_at, window_offsets
from .kernel import kernel_rows
from .lattice import LatticeGeometry, displacement_and_covariate
from .process import (LOG_2PI, ProcessCorr, a_site_sweep, a_sites_of_b, alpha0_conditional,
                      alpha1_conditional, b_site_sweep, draw_inv_gamma, expit,
                      log_uniform01_on_logit, logit, process_loglik, sigma2_A_conditional,
                      ssvs_eta_logodds)
from .summaries import Chain

log = logging.getLogger(__name__)


class StaleFactorError(RuntimeError):
    pass


class NonFiniteLikelihood(FloatingPointError):
    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class OverlappingWindowsError(ValueError):
    pass


# -- parameters -----------------------------------------------------------------------

@dataclass
class HierPriors:
    beta0_var: float = 1000.0 ** 2
    mu_beta_mean_A: float = 0.0
    mu_beta_mean_B: float = 0.0
    mu_beta_var: float = 1000.0 ** 2
    a_A: float = 3.0
    b_A: float = 1.0
    a_B: float = 3.0
    b_B: float = 1.0
    log_psi_var: float = 100.0
    log_rho_pix_var: float = 100.0
    log_rho_var: float = 100.0
    sigma2_shape: float = 0.01
    sigma2_rate: float = 0.01
    sigma2_A_shape: float = 0.01
    sigma2_A_rate: float = 0.01
    sigma2_B_shape: float = 0.01
    sigma2_B_rate: float = 0.01
    alpha_var: float = 1000.0 ** 2
    ssvs: bool = False
    slab_var: float = 10.0 ** 2
    incl_prob: float = 0.5

    def __post_init__(self):
        for t in "AB":
            a, b = getattr(self, f"a_{t}"), getattr(self, f"b_{t}")
            if not (a > 2 and b > 0):
                raise ValueError(f"need a_{t} > 2 and b_{t} > 0 (got {a}, {b})")

    @staticmethod
    def beta_variance_hyper(beta_hat, prior_var: float = 25.0 ** 2):
        """Inverse-gamma ``(a, b)`` centred on the sample variance of ``beta_hat``."""
        s2 = float(np.var(beta_hat, ddof=1))
        a = s2 / prior_var + 2.0
        b = s2 * (s2 / prior_var + 1.0)
        return a, b

    @classmethod
    def from_ols(cls, beta_hat_A, beta_hat_B, prior_var: float = 25.0 ** 2, **kw):
        a_A, b_A = cls.beta_variance_hyper(beta_hat_A, prior_var)
        a_B, b_B = cls.beta_variance_hyper(beta_hat_B, prior_var)
        return cls(mu_beta_mean_A=float(np.mean(beta_hat_A)),
                   mu_beta_mean_B=float(np.mean(beta_hat_B)),
                   a_A=a_A, b_A=b_A, a_B=a_B, b_B=b_B, **kw)


@dataclass
class HierState:
    beta0: float
    beta_A: np.ndarray
    beta_B: np.ndarray
    mu_beta_A: float
    mu_beta_B: float
    var_beta_A: float
    var_beta_B: float
    psi_A: float
    psi_B: float
    sigma2: float
    r_pix: float
    rho_pix: float
    s_A: np.ndarray
    s_B: np.ndarray
    alpha0: float
    alpha1: float
    sigma2_A: float
    sigma2_B: float
    r: float
    rho: float
    gamma: float = 0.0
    eta: int = 1

    def copy(self) -> "HierState":
        return replace(self, beta_A=self.beta_A.copy(), beta_B=self.beta_B.copy(),
                       s_A=self.s_A.copy(), s_B=self.s_B.copy())

    def n_free(self) -> int:
        """Scalar degrees of freedom: three per site plus sixteen globals."""
        return 3 * (len(self.beta_A) + len(self.beta_B)) + 16

    def check(self):
        for name in ("var_beta_A", "var_beta_B", "psi_A", "psi_B", "sigma2", "rho_pix",
                     "sigma2_A", "sigma2_B", "rho"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("r_pix", "r"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


SCALARS = ("beta0", "sigma2", "mu_beta_A", "mu_beta_B", "var_beta_A", "var_beta_B",
           "psi_A", "psi_B", "r_pix", "rho_pix", "alpha0", "alpha1", "sigma2_A",
           "sigma2_B", "r", "rho")


# -- data --------------------------------------------------------------------------------

@dataclass
class HierData:
    """Pixel windows for both site types, the lattice and the A-A distances."""

    centers_A: np.ndarray  # (N_A, 2) integer pixel centres
    Y_A: np.ndarray        # (N_A, M_A)
    h_A: int
    centers_B: np.ndarray
    Y_B: np.ndarray
    h_B: int
    geometry: LatticeGeometry
    a_dist: np.ndarray     # (N_A, N_A)

    @classmethod
    def from_image(cls, img, init_A, init_B, geometry, h_A=6, h_B=5, a_coords=None):
        wa = [window_at(img, s, h_A, j) for j, s in enumerate(np.asarray(init_A))]
        wb = [window_at(img, s, h_B, k) for k, s in enumerate(np.asarray(init_B))]
        if not check_disjoint(wa + wb):
            raise OverlappingWindowsError("site windows overlap; reduce the half-widths")
        return cls.from_windows(wa, wb, geometry, a_coords)

    @classmethod
    def from_windows(cls, windows_A, windows_B, geometry, a_coords=None):
        def stack(ws, h_default):
            if not ws:
                return np.zeros((0, 2), int), np.zeros((0, (2 * h_default + 1) ** 2)), h_default
            h = ws[0].half_width
            c = np.array([w.center_pixel for w in ws], dtype=int)
            return c, np.vstack([w.values for w in ws]), h

        cA, yA, hA = stack(windows_A, 0)
        cB, yB, hB = stack(windows_B, 0)
        if a_coords is None:
            a_coords = geometry.a_expected()
        return cls(cA, yA, hA, cB, yB, hB, geometry, pairwise_distances(a_coords))

    @property
    def n_A(self) -> int:
        return self.Y_A.shape[0]

    @property
    def n_B(self) -> int:
        return self.Y_B.shape[0]

    def windows(self, site_type: str) -> list[Window]:
        centers, Y, h = ((self.centers_A, self.Y_A, self.h_A) if site_type == "A"
                         else (self.centers_B, self.Y_B, self.h_B))
        off = window_offsets(h)
        return [Window(j, h, tuple(int(v) for v in c), off + c, y)
                for j, (c, y) in enumerate(zip(centers, Y))]


# -- block likelihood ---------------------------------------------------------------------

@dataclass(frozen=True)
class PixelFactor:
    """Cholesky factor of the within-window correlation for one half-width."""

    half_width: int
    r_pix: float
    rho_pix: float
    factor: CovFactor

    @classmethod
    def build(cls, half_width, r_pix, rho_pix):
        off = window_offsets(half_width)
        corr = exp_corr_from_dist(pairwise_distances(off), r_pix, rho_pix)
        return cls(int(half_width), float(r_pix), float(rho_pix), factorize(corr))


def block_loglik(windows, locations, betas, psis, beta0, sigma2, r_pix, rho_pix, factors) -> float:
    """Sum of independent per-window Gaussian log densities.

    ``factors`` maps half-width to a :class:`PixelFactor`; each must match the
    current ``(r_pix, rho_pix)``.
    """
    total = 0.0
    for w, s, b, psi in zip(windows, locations, betas, psis):
        pf = factors[w.half_width]
        if pf.r_pix != r_pix or pf.rho_pix != rho_pix:
            raise StaleFactorError("pixel correlation changed without refactorisation")
        diff = w.coords - np.asarray(s, dtype=float)
        mu = beta0 + b * np.exp(-np.sum(diff * diff, axis=1) / (2.0 * psi * psi))
        z = pf.factor.whiten(w.values - mu)
        m = w.values.shape[0]
        total += -0.5 * float(z @ z) / sigma2 - 0.5 * (m * np.log(sigma2) + pf.factor.log_det
                                                       + m * LOG_2PI)
    return total


class _Block:
    """Cached whitened quantities for all windows of one site type."""

    def __init__(self, centers, Y, h):
        self.centers = np.asarray(centers, dtype=float)
        self.Y = np.asarray(Y, dtype=float)
        self.h = int(h)
        self.offsets = window_offsets(self.h)
        self.dist = pairwise_distances(self.offsets)
        self.n, self.m = self.Y.shape

    def set_corr(self, r_pix, rho_pix):
        self.pf = PixelFactor(self.h, float(r_pix), float(rho_pix),
                              factorize(exp_corr_from_dist(self.dist, r_pix, rho_pix)))
        # explicit inverse factor: whitening many columns becomes one matmul
        self.Linv, info = dtrtri(self.pf.factor.lower, lower=1)
        if info != 0:
            raise FloatingPointError("singular pixel correlation factor")
        self.Yw = self.Linv @ self.Y.T
        self.onew = self.Linv.sum(axis=1)
        self.oo = float(self.onew @ self.onew)
        if hasattr(self, "X"):
            self.Xw = self.whiten_kernel(self.X)

    def kernel(self, s, psi):
        return kernel_rows(self.offsets, s - self.centers, psi)

    def whiten_kernel(self, X):
        return self.Linv @ X.T

    def set_kernel(self, s, psi):
        self.X = self.kernel(s, psi)
        self.Xw = self.whiten_kernel(self.X)

    def quads(self, beta0, beta, Xw=None):
        Xw = self.Xw if Xw is None else Xw
        R = self.Yw - beta0 * self.onew[:, None] - Xw * beta[None, :]
        return np.einsum("ij,ij->j", R, R)

    def loglik(self, q, sigma2):
        return float(-0.5 * np.sum(q) / sigma2
                     - 0.5 * self.n * (self.m * np.log(sigma2) + self.pf.factor.log_det
                                       + self.m * LOG_2PI))

    def inside(self, s):
        rel = s - self.centers
        return np.all(np.abs(rel) <= self.h, axis=1)


# -- sampler ------------------------------------------------------------------------------------

DEFAULT_STEPS = {"loc_A": 0.1, "loc_B": 0.1, "psi_A": 0.01, "psi_B": 0.01,
                 "pix": 0.05, "proc": 0.3}


class HierSampler:
    def __init__(self, data: HierData, priors: HierPriors, state: HierState,
                 rng: np.random.Generator, steps: dict | None = None,
                 hastings: bool = True):
        state.check()
        self.data = data
        self.priors = priors
        self.state = state.copy()
        self.rng = rng
        self.steps = dict(DEFAULT_STEPS)
        if steps:
            self.steps.update(steps)
        self.hastings = hastings
        g = data.geometry
        self.nbr = np.ascontiguousarray(g.neighbor_map, dtype=np.int64)
        self.a_of_b = a_sites_of_b(self.nbr, g.n_b)
        self.b_means = g.b_grid_means
        self.A = _Block(data.centers_A, data.Y_A, data.h_A)
        self.B = _Block(data.centers_B, data.Y_B, data.h_B)
        self.corr = ProcessCorr(data.a_dist, state.r, state.rho)
        self.counts = {k: [0, 0] for k in list(self.steps) + ["beta_B"]}
        self.prop_chol = {"pix": np.eye(2), "proc": np.eye(2)}
        self.shaped = {"pix": False, "proc": False}
        self.history = {"pix": [], "proc": []}
        self.adapting = False
        self._refresh_pixels()
        self._refresh_process()

    # -- cache maintenance ---------------------------------------------------------
    def _refresh_pixels(self, kernels=True):
        st = self.state
        for blk, s, psi, beta in ((self.A, st.s_A, st.psi_A, st.beta_A),
                                  (self.B, st.s_B, st.psi_B, st.beta_B)):
            blk.set_corr(st.r_pix, st.rho_pix)
            if kernels:
                blk.set_kernel(s, psi)
            blk.q = blk.quads(st.beta0, beta)

    def _refresh_process(self):
        st = self.state
        self.delta, self.psi = displacement_and_covariate(st.s_A, st.s_B, st.beta_B, self.nbr)
        self.e = np.ascontiguousarray(self.delta - st.alpha0 - st.alpha1 * self.psi)
        self.Pe = np.ascontiguousarray(self.corr.Rinv @ self.e)

    def _tally(self, name, acc, n=1):
        c = self.counts[name]
        c[0] += int(acc)
        c[1] += n

    # -- likelihood pieces ------------------------------------------------------------
    def block_loglik(self) -> float:
        st = self.state
        for blk in (self.A, self.B):
            if blk.pf.r_pix != st.r_pix or blk.pf.rho_pix != st.rho_pix:
                raise StaleFactorError("pixel correlation changed without refactorisation")
        return self.A.loglik(self.A.q, st.sigma2) + self.B.loglik(self.B.q, st.sigma2)

    def process_loglik(self) -> float:
        return process_loglik(self.e, self.corr, self.state.sigma2_A)

    # -- data-layer Gibbs steps ------------------------------------------------------------
    def beta0_conditional(self):
        st, A, B = self.state, self.A, self.B
        V = 1.0 / self.priors.beta0_var + (A.n * A.oo + B.n * B.oo) / st.sigma2
        M = 0.0
        for blk, beta in ((A, st.beta_A), (B, st.beta_B)):
            if blk.n:
                M += float(blk.onew @ (blk.Yw - blk.Xw * beta[None, :]).sum(axis=1))
        M /= st.sigma2
        return M / V, 1.0 / V

    def update_beta0(self):
        mean, var = self.beta0_conditional()
        st = self.state
        st.beta0 = mean + np.sqrt(var) * self.rng.standard_normal()
        self.A.q = self.A.quads(st.beta0, st.beta_A)
        self.B.q = self.B.quads(st.beta0, st.beta_B)

    def sigma2_conditional(self):
        pr = self.priors
        n_pix = self.A.n * self.A.m + self.B.n * self.B.m
        return pr.sigma2_shape + 0.5 * n_pix, pr.sigma2_rate + 0.5 * float(self.A.q.sum() + self.B.q.sum())

    def update_sigma2(self):
        shape, rate = self.sigma2_conditional()
        self.state.sigma2 = draw_inv_gamma(self.rng, shape, rate)

    def _beta_data_conditional(self, blk, mu, var):
        st = self.state
        xx = np.einsum("ij,ij->j", blk.Xw, blk.Xw)
        xy = np.einsum("ij,ij->j", blk.Xw, blk.Yw - st.beta0 * blk.onew[:, None])
        V = xx / st.sigma2 + 1.0 / var
        M = xy / st.sigma2 + mu / var
        return M / V, 1.0 / V

    def beta_A_conditional(self):
        st = self.state
        return self._beta_data_conditional(self.A, st.mu_beta_A, st.var_beta_A)

    def update_beta_A(self):
        if not self.A.n:
            return
        mean, var = self.beta_A_conditional()
        st = self.state
        st.beta_A = mean + np.sqrt(var) * self.rng.standard_normal(self.A.n)
        self.A.q = self.A.quads(st.beta0, st.beta_A)

    def beta_B_proposal(self):
        st = self.state
        return self._beta_data_conditional(self.B, st.mu_beta_B, st.var_beta_B)

    def update_beta_B(self):
        st, B = self.state, self.B
        if not B.n:
            return
        m, v = self.beta_B_proposal()
        prop = m + np.sqrt(v) * self.rng.standard_normal(B.n)
        log_u = np.log(self.rng.uniform(size=B.n))
        q_new = B.quads(st.beta0, prop)
        log_target = (-0.5 * (q_new - B.q) / st.sigma2
                      - 0.5 * ((prop - st.mu_beta_B) ** 2 - (st.beta_B - st.mu_beta_B) ** 2)
                      / st.var_beta_B)
        log_base = log_target
        if self.hastings:
            log_q = -0.5 * ((prop - m) ** 2 - (st.beta_B - m) ** 2) / v
            log_base = log_target - log_q
        acc = b_site_sweep(log_base, log_u, st.s_B, st.beta_B, st.s_B.copy(), prop,
                           st.s_A, self.e, self.Pe, self.corr.Rinv, self.nbr, self.a_of_b,
                           st.alpha0, st.alpha1, 1.0 / st.sigma2_A)
        B.q[acc] = q_new[acc]
        self._tally("beta_B", acc.sum(), B.n)
        self._refresh_process()

    # -- locations -------------------------------------------------------------------------
    def _location_proposal(self, blk, s, psi, beta, step):
        st = self.state
        prop = s + step * self.rng.standard_normal(s.shape)
        log_u = np.log(self.rng.uniform(size=blk.n))
        inside = blk.inside(prop)
        X_new = blk.kernel(prop, psi)
        Xw_new = blk.whiten_kernel(X_new)
        q_new = blk.quads(st.beta0, beta, Xw_new)
        log_base = np.where(inside, -0.5 * (q_new - blk.q) / st.sigma2, -np.inf)
        return prop, log_u, X_new, Xw_new, q_new, log_base

    def _commit_locations(self, blk, acc, X_new, Xw_new, q_new):
        blk.X[acc] = X_new[acc]
        blk.Xw[:, acc] = Xw_new[:, acc]
        blk.q[acc] = q_new[acc]

    def update_locations_A(self):
        st, A = self.state, self.A
        if not A.n:
            return
        prop, log_u, X_new, Xw_new, q_new, log_base = self._location_proposal(
            A, st.s_A, st.psi_A, st.beta_A, self.steps["loc_A"])
        d = np.ascontiguousarray(prop - st.s_A)
        acc = a_site_sweep(log_base, d, log_u, self.e, self.Pe, self.corr.Rinv,
                           1.0 / st.sigma2_A)
        st.s_A[acc] = prop[acc]
        self._commit_locations(A, acc, X_new, Xw_new, q_new)
        self.delta[acc] += d[acc]
        self._tally("loc_A", acc.sum(), A.n)

    def update_locations_B(self):
        st, B = self.state, self.B
        if not B.n:
            return
        prop, log_u, X_new, Xw_new, q_new, log_base = self._location_proposal(
            B, st.s_B, st.psi_B, st.beta_B, self.steps["loc_B"])
        log_base = log_base - 0.5 * (np.sum((prop - self.b_means) ** 2, axis=1)
                                     - np.sum((st.s_B - self.b_means) ** 2, axis=1)) / st.sigma2_B
        acc = b_site_sweep(log_base, log_u, st.s_B, st.beta_B, np.ascontiguousarray(prop),
                           st.beta_B.copy(), st.s_A, self.e, self.Pe, self.corr.Rinv,
                           self.nbr, self.a_of_b, st.alpha0, st.alpha1, 1.0 / st.sigma2_A)
        self._commit_locations(B, acc, X_new, Xw_new, q_new)
        self._tally("loc_B", acc.sum(), B.n)
        self._refresh_process()

    # -- process layer ----------------------------------------------------------------------
    def alpha0_conditional(self):
        st = self.state
        return alpha0_conditional(self.delta, self.psi, st.alpha1, self.corr.Rinv,
                                  st.sigma2_A, self.priors.alpha_var)

    def alpha1_conditional(self, prior_var=None):
        st = self.state
        pv = self.priors.alpha_var if prior_var is None else prior_var
        return alpha1_conditional(self.delta, self.psi, st.alpha0, self.corr.Rinv,
                                  st.sigma2_A, pv)

    def sigma2_A_conditional(self):
        st = self.state
        resid = self.delta - st.alpha0 - st.alpha1 * self.psi
        return sigma2_A_conditional(resid, self.corr.Rinv, self.priors.sigma2_A_shape,
                                    self.priors.sigma2_A_rate)

    def update_process_regression(self):
        st, rng = self.state, self.rng
        if not self.A.n:
            return
        m, v = self.alpha0_conditional()
        st.alpha0 = m + np.sqrt(v) * rng.standard_normal()
        if not self.priors.ssvs:
            m, v = self.alpha1_conditional()
            st.alpha1 = m + np.sqrt(v) * rng.standard_normal()
        shape, rate = self.sigma2_A_conditional()
        st.sigma2_A = draw_inv_gamma(rng, shape, rate)
        self._refresh_process()

    def update_ssvs(self):
        st, rng, pr = self.state, self.rng, self.priors
        lo = ssvs_eta_logodds(self.delta, self.psi, st.alpha0, st.gamma, self.corr.Rinv,
                              st.sigma2_A, pr.incl_prob)
        st.eta = int(rng.uniform() < expit(lo))
        if st.eta:
            m, v = self.alpha1_conditional(prior_var=pr.slab_var)
            st.gamma = m + np.sqrt(v) * rng.standard_normal()
        else:
            st.gamma = np.sqrt(pr.slab_var) * rng.standard_normal()
        st.alpha1 = st.gamma * st.eta
        self._refresh_process()

    def _joint_step(self, name, x):
        """Random-walk proposal for a two-parameter block on its unconstrained scale."""
        return x + self.steps[name] * (self.prop_chol[name] @ self.rng.standard_normal(2))

    def update_process_corr(self):
        st, rng = self.state, self.rng
        if not self.A.n:
            return
        x = np.array([logit(st.r), np.log(st.rho)])
        x_new = self._joint_step("proc", x)
        log_u = np.log(rng.uniform())
        r_new, rho_new = float(expit(x_new[0])), float(np.exp(x_new[1]))
        ok = False
        if 0.0 < r_new < 1.0 and np.isfinite(rho_new) and rho_new > 0.0:
            new = self.corr.with_params(r_new, rho_new)
            ratio = (process_loglik(self.e, new, st.sigma2_A)
                     - process_loglik(self.e, self.corr, st.sigma2_A)
                     + log_uniform01_on_logit(x_new[0]) - log_uniform01_on_logit(x[0])
                     - 0.5 * (x_new[1] ** 2 - x[1] ** 2) / self.priors.log_rho_var)
            ok = log_u < ratio
            if ok:
                self.corr = new
                st.r, st.rho = new.r, new.rho
                self.Pe = np.ascontiguousarray(new.Rinv @ self.e)
        self._tally("proc", ok)
        self._record("proc", (logit(st.r), np.log(st.rho)))

    # -- hyperparameters ----------------------------------------------------------------------
    def mu_beta_conditional(self, t):
        st, pr = self.state, self.priors
        beta = st.beta_A if t == "A" else st.beta_B
        var = st.var_beta_A if t == "A" else st.var_beta_B
        m0 = pr.mu_beta_mean_A if t == "A" else pr.mu_beta_mean_B
        V = 1.0 / pr.mu_beta_var + beta.size / var
        M = m0 / pr.mu_beta_var + beta.sum() / var
        return M / V, 1.0 / V

    def var_beta_conditional(self, t):
        st, pr = self.state, self.priors
        beta = st.beta_A if t == "A" else st.beta_B
        mu = st.mu_beta_A if t == "A" else st.mu_beta_B
        a, b = (pr.a_A, pr.b_A) if t == "A" else (pr.a_B, pr.b_B)
        return a + 0.5 * beta.size, b + 0.5 * float(np.sum((beta - mu) ** 2))

    def sigma2_B_conditional(self):
        st, pr = self.state, self.priors
        ss = float(np.sum((st.s_B - self.b_means) ** 2))
        return pr.sigma2_B_shape + st.s_B.shape[0], pr.sigma2_B_rate + 0.5 * ss

    def update_hyper(self):
        st, rng = self.state, self.rng
        for t in "AB":
            m, v = self.mu_beta_conditional(t)
            setattr(st, f"mu_beta_{t}", m + np.sqrt(v) * rng.standard_normal())
            shape, rate = self.var_beta_conditional(t)
            setattr(st, f"var_beta_{t}", draw_inv_gamma(rng, shape, rate))
        shape, rate = self.sigma2_B_conditional()
        st.sigma2_B = draw_inv_gamma(rng, shape, rate)

    # -- bandwidths and pixel correlation -------------------------------------------------------
    def update_psi(self, t):
        st, rng = self.state, self.rng
        blk = self.A if t == "A" else self.B
        name = f"psi_{t}"
        x = np.log(getattr(st, name))
        x_new = x + self.steps[name] * rng.standard_normal()
        log_u = np.log(rng.uniform())
        if not blk.n:
            return
        s = st.s_A if t == "A" else st.s_B
        beta = st.beta_A if t == "A" else st.beta_B
        X_new = blk.kernel(s, np.exp(x_new))
        Xw_new = blk.whiten_kernel(X_new)
        q_new = blk.quads(st.beta0, beta, Xw_new)
        ratio = (-0.5 * (q_new.sum() - blk.q.sum()) / st.sigma2
                 - 0.5 * (x_new ** 2 - x ** 2) / self.priors.log_psi_var)
        ok = log_u < ratio
        if ok:
            setattr(st, name, float(np.exp(x_new)))
            blk.X, blk.Xw, blk.q = X_new, Xw_new, q_new
        self._tally(name, ok)

    def update_pixel_corr(self):
        st, rng = self.state, self.rng
        x = np.array([logit(st.r_pix), np.log(st.rho_pix)])
        x_new = self._joint_step("pix", x)
        log_u = np.log(rng.uniform())
        r_new, rho_new = float(expit(x_new[0])), float(np.exp(x_new[1]))
        ok = False
        if 0.0 < r_new < 1.0 and np.isfinite(rho_new) and rho_new > 0.0:
            old = (self.A.__dict__.copy(), self.B.__dict__.copy())
            ll_old = self.A.loglik(self.A.q, st.sigma2) + self.B.loglik(self.B.q, st.sigma2)
            saved = (st.r_pix, st.rho_pix)
            st.r_pix, st.rho_pix = r_new, rho_new
            self._refresh_pixels(kernels=False)
            ll_new = self.A.loglik(self.A.q, st.sigma2) + self.B.loglik(self.B.q, st.sigma2)
            ratio = (ll_new - ll_old
                     + log_uniform01_on_logit(x_new[0]) - log_uniform01_on_logit(x[0])
                     - 0.5 * (x_new[1] ** 2 - x[1] ** 2) / self.priors.log_rho_pix_var)
            ok = log_u < ratio
            if not ok:
                st.r_pix, st.rho_pix = saved
                self.A.__dict__.update(old[0])
                self.B.__dict__.update(old[1])
        self._tally("pix", ok)
        self._record("pix", (logit(st.r_pix), np.log(st.rho_pix)))

    def _record(self, name, x):
        if self.adapting:
            self.history[name].append(x)

    # -- driver --------------------------------------------------------------------------------
    def sweep(self):
        self.update_beta0()
        self.update_sigma2()
        self.update_beta_A()
        self.update_beta_B()
        self.update_locations_A()
        self.update_locations_B()
        self.update_process_regression()
        self.update_process_corr()
        self.update_hyper()
        self.update_psi("A")
        self.update_psi("B")
        self.update_pixel_corr()
        if self.priors.ssvs:
            self.update_ssvs()

    def _adapt(self, window_counts):
        for name in self.steps:
            acc, n = window_counts[name]
            if n == 0:
                continue
            rate = acc / n
            if rate < 0.30:
                self.steps[name] *= 0.75
            elif rate > 0.45:
                self.steps[name] *= 1.25
        # two-parameter blocks: proposal shape from the burn-in draws so far
        for name, hist in self.history.items():
            if len(hist) < 100:
                continue
            cov = np.cov(np.asarray(hist[len(hist) // 2:]).T)
            if len(hist) // 2 < 100 or not np.all(np.isfinite(cov)):
                continue
            try:
                chol = np.linalg.cholesky(cov + 1e-10 * np.eye(2))
            except np.linalg.LinAlgError:
                continue
            if not self.shaped[name]:
                self.steps[name] = 2.38 / np.sqrt(2.0)
                self.shaped[name] = True
            self.prop_chol[name] = chol

    def _check_finite(self):
        ll = self.block_loglik() + self.process_loglik()
        if not np.isfinite(ll):
            raise NonFiniteLikelihood("non-finite log-likelihood", asdict(self.state))

    def run(self, n_iter: int, burn_in: int, thin: int = 1, adapt_every: int = 50,
            record_sites: bool = False, adapt: bool = True) -> Chain:
        if not 0 <= burn_in < n_iter or thin < 1:
            raise ValueError("need 0 <= burn_in < n_iter and thin >= 1")
        names = list(SCALARS) + ["sigma", "sigma_A"]
        if self.priors.ssvs:
            names += ["gamma", "eta"]
        n_keep = (n_iter - burn_in) // thin
        draws = {k: np.empty(n_keep) for k in names}
        site_keys = ("s_A", "s_B", "beta_A", "beta_B")
        sums = {k: np.zeros_like(getattr(self.state, k), dtype=float) for k in site_keys}
        sq = {k: np.zeros_like(getattr(self.state, k), dtype=float) for k in site_keys}
        site_draws = {k: np.empty((n_keep,) + getattr(self.state, k).shape) for k in ("s_A", "s_B")} \
            if record_sites else {}
        snap = {k: list(v) for k, v in self.counts.items()}
        kept = 0
        for it in range(1, n_iter + 1):
            self.adapting = adapt and it <= burn_in
            self.sweep()
            if self.adapting and it % adapt_every == 0:
                win = {k: (self.counts[k][0] - snap[k][0], self.counts[k][1] - snap[k][1])
                       for k in self.counts}
                self._adapt(win)
                snap = {k: list(v) for k, v in self.counts.items()}
            if it == burn_in:
                self._check_finite()
                self.counts = {k: [0, 0] for k in self.counts}
                snap = {k: [0, 0] for k in self.counts}
            if it > burn_in and (it - burn_in) % thin == 0 and kept < n_keep:
                st = self.state
                for k in SCALARS:
                    draws[k][kept] = getattr(st, k)
                draws["sigma"][kept] = np.sqrt(st.sigma2)
                draws["sigma_A"][kept] = np.sqrt(st.sigma2_A)
                if self.priors.ssvs:
                    draws["gamma"][kept] = st.gamma
                    draws["eta"][kept] = st.eta
                for k in site_keys:
                    v = getattr(st, k)
                    sums[k] += v
                    sq[k] += v * v
                for k in site_draws:
                    site_draws[k][kept] = getattr(st, k)
                kept += 1
        self._check_finite()
        acc = {k: (c[0] / c[1] if c[1] else float("nan")) for k, c in self.counts.items()}
        site_means = {}
        for k in site_keys:
            mean = sums[k] / max(kept, 1)
            site_means[k] = mean
            site_means[k + "_sd"] = np.sqrt(np.maximum(sq[k] / max(kept, 1) - mean * mean, 0.0))
        return Chain(draws, burn_in, n_iter, thin, acc, None, site_means, site_draws)


# -- initialisation ---------------------------------------------------------------------------------

def ols_intensities(blk_Y, centers, h, s, psi):
    """Per-window OLS of pixel values on ``[1, kernel]``; returns ``(b0, beta)``."""
    off = window_offsets(h)
    X = kernel_rows(off, np.asarray(s, float) - np.asarray(centers, float), psi)
    xm = X.mean(axis=1, keepdims=True)
    ym = blk_Y.mean(axis=1, keepdims=True)
    beta = np.sum((X - xm) * (blk_Y - ym), axis=1) / np.sum((X - xm) ** 2, axis=1)
    b0 = (ym - beta[:, None] * xm).ravel()
    return b0, beta


def initial_state(data: HierData, s_A, s_B, psi_A=None, psi_B=None, fits_A=None, fits_B=None,
                  prior_var: float = 25.0 ** 2, **prior_kw):
    """Starting state and OLS-grounded priors from detected locations."""
    s_A = np.asarray(s_A, dtype=float).copy()
    s_B = np.asarray(s_B, dtype=float).copy()
    if psi_A is None:
        psi_A = float(np.mean([np.sqrt(f.sigma1 * f.sigma2) for f in fits_A])) / np.sqrt(2.0)
    if psi_B is None:
        psi_B = float(np.mean([np.sqrt(f.sigma1 * f.sigma2) for f in fits_B])) / np.sqrt(2.0)
    b0A, bA = ols_intensities(data.Y_A, data.centers_A, data.h_A, s_A, psi_A)
    b0B, bB = ols_intensities(data.Y_B, data.centers_B, data.h_B, s_B, psi_B)
    beta0 = float(np.median(np.concatenate([b0A, b0B])))
    priors = HierPriors.from_ols(bA, bB, prior_var, **prior_kw)

    resid = []
    for Y, c, h, s, psi, b in ((data.Y_A, data.centers_A, data.h_A, s_A, psi_A, bA),
                               (data.Y_B, data.centers_B, data.h_B, s_B, psi_B, bB)):
        X = kernel_rows(window_offsets(h), s - c, psi)
        resid.append((Y - beta0 - b[:, None] * X).ravel())
    sigma2 = float(np.var(np.concatenate(resid)))

    geom = data.geometry
    delta, psi = displacement_and_covariate(s_A, s_B, bB, geom.neighbor_map)
    x = psi.ravel()
    y = delta.ravel()
    design = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    sigma2_A = float(np.var(y - design @ coef))
    sigma2_B = max(float(np.mean((s_B - geom.b_grid_means) ** 2)), 1e-4)
    state = HierState(
        beta0=beta0, beta_A=bA.copy(), beta_B=bB.copy(),
        mu_beta_A=float(bA.mean()), mu_beta_B=float(bB.mean()),
        var_beta_A=float(np.var(bA, ddof=1)), var_beta_B=float(np.var(bB, ddof=1)),
        psi_A=float(psi_A), psi_B=float(psi_B), sigma2=sigma2, r_pix=0.5, rho_pix=3.0,
        s_A=s_A, s_B=s_B, alpha0=float(coef[0]), alpha1=float(coef[1]),
        sigma2_A=max(sigma2_A, 1e-4), sigma2_B=sigma2_B, r=0.5,
        rho=float(2.0 * geom.spacing), gamma=float(coef[1]), eta=1)
    return state, priors


def run_hier_mcmc(data: HierData, state: HierState, priors: HierPriors, n_iter: int,
                  burn_in: int, thin: int = 1, seed: int = 0, steps=None,
                  record_sites: bool = False) -> Chain:
    rng = np.random.default_rng(seed)
    sampler = HierSampler(data, priors, state, rng, steps)
    chain = sampler.run(n_iter, burn_in, thin, record_sites=record_sites)
    chain.seed = seed
    return chain


def hier_data_from_fits(img, fits_A, fits_B, geometry, h_A=6, h_B=5):
    s_A = np.array([f.center for f in fits_A])
    s_B = np.array([f.center for f in fits_B])
    return HierData.from_image(img, s_A, s_B, geometry, h_A, h_B), s_A, s_B


__all__ = ["HierPriors", "HierState", "HierData", "HierSampler", "PixelFactor", "block_loglik",
           "initial_state", "run_hier_mcmc", "hier_data_from_fits", "StaleFactorError",
           "NonFiniteLikelihood", "OverlappingWindowsError"]
