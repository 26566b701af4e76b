"""Exponential covariance with a nugget, Cholesky factors and variograms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from .imaging import pairwise_distances


class FactorizationError(np.linalg.LinAlgError):
    def __init__(self, pivot: int):
        super().__init__(f"matrix is not positive definite (pivot {pivot})")
        self.pivot = pivot


class VariogramFitError(RuntimeError):
    def __init__(self, message, params=None):
        super().__init__(message)
        self.params = params


@dataclass(frozen=True)
class ExpCovParams:
    """Total variance ``sigma2``, spatial share ``r`` and range ``rho``."""

    sigma2: float
    r: float
    rho: float

    def __post_init__(self):
        if not (self.sigma2 > 0 and np.isfinite(self.sigma2)):
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if not 0.0 <= self.r <= 1.0:
            raise ValueError(f"r must lie in [0, 1], got {self.r}")
        if not (self.rho > 0 and np.isfinite(self.rho)):
            raise ValueError(f"rho must be positive, got {self.rho}")


def exp_corr_from_dist(dist: np.ndarray, r: float, rho: float) -> np.ndarray:
    """Correlation matrix ``(1-r) I + r exp(-d/rho)`` from a distance matrix."""
    c = r * np.exp(-dist / rho)
    c[np.diag_indices_from(c)] = 1.0
    # exact symmetry regardless of how `dist` was produced
    c += c.T
    c *= 0.5
    return c


def exp_cov_matrix(coords, params: ExpCovParams) -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[0] == 0 or not np.all(np.isfinite(coords)):
        raise ValueError("coords must be a non-empty finite (n, d) array")
    return params.sigma2 * exp_corr_from_dist(pairwise_distances(coords), params.r, params.rho)


@dataclass(frozen=True)
class CovFactor:
    lower: np.ndarray
    log_det: float

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def whiten(self, v: np.ndarray) -> np.ndarray:
        """``L^{-1} v`` for a vector or for the columns of a matrix."""
        return linalg.solve_triangular(self.lower, v, lower=True, check_finite=False)

    def solve(self, v: np.ndarray) -> np.ndarray:
        return linalg.cho_solve((self.lower, True), v, check_finite=False)

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.dim))


def factorize(cov) -> CovFactor:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError("covariance must be square")
    lower, info = linalg.lapack.dpotrf(cov, lower=1, clean=1)
    if info > 0:
        raise FactorizationError(int(info) - 1)
    if info < 0:
        raise ValueError(f"illegal argument to dpotrf ({info})")
    log_det = 2.0 * float(np.sum(np.log(np.diag(lower))))
    lower.setflags(write=False)
    return CovFactor(lower, log_det)


def quad_form(factor: CovFactor, v) -> float:
    """``v' C^{-1} v`` through one triangular solve."""
    v = np.asarray(v, dtype=float)
    if v.shape != (factor.dim,):
        raise ValueError(f"expected vector of length {factor.dim}, got {v.shape}")
    z = factor.whiten(v)
    return float(z @ z)


def bilinear_form(factor: CovFactor, u, v) -> float:
    """``u' C^{-1} v``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != (factor.dim,) or v.shape != (factor.dim,):
        raise ValueError("dimension mismatch")
    return float(factor.whiten(u) @ factor.whiten(v))


def sample_mvn(mean, factor: CovFactor, rng: np.random.Generator, size=None) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    if mean.shape != (factor.dim,):
        raise ValueError("dimension mismatch")
    if size is None:
        return mean + factor.lower @ rng.standard_normal(factor.dim)
    z = rng.standard_normal((size, factor.dim))
    return mean + z @ factor.lower.T


# -- variograms -----------------------------------------------------------------

@dataclass(frozen=True)
class VariogramEstimate:
    bin_centers: np.ndarray
    semivariances: np.ndarray  # NaN where a bin is empty
    counts: np.ndarray

    def valid(self) -> np.ndarray:
        return self.counts > 0


def empirical_variogram(coords, residuals, n_bins: int = 15, max_dist=None) -> VariogramEstimate:
    """Matheron estimator on equal-width distance bins.

    By default the bins run to half the largest pairwise distance.
    """
    coords = np.asarray(coords, dtype=float)
    resid = np.asarray(residuals, dtype=float)
    if coords.shape[0] < 2 or coords.shape[0] != resid.shape[0]:
        raise ValueError("need at least two points with one residual each")
    iu = np.triu_indices(coords.shape[0], k=1)
    d = pairwise_distances(coords)[iu]
    sq = (resid[iu[0]] - resid[iu[1]]) ** 2
    if max_dist is None:
        max_dist = 0.5 * d.max()
    if not max_dist > 0:
        raise ValueError("max_dist must be positive")
    edges = np.linspace(0.0, max_dist, n_bins + 1)
    idx = np.searchsorted(edges, d, side="right") - 1
    # the closing edge belongs to the last bin
    idx[d == max_dist] = n_bins - 1
    keep = (idx >= 0) & (idx < n_bins)
    counts = np.bincount(idx[keep], minlength=n_bins)
    sums = np.bincount(idx[keep], weights=sq[keep], minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = np.where(counts > 0, sums / (2.0 * counts), np.nan)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return VariogramEstimate(centers, gamma, counts)


def exp_semivariogram(d, params: ExpCovParams):
    """Semivariance of the nugget + exponential model at lag ``d > 0``."""
    d = np.asarray(d, dtype=float)
    return params.sigma2 * ((1.0 - params.r) + params.r * (1.0 - np.exp(-d / params.rho)))


def fit_exp_variogram(vg: VariogramEstimate, max_iter: int = 2000) -> ExpCovParams:
    """Pair-count weighted least-squares fit of the exponential model."""
    ok = vg.valid() & np.isfinite(vg.semivariances)
    if ok.sum() < 3:
        raise VariogramFitError("need at least 3 non-empty bins")
    d = vg.bin_centers[ok]
    g = vg.semivariances[ok]
    w = np.sqrt(vg.counts[ok].astype(float))
    scale = max(float(np.max(g)), 1e-300)

    # sigma2 and rho on the log scale, r on the logit scale
    def unpack(th):
        return np.exp(th[0]) * scale, 1.0 / (1.0 + np.exp(-th[1])), np.exp(th[2])

    def resid(th):
        s2, r, rho = unpack(th)
        model = s2 * ((1.0 - r) + r * (1.0 - np.exp(-d / rho)))
        return w * (model - g) / scale

    best = None
    for rho0 in (d.min(), np.median(d), d.max()):
        for r0 in (0.1, 0.5, 0.9):
            th0 = np.array([0.0, np.log(r0 / (1 - r0)), np.log(rho0)])
            sol = optimize.least_squares(resid, th0, method="lm", max_nfev=max_iter,
                                         xtol=1e-15, ftol=1e-15, gtol=1e-15)
            if best is None or sol.cost < best.cost:
                best = sol
    s2, r, rho = unpack(best.x)
    if not best.success:
        raise VariogramFitError("variogram fit did not converge",
                                ExpCovParams(s2, min(max(r, 0.0), 1.0), rho))
    return ExpCovParams(float(s2), float(min(max(r, 0.0), 1.0)), float(rho))


def pool_variograms(estimates) -> VariogramEstimate:
    """Combine estimates computed on identical bins (e.g. one per window)."""
    estimates = list(estimates)
    if not estimates:
        raise ValueError("nothing to pool")
    centers = estimates[0].bin_centers
    counts = np.zeros_like(estimates[0].counts)
    sums = np.zeros(centers.shape)
    for vg in estimates:
        if not np.array_equal(vg.bin_centers, centers):
            raise ValueError("variograms must share bins")
        counts = counts + vg.counts
        sums += np.where(vg.counts > 0, np.nan_to_num(vg.semivariances) * vg.counts, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = np.where(counts > 0, sums / counts, np.nan)
    return VariogramEstimate(centers, gamma, counts)
