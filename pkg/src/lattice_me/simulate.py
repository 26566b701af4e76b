"""Synthetic STEM-like lattices drawn from the hierarchical model."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .covariance import exp_corr_from_dist, factorize
from .errors import ConfigError
from .imaging import Image, pairwise_distances, round_half_away, window_offsets
from .kernel import kernel_rows
from .lattice import AtomSite, LatticeGeometry, SiteType, build_geometry, weighted_center


@dataclass(frozen=True)
class SimConfig:
    n_b_per_side: int = 19
    spacing: float = 40.0
    sigma_B: float = 0.25
    beta0: float = 87.0
    mu_beta_A: float = 3060.0
    mu_beta_B: float = 1425.0
    sd_beta_A: float = 150.0
    sd_beta_B: float = 150.0
    alpha0: float = -0.08
    alpha1: float = -0.15
    sigma_A: float = 0.4
    r: float = 0.73
    rho: float = 100.0
    psi_A: float = 4.3
    psi_B: float = 3.7
    sigma: float = 140.0
    r_pix: float = 0.57
    rho_pix: float = 5.5
    h_A: int = 6
    h_B: int = 5
    buffer: int = 2
    background_sd: float = 25.0
    seed: int = 0

    def __post_init__(self):
        positive = ("spacing", "sigma_B", "sd_beta_A", "sd_beta_B", "sigma_A", "rho",
                    "psi_A", "psi_B", "sigma", "rho_pix", "background_sd")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive", field=name)
        for name in ("r", "r_pix"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]", field=name)
        if self.n_b_per_side < 2:
            raise ConfigError("n_b_per_side must be at least 2", field="n_b_per_side")
        if self.h_A < 0 or self.h_B < 0 or self.buffer < 0:
            raise ConfigError("half-widths must be non-negative", field="h_A")
        if not self.spacing > 2 * max(self.h_A, self.h_B) + 3:
            raise ConfigError("spacing too small for the window half-widths", field="spacing")

    def replace(self, **kw) -> "SimConfig":
        d = asdict(self)
        d.update(kw)
        return SimConfig(**d)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class SyntheticDataset:
    image: Image
    s_A: np.ndarray
    s_B: np.ndarray
    beta_A: np.ndarray
    beta_B: np.ndarray
    geometry: LatticeGeometry
    config: SimConfig

    def sites(self) -> list[AtomSite]:
        out = [AtomSite(k, SiteType.B, self.s_B[k].copy(), float(self.beta_B[k]))
               for k in range(len(self.beta_B))]
        out += [AtomSite(j, SiteType.A, self.s_A[j].copy(), float(self.beta_A[j]))
                for j in range(len(self.beta_A))]
        return out


def _paste_boxes(canvas, locations, betas, psi, h, cfg, rng):
    """Overwrite a (2h+1)^2 box around each location with data-layer draws."""
    off = window_offsets(h)
    corr = exp_corr_from_dist(pairwise_distances(off), cfg.r_pix, cfg.rho_pix)
    fac = factorize(cfg.sigma ** 2 * corr)
    centers = round_half_away(locations)
    rel = locations - centers
    means = cfg.beta0 + betas[:, None] * kernel_rows(off, rel, psi)
    noise = rng.standard_normal((len(betas), off.shape[0])) @ fac.lower.T
    side = 2 * h + 1
    for c, vals in zip(centers, means + noise):
        x0, y0 = c[0] - h - 1, c[1] - h - 1
        canvas[y0:y0 + side, x0:x0 + side] = vals.reshape(side, side)


def _box_check(cfg, s_A, s_B, width, height):
    boxes = []
    for locs, h in ((s_A, cfg.h_A + cfg.buffer), (s_B, cfg.h_B + cfg.buffer)):
        for c in round_half_away(locs):
            boxes.append((c[0] - h, c[0] + h, c[1] - h, c[1] + h))
    b = np.array(boxes)
    if b[:, 0].min() < 1 or b[:, 2].min() < 1 or b[:, 1].max() > width or b[:, 3].max() > height:
        raise ConfigError("buffered boxes exceed the image", field="spacing")
    # sweep on x-intervals to find overlapping boxes
    order = np.argsort(b[:, 0])
    b = b[order]
    for i in range(len(b)):
        j = i + 1
        while j < len(b) and b[j, 0] <= b[i, 1]:
            if not (b[j, 2] > b[i, 3] or b[i, 2] > b[j, 3]):
                raise ConfigError("buffered boxes overlap", field="spacing")
            j += 1


def simulate_dataset(cfg: SimConfig, rng: np.random.Generator | None = None) -> SyntheticDataset:
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    n = cfg.n_b_per_side
    half = cfg.spacing / 2.0
    geom = build_geometry(n, cfg.spacing, (half, half))
    width = height = int(round(n * cfg.spacing))

    s_B = geom.b_grid_means + cfg.sigma_B * rng.standard_normal((geom.n_b, 2))
    beta_A = cfg.mu_beta_A + cfg.sd_beta_A * rng.standard_normal(geom.n_a)
    beta_B = cfg.mu_beta_B + cfg.sd_beta_B * rng.standard_normal(geom.n_b)

    nb = s_B[geom.neighbor_map]
    u = nb.mean(axis=1)
    w = weighted_center(nb, beta_B[geom.neighbor_map])
    corr = exp_corr_from_dist(pairwise_distances(geom.a_expected()), cfg.r, cfg.rho)
    fac = factorize(cfg.sigma_A ** 2 * corr)
    eps = (fac.lower @ rng.standard_normal((geom.n_a, 2)))
    s_A = u + cfg.alpha0 + cfg.alpha1 * (w - u) + eps

    _box_check(cfg, s_A, s_B, width, height)
    canvas = cfg.beta0 + cfg.background_sd * rng.standard_normal((height, width))
    _paste_boxes(canvas, s_A, beta_A, cfg.psi_A, cfg.h_A + cfg.buffer, cfg, rng)
    _paste_boxes(canvas, s_B, beta_B, cfg.psi_B, cfg.h_B + cfg.buffer, cfg, rng)
    return SyntheticDataset(Image(canvas), s_A, s_B, beta_A, beta_B, geom, cfg)


def empirical_checks(ds: SyntheticDataset) -> dict:
    """Sample moments of the drawn quantities, for smoke-testing generation."""
    geom = ds.geometry
    nb = ds.s_B[geom.neighbor_map]
    u = nb.mean(axis=1)
    w = weighted_center(nb, ds.beta_B[geom.neighbor_map])
    delta = (ds.s_A - u).ravel()
    psi = (w - u).ravel()
    design = np.column_stack([np.ones_like(psi), psi])
    coef, *_ = np.linalg.lstsq(design, delta, rcond=None)
    disp = (ds.s_B - geom.b_grid_means).ravel()
    return {
        "beta_A_mean": float(ds.beta_A.mean()),
        "beta_A_sd": float(ds.beta_A.std(ddof=1)),
        "beta_B_mean": float(ds.beta_B.mean()),
        "beta_B_sd": float(ds.beta_B.std(ddof=1)),
        "b_displacement_sd": float(np.sqrt(np.mean(disp ** 2))),
        "ols_alpha0": float(coef[0]),
        "ols_alpha1": float(coef[1]),
        "n_A": int(geom.n_a),
        "n_B": int(geom.n_b),
    }
