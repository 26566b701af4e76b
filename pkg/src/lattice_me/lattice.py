"""Square-projected perovskite lattice: B grid, A-B neighbours, centres."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np


class SiteType(str, Enum):
    A = "A"
    B = "B"


@dataclass
class AtomSite:
    id: int
    site_type: SiteType
    location: np.ndarray
    intensity: float


@dataclass(frozen=True)
class LatticeGeometry:
    """Expected B grid and the fixed A -> B neighbour map.

    B site ``k`` sits at grid index ``(k % n, k // n)``; A site ``j`` at
    ``(j % (n-1), j // (n-1))`` in the (n-1)-grid of cell centres.  Neighbours
    are fixed by index, never by distance.
    """

    n_b_per_side: int
    spacing: float
    origin: np.ndarray
    b_grid_means: np.ndarray  # (N_B, 2)
    neighbor_map: np.ndarray  # (N_A, 4) B ids

    @property
    def n_b(self) -> int:
        return self.b_grid_means.shape[0]

    @property
    def n_a(self) -> int:
        return self.neighbor_map.shape[0]

    def a_expected(self) -> np.ndarray:
        """Unweighted centres of each A site's grid-mean neighbours."""
        return self.b_grid_means[self.neighbor_map].mean(axis=1)

    def a_neighbors_of_b(self) -> list[np.ndarray]:
        out = [[] for _ in range(self.n_b)]
        for j, nb in enumerate(self.neighbor_map):
            for k in nb:
                out[k].append(j)
        return [np.array(v, dtype=int) for v in out]

    def b_grid_index(self) -> np.ndarray:
        k = np.arange(self.n_b)
        return np.column_stack([k % self.n_b_per_side, k // self.n_b_per_side])

    def a_grid_index(self) -> np.ndarray:
        m = self.n_b_per_side - 1
        j = np.arange(self.n_a)
        return np.column_stack([j % m, j // m])


def build_geometry(n_b_per_side: int, spacing: float, origin=(0.0, 0.0)) -> LatticeGeometry:
    n = int(n_b_per_side)
    if n < 2:
        raise ValueError("need at least 2 B sites per side")
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    origin = np.asarray(origin, dtype=float)
    k = np.arange(n * n)
    gx, gy = k % n, k // n
    means = origin + spacing * np.column_stack([gx, gy]).astype(float)
    m = n - 1
    j = np.arange(m * m)
    ax, ay = j % m, j // m
    base = ay * n + ax
    nbr = np.column_stack([base, base + 1, base + n, base + n + 1])
    return LatticeGeometry(n, float(spacing), origin, means, nbr)


def fit_geometry(b_locations, n_b_per_side: int) -> LatticeGeometry:
    """Fit origin and spacing to detected B sites listed in grid order.

    The corner sites fix orientation and index assignment; origin and a
    common spacing then come from least squares over every site.
    """
    b = np.asarray(b_locations, dtype=float)
    n = int(n_b_per_side)
    if b.shape != (n * n, 2):
        raise ValueError(f"expected {n * n} B locations")
    k = np.arange(n * n)
    gx, gy = (k % n).astype(float), (k // n).astype(float)
    # unknowns: ox, oy, spacing
    design = np.zeros((2 * n * n, 3))
    design[0::2, 0] = 1.0
    design[1::2, 1] = 1.0
    design[0::2, 2] = gx
    design[1::2, 2] = gy
    coef, *_ = np.linalg.lstsq(design, b.ravel(), rcond=None)
    return build_geometry(n, coef[2], coef[:2])


def unweighted_center(b_locations) -> np.ndarray:
    return np.mean(np.asarray(b_locations, dtype=float), axis=-2)


def weighted_center(b_locations, betas) -> np.ndarray:
    b = np.asarray(b_locations, dtype=float)
    w = np.asarray(betas, dtype=float)
    total = np.sum(w, axis=-1)
    if np.any(total <= 0):
        raise ValueError("total weight must be positive")
    return np.sum(w[..., None] * b, axis=-2) / total[..., None]


def displacement_and_covariate(s_a, s_b, beta_b, neighbor_map):
    """``(delta, psi)``: ``s_A - u_A`` and ``w_A - u_A``, both ``(N_A, 2)``."""
    nb_loc = np.asarray(s_b)[neighbor_map]
    u = nb_loc.mean(axis=1)
    w = weighted_center(nb_loc, np.asarray(beta_b)[neighbor_map])
    return np.asarray(s_a) - u, w - u


def write_geometry_csv(geom: LatticeGeometry, path, neighbors_path=None) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["site_id", "type", "grid_x", "grid_y", "mean_x", "mean_y"])
        for k, (g, m) in enumerate(zip(geom.b_grid_index(), geom.b_grid_means)):
            wr.writerow([k, "B", int(g[0]), int(g[1]), repr(float(m[0])), repr(float(m[1]))])
        for j, (g, m) in enumerate(zip(geom.a_grid_index(), geom.a_expected())):
            wr.writerow([j, "A", int(g[0]), int(g[1]), repr(float(m[0])), repr(float(m[1]))])
    if neighbors_path is not None:
        with Path(neighbors_path).open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["a_id", "b_id"])
            for j, nb in enumerate(geom.neighbor_map):
                for k in nb:
                    wr.writerow([j, int(k)])
