"""Gaussian intensity kernel and single-atom window means."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DataLayerParams:
    beta0: float
    psi_A: float
    psi_B: float

    def __post_init__(self):
        if not (self.psi_A > 0 and self.psi_B > 0):
            raise ValueError("bandwidths must be positive")


def kernel_value(p, s, psi: float):
    """``exp(-|p - s|^2 / (2 psi^2))``; broadcasts over leading axes of ``p``."""
    if not psi > 0:
        raise ValueError("psi must be positive")
    diff = np.asarray(p, dtype=float) - np.asarray(s, dtype=float)
    return np.exp(-np.sum(diff * diff, axis=-1) / (2.0 * psi * psi))


def kernel_rows(offsets: np.ndarray, rel_locations: np.ndarray, psi: float) -> np.ndarray:
    """Kernel matrix for many sites sharing one window shape.

    ``offsets`` holds the ``(m, 2)`` pixel offsets from each window centre and
    ``rel_locations`` the ``(n, 2)`` site locations relative to those centres.
    Returns the ``(n, m)`` matrix of kernel values.
    """
    dx = offsets[None, :, 0] - rel_locations[:, 0:1]
    dy = offsets[None, :, 1] - rel_locations[:, 1:2]
    return np.exp(-(dx * dx + dy * dy) / (2.0 * psi * psi))


def window_mean(window, s, beta0: float, beta: float, psi: float) -> np.ndarray:
    """Mean intensity of each window pixel when only the owning atom contributes."""
    return beta0 + beta * kernel_value(window.coords, s, psi)
