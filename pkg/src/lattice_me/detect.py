"""Initial column estimates: weighted centroid then a rotated 2-D Gaussian fit.

The fitted surface is

    g(x, y) = A exp{-[u^2 / sigma1^2 + v^2 / sigma2^2]} + Z,
    u = (x - x0) cos(theta) + (y - y0) sin(theta),
    v = (x - x0) sin(theta) - (y - y0) cos(theta),

so ``sigma_k / sqrt(2)`` is the axis standard deviation.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from .imaging import Window


class DegenerateWindowError(ValueError):
    pass


class SingularFitError(RuntimeError):
    pass


@dataclass
class GaussianPeakFit:
    amplitude: float
    x0: float
    y0: float
    theta: float
    sigma1: float
    sigma2: float
    background: float
    rss: float
    converged: bool
    iterations: int
    rss_history: list = field(default_factory=list, repr=False)

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x0, self.y0])

    @property
    def peak_height(self) -> float:
        """Fitted surface value at the fitted centre (amplitude plus background)."""
        return self.amplitude + self.background


def weighted_centroid(w: Window) -> np.ndarray:
    vals = w.values - np.min(w.values)
    total = vals.sum()
    if not total > 0:
        raise DegenerateWindowError("window intensities are constant")
    return vals @ w.coords / total


def gaussian_surface(params, coords) -> np.ndarray:
    amp, x0, y0, th, s1, s2, z = params
    dx = coords[:, 0] - x0
    dy = coords[:, 1] - y0
    c, s = np.cos(th), np.sin(th)
    u = dx * c + dy * s
    v = dx * s - dy * c
    return amp * np.exp(-(u * u / (s1 * s1) + v * v / (s2 * s2))) + z


def _model_and_jacobian(params, coords):
    amp, x0, y0, th, s1, s2, z = params
    dx = coords[:, 0] - x0
    dy = coords[:, 1] - y0
    c, s = np.cos(th), np.sin(th)
    u = dx * c + dy * s
    v = dx * s - dy * c
    a, b = s1 * s1, s2 * s2
    e = np.exp(-(u * u / a + v * v / b))
    g = amp * e + z
    ae = -amp * e  # d g / d q
    jac = np.empty((coords.shape[0], 7))
    jac[:, 0] = e
    jac[:, 1] = ae * (-2.0 * u * c / a - 2.0 * v * s / b)
    jac[:, 2] = ae * (-2.0 * u * s / a + 2.0 * v * c / b)
    jac[:, 3] = ae * (2.0 * u * v * (1.0 / b - 1.0 / a))
    jac[:, 4] = ae * (-2.0 * u * u / (a * s1))
    jac[:, 5] = ae * (-2.0 * v * v / (b * s2))
    jac[:, 6] = 1.0
    return g, jac


def _canonical(theta, s1, s2):
    """Resolve the reflection symmetry: ``sigma1 >= sigma2``, theta in [0, pi)."""
    if s2 > s1:
        s1, s2 = s2, s1
        theta += 0.5 * np.pi
    return float(np.mod(theta, np.pi)), float(s1), float(s2)


def initial_guess(w: Window) -> np.ndarray:
    y = w.values
    z0 = float(np.median(y) - np.std(y))
    a0 = float(np.max(y) - z0)
    x0, y0 = weighted_centroid(w)
    sig = max(w.half_width / 2.0, 0.5)
    return np.array([a0, x0, y0, 0.0, sig, sig, z0])


def fit_gaussian_peak(w: Window, max_iter: int = 200, rtol: float = 1e-10,
                      step_tol: float = 1e-8, max_damping_retries: int = 40) -> GaussianPeakFit:
    """Levenberg-Marquardt fit of the rotated Gaussian to one window."""
    y = np.asarray(w.values, dtype=float)
    try:
        p = initial_guess(w)
    except DegenerateWindowError:
        z = float(np.mean(y))
        rss = float(np.sum((y - z) ** 2))
        cx, cy = w.center_pixel
        return GaussianPeakFit(0.0, float(cx), float(cy), 0.0, 1.0, 1.0, z, rss, False, 0)

    coords = w.coords
    g, jac = _model_and_jacobian(p, coords)
    r = g - y
    rss = float(r @ r)
    history = [rss]
    lam = 1e-3
    converged = False
    it = 0
    scale = max(float(y @ y), 1e-300)
    while it < max_iter:
        it += 1
        jtj = jac.T @ jac
        grad = jac.T @ r
        diag = np.diag(jtj).copy()
        diag = np.maximum(diag, 1e-12 * max(diag.max(), 1e-300))
        accepted = False
        for _ in range(max_damping_retries):
            try:
                step = np.linalg.solve(jtj + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = p + step
            if trial[4] <= 0 or trial[5] <= 0 or not np.all(np.isfinite(trial)):
                lam *= 10.0
                continue
            g_new, jac_new = _model_and_jacobian(trial, coords)
            r_new = g_new - y
            rss_new = float(r_new @ r_new)
            if rss_new <= rss:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            if lam > 1e30 or not np.all(np.isfinite(step)):
                # cannot make progress: a minimum to working precision or a singular problem
                converged = rss <= 1e-20 * scale or np.linalg.matrix_rank(jtj) >= 6
                if not converged and not np.all(np.isfinite(jtj)):
                    raise SingularFitError("Jacobian is not finite")
                break
            continue
        rel = abs(rss - rss_new) / max(rss, 1e-300)
        p, jac, r = trial, jac_new, r_new
        history.append(rss_new)
        tiny = rss_new <= 1e-24 * scale
        rss = rss_new
        lam = max(lam / 10.0, 1e-12)
        if (rel < rtol or tiny) and np.hypot(step[1], step[2]) < step_tol:
            converged = True
            break

    if converged and not p[0] > 0:
        converged = False
    theta, s1, s2 = _canonical(p[3], abs(p[4]), abs(p[5]))
    return GaussianPeakFit(float(p[0]), float(p[1]), float(p[2]), theta, s1, s2,
                           float(p[6]), rss, bool(converged), it, history)


# -- Gaussian trace diagnostic ---------------------------------------------------

@dataclass
class TraceDiagnostic:
    offsets: np.ndarray
    horizontal: np.ndarray
    vertical: np.ndarray
    horizontal_fit: np.ndarray | None
    vertical_fit: np.ndarray | None
    horizontal_corr: float  # NaN when undefined
    vertical_corr: float


def _gauss1d(t, amp, mu, sd, base):
    return amp * np.exp(-(t - mu) ** 2 / (2.0 * sd * sd)) + base


def _fit_trace(t, y):
    if np.ptp(y) == 0:
        return None, float("nan")
    p0 = [np.ptp(y), t[np.argmax(y)], max(len(t) / 6.0, 0.5), np.min(y)]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", optimize.OptimizeWarning)
            popt, _ = optimize.curve_fit(_gauss1d, t, y, p0=p0, maxfev=20000)
    except RuntimeError:
        return None, float("nan")
    fit = _gauss1d(t, *popt)
    if np.ptp(fit) == 0:
        return fit, float("nan")
    return fit, float(np.corrcoef(y, fit)[0, 1])


def trace_diagnostic(windows) -> TraceDiagnostic:
    """Mean horizontal/vertical traces through window centres and their Gaussian fits."""
    windows = list(windows)
    if not windows:
        raise ValueError("need at least one window")
    h = windows[0].half_width
    if any(w.half_width != h for w in windows):
        raise ValueError("windows must share one size")
    side = 2 * h + 1
    blocks = np.stack([w.values.reshape(side, side) for w in windows])
    horiz = blocks[:, h, :].mean(axis=0)
    vert = blocks[:, :, h].mean(axis=0)
    t = np.arange(-h, h + 1, dtype=float)
    hf, hc = _fit_trace(t, horiz)
    vf, vc = _fit_trace(t, vert)
    return TraceDiagnostic(t, horiz, vert, hf, vf, hc, vc)


# -- batch detection ---------------------------------------------------------------

@dataclass
class DetectedSite:
    site_id: int
    site_type: str
    fit: GaussianPeakFit


def detect_sites(img, centers, half_width: int, site_type: str, id_offset: int = 0):
    """Fit every window centred on the given integer pixel centres."""
    from .imaging import extract_window

    out = []
    for k, c in enumerate(np.asarray(centers)):
        w = extract_window(img, c, half_width, site_id=k + id_offset)
        out.append(DetectedSite(k + id_offset, site_type, fit_gaussian_peak(w)))
    return out


def write_detection_csv(sites, path) -> None:
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["site_id", "type", "x0", "y0", "A", "Z", "theta",
                     "sigma1", "sigma2", "rss", "converged"])
        for s in sites:
            f = s.fit
            wr.writerow([s.site_id, s.site_type, repr(f.x0), repr(f.y0), repr(f.amplitude),
                         repr(f.background), repr(f.theta), repr(f.sigma1), repr(f.sigma2),
                         repr(f.rss), int(f.converged)])


def read_detection_csv(path):
    out = []
    with Path(path).open() as fh:
        for row in csv.DictReader(fh):
            fit = GaussianPeakFit(float(row["A"]), float(row["x0"]), float(row["y0"]),
                                  float(row["theta"]), float(row["sigma1"]),
                                  float(row["sigma2"]), float(row["Z"]), float(row["rss"]),
                                  bool(int(row["converged"])), 0)
            out.append(DetectedSite(int(row["site_id"]), row["type"], fit))
    return out
