"""Images, square pixel windows and their shared geometry.

Pixel coordinates are 1-based ``(x, y) = (column, row)``; pixel ``(x, y)``
lives at ``intensities[y - 1, x - 1]``.  Sub-pixel locations use the same
frame, so a location of ``(3.0, 7.0)`` sits exactly on the centre of the pixel
in column 3, row 7.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    """Raised when an image file cannot be parsed."""


class WindowBoundsError(ValueError):
    """Raised when a window does not fit inside its image."""


@dataclass(frozen=True)
class Image:
    intensities: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.intensities, dtype=float)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError("image must be a non-empty 2-D array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image intensities must be finite")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "intensities", arr)

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    @property
    def width(self) -> int:
        return self.intensities.shape[1]

    def value(self, x: int, y: int) -> float:
        return float(self.intensities[y - 1, x - 1])


def round_half_away(v) -> np.ndarray:
    """Round to the nearest integer, ties away from zero."""
    v = np.asarray(v, dtype=float)
    return (np.sign(v) * np.floor(np.abs(v) + 0.5)).astype(int)


# -- file formats ------------------------------------------------------------

def _load_matrix(path: Path) -> Image:
    lines = path.read_text().splitlines()
    rows = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip()]
    if not rows:
        raise ImageFormatError(f"{path}: empty file")
    lineno, header = rows[0]
    parts = header.split()
    if len(parts) != 2:
        raise ImageFormatError(f"{path}:{lineno}: header must be 'rows cols'")
    try:
        nrow, ncol = int(parts[0]), int(parts[1])
    except ValueError:
        raise ImageFormatError(f"{path}:{lineno}: header must hold two integers") from None
    if nrow <= 0 or ncol <= 0:
        raise ImageFormatError(f"{path}:{lineno}: dimensions must be positive")
    body = rows[1:]
    if len(body) != nrow:
        raise ImageFormatError(f"{path}: expected {nrow} rows, found {len(body)}")
    out = np.empty((nrow, ncol))
    for r, (lineno, ln) in enumerate(body):
        toks = ln.split()
        if len(toks) != ncol:
            raise ImageFormatError(
                f"{path}:{lineno}: expected {ncol} values, found {len(toks)}")
        for c, tok in enumerate(toks):
            try:
                out[r, c] = float(tok)
            except ValueError:
                raise ImageFormatError(
                    f"{path}:{lineno}:{c + 1}: non-numeric token {tok!r}") from None
    return Image(out)


def _pgm_tokens(data: bytes):
    """Yield header tokens of a PGM file, skipping comments, with byte offsets."""
    i, n = 0, len(data)
    while i < n:
        ch = data[i:i + 1]
        if ch == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < n and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
                j += 1
            yield data[i:j], j
            i = j


def _load_pgm(path: Path) -> Image:
    data = path.read_bytes()
    toks = _pgm_tokens(data)
    try:
        magic, _ = next(toks)
        w, _ = next(toks)
        h, _ = next(toks)
        maxval, end = next(toks)
        w, h, maxval = int(w), int(h), int(maxval)
    except (StopIteration, ValueError):
        raise ImageFormatError(f"{path}: truncated or malformed PGM header") from None
    if magic == b"P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raw = data[end + 1:]
        need = w * h * dtype.itemsize
        if len(raw) < need:
            raise ImageFormatError(f"{path}: expected {need} data bytes, found {len(raw)}")
        arr = np.frombuffer(raw[:need], dtype=dtype).reshape(h, w).astype(float)
    elif magic == b"P2":
        vals = []
        for tok, _ in toks:
            try:
                vals.append(int(tok))
            except ValueError:
                raise ImageFormatError(f"{path}: non-numeric token {tok!r}") from None
        if len(vals) != w * h:
            raise ImageFormatError(f"{path}: expected {w * h} values, found {len(vals)}")
        arr = np.asarray(vals, dtype=float).reshape(h, w)
    else:
        raise ImageFormatError(f"{path}: unsupported PGM magic {magic!r}")
    return Image(arr)


def load_image(path) -> Image:
    """Read a matrix text file (``rows cols`` header) or a P2/P5 PGM."""
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(2)
    if head in (b"P2", b"P5"):
        return _load_pgm(path)
    return _load_matrix(path)


def save_image(img: Image, path) -> None:
    """Write the matrix text format; ``repr`` floats round-trip exactly."""
    arr = img.intensities
    lines = [f"{arr.shape[0]} {arr.shape[1]}"]
    for row in arr:
        lines.append(" ".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _fmt(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


# -- windows -----------------------------------------------------------------

def window_offsets(half_width: int) -> np.ndarray:
    """Row-major ``(dx, dy)`` offsets of a ``(2h+1)^2`` window."""
    h = int(half_width)
    d = np.arange(-h, h + 1)
    dy, dx = np.meshgrid(d, d, indexing="ij")
    return np.column_stack([dx.ravel(), dy.ravel()]).astype(float)


@dataclass(frozen=True)
class Window:
    site_id: int
    half_width: int
    center_pixel: tuple
    coords: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    @property
    def n_pixels(self) -> int:
        return self.values.shape[0]

    def bounds(self):
        """Inclusive ``(xmin, xmax, ymin, ymax)``."""
        cx, cy = self.center_pixel
        h = self.half_width
        return cx - h, cx + h, cy - h, cy + h

    def contains(self, point) -> bool:
        xmin, xmax, ymin, ymax = self.bounds()
        return xmin <= point[0] <= xmax and ymin <= point[1] <= ymax


def extract_window(img: Image, center, half_width: int, site_id: int = -1) -> Window:
    cx, cy = (int(c) for c in center)
    h = int(half_width)
    if h < 0:
        raise ValueError("half_width must be non-negative")
    if cx - h < 1 or cy - h < 1 or cx + h > img.width or cy + h > img.height:
        raise WindowBoundsError(
            f"window at ({cx}, {cy}) with half-width {h} exceeds "
            f"{img.width}x{img.height} image")
    block = img.intensities[cy - h - 1:cy + h, cx - h - 1:cx + h]
    coords = window_offsets(h) + np.array([cx, cy], dtype=float)
    values = block.ravel().copy()
    coords.setflags(write=False)
    values.setflags(write=False)
    return Window(site_id, h, (cx, cy), coords, values)


def window_at(img: Image, location, half_width: int, site_id: int = -1) -> Window:
    """Window centred on the pixel nearest to a sub-pixel location."""
    return extract_window(img, round_half_away(location), half_width, site_id)


def check_disjoint(windows) -> bool:
    seen = set()
    for w in windows:
        xmin, xmax, ymin, ymax = w.bounds()
        for y in range(ymin, ymax + 1):
            for x in range(xmin, xmax + 1):
                if (x, y) in seen:
                    return False
                seen.add((x, y))
    return True


def stack_windows(windows) -> tuple[np.ndarray, np.ndarray]:
    """Stack same-size windows into ``(centers (n, 2), values (n, m))``."""
    if not windows:
        return np.zeros((0, 2)), np.zeros((0, 0))
    sizes = {w.half_width for w in windows}
    if len(sizes) != 1:
        raise ValueError("windows must share one half-width")
    centers = np.array([w.center_pixel for w in windows], dtype=float)
    values = np.vstack([w.values for w in windows])
    return centers, values


def pairwise_distances(coords) -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))

