"""Posterior chains, HPD intervals and CSV output."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def hpd_interval(samples, level: float = 0.95) -> tuple[float, float]:
    """Shortest interval ``[x_(i), x_(i+k)]`` over sorted draws, ``k = floor(level n)``.

    The interval spans ``k + 1 >= ceil(level n)`` draws.  Ties go to the
    smallest lower end.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < 100:
        raise ValueError(f"need at least 100 samples, got {n}")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    k = int(math.floor(level * n + 1e-9))
    k = max(k, 1)
    widths = x[k:] - x[:n - k]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k])


@dataclass
class Chain:
    """Post-burn-in draws of named parameters from one MCMC run."""

    draws: dict
    burn_in: int
    n_iter: int
    thin: int = 1
    acceptance: dict = field(default_factory=dict)
    seed: int | None = None
    site_means: dict = field(default_factory=dict)
    site_draws: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.draws[name]

    @property
    def names(self):
        return list(self.draws)

    def summary(self, level: float = 0.95) -> dict:
        out = {}
        for name, v in self.draws.items():
            v = np.asarray(v, dtype=float)
            lo, hi = hpd_interval(v, level) if v.size >= 100 else (float("nan"), float("nan"))
            out[name] = {"mean": float(v.mean()), "sd": float(v.std(ddof=1)) if v.size > 1 else 0.0,
                         "hpd_lo": lo, "hpd_hi": hi}
        return out


def write_chain_csvs(chain: Chain, out_dir, prefix: str = "chain_") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    start = chain.burn_in
    for name, v in chain.draws.items():
        p = out_dir / f"{prefix}{name}.csv"
        lines = ["iteration,value"]
        for i, x in enumerate(np.asarray(v, dtype=float)):
            lines.append(f"{start + (i + 1) * chain.thin},{repr(float(x))}")
        p.write_text("\n".join(lines) + "\n")
        paths.append(p)
    return paths


def write_summary_csv(chain: Chain, path, level: float = 0.95) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["parameter", "mean", "sd", "hpd_lo", "hpd_hi"])
        for name, s in chain.summary(level).items():
            wr.writerow([name, repr(s["mean"]), repr(s["sd"]), repr(s["hpd_lo"]), repr(s["hpd_hi"])])
    return path


def write_acceptance_csv(chain: Chain, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["block", "acceptance_rate"])
        for name, rate in chain.acceptance.items():
            wr.writerow([name, repr(float(rate))])
    return path
