"""Command-line entry point: ``lattice-me {simulate,detect,fit,study,variogram}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import build_baseline_data, run_simple_lr, run_spatial_lr
from .config import Config, parse_config
from .covariance import fit_exp_variogram, exp_semivariogram, VariogramFitError
from .detect import (DetectedSite, detect_sites, read_detection_csv, trace_diagnostic,
                     write_detection_csv)
from .errors import ConfigError
from .harness import resolve_jobs, run_study, write_replicates_csv
from .harness import write_summary_csv as write_study_summary_csv
from .hier import HierData, initial_state, run_hier_mcmc
from .imaging import extract_window, load_image, round_half_away, save_image
from .lattice import build_geometry, fit_geometry, write_geometry_csv
from .residuals import (displacement_residuals, displacement_variogram, pixel_residual_blocks,
                        pixel_variogram)
from .simulate import simulate_dataset
from .summaries import write_acceptance_csv, write_chain_csvs, write_summary_csv

log = logging.getLogger("lattice_me")


class Manifest:
    """Run record written once, after every other output."""

    def __init__(self, subcommand: str, cfg: Config | None, seed):
        self.t0 = time.perf_counter()
        self.data = {"subcommand": subcommand,
                     "config_hash": cfg.digest() if cfg is not None else None,
                     "config_source": cfg.source if cfg is not None else None,
                     "seed": seed, "versions": _versions(), "outputs": []}

    def add(self, *paths):
        self.data["outputs"].extend(str(p) for p in paths)

    def write(self, out_dir) -> Path:
        self.data["wall_time_s"] = time.perf_counter() - self.t0
        path = Path(out_dir) / "manifest.json"
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")
        return path


def _versions() -> dict:
    import numba
    import scipy
    return {"lattice_me": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": platform.python_version()}


def _load_config(path) -> Config:
    return parse_config(path) if path else Config()


def _write_sites_csv(path, ids, types, locs, intens):
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["site_id", "type", "x", "y", "intensity"])
        for i, t, s, b in zip(ids, types, locs, intens):
            wr.writerow([int(i), t, repr(float(s[0])), repr(float(s[1])), repr(float(b))])


def _read_sites(path):
    """Either a detection CSV (fits) or a plain ``site_id,type,x,y`` CSV."""
    with Path(path).open() as fh:
        header = next(csv.reader(fh))
    if "x0" in header:
        return read_detection_csv(path), True
    rows = []
    with Path(path).open() as fh:
        for row in csv.DictReader(fh):
            rows.append((int(row["site_id"]), row["type"].strip().upper(),
                         float(row["x"]), float(row["y"])))
    return rows, False


def _split(items, key):
    out = {"A": [], "B": []}
    for it in items:
        t = key(it)
        if t not in out:
            raise ValueError(f"unknown site type {t!r}")
        out[t].append(it)
    for t in out:
        out[t].sort(key=lambda x: x.site_id if hasattr(x, "site_id") else x[0])
    return out["A"], out["B"]


def _detect(img, centers_A, centers_B, h_A, h_B):
    sites_B = detect_sites(img, round_half_away(centers_B), h_B, "B")
    sites_A = detect_sites(img, round_half_away(centers_A), h_A, "A")
    return sites_A, sites_B


def _fit_centers(fits, fallback):
    return np.array([f.center if f.converged else np.asarray(c, float)
                     for f, c in zip(fits, fallback)])


# -- subcommands -------------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    sim = cfg.simulation if args.seed is None else cfg.simulation.replace(seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest("simulate", cfg, sim.seed)
    ds = simulate_dataset(sim)
    img_path = out / "image.txt"
    save_image(ds.image, img_path)
    truth = out / "truth.csv"
    n_b, n_a = len(ds.beta_B), len(ds.beta_A)
    _write_sites_csv(truth, list(range(n_b)) + list(range(n_a)), ["B"] * n_b + ["A"] * n_a,
                     np.vstack([ds.s_B, ds.s_A]), np.concatenate([ds.beta_B, ds.beta_A]))
    geom = out / "geometry.csv"
    nbrs = out / "neighbors.csv"
    write_geometry_csv(ds.geometry, geom, nbrs)
    echo = out / "config.json"
    echo.write_text(json.dumps({"simulation": sim.__dict__}, indent=2, sort_keys=True) + "\n")
    man.add(img_path, truth, geom, nbrs, echo)
    man.write(out)
    return 0


def cmd_detect(args) -> int:
    cfg = _load_config(args.config)
    img = load_image(args.image)
    h_A = args.h_A if args.h_A is not None else cfg.fit.h_A
    h_B = args.h_B if args.h_B is not None else cfg.fit.h_B
    if args.sites:
        rows, _ = _read_sites(args.sites)
        if rows and isinstance(rows[0], DetectedSite):
            rows = [(s.site_id, s.site_type, s.fit.x0, s.fit.y0) for s in rows]
        ra, rb = _split(rows, key=lambda r: r[1])
        cA = np.array([[r[2], r[3]] for r in ra])
        cB = np.array([[r[2], r[3]] for r in rb])
    else:
        sim = cfg.simulation
        g = build_geometry(sim.n_b_per_side, sim.spacing, (sim.spacing / 2, sim.spacing / 2))
        cA, cB = g.a_expected(), g.b_grid_means
    sites_A, sites_B = _detect(img, cA, cB, h_A, h_B)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest("detect", cfg, None)
    det = out / "detection.csv"
    write_detection_csv(sites_B + sites_A, det)
    trace_path = out / "trace_diagnostic.csv"
    with trace_path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["type", "horizontal_corr", "vertical_corr"])
        for t, centers, h in (("A", cA, h_A), ("B", cB, h_B)):
            ws = [extract_window(img, c, h) for c in round_half_away(centers)]
            td = trace_diagnostic(ws)
            wr.writerow([t, repr(td.horizontal_corr), repr(td.vertical_corr)])
    n_bad = sum(not s.fit.converged for s in sites_A + sites_B)
    if n_bad:
        log.warning("%d fits did not converge", n_bad)
    man.add(det, trace_path)
    man.write(out)
    return 0


def _site_posterior_rows(model, chain, sA, sB):
    rows = []
    for t, locs in (("B", sB), ("A", sA)):
        sm = chain.site_means
        if model == "hier":
            mean, sd = sm[f"s_{t}"], sm[f"s_{t}_sd"]
            bm, bsd = sm[f"beta_{t}"], sm[f"beta_{t}_sd"]
        else:
            mean, sd = locs, np.full_like(locs, np.nan)
            bm = bsd = np.full(len(locs), np.nan)
        for k in range(len(locs)):
            rows.append([k, t, mean[k, 0], mean[k, 1], sd[k, 0], sd[k, 1], bm[k], bsd[k]])
    return rows


def cmd_fit(args) -> int:
    cfg = _load_config(args.config)
    fc = cfg.fit
    over = {k: v for k, v in (("model", args.model), ("n_iter", args.iters),
                              ("burn_in", args.burnin), ("thin", args.thin),
                              ("seed", args.seed)) if v is not None}
    if args.ssvs:
        over["ssvs"] = True
    fc = replace(fc, **over)
    cfg.fit = fc
    img = load_image(args.image)
    rows, is_det = _read_sites(args.sites)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest("fit", cfg, fc.seed)
    if is_det:
        dA, dB = _split(rows, key=lambda s: s.site_type.upper())
    else:
        ra, rb = _split(rows, key=lambda r: r[1])
        dA, dB = _detect(img, [[r[2], r[3]] for r in ra], [[r[2], r[3]] for r in rb],
                         fc.h_A, fc.h_B)
        det = out / "detection.csv"
        write_detection_csv(dB + dA, det)
        man.add(det)
    fits_A = [s.fit for s in dA]
    fits_B = [s.fit for s in dB]
    n = fc.n_b_per_side or int(round(math.sqrt(len(fits_B))))
    if n * n != len(fits_B):
        raise ValueError("number of B sites is not a square; set n_b_per_side")
    fallback_B = np.array([[f.x0, f.y0] for f in fits_B])
    sB = _fit_centers(fits_B, fallback_B)
    sA = _fit_centers(fits_A, np.array([[f.x0, f.y0] for f in fits_A]))
    geom = fit_geometry(sB, n)
    if geom.n_a != len(fits_A):
        raise ValueError(f"expected {geom.n_a} A sites, got {len(fits_A)}")

    if fc.model == "hier":
        data = HierData.from_image(img, sA, sB, geom, fc.h_A, fc.h_B)
        state, priors = initial_state(data, sA, sB,
                                      fits_A=[f for f in fits_A if f.converged],
                                      fits_B=[f for f in fits_B if f.converged],
                                      prior_var=fc.beta_prior_var, ssvs=fc.ssvs)
        if cfg.priors:
            priors = replace(priors, **cfg.priors)
        chain = run_hier_mcmc(data, state, priors, fc.n_iter, fc.burn_in, fc.thin, fc.seed)
    else:
        bdata = build_baseline_data(fits_A, fits_B, geom, weight=fc.weight)
        runner = run_simple_lr if fc.model == "simple" else run_spatial_lr
        chain = runner(bdata, fc.n_iter, fc.burn_in, fc.thin, fc.seed)

    paths = write_chain_csvs(chain, out)
    summ = write_summary_csv(chain, out / "summary.csv")
    acc = write_acceptance_csv(chain, out / "acceptance.csv")
    site_path = out / "sites_posterior.csv"
    with site_path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["site_id", "type", "mean_x", "mean_y", "sd_x", "sd_y", "mean_intensity",
                     "sd_intensity"])
        for r in _site_posterior_rows(fc.model, chain, sA, sB):
            wr.writerow(r[:2] + [repr(float(v)) for v in r[2:]])
    man.add(*paths, summ, acc, site_path)
    man.write(out)
    finite = all(np.all(np.isfinite(v)) for v in chain.draws.values())
    if not finite:
        log.error("non-finite draws in the output chains")
    return 0 if finite else 1


def cmd_study(args) -> int:
    cfg = _load_config(args.config)
    if cfg.study is None:
        raise ConfigError("config has no [study] section")
    jobs = resolve_jobs(args.jobs)
    study = cfg.study
    if args.seed is not None:
        study.seed = args.seed
    study.save_chains = args.save_chains
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest("study", cfg, study.seed)
    summary = run_study(study, jobs=jobs)
    rep = write_replicates_csv(summary, out / "replicates.csv")
    summ = write_study_summary_csv(summary, out / "summary.csv")
    man.data["n_failed"] = summary.n_failed
    man.add(rep, summ)
    for r in summary.records:
        for model, chain in r.get("chains", {}).items():
            d = out / "chains" / r["scenario"] / f"rep{r['replicate']:03d}" / model
            man.add(*write_chain_csvs(chain, d))
    man.write(out)
    if summary.n_failed:
        log.warning("%d replicates failed", summary.n_failed)
    return 0


def cmd_variogram(args) -> int:
    img = load_image(args.image)
    rows, is_det = _read_sites(args.sites)
    if not is_det:
        raise ValueError("variogram needs a detection CSV (run `detect` first)")
    dA, dB = _split(rows, key=lambda s: s.site_type.upper())
    sA = np.array([s.fit.center for s in dA])
    sB = np.array([s.fit.center for s in dB])
    if args.layer == "pixel":
        blocks = (pixel_residual_blocks(img, sA, args.h_A, args.psi_A)
                  + pixel_residual_blocks(img, sB, args.h_B, args.psi_B))
        vg = pixel_variogram(blocks, args.bins, args.max_dist)
    else:
        n = int(round(math.sqrt(len(dB))))
        geom = fit_geometry(sB, n)
        weights = np.array([s.fit.peak_height for s in dB])
        resid = displacement_residuals(sA, sB, weights, geom)
        vg = displacement_variogram(sA, resid, args.bins, args.max_dist)
    try:
        params = fit_exp_variogram(vg)
        fitted = exp_semivariogram(vg.bin_centers, params)
    except VariogramFitError as exc:
        log.warning("%s", exc)
        params, fitted = None, np.full(vg.bin_centers.shape, np.nan)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["bin_center", "semivariance", "count", "fitted_gamma"])
        for c, g, k, f in zip(vg.bin_centers, vg.semivariances, vg.counts, fitted):
            wr.writerow([repr(float(c)), repr(float(g)), int(k), repr(float(f))])
    if params is not None:
        print(f"sigma2={params.sigma2:.6g} r={params.r:.4f} rho={params.rho:.4f}")
    return 0


# -- parser --------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lattice-me", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a synthetic lattice image")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("detect", help="Gaussian peak fits around approximate centres")
    s.add_argument("--image", required=True)
    s.add_argument("--sites", help="CSV of approximate centres (site_id,type,x,y)")
    s.add_argument("--config", help="grid taken from [simulation] when --sites is absent")
    s.add_argument("--h-A", dest="h_A", type=int)
    s.add_argument("--h-B", dest="h_B", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("fit", help="run one sampler on an image")
    s.add_argument("--image", required=True)
    s.add_argument("--sites", required=True, help="detection CSV or site_id,type,x,y CSV")
    s.add_argument("--config")
    s.add_argument("--model", choices=["simple", "spatial", "hier"])
    s.add_argument("--iters", type=int)
    s.add_argument("--burnin", type=int)
    s.add_argument("--thin", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--ssvs", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("study", help="replicated simulation study")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, help="worker processes (default: $LATTICE_ME_JOBS or 1)")
    s.add_argument("--seed", type=int)
    s.add_argument("--save-chains", dest="save_chains", action="store_true",
                   help="also write every replicate's chain CSVs")
    s.set_defaults(func=cmd_study)

    s = sub.add_parser("variogram", help="empirical variogram of OLS residuals")
    s.add_argument("--image", required=True)
    s.add_argument("--sites", required=True, help="detection CSV")
    s.add_argument("--layer", choices=["pixel", "displacement"], default="pixel")
    s.add_argument("--psi-A", dest="psi_A", type=float, default=5.0)
    s.add_argument("--psi-B", dest="psi_B", type=float, default=4.0)
    s.add_argument("--h-A", dest="h_A", type=int, default=6)
    s.add_argument("--h-B", dest="h_B", type=int, default=5)
    s.add_argument("--bins", type=int, default=15)
    s.add_argument("--max-dist", dest="max_dist", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_variogram)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"lattice-me {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
