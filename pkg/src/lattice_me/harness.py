"""Replicated simulation study: simulate, detect, fit, summarise.

Each replicate draws a dataset, detects every column with the Gaussian peak
fit, and runs the requested models.  Replicates are independent and carry
their own seed streams spawned from the study seed, so results do not depend
on how many worker processes are used.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baseline import build_baseline_data, run_simple_lr, run_spatial_lr
from .detect import detect_sites
from .hier import HierData, initial_state, run_hier_mcmc
from .imaging import round_half_away
from .lattice import fit_geometry
from .simulate import SimConfig, simulate_dataset
from .summaries import hpd_interval

log = logging.getLogger(__name__)

MODELS = ("simple", "spatial", "hier")


@dataclass(frozen=True)
class Scenario:
    name: str
    overrides: dict = field(default_factory=dict)   # SimConfig fields
    h_A: int | None = None                          # fitting windows; None keeps the simulation's
    h_B: int | None = None
    beta_prior_var: float = 25.0 ** 2
    ssvs: bool = False


@dataclass
class StudyConfig:
    base: SimConfig = field(default_factory=SimConfig)
    scenarios: list = field(default_factory=lambda: [Scenario("baseline")])
    n_replicates: int = 30
    n_iter: int = 6000
    burn_in: int = 2000
    thin: int = 1
    models: tuple = MODELS
    jobs: int = 1
    seed: int = 0
    save_chains: bool = False

    def __post_init__(self):
        if self.n_replicates < 2:
            raise ValueError("n_replicates must be at least 2")
        if not self.scenarios:
            raise ValueError("at least one scenario is required")
        bad = set(self.models) - set(MODELS)
        if bad:
            raise ValueError(f"unknown models: {sorted(bad)}")


def desk_preset(**kw) -> StudyConfig:
    """10 x 10 B grid, 30 replicates, 2000 burn-in + 4000 kept draws."""
    kw.setdefault("base", SimConfig(n_b_per_side=10))
    return StudyConfig(**kw)


def noise_scenarios() -> list[Scenario]:
    return [Scenario("sigma140"), Scenario("sigma220", {"sigma": 220.0}),
            Scenario("sigma300", {"sigma": 300.0}), Scenario("rpix0.7", {"r_pix": 0.7}),
            Scenario("rpix0.9", {"r_pix": 0.9})]


def sensitivity_scenarios() -> list[Scenario]:
    return [Scenario("prior_var_low", beta_prior_var=0.5 * 25.0 ** 2),
            Scenario("prior_var_high", beta_prior_var=1.5 * 25.0 ** 2),
            Scenario("small_windows", h_A=5, h_B=4)]


def full_preset(**kw) -> StudyConfig:
    kw.setdefault("scenarios", noise_scenarios())
    return StudyConfig(base=SimConfig(), n_replicates=100, n_iter=20000, burn_in=10000, **kw)


def truth_values(cfg: SimConfig) -> dict:
    return {"alpha0": cfg.alpha0, "alpha1": cfg.alpha1, "sigma_A": cfg.sigma_A,
            "sigma2_A": cfg.sigma_A ** 2, "r": cfg.r, "rho": cfg.rho, "beta0": cfg.beta0,
            "mu_beta_A": cfg.mu_beta_A, "mu_beta_B": cfg.mu_beta_B,
            "var_beta_A": cfg.sd_beta_A ** 2, "var_beta_B": cfg.sd_beta_B ** 2,
            "psi_A": cfg.psi_A, "psi_B": cfg.psi_B, "sigma": cfg.sigma, "sigma2": cfg.sigma ** 2,
            "r_pix": cfg.r_pix, "rho_pix": cfg.rho_pix, "sigma2_B": cfg.sigma_B ** 2}


def _centers(fits, fallback):
    return np.array([f.center if f.converged and np.all(np.isfinite(f.center)) else c
                     for f, c in zip(fits, np.asarray(fallback, float))])


def _summarise(chain, level=0.95) -> dict:
    out = {}
    for name, v in chain.draws.items():
        v = np.asarray(v, float)
        lo, hi = hpd_interval(v, level)
        out[name] = (float(v.mean()), float(v.std(ddof=1)), lo, hi)
    return out


def replicate_seeds(study_seed: int, scenario_index: int, n_replicates: int):
    """One SeedSequence per replicate, independent across scenarios."""
    root = np.random.SeedSequence([int(study_seed), int(scenario_index)])
    return root.spawn(n_replicates)


def fit_dataset(ds, scenario: Scenario, models, n_iter, burn_in, thin, seed_seq,
                record_chains: bool = False) -> dict:
    """Detect and fit one dataset; returns per-model summaries (and chains if asked)."""
    cfg = ds.config
    g = ds.geometry
    h_A = scenario.h_A if scenario.h_A is not None else cfg.h_A
    h_B = scenario.h_B if scenario.h_B is not None else cfg.h_B
    guess_B = round_half_away(g.b_grid_means)
    guess_A = round_half_away(g.a_expected())
    fits_B = [d.fit for d in detect_sites(ds.image, guess_B, h_B, "B")]
    fits_A = [d.fit for d in detect_sites(ds.image, guess_A, h_A, "A")]
    s_B = _centers(fits_B, guess_B)
    s_A = _centers(fits_A, guess_A)
    geom = fit_geometry(s_B, g.n_b_per_side)
    chain_seeds = [int(s.generate_state(1)[0]) for s in seed_seq.spawn(len(MODELS))]
    seeds = dict(zip(MODELS, chain_seeds))
    out, chains = {}, {}
    if "simple" in models or "spatial" in models:
        bdata = build_baseline_data(fits_A, fits_B, geom)
        if "simple" in models:
            chains["simple"] = run_simple_lr(bdata, n_iter, burn_in, thin, seeds["simple"])
        if "spatial" in models:
            chains["spatial"] = run_spatial_lr(bdata, n_iter, burn_in, thin, seeds["spatial"])
    if "hier" in models:
        data = HierData.from_image(ds.image, s_A, s_B, geom, h_A, h_B)
        ok_A = [f for f in fits_A if f.converged]
        ok_B = [f for f in fits_B if f.converged]
        state, priors = initial_state(data, s_A, s_B, fits_A=ok_A, fits_B=ok_B,
                                      prior_var=scenario.beta_prior_var, ssvs=scenario.ssvs)
        chains["hier"] = run_hier_mcmc(data, state, priors, n_iter, burn_in, thin, seeds["hier"])
    for m, ch in chains.items():
        out[m] = _summarise(ch)
    if record_chains:
        return out, chains
    return out


def run_replicate(args) -> dict:
    """Worker entry point: ``(StudyConfig, scenario index, replicate index, SeedSequence)``."""
    cfg, si, rep, seed_seq = args
    sc = cfg.scenarios[si]
    rec = {"scenario": sc.name, "replicate": rep, "ok": False, "error": "", "results": {}}
    try:
        sim_seq, fit_seq = seed_seq.spawn(2)
        sim_cfg = cfg.base.replace(**sc.overrides)
        ds = simulate_dataset(sim_cfg, np.random.default_rng(sim_seq))
        res = fit_dataset(ds, sc, cfg.models, cfg.n_iter, cfg.burn_in, cfg.thin, fit_seq,
                          record_chains=cfg.save_chains)
        if cfg.save_chains:
            res, rec["chains"] = res
        rec["results"] = res
        rec["truth"] = truth_values(sim_cfg)
        rec["ok"] = True
    except Exception as exc:  # recorded and excluded, never fatal to the study
        rec["error"] = f"{type(exc).__name__}: {exc}"
        log.warning("replicate %s/%d failed\n%s", sc.name, rep, traceback.format_exc())
    return rec


@dataclass
class SummaryRow:
    scenario: str
    model: str
    parameter: str
    truth: float
    n_effective: int
    bias: float
    bias_se: float
    mean_sd: float
    mean_sd_se: float
    coverage: float
    coverage_se: float
    mse100: float
    mse100_se: float


@dataclass
class StudySummary:
    rows: list
    records: list
    n_failed: int

    def get(self, scenario, model, parameter) -> SummaryRow:
        for r in self.rows:
            if (r.scenario, r.model, r.parameter) == (scenario, model, parameter):
                return r
        raise KeyError((scenario, model, parameter))


def coverage_se(p_hat: float, n: int) -> float:
    """Binomial standard error of a coverage proportion, in percent."""
    return 100.0 * math.sqrt(p_hat * (1.0 - p_hat) / n)


def aggregate(records) -> StudySummary:
    """Bias, coverage and MSE (with Monte Carlo SEs) per scenario, model and parameter."""
    ok = [r for r in records if r["ok"]]
    keys = sorted({(r["scenario"], m, p) for r in ok for m, res in r["results"].items()
                   for p in res if p in r["truth"]})
    rows = []
    for sc, m, p in keys:
        recs = sorted((r for r in ok if r["scenario"] == sc and m in r["results"]),
                      key=lambda r: r["replicate"])
        truth = recs[0]["truth"][p]
        stats = np.array([r["results"][m][p] for r in recs])
        n = len(stats)
        err = stats[:, 0] - truth
        covered = (stats[:, 2] <= truth) & (truth <= stats[:, 3])
        cov = float(covered.mean())
        sq = 100.0 * err ** 2
        sd = lambda v: float(np.std(v, ddof=1)) / math.sqrt(n) if n > 1 else float("nan")
        rows.append(SummaryRow(sc, m, p, float(truth), n, float(err.mean()), sd(err),
                               float(stats[:, 1].mean()), sd(stats[:, 1]), 100.0 * cov,
                               coverage_se(cov, n), float(sq.mean()), sd(sq)))
    return StudySummary(rows, list(records), len(records) - len(ok))


def resolve_jobs(jobs: int | None) -> int:
    if jobs is None:
        env = os.environ.get("LATTICE_ME_JOBS")
        jobs = int(env) if env else 1
    if jobs < 1:
        raise ValueError("jobs must be at least 1")
    return jobs


def run_study(cfg: StudyConfig, jobs: int | None = None) -> StudySummary:
    tasks = []
    for si in range(len(cfg.scenarios)):
        for rep, ss in enumerate(replicate_seeds(cfg.seed, si, cfg.n_replicates)):
            tasks.append((cfg, si, rep, ss))
    jobs = resolve_jobs(jobs if jobs is not None else cfg.jobs)
    if jobs == 1:
        records = [run_replicate(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            records = list(ex.map(run_replicate, tasks))
    return aggregate(records)


def write_replicates_csv(summary: StudySummary, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["scenario", "replicate", "model", "parameter", "truth", "post_mean",
                     "post_sd", "hpd_lo", "hpd_hi", "ok", "error"])
        for r in summary.records:
            if not r["ok"]:
                wr.writerow([r["scenario"], r["replicate"], "", "", "", "", "", "", "", 0,
                             r["error"]])
                continue
            for m, res in sorted(r["results"].items()):
                for p, (mean, sd, lo, hi) in sorted(res.items()):
                    truth = r["truth"].get(p, float("nan"))
                    wr.writerow([r["scenario"], r["replicate"], m, p, repr(truth), repr(mean),
                                 repr(sd), repr(lo), repr(hi), 1, ""])
    return path


def write_summary_csv(summary: StudySummary, path) -> Path:
    path = Path(path)
    cols = list(SummaryRow.__dataclass_fields__)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for row in summary.rows:
            wr.writerow([v if isinstance(v, (str, int)) else repr(float(v))
                         for v in (getattr(row, c) for c in cols)])
    return path


__all__ = ["Scenario", "StudyConfig", "StudySummary", "SummaryRow", "desk_preset", "full_preset",
           "noise_scenarios", "sensitivity_scenarios", "run_study", "run_replicate",
           "fit_dataset", "aggregate", "coverage_se", "hpd_interval", "truth_values",
           "write_replicates_csv", "write_summary_csv", "resolve_jobs", "replicate_seeds"]
