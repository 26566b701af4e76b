import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lattice_me.harness import (StudyConfig, aggregate, coverage_se, replicate_seeds,
                                resolve_jobs, truth_values)
from lattice_me.simulate import SimConfig
from lattice_me.summaries import (Chain, hpd_interval, write_acceptance_csv, write_chain_csvs,
                                  write_summary_csv)

from oracles import exhaustive_hpd


def test_hpd_on_consecutive_integers():
    assert hpd_interval(np.arange(1, 101), 0.95) == (1.0, 96.0)


def test_hpd_too_few_samples():
    with pytest.raises(ValueError):
        hpd_interval(np.arange(99), 0.95)
    with pytest.raises(ValueError):
        hpd_interval(np.arange(200), 1.0)


def test_hpd_uniform_tie_takes_smallest_lower_end():
    assert hpd_interval(np.arange(1000.0), 0.5) == (0.0, 500.0)


def test_hpd_symmetric_sample():
    x = np.random.default_rng(0).standard_normal(200_001)
    lo, hi = hpd_interval(x, 0.95)
    assert lo == pytest.approx(-hi, abs=0.02)
    assert hi == pytest.approx(1.96, abs=0.02)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(100, 400), level=st.floats(0.05, 0.99))
def test_hpd_matches_exhaustive_scan(seed, n, level):
    x = np.random.default_rng(seed).gamma(2.0, size=n)
    assert hpd_interval(x, level) == exhaustive_hpd(x, level)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), a=st.floats(0.1, 0.98), b=st.floats(0.1, 0.98))
def test_hpd_width_shrinks_with_level(seed, a, b):
    x = np.random.default_rng(seed).standard_normal(300)
    lo, hi = sorted((a, b))
    w_lo = np.subtract(*hpd_interval(x, lo)[::-1])
    w_hi = np.subtract(*hpd_interval(x, hi)[::-1])
    assert w_lo <= w_hi


def test_coverage_standard_error():
    assert coverage_se(0.95, 100) == pytest.approx(2.18, abs=0.01)
    assert coverage_se(0.37, 100) == pytest.approx(4.8, abs=0.05)


def _records(n=20, seed=0, truth=-0.15):
    rng = np.random.default_rng(seed)
    recs = []
    for rep in range(n):
        m = truth + rng.normal(0.03, 0.02)
        sd = abs(rng.normal(0.02, 0.003))
        recs.append({"scenario": "s", "replicate": rep, "ok": True, "error": "",
                     "truth": {"alpha1": truth},
                     "results": {"simple": {"alpha1": (m, sd, m - 2 * sd, m + 2 * sd)}}})
    recs.append({"scenario": "s", "replicate": n, "ok": False, "error": "boom", "results": {}})
    return recs


def test_aggregate_against_direct_computation():
    recs = _records()
    s = aggregate(recs)
    row = s.get("s", "simple", "alpha1")
    stats = np.array([r["results"]["simple"]["alpha1"] for r in recs if r["ok"]])
    err = stats[:, 0] + 0.15
    cov = np.mean((stats[:, 2] <= -0.15) & (-0.15 <= stats[:, 3]))
    assert s.n_failed == 1 and row.n_effective == 20
    assert row.bias == pytest.approx(err.mean())
    assert row.bias_se == pytest.approx(err.std(ddof=1) / np.sqrt(20))
    assert row.coverage == pytest.approx(100 * cov)
    assert row.mse100 == pytest.approx(100 * np.mean(err ** 2))
    assert row.mean_sd == pytest.approx(stats[:, 1].mean())


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), order_seed=st.integers(0, 10_000))
def test_aggregate_ignores_replicate_order(seed, order_seed):
    recs = _records(seed=seed)
    shuffled = recs[:]
    random.Random(order_seed).shuffle(shuffled)
    a, b = aggregate(recs).rows[0], aggregate(shuffled).rows[0]
    assert a == b
    assert 0.0 <= a.coverage <= 100.0
    assert a.mse100 >= 100 * a.bias ** 2 - 1e-12


def test_replicate_seeds_are_distinct_and_stable():
    a = [s.generate_state(2).tolist() for s in replicate_seeds(1, 0, 5)]
    b = [s.generate_state(2).tolist() for s in replicate_seeds(1, 0, 5)]
    c = [s.generate_state(2).tolist() for s in replicate_seeds(1, 1, 5)]
    assert a == b
    assert len({tuple(x) for x in a + c}) == 10


def test_resolve_jobs(monkeypatch):
    monkeypatch.delenv("LATTICE_ME_JOBS", raising=False)
    assert resolve_jobs(None) == 1
    monkeypatch.setenv("LATTICE_ME_JOBS", "3")
    assert resolve_jobs(None) == 3
    assert resolve_jobs(2) == 2
    with pytest.raises(ValueError):
        resolve_jobs(0)


def test_study_config_invariants():
    with pytest.raises(ValueError):
        StudyConfig(n_replicates=1)
    with pytest.raises(ValueError):
        StudyConfig(scenarios=[])
    t = truth_values(SimConfig())
    assert t["alpha1"] == -0.15 and t["sigma2"] == 140.0 ** 2


def test_chain_csvs(tmp_path):
    ch = Chain({"alpha1": np.linspace(-1, 1, 200), "r": np.full(200, 0.5)}, burn_in=100,
               n_iter=500, thin=2, acceptance={"proc": 0.31})
    paths = write_chain_csvs(ch, tmp_path)
    rows = paths[0].read_text().splitlines()
    assert rows[0] == "iteration,value" and rows[1].startswith("102,") and len(rows) == 201
    assert float(rows[-1].split(",")[1]) == 1.0
    s = write_summary_csv(ch, tmp_path / "summary.csv").read_text().splitlines()
    assert s[0] == "parameter,mean,sd,hpd_lo,hpd_hi" and len(s) == 3
    assert write_acceptance_csv(ch, tmp_path / "acc.csv").read_text().splitlines()[1] == "proc,0.31"
