"""Replicated desk-scale study: bias and HPD coverage of the slope per model.

Takes roughly 40 minutes on one core.  Set LATTICE_ME_JOBS to use more.

    LATTICE_ME_JOBS=4 python demos/desk_study.py
"""

from lattice_me.harness import MODELS, desk_preset, run_study

cfg = desk_preset(seed=2024)
summary = run_study(cfg)
sc = cfg.scenarios[0].name
print(f"{'model':>8} {'bias':>9} {'(se)':>8} {'coverage':>9}")
for m in MODELS:
    r = summary.get(sc, m, "alpha1")
    print(f"{m:>8} {r.bias:+9.4f} {r.bias_se:8.4f} {r.coverage:8.0f}%")
