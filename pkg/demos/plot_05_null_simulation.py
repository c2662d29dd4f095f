"""
How much trimming appears by chance
===================================

Null datasets are drawn with CDP's standard errors and tau but no outlier.
The mean optimal proportion over the runs, alpha_m, can be subtracted from
the real-data optimum.
"""

import sys

from trimeta import PipelineConfig, SimTemplate, analyze, load_cdp, run_null_study

runs = int(sys.argv[1]) if len(sys.argv) > 1 else 10
n = int(sys.argv[2]) if len(sys.argv) > 2 else 2000
cfg = PipelineConfig(n_replicates=n)

ds = load_cdp()
study = run_null_study(SimTemplate.from_dataset(ds), runs, cfg)
for r in study.runs:
    print(f"run {r.k}: optimum ({r.alpha_lo:.4g}, {r.alpha_hi:.4g})  theta={r.theta_hat:+.3f} ({r.se_theta:.3f})")
print(f"alpha_m = {study.alpha_m:.4f}")

result = analyze(ds, cfg, alpha_m=study.alpha_m)
c = result.alpha_m_correction
if c is not None:
    print(f"corrected optimum {c.original.as_tuple()} -> {c.corrected.as_tuple()}")
print(f"theta = {result.final_fit.theta_hat:.3f} ({result.final_fit.se_theta:.3f})")
