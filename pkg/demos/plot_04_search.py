"""
Choosing the trim proportions
=============================

Every (alpha_lo, alpha_hi) cell is scored on one shared ensemble by the
variance of the trimmed estimate across replicates; the smallest wins.
Pass a replicate count on the command line for a quicker run.
"""

import sys

from trimeta import PipelineConfig, analyze, load_cdp

n = int(sys.argv[1]) if len(sys.argv) > 1 else 10000
ds = load_cdp()
result = analyze(ds, PipelineConfig(n_replicates=n))

opt, cell, base = result.optimum, result.optimum_cell, result.baseline_cell
print(f"optimum: alpha_lo={opt.alpha_lo:.4g} alpha_hi={opt.alpha_hi:.4g}")
print(f"untrimmed: theta={result.untrimmed_fit.theta_hat:.3f}  bagged {base.bagged_mean:.3f} ({base.boot_se:.3f})")
print(f"trimmed:   theta={result.final_fit.theta_hat:.3f} ({result.final_fit.se_theta:.3f})  "
      f"bagged {cell.bagged_mean:.3f} ({cell.boot_se:.3f})")

# a slice of the surface along alpha_hi with no lower trimming
for c in result.surface:
    if c.spec.alpha_lo == 0 and round(c.spec.alpha_hi * 50) == c.spec.alpha_hi * 50 and c.spec.alpha_hi <= 0.6:
        print(f"  alpha_hi={c.spec.alpha_hi:.2f}  boot_se={c.boot_se:.4f}")
for w in result.warnings:
    print("warning:", w)
