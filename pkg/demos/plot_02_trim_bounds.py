"""
Trim bounds and inclusion probabilities
=======================================

A trim spec (alpha_lo, alpha_hi) becomes a pair of bounds on the true study
means. Each study keeps the probability that its true mean lies between
them, and its variance is divided by that probability.
"""

import numpy as np

from trimeta import TrimSpec, apply_trim, load_cdp, solve_bounds, trimmed_fit

ds = load_cdp()
spec = TrimSpec(alpha_lo=0.0, alpha_hi=0.34)

bounds = solve_bounds(ds, spec)
print(f"bounds: ({bounds.b_lo}, {bounds.b_hi:.4f})")

trimmed = apply_trim(ds, bounds)
for s, p, se in zip(ds, bounds.inclusion, trimmed.inflated_se):
    print(f"study {s.id:>2}: kept {p:.4f}  se {s.se:.4f} -> {se:.4f}")

fit, _ = trimmed_fit(ds, spec)
print(f"\ntrimmed fit: theta={fit.theta_hat:.3f} ({fit.se_theta:.3f})  tau={fit.tau:.3f}")

# more upper trimming always pulls the upper bound down
for a in np.linspace(0.05, 0.45, 5):
    print(f"alpha_hi={a:.2f}  b_hi={solve_bounds(ds, TrimSpec(0.0, a)).b_hi:.4f}")
