"""
Pooling studies with fixed and random effects
=============================================

The bundled CDP-choline dataset has ten studies, one of which (study 3)
reports a far larger effect than the rest.
"""

import numpy as np

from trimeta import dsl_fit, fixed_effect_fit, load_cdp

ds = load_cdp()
for s in ds:
    print(f"{s.id:>3}  effect={s.effect:6.2f}  se={s.se:.4f}")

# inverse-variance pooling ignores between-study spread
fe = fixed_effect_fit(ds)
print(f"\nfixed effect:    theta={fe.theta_hat:.3f} ({fe.se_theta:.3f})")

# DerSimonian-Laird adds tau^2 to every study's variance
re = dsl_fit(ds)
print(f"random effects:  theta={re.theta_hat:.3f} ({re.se_theta:.3f})  tau={re.tau:.3f}  I2={re.i2:.1f}%")

# the random-effects weights are much flatter
print("\nweights (fixed vs dsl):")
print(np.round(np.c_[fe.weights, re.weights], 3))
