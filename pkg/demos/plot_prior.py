"""
The heavy-tailed slab prior
===========================

A zero-mean Gaussian whose variance is itself Gamma distributed has
a Bessel K form (BKF) marginal. With Gamma shape 1 the marginal is the
Laplace density; smaller shapes give sharper peaks and heavier tails.
This script draws from the hierarchy and compares the empirical CDF with
the closed form.
"""

import numpy as np

from dcsvb.distributions import (
    BkfParams,
    GammaParams,
    bkf_cdf,
    bkf_excess_kurtosis,
    bkf_from_gamma,
    bkf_pdf,
    sample,
)

rng = np.random.default_rng(0)

# Draw variances from a Gamma prior (shape, rate), then Gaussian values.
for shape, rate in [(0.5, 1.0), (1.0, 1.0), (3.0, 2.0)]:
    prior = GammaParams(shape, rate)
    tau = sample(prior, rng, 200_000)
    w = rng.normal(0.0, np.sqrt(tau))
    bkf = bkf_from_gamma(prior)
    grid = np.linspace(-3, 3, 13)
    emp = np.searchsorted(np.sort(w), grid) / w.size
    gap = np.max(np.abs(emp - bkf_cdf(grid, bkf)))
    print(f"Gamma{shape, rate} -> BKF(p={bkf.p:g}, c={bkf.c:g}): "
          f"excess kurtosis {bkf_excess_kurtosis(bkf):.2f}, "
          f"largest CDF gap on the grid {gap:.4f}")

# Shape 1 is the Laplace law: compare a few density values.
laplace = BkfParams(1.0, 2.0)
for x in (0.0, 0.5, 2.0):
    print(f"x={x:3.1f}  BKF {bkf_pdf(x, laplace):.6f}  "
          f"Laplace {0.5 * np.exp(-abs(x)):.6f}")
