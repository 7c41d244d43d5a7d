"""Remove spatial autocorrelation before scanning: the SAR-adjusted methods.

Smooth spatial fields mimic clusters, so a scan on autocorrelated data
over-detects.  The SAR variants estimate the autoregression strength rho,
filter the outcome to Y - rho W Y, and scan the filtered values instead.
This script shows the estimation, the BIC evidence rule, and the effect on
false alarms.
"""

import numpy as np

from sarscan import (
    ScanMethod,
    default_config,
    detect,
    enumerate_candidates,
    estimate_rho,
    fit_sar,
    french94_layout,
    generate_dataset,
    morans_i,
    spatial_filter,
)

ds0, W, truth = french94_layout()
cfg = default_config(seed=7)
rng = np.random.default_rng(7)

# ---------------------------------------------------------------------------
# Generate a correlated field with NO planted cluster (c = 0, rho = 0.6).
y = generate_dataset(cfg, rho=0.6, c=0.0, rng=rng)
ds = ds0.with_values(y)
print(f"Moran's I of the raw field: {morans_i(W, y):+.4f}")

# The null SAR fit recovers the generating rho by quasi-maximum likelihood.
fit0 = fit_sar(y, W)
print(f"null fit: rho = {fit0.rho:.3f}, BIC = {fit0.bic:.1f}")

# ---------------------------------------------------------------------------
# The full estimator screens every candidate cluster at the null estimate
# and re-fits rho jointly with the best one only on strong BIC evidence
# (difference > 10).
candidates = enumerate_candidates(ds0)
sel = estimate_rho(y, W, candidates)
print(f"selected rho = {sel.rho_hat:.3f} "
      f"(BIC difference {sel.delta_bic:.1f}, "
      f"{'cluster' if sel.from_h1 else 'null'} fit)")

# Filtering strips the correlation: Moran's I drops to noise level.
yf = spatial_filter(y, W, sel.rho_hat)
print(f"Moran's I after filtering: {morans_i(W, yf):+.4f}")

# ---------------------------------------------------------------------------
# On this correlated null field, the plain Gaussian scan flags a spurious
# cluster more often than its nominal level; the SAR-adjusted scan does not.
plain = detect(ds, method=ScanMethod.GAUSSIAN, M=199, seed=1)
adjusted = detect(ds, method=ScanMethod.P_SAR, W=W, M=199, seed=1)
for name, res in [("gaussian", plain), ("p-sar", adjusted)]:
    rep = res.reports[0] if res.reports else res.best_insignificant
    flag = "significant" if res.reports else "not significant"
    print(f"{name}: best p = {rep.p_value:.3f} ({flag})")

# ---------------------------------------------------------------------------
# With a genuine cluster on top of the correlation, the adjusted scan still
# finds it.
y2 = generate_dataset(cfg, rho=0.6, c=1.5, rng=rng)
res = detect(ds0.with_values(y2), method=ScanMethod.P_SAR, W=W, M=199, seed=2)
if res.reports:
    hit = set(res.reports[0].cluster.members) & set(truth.members)
    print(f"\nplanted cluster: recovered {len(hit)}/{truth.size} member sites "
          f"at p = {res.reports[0].p_value:.3f}")
