"""Compare scan methods across autocorrelation and effect-size settings.

The simulation harness replays the standard comparison experiment: plant a
cluster of strength c in a SAR field with autoregression rho, run each scan
method, and tabulate rejection rate (power), site-level recall (tp), and
false-alarm fraction (fp) per cell.

This demo uses a reduced grid so it finishes in about a minute; raise S for
smoother rates.
"""

from sarscan import ScanMethod, default_config, results_to_csv, run_grid

# ---------------------------------------------------------------------------
# A 2 x 2 slice of the full design: independent vs strongly correlated
# noise, no cluster vs a strong cluster.
cfg = default_config(
    layout="french94",
    rho_grid=(0.0, 0.8),
    c_grid=(0.0, 1.5),
    S=25,          # replicates per cell
    M=199,         # permutations per test
    seed=2026,
)

result = run_grid(cfg, methods=(ScanMethod.GAUSSIAN, ScanMethod.P_SAR,
                                ScanMethod.NP_SAR))
print(results_to_csv(result))

# ---------------------------------------------------------------------------
# Reading the table: at c = 0 the power column is the Type I error.  The
# Gaussian scan inflates sharply at rho = 0.8 while the SAR variants hold
# near the nominal 0.05; at c = 1.5 all methods have high power.
for cell in result.cells:
    if cell.c == 0.0:
        tag = "inflated" if cell.power > 0.10 else "near nominal"
        print(f"{cell.method.value:9s} rho={cell.rho}: "
              f"Type I = {cell.power:.2f} ({tag})")
