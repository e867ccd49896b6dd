"""
Pseudo-positives vs random label noise
======================================

DisturbLabel relabels K training records at random; DisturbLabel* appends K
pool vectors with random labels.  Both add as much "noise" as K
pseudo-positives, but without the nearest-neighbor structure.
"""

from scipy.stats import binomtest

from ppreid import RunCache, run_baseline, run_disturb, run_ppr
from ppreid.benchmarks import standard_benchmark

config = standard_benchmark(repeats=10, k_values=(140,))
cache = RunCache()
rows = {"baseline": [], "ppr": [], "disturb": [], "disturb_star": []}
for seed in config.seeds():
    rows["baseline"].append(run_baseline(config, seed, cache).report.rank1)
    rows["ppr"].append(run_ppr(config, 140, seed, cache).report.rank1)
    rows["disturb"].append(run_disturb(config, 140, seed, cache=cache).report.rank1)
    rows["disturb_star"].append(run_disturb(config, 140, seed, star=True, cache=cache).report.rank1)

for name, values in rows.items():
    print("%-13s mean rank-1 %.3f" % (name, sum(values) / len(values)))

# paired sign test: does PPR beat the baseline seed by seed?
wins = sum(p > b for p, b in zip(rows["ppr"], rows["baseline"]))
losses = sum(p < b for p, b in zip(rows["ppr"], rows["baseline"]))
print("PPR vs baseline: %d wins, %d losses, one-sided p = %.3g"
      % (wins, losses, binomtest(wins, wins + losses, alternative="greater").pvalue))
