"""
How many pseudo-positives?
==========================

A few borrowed samples regularize; flooding the training set with them
mostly adds label noise.  Sweep K over several seeds.
"""

from ppreid import run_sweep
from ppreid.benchmarks import standard_benchmark
from ppreid.experiment import compare

config = standard_benchmark(repeats=8, k_values=(0, 40, 140, 500, 2000), methods=("baseline", "ppr"))
records = run_sweep(config)

print("%-9s %5s  %-16s %s" % ("method", "K", "rank-1", "mAP"))
for row in compare(records):
    k = "" if row["k"] is None else row["k"]
    print("%-9s %5s  %.3f +- %.3f    %.3f" % (row["method"], k, row["rank1_mean"], row["rank1_std"],
                                              row["map_mean"]))

# K beyond the number of distinct mined pool vectors saturates
added = sorted({r.added for r in records if r.method == "ppr" and r.k == 2000})
print("samples actually added at K=2000:", added)
