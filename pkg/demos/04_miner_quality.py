"""
Does a better miner help?
=========================

Pseudo-positives are only as good as the features used to retrieve them.
Mine once with a half-trained model and once with a well-trained one,
loaded from checkpoints, and retrain the same recipe on each.
"""

import tempfile
from dataclasses import replace
from pathlib import Path

from ppreid import run_ppr, save_model, train
from ppreid.benchmarks import standard_benchmark
from ppreid.data import canonicalize_labels
from ppreid.seeding import derive_seed
from ppreid.synth import generate

base = standard_benchmark(repeats=6, k_values=(140,), methods=("baseline", "ppr"))
workdir = Path(tempfile.mkdtemp())

results = {"weak": [], "strong": [], "own baseline": []}
for seed in base.seeds():
    # rebuild the exact data this seed will see
    train_set, *_ = generate(replace(base.synth, seed=derive_seed(seed, "synth")))
    train_set, _ = canonicalize_labels(train_set)
    for name, epochs in (("weak", 2), ("strong", 40)):
        miner, _ = train(train_set, None, replace(base.train, epochs=epochs, seed=seed))
        path = workdir / f"{name}-{seed}.npz"
        save_model(path, miner)
        cfg = replace(base, miner_checkpoint=str(path))
        results[name].append(run_ppr(cfg, 140, seed).report.rank1)
    results["own baseline"].append(run_ppr(base, 140, seed).report.rank1)

for name, values in results.items():
    print("miner %-13s PPR rank-1 %.3f" % (name, sum(values) / len(values)))
