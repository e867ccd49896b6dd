"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line in ``RESULTS``; ``conftest.py`` prints
them at the end of the session.  Running this file directly also works:
``python3 tests/test_acceptance.py``.
"""

import json
import math
import random
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import binomtest

from oracles import (
    brute_cross_camera,
    brute_nearest,
    brute_single_shot_trial,
    finite_difference_grads,
    random_instance,
    random_small_model,
    relative_error,
)
from ppreid.cli import main as cli_main
from ppreid.data import LabeledDataset, UnlabeledPool, read_embeddings, write_embeddings
from ppreid.evaluation import (
    EvaluationError,
    ProtocolConfig,
    average_precision,
    evaluate_cross_camera,
    evaluate_single_shot,
    read_report,
    sample_single_shot_gallery,
    write_report,
)
from ppreid.experiment import read_record, run_baseline, run_ppr
from ppreid.benchmarks import standard_benchmark
from ppreid.mining import MinedPair, PseudoPositiveSet, mine_nearest, read_pseudo_positives, write_pseudo_positives
from ppreid.model import ModelParams, TrainConfig, load_model, loss_and_gradient, save_model, sgd_step

ROOT = Path(__file__).resolve().parents[1]
BENCHMARK_CONFIG = ROOT / "configs" / "standard_benchmark.json"
RESULTS: dict = {}


def record(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[number] = line
    print(line)
    assert ok, line


# -- 1 ----------------------------------------------------------------------


def test_criterion_1_gradients():
    g = np.random.default_rng(1)
    started = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        W, B, X, y = random_small_model(g)
        _, grads = loss_and_gradient(ModelParams(W, B), X, y)
        fd = finite_difference_grads([w.tolist() for w in W], [b.tolist() for b in B], X.tolist(), y.tolist())
        for a, f in zip(grads, fd):
            for av, fv in zip(np.ravel(a), np.ravel(f)):
                worst = max(worst, relative_error(float(av), fv))
    elapsed = time.perf_counter() - started
    record(1, worst <= 1e-5 and elapsed < 10.0,
           f"100 models, worst relative error {worst:.2e} (<= 1e-5), {elapsed:.2f}s (< 10s)")


# -- 2 ----------------------------------------------------------------------


def _scalar(theta):
    return ModelParams([np.array([[theta]])], [np.array([0.0])])


def test_criterion_2_optimizer():
    cfg = TrainConfig(batch_size=1, learning_rate=0.1, momentum=0.9, weight_decay=0.0)
    grad = [np.ones((1, 1)), np.zeros(1)]
    m2 = sgd_step(sgd_step(_scalar(0.0), grad, cfg, 0), grad, cfg, 0)
    theta2 = float(m2.weights[0][0, 0])
    defaults = TrainConfig(batch_size=1)
    decay = float(sgd_step(_scalar(1.0), [np.zeros((1, 1)), np.zeros(1)], defaults, 0).weights[0][0, 0])
    ok = abs(theta2 + 0.29) <= 1e-12 and decay == 0.9999995
    record(2, ok, f"theta2 = {theta2!r} (-0.29 to 1e-12), decay-only step = {decay!r} (exactly 0.9999995)")


# -- 3 ----------------------------------------------------------------------


def _mining_instance(g, i):
    nq = int(g.integers(1, 501)) if i % 10 else 500
    npool = int(g.integers(1, 1001)) if i % 10 else 1000
    dim = int(g.integers(1, 9))
    P = g.normal(size=(npool, dim))
    if i % 2 == 0:
        # coarse values plus copied rows force exact ties
        P = np.round(P, 1)
        dup = g.integers(0, npool, size=npool // 3)
        P[g.integers(0, npool, size=dup.size)] = P[dup]
        Q = np.vstack([P[g.integers(0, npool, size=nq // 2)], np.round(g.normal(size=(nq - nq // 2, dim)), 1)])
    else:
        Q = g.normal(size=(nq, dim))
    return Q, P


def test_criterion_3_mining():
    g = np.random.default_rng(3)
    mismatches, ties = 0, 0
    for i in range(50):
        Q, P = _mining_instance(g, i)
        got = [(p.pool_index, p.distance) for p in mine_nearest(Q, P)]
        want = brute_nearest(Q.tolist(), P.tolist())
        mismatches += got != want
        _, counts = np.unique(P, axis=0, return_counts=True)
        ties += int((counts > 1).any())
    record(3, mismatches == 0 and ties > 0,
           f"50 instances up to 500x1000, {mismatches} mismatches, {ties} with duplicated pool rows")


# -- 4 ----------------------------------------------------------------------


def _single_shot_oracle(inst, seed, trials, gallery):
    (qv, qi, _), (gv, gi, _) = inst
    cmcs, aps = [], []
    for t in range(trials):
        sub = sample_single_shot_gallery(gallery, seed, t).tolist()
        assert sorted(gi[j] for j in sub) == sorted(set(gi))
        cmc, ap = brute_single_shot_trial(qv, qi, gv, gi, sub)
        cmcs.append(cmc)
        aps.append(ap)
    cmc = [math.fsum(col) / trials for col in zip(*cmcs)]
    per_query = [math.fsum(col) / trials for col in zip(*aps)]
    return cmc, math.fsum(per_query) / len(per_query), per_query


def test_criterion_4_metrics():
    r = random.Random(4)
    mismatches, reports, monotone = 0, 0, True
    for i in range(100):
        inst = random_instance(r, n_ids=r.randint(1, 20), n_cams=r.randint(1, 3), dim=r.randint(1, 4),
                               per_id_max=r.randint(1, 4), q_per_id=r.randint(1, 2))
        if i % 3 == 0:
            # quantized vectors create distance ties
            for part in inst:
                part[0][:] = [[round(v) for v in vec] for vec in part[0]]
        (qv, qi, qc), (gv, gi, gc) = inst
        q, g = LabeledDataset(qv, qi, qc), LabeledDataset(gv, gi, gc)

        expected = brute_cross_camera(qv, qi, qc, gv, gi, gc)
        try:
            rep = evaluate_cross_camera(q, g)
        except EvaluationError:
            rep = None
        if expected is None or rep is None:
            mismatches += (expected is None) != (rep is None)
        else:
            cmc, mAP, aps, skipped = expected
            mismatches += (list(rep.cmc), rep.map, list(rep.per_query_ap), rep.skipped) != (cmc, mAP, aps, skipped)
            monotone &= all(a <= b for a, b in zip(rep.cmc, rep.cmc[1:]))
            reports += 1

        trials = r.randint(1, 5)
        ss = evaluate_single_shot(q, g, ProtocolConfig(mode="single-shot-cmc", trials=trials, seed=i))
        cmc, mAP, per_query = _single_shot_oracle(inst, i, trials, g)
        mismatches += (list(ss.cmc), ss.map, list(ss.per_query_ap)) != (cmc, mAP, per_query)
        monotone &= all(a <= b for a, b in zip(ss.cmc, ss.cmc[1:]))
        reports += 1
    ap = average_precision([1, 0, 1, 0, 0])
    ok = mismatches == 0 and monotone and abs(ap - 0.833333) <= 1e-6 and abs(ap - 5 / 6) <= 1e-9
    record(4, ok, f"100 instances x 2 protocols, {mismatches} mismatches, CMC monotone on {reports} reports: "
                  f"{monotone}, AP example = {ap:.9f}")


# -- 5 and 6 ----------------------------------------------------------------


@pytest.fixture(scope="module")
def benchmark_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench_a")
    started = time.perf_counter()
    rc = cli_main(["--out-dir", str(out), "run", "--config", str(BENCHMARK_CONFIG)])
    elapsed = time.perf_counter() - started
    assert rc == 0
    return out, elapsed


def _rank1_by_seed(out, method, k):
    recs = [read_record(p) for p in sorted((out / "runs").glob("*/record.json"))]
    return {r.seed: r.report.rank1 for r in recs if r.method == method and r.k == k}


def test_criterion_5_trends(benchmark_run):
    out, elapsed = benchmark_run
    config = json.loads(BENCHMARK_CONFIG.read_text())
    small, large = config["k_values"]
    base = _rank1_by_seed(out, "baseline", None)
    ppr_small = _rank1_by_seed(out, "ppr", small)
    ppr_large = _rank1_by_seed(out, "ppr", large)
    dist = _rank1_by_seed(out, "disturb", small)
    star = _rank1_by_seed(out, "disturb_star", small)
    seeds = sorted(base)
    wins = sum(ppr_small[s] > base[s] for s in seeds)
    losses = sum(ppr_small[s] < base[s] for s in seeds)
    p = binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue if wins + losses else 1.0
    mean = {name: float(np.mean([d[s] for s in seeds]))
            for name, d in [("baseline", base), ("ppr_small", ppr_small), ("ppr_large", ppr_large),
                            ("disturb", dist), ("disturb_star", star)]}
    checks = {
        "a": mean["ppr_small"] > mean["baseline"] and p < 0.05,
        "b": mean["ppr_large"] < mean["ppr_small"],
        "c": mean["disturb"] < mean["ppr_small"] and mean["disturb_star"] < mean["ppr_small"],
        "runtime": elapsed < 300,
    }
    detail = (f"{len(seeds)} seeds; (a) PPR@{small} {mean['ppr_small']:.4f} vs baseline {mean['baseline']:.4f}, "
              f"sign test {wins}-{losses} p={p:.2g}; (b) PPR@{large} {mean['ppr_large']:.4f}; "
              f"(c) DisturbLabel {mean['disturb']:.4f}, DisturbLabel* {mean['disturb_star']:.4f}; "
              f"{elapsed:.1f}s; failed: {[k for k, v in checks.items() if not v] or 'none'}")
    record(5, len(seeds) >= 10 and all(checks.values()), detail)


def _strip_clock(text):
    return [line for line in text.splitlines() if '"wall_clock_seconds"' not in line]


def test_criterion_6_determinism(benchmark_run, tmp_path):
    first, _ = benchmark_run
    assert cli_main(["--out-dir", str(tmp_path), "run", "--config", str(BENCHMARK_CONFIG)]) == 0
    a = {p.relative_to(first): p.read_text() for p in (first / "runs").glob("*/record.json")}
    b = {p.relative_to(tmp_path): p.read_text() for p in (tmp_path / "runs").glob("*/record.json")}
    differing = sum(_strip_clock(a[k]) != _strip_clock(b.get(k, "")) for k in a)
    ok = a.keys() == b.keys() and differing == 0 and len(a) > 0
    record(6, ok, f"{len(a)} record.json files from two CLI runs, {differing} differ outside the wall-clock field")


# -- 7 ----------------------------------------------------------------------


def test_criterion_7_k_zero():
    cfg = standard_benchmark(repeats=3)
    equal = [run_ppr(cfg, 0, s).report == run_baseline(cfg, s).report for s in cfg.seeds()]
    record(7, all(equal), f"run_ppr(K=0) == run_baseline report on seeds {cfg.seeds()}: {equal}")


# -- 8 ----------------------------------------------------------------------


def _rand_floats(g, shape):
    return g.normal(size=shape) * 10.0 ** g.integers(-300, 300, size=shape)


def test_criterion_8_round_trips(tmp_path):
    g = np.random.default_rng(8)
    r = random.Random(8)
    failures = {"embeddings": 0, "models": 0, "pseudo": 0, "reports": 0}
    for i in range(1000):
        n, d = int(g.integers(1, 6)), int(g.integers(1, 5))
        if i % 2:
            data = LabeledDataset(_rand_floats(g, (n, d)), g.integers(-5, 10**9, n), g.integers(0, 9, n))
        else:
            tags = [r.choice([None, "a", "cam 3", "ü"]) for _ in range(n)]
            data = UnlabeledPool(_rand_floats(g, (n, d)), tags if any(tags) else None)
        write_embeddings(tmp_path / "e.jsonl", data)
        back = read_embeddings(tmp_path / "e.jsonl")
        failures["embeddings"] += not (type(back) is type(data) and back == data
                                       and back.vectors.tobytes() == data.vectors.tobytes())

        sizes = [int(s) for s in g.integers(1, 5, size=int(g.integers(2, 5)))]
        shapes = list(zip(sizes, sizes[1:]))
        model = ModelParams([g.normal(size=s) for s in shapes], [g.normal(size=s[1]) for s in shapes],
                            [g.normal(size=s) for s in shapes], [g.normal(size=s[1]) for s in shapes])
        cfg = TrainConfig(batch_size=int(g.integers(1, 64)), seed=i)
        save_model(tmp_path / "m.npz", model, cfg)
        loaded, meta = load_model(tmp_path / "m.npz")
        failures["models"] += not (loaded == model and meta["config_hash"] == cfg.config_hash()
                                   and TrainConfig.from_dict(meta["config"]) == cfg)

        m = int(g.integers(0, 8))
        pairs = tuple(MinedPair(int(a), int(b), float(abs(x)), int(c)) for a, b, x, c in zip(
            g.integers(0, 10**6, m), g.permutation(10**3)[:m], _rand_floats(g, m), g.integers(0, 100, m)))
        pseudo = PseudoPositiveSet(pairs, m)
        write_pseudo_positives(tmp_path / "p.jsonl", pseudo)
        failures["pseudo"] += read_pseudo_positives(tmp_path / "p.jsonl", k=m) != pseudo

        inst = random_instance(r, n_ids=r.randint(2, 6), n_cams=2, dim=2, per_id_max=3)
        q = LabeledDataset(*inst[0])
        gal = LabeledDataset(*inst[1])
        mode = r.choice(["cross-camera", "single-shot-cmc"])
        try:
            rep = (evaluate_cross_camera if mode == "cross-camera" else evaluate_single_shot)(
                q, gal, ProtocolConfig(mode=mode, trials=r.randint(1, 3), seed=r.randrange(10**9)))
        except EvaluationError:
            rep = evaluate_single_shot(q, gal, ProtocolConfig(mode="single-shot-cmc", trials=2, seed=i))
        write_report(tmp_path / "r.json", rep)
        failures["reports"] += read_report(tmp_path / "r.json") != rep
    record(8, not any(failures.values()), f"1000 randomized cases per kind, failures {failures}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
