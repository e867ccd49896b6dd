"""End-to-end experiments: baseline, pseudo-positive retraining, label-noise baselines.

Every run derives its random streams from one run seed through labeled
derivation (``synth``, ``split``, ``train``, ``select``, ``disturb``,
``protocol``), so two methods compared at the same seed differ only in the
contents of their training set.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from .data import LabeledDataset, SplitSpec, UnlabeledPool, canonicalize_labels, read_embeddings, split
from .evaluation import EvalReport, ProtocolConfig, evaluate
from .mining import disturb_labels, disturb_star, merge, mine_nearest, select_pseudo_positives
from .model import ModelParams, TrainConfig, extract_features, load_model, train
from .seeding import derive_seed
from .synth import SynthConfig, generate

log = logging.getLogger(__name__)

METHODS = ("baseline", "ppr", "disturb", "disturb_star")


@dataclass(frozen=True)
class ExperimentConfig:
    train: TrainConfig
    synth: Optional[SynthConfig] = None
    data: Optional[dict] = None
    k_values: tuple = (100,)
    methods: tuple = ("baseline", "ppr")
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    repeats: int = 1
    seed: int = 0
    train_fraction: float = 1.0
    vary_data: bool = True
    normalize_features: bool = False
    miner_checkpoint: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "k_values", tuple(int(k) for k in self.k_values))
        object.__setattr__(self, "methods", tuple(self.methods))
        if (self.synth is None) == (self.data is None):
            raise ValueError("give exactly one of 'synth' or 'data'")
        if self.data is not None:
            missing = {"train", "query", "gallery", "pool"} - set(self.data)
            if missing:
                raise ValueError(f"data paths missing: {sorted(missing)}")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        needs_k = {"ppr", "disturb", "disturb_star"} & set(self.methods)
        if needs_k and not self.k_values:
            raise ValueError("k_values must be non-empty for ppr/disturb methods")
        if any(k < 0 for k in self.k_values):
            raise ValueError("k values must be >= 0")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    def to_dict(self) -> dict:
        return {
            "train": self.train.to_dict(),
            "synth": self.synth.to_dict() if self.synth else None,
            "data": dict(self.data) if self.data else None,
            "k_values": list(self.k_values),
            "methods": list(self.methods),
            "protocol": self.protocol.to_dict(),
            "repeats": self.repeats,
            "seed": self.seed,
            "train_fraction": self.train_fraction,
            "vary_data": self.vary_data,
            "normalize_features": self.normalize_features,
            "miner_checkpoint": self.miner_checkpoint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d["train"] = TrainConfig.from_dict(d["train"])
        if d.get("synth") is not None:
            d["synth"] = SynthConfig.from_dict(d["synth"])
        if d.get("protocol") is not None:
            d["protocol"] = ProtocolConfig.from_dict(d["protocol"])
        else:
            d.pop("protocol", None)
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def seeds(self) -> list[int]:
        return [self.seed + r for r in range(self.repeats)]


@dataclass(frozen=True)
class RunRecord:
    method: str
    k: Optional[int]
    seed: int
    report: EvalReport
    config_hash: str
    wall_clock_seconds: float = 0.0
    train_size: int = 0
    added: int = 0
    final_loss: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "k": self.k,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "train_size": self.train_size,
            "added": self.added,
            "final_loss": self.final_loss,
            "report": self.report.to_dict(),
            "wall_clock_seconds": self.wall_clock_seconds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            method=d["method"], k=d["k"], seed=d["seed"],
            report=EvalReport.from_dict(d["report"]), config_hash=d["config_hash"],
            wall_clock_seconds=d.get("wall_clock_seconds", 0.0),
            train_size=d.get("train_size", 0), added=d.get("added", 0),
            final_loss=d.get("final_loss"),
        )

    def run_id(self) -> str:
        key = f"{self.config_hash}:{self.method}:{self.k}:{self.seed}"
        return hashlib.sha256(key.encode()).hexdigest()[:16]


def load_experiment_config(path) -> ExperimentConfig:
    """Read a JSON config; relative data paths resolve against its directory."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    cfg = ExperimentConfig.from_dict(raw)
    if cfg.data:
        base = path.parent
        data = {k: str(base / v) if not os.path.isabs(v) else v for k, v in cfg.data.items()}
        cfg = replace(cfg, data=data)
    return cfg


# ---------------------------------------------------------------------------
# per-seed state


@dataclass
class _SeedState:
    train: LabeledDataset
    val: LabeledDataset
    query: LabeledDataset
    gallery: LabeledDataset
    pool: UnlabeledPool
    train_config: TrainConfig
    baseline: Optional[ModelParams] = None
    baseline_record: Optional[RunRecord] = None


class RunCache:
    """Loaded data and trained baseline models keyed by (config hash, seed)."""

    def __init__(self):
        self._states: dict = {}

    def state(self, config: ExperimentConfig, seed: int) -> _SeedState:
        key = (config.config_hash(), seed)
        if key not in self._states:
            self._states[key] = _prepare(config, seed)
        return self._states[key]


def _prepare(config: ExperimentConfig, seed: int) -> _SeedState:
    if config.synth is not None:
        synth = config.synth
        if config.vary_data:
            synth = replace(synth, seed=derive_seed(seed, "synth"))
        train_set, query, gallery, pool = generate(synth)
    else:
        train_set = read_embeddings(config.data["train"])
        query = read_embeddings(config.data["query"])
        gallery = read_embeddings(config.data["gallery"])
        pool = read_embeddings(config.data["pool"])
        if not all(isinstance(d, LabeledDataset) for d in (train_set, query, gallery)):
            raise ValueError("train/query/gallery files must hold labeled rows")
        if not isinstance(pool, UnlabeledPool):
            raise ValueError(f"{config.data['pool']}: pool file must hold unlabeled rows")
    train_set, _ = canonicalize_labels(train_set)
    train_part, val_part = split(
        train_set, SplitSpec(config.train_fraction, derive_seed(seed, "split"), "by-record")
    )
    tc = replace(config.train, seed=derive_seed(seed, "train"))
    return _SeedState(train_part, val_part, query, gallery, pool, tc)


def _fit_and_score(state: _SeedState, train_set: LabeledDataset, config: ExperimentConfig, seed: int):
    model, train_log = train(train_set, state.val if len(state.val) else None, state.train_config)
    q = state.query.with_vectors(extract_features(model, state.query))
    g = state.gallery.with_vectors(extract_features(model, state.gallery))
    protocol = replace(config.protocol, seed=derive_seed(seed, "protocol"))
    return model, evaluate(q, g, protocol), train_log.epoch_loss[-1]


def _record(config, method, k, seed, report, started, train_size, added, loss) -> RunRecord:
    return RunRecord(
        method=method, k=k, seed=seed, report=report, config_hash=config.config_hash(),
        wall_clock_seconds=time.perf_counter() - started, train_size=train_size,
        added=added, final_loss=loss,
    )


def run_baseline(config: ExperimentConfig, seed: int, cache: Optional[RunCache] = None) -> RunRecord:
    """Train on the labeled set alone and evaluate; the model is cached for mining."""
    cache = cache or RunCache()
    state = cache.state(config, seed)
    if state.baseline_record is None:
        started = time.perf_counter()
        model, report, loss = _fit_and_score(state, state.train, config, seed)
        state.baseline = model
        state.baseline_record = _record(config, "baseline", None, seed, report, started,
                                        len(state.train), 0, loss)
    return state.baseline_record


def _miner(config: ExperimentConfig, state: _SeedState, seed: int, cache: RunCache) -> ModelParams:
    if config.miner_checkpoint:
        model, _ = load_model(config.miner_checkpoint)
        return model
    if state.baseline is None:
        run_baseline(config, seed, cache)
    return state.baseline


def run_ppr(config: ExperimentConfig, k: int, seed: int, cache: Optional[RunCache] = None) -> RunRecord:
    """Mine pseudo-positives with the baseline (or configured miner) and retrain from scratch."""
    cache = cache or RunCache()
    state = cache.state(config, seed)
    started = time.perf_counter()
    if k > len(state.pool):
        log.warning("k=%d exceeds the pool size %d; clamping", k, len(state.pool))
    k_eff = min(k, len(state.pool))
    miner = _miner(config, state, seed, cache)
    pairs = mine_nearest(
        extract_features(miner, state.train),
        extract_features(miner, state.pool),
        state.train.identities,
        normalize=config.normalize_features,
    )
    pseudo = select_pseudo_positives(pairs, k_eff, derive_seed(seed, "select"))
    merged = merge(state.train, pseudo, state.pool)
    _, report, loss = _fit_and_score(state, merged, config, seed)
    return _record(config, "ppr", k, seed, report, started, len(merged), len(pseudo), loss)


def run_disturb(
    config: ExperimentConfig, count: int, seed: int, star: bool = False,
    cache: Optional[RunCache] = None,
) -> RunRecord:
    """DisturbLabel (relabel ``count`` records) or DisturbLabel* (append ``count`` random pool items)."""
    cache = cache or RunCache()
    state = cache.state(config, seed)
    started = time.perf_counter()
    limit = len(state.pool) if star else len(state.train)
    if count > limit:
        log.warning("count=%d exceeds the available %d records; clamping", count, limit)
    n = min(count, limit)
    disturb_seed = derive_seed(seed, "disturb")
    if star:
        data = disturb_star(state.train, state.pool, n, disturb_seed)
    else:
        data = disturb_labels(state.train, n, disturb_seed)
    _, report, loss = _fit_and_score(state, data, config, seed)
    method = "disturb_star" if star else "disturb"
    return _record(config, method, count, seed, report, started, len(data), n if star else 0, loss)


def run_sweep(config: ExperimentConfig, out_dir=None, cache: Optional[RunCache] = None) -> list[RunRecord]:
    """Every method x k x seed in ``config``; optionally writes records and comparison tables."""
    cache = cache or RunCache()
    records = []
    for seed in config.seeds():
        if "baseline" in config.methods:
            records.append(run_baseline(config, seed, cache))
        for k in config.k_values:
            if "ppr" in config.methods:
                records.append(run_ppr(config, k, seed, cache))
            if "disturb" in config.methods:
                records.append(run_disturb(config, k, seed, star=False, cache=cache))
            if "disturb_star" in config.methods:
                records.append(run_disturb(config, k, seed, star=True, cache=cache))
    if out_dir is not None:
        for rec in records:
            write_record(out_dir, rec)
        write_compare(out_dir, compare(records))
    return records


# ---------------------------------------------------------------------------
# records and comparison tables


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_record(out_dir, record: RunRecord) -> Path:
    path = Path(out_dir) / "runs" / record.run_id() / "record.json"
    _write_text(path, json.dumps(record.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def read_record(path) -> RunRecord:
    with open(path, encoding="utf-8") as fh:
        return RunRecord.from_dict(json.load(fh))


COMPARE_COLUMNS = ("method", "k", "n", "rank1_mean", "rank1_std", "map_mean", "map_std")


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    # population standard deviation, so a single run reports 0.0
    mean = math.fsum(values) / len(values)
    var = math.fsum((v - mean) ** 2 for v in values) / len(values)
    return mean, math.sqrt(var)


def compare(records: Sequence[RunRecord]) -> list[dict]:
    """One row per (method, k) with mean/std of rank-1 and mAP over seeds."""
    if not records:
        raise ValueError("nothing to compare")
    groups: dict = {}
    for rec in records:
        groups.setdefault((rec.method, rec.k), []).append(rec)
    order = {m: i for i, m in enumerate(METHODS)}
    rows = []
    for method, k in sorted(groups, key=lambda mk: (order.get(mk[0], len(order)), mk[0],
                                                    -1 if mk[1] is None else mk[1])):
        recs = groups[(method, k)]
        r1_mean, r1_std = _mean_std([r.report.rank1 for r in recs])
        map_mean, map_std = _mean_std([r.report.map for r in recs])
        rows.append({"method": method, "k": k, "n": len(recs), "rank1_mean": r1_mean,
                     "rank1_std": r1_std, "map_mean": map_mean, "map_std": map_std})
    return rows


def write_compare(out_dir, rows: list[dict]) -> None:
    out_dir = Path(out_dir)
    _write_text(out_dir / "compare.json", json.dumps(rows, indent=2) + "\n")
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COMPARE_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: ("" if row[c] is None else repr(row[c]) if isinstance(row[c], float)
                             else row[c]) for c in COMPARE_COLUMNS})
    _write_text(out_dir / "compare.csv", buf.getvalue())


def read_compare_csv(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for raw in csv.DictReader(fh):
            rows.append({
                "method": raw["method"],
                "k": int(raw["k"]) if raw["k"] else None,
                "n": int(raw["n"]),
                **{c: float(raw[c]) for c in ("rank1_mean", "rank1_std", "map_mean", "map_std")},
            })
    return rows
