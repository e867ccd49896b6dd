"""Euclidean ranking, CMC and mAP under the cross-camera and single-shot protocols.

All reductions go through :func:`math.fsum`, so every reported number is a
correctly rounded function of its terms and does not depend on summation
order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import LabeledDataset, _atomic_write_lines
from .mining import squared_distances
from .seeding import rng_for

CROSS_CAMERA = "cross-camera"
SINGLE_SHOT = "single-shot-cmc"


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ProtocolConfig:
    mode: str = CROSS_CAMERA
    trials: int = 20
    seed: int = 0
    max_rank: Optional[int] = None

    def __post_init__(self):
        if self.mode not in (CROSS_CAMERA, SINGLE_SHOT):
            raise ValueError(f"unknown protocol mode {self.mode!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.max_rank is not None and self.max_rank < 1:
            raise ValueError("max_rank must be >= 1")

    def to_dict(self) -> dict:
        return {"mode": self.mode, "trials": self.trials, "seed": self.seed,
                "max_rank": self.max_rank}

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolConfig":
        return cls(**d)


@dataclass(frozen=True)
class EvalReport:
    cmc: tuple
    map: float
    per_query_ap: tuple
    num_queries_evaluated: int
    skipped: int
    protocol: dict = field(default_factory=dict)
    seed: Optional[int] = None

    @property
    def rank1(self) -> float:
        return self.cmc[0]

    def to_dict(self) -> dict:
        return {
            "cmc": list(self.cmc),
            "map": self.map,
            "per_query_ap": list(self.per_query_ap),
            "num_queries_evaluated": self.num_queries_evaluated,
            "skipped": self.skipped,
            "protocol": dict(self.protocol),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            cmc=tuple(float(v) for v in d["cmc"]),
            map=float(d["map"]),
            per_query_ap=tuple(float(v) for v in d["per_query_ap"]),
            num_queries_evaluated=int(d["num_queries_evaluated"]),
            skipped=int(d["skipped"]),
            protocol=dict(d.get("protocol", {})),
            seed=d.get("seed"),
        )


def write_report(path, report: EvalReport) -> None:
    _atomic_write_lines(path, [json.dumps(report.to_dict(), indent=2, sort_keys=True)])


def read_report(path) -> EvalReport:
    with open(path, encoding="utf-8") as fh:
        return EvalReport.from_dict(json.load(fh))


def _vectors(gallery) -> np.ndarray:
    return np.atleast_2d(np.asarray(getattr(gallery, "vectors", gallery), dtype=np.float64))


def rank_gallery(query, gallery, exclusions=()) -> np.ndarray:
    """Gallery indices by ascending distance to ``query``; ties keep index order."""
    G = _vectors(gallery)
    q = np.asarray(query, dtype=np.float64).reshape(1, -1)
    if q.shape[1] != G.shape[1]:
        raise EvaluationError("query and gallery dimensions differ")
    keep = np.ones(G.shape[0], dtype=bool)
    excl = np.asarray(list(exclusions), dtype=np.int64)
    keep[excl] = False
    candidates = np.flatnonzero(keep)
    if candidates.size == 0:
        raise EvaluationError("empty effective gallery")
    d2 = squared_distances(q, G[candidates])[0]
    return candidates[np.argsort(d2, kind="stable")]


def average_precision(relevant) -> float:
    """AP of a ranked list of relevance flags (first element = rank 1)."""
    flags = np.asarray(relevant, dtype=bool)
    hits = np.flatnonzero(flags)
    if hits.size == 0:
        raise EvaluationError("average precision needs at least one relevant item")
    precisions = np.arange(1, hits.size + 1) / (hits + 1)
    return math.fsum(precisions.tolist()) / hits.size


def _score_query(d2_row, relevant, keep):
    """(rank of first hit starting at 1, AP) for one query over the kept gallery."""
    candidates = np.flatnonzero(keep)
    order = candidates[np.argsort(d2_row[candidates], kind="stable")]
    flags = relevant[order]
    first = int(np.argmax(flags)) + 1
    return first, average_precision(flags)


def _cmc_from_ranks(first_ranks, length: int) -> list:
    counts = np.zeros(length + 1, dtype=np.int64)
    for r in first_ranks:
        if r <= length:
            counts[r] += 1
    cum = np.cumsum(counts)[1:]
    n = len(first_ranks)
    return [int(c) / n for c in cum]


def _max_rank(config: ProtocolConfig, gallery_size: int) -> int:
    if config.max_rank is None:
        return gallery_size
    if config.max_rank > gallery_size:
        raise EvaluationError(
            f"max_rank {config.max_rank} exceeds the gallery size {gallery_size}"
        )
    return config.max_rank


def evaluate_cross_camera(
    queries: LabeledDataset, gallery: LabeledDataset, config: Optional[ProtocolConfig] = None
) -> EvalReport:
    """Market-1501 style evaluation.

    Same-identity gallery entries from the query's own camera are junk and
    are dropped from the ranking; a match is the same identity seen by a
    different camera.  Queries without any such match are skipped.
    """
    config = config or ProtocolConfig(mode=CROSS_CAMERA)
    length = _max_rank(config, len(gallery))
    d2 = squared_distances(_vectors(queries), _vectors(gallery))
    first_ranks, aps = [], []
    skipped = 0
    for i in range(len(queries)):
        same_id = gallery.identities == queries.identities[i]
        same_cam = gallery.cameras == queries.cameras[i]
        relevant = same_id & ~same_cam
        if not relevant.any():
            skipped += 1
            continue
        first, ap = _score_query(d2[i], relevant, ~(same_id & same_cam))
        first_ranks.append(first)
        aps.append(ap)
    if not aps:
        raise EvaluationError("no query has a cross-camera match in the gallery")
    return EvalReport(
        cmc=tuple(_cmc_from_ranks(first_ranks, length)),
        map=math.fsum(aps) / len(aps),
        per_query_ap=tuple(aps),
        num_queries_evaluated=len(aps),
        skipped=skipped,
        protocol={**config.to_dict(), "mode": CROSS_CAMERA},
        seed=config.seed,
    )


def sample_single_shot_gallery(gallery: LabeledDataset, seed: int, trial: int) -> np.ndarray:
    """Indices of one randomly chosen record per gallery identity, ascending."""
    rng = rng_for(seed, f"single-shot-trial-{trial}")
    picks = []
    for label in np.unique(gallery.identities):
        members = np.flatnonzero(gallery.identities == label)
        picks.append(int(members[rng.integers(members.size)]))
    return np.sort(np.asarray(picks, dtype=np.int64))


def evaluate_single_shot(
    queries: LabeledDataset, gallery: LabeledDataset, config: Optional[ProtocolConfig] = None
) -> EvalReport:
    """CUHK03 style evaluation averaged over resampled single-shot galleries.

    Each trial keeps exactly one gallery record per identity, so AP reduces
    to ``1 / rank`` of the single true match.  CMC, per-query AP and mAP are
    averaged over ``config.trials`` trials.
    """
    config = config or ProtocolConfig(mode=SINGLE_SHOT)
    gallery_ids = np.unique(gallery.identities)
    if gallery_ids.size == 0:
        raise EvaluationError("empty gallery")
    length = _max_rank(config, gallery_ids.size)
    evaluable = np.flatnonzero(np.isin(queries.identities, gallery_ids))
    skipped = len(queries) - evaluable.size
    if evaluable.size == 0:
        raise EvaluationError("no query identity appears in the gallery")
    Q = _vectors(queries)[evaluable]
    q_ids = queries.identities[evaluable]
    cmc_trials, ap_trials = [], []
    for t in range(config.trials):
        sub = sample_single_shot_gallery(gallery, config.seed, t)
        d2 = squared_distances(Q, _vectors(gallery)[sub])
        sub_ids = gallery.identities[sub]
        keep = np.ones(sub.size, dtype=bool)
        ranks, aps = [], []
        for i in range(Q.shape[0]):
            first, ap = _score_query(d2[i], sub_ids == q_ids[i], keep)
            ranks.append(first)
            aps.append(ap)
        cmc_trials.append(_cmc_from_ranks(ranks, length))
        ap_trials.append(aps)
    trials = config.trials
    cmc = [math.fsum(col) / trials for col in zip(*cmc_trials)]
    per_query = [math.fsum(col) / trials for col in zip(*ap_trials)]
    return EvalReport(
        cmc=tuple(cmc),
        map=math.fsum(per_query) / len(per_query),
        per_query_ap=tuple(per_query),
        num_queries_evaluated=len(per_query),
        skipped=skipped,
        protocol={**config.to_dict(), "mode": SINGLE_SHOT},
        seed=config.seed,
    )


def evaluate(queries: LabeledDataset, gallery: LabeledDataset, config: ProtocolConfig) -> EvalReport:
    if config.mode == CROSS_CAMERA:
        return evaluate_cross_camera(queries, gallery, config)
    return evaluate_single_shot(queries, gallery, config)
