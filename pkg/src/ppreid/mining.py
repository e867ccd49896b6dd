"""Nearest-neighbour mining of pseudo-positive samples and label-noise baselines."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import LabeledDataset, UnlabeledPool, _atomic_write_lines


@dataclass(frozen=True)
class MinedPair:
    query_index: int
    pool_index: int
    distance: float
    transferred_label: int


@dataclass(frozen=True)
class PseudoPositiveSet:
    pairs: tuple
    k: int

    def __len__(self):
        return len(self.pairs)

    @property
    def pool_indices(self) -> np.ndarray:
        return np.array([p.pool_index for p in self.pairs], dtype=np.int64)

    @property
    def labels(self) -> np.ndarray:
        return np.array([p.transferred_label for p in self.pairs], dtype=np.int64)


def _l2_normalize(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms > 0, norms, 1.0)


def squared_distances(queries: np.ndarray, items: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distances, shape ``(len(queries), len(items))``.

    Coordinates are accumulated left to right, one dimension at a time, so a
    result is bit-identical to summing ``(q[k] - x[k]) ** 2`` sequentially.
    The ``|q|^2 + |x|^2 - 2 q.x`` expansion is avoided on purpose: it loses
    exact zeros and breaks ties between duplicated vectors.
    """
    out = np.zeros((queries.shape[0], items.shape[0]))
    for k in range(queries.shape[1]):
        diff = queries[:, k, None] - items[None, :, k]
        out += diff * diff
    return out


def mine_nearest(
    train_features,
    pool_features,
    labels: Optional[Sequence[int]] = None,
    normalize: bool = False,
    chunk: int = 256,
) -> list[MinedPair]:
    """For every training feature, the nearest pool feature (lowest index on ties).

    ``labels`` are the identities of the training rows; they become the
    transferred labels.  Without them every pair carries ``-1``.
    """
    Q = np.atleast_2d(np.asarray(train_features, dtype=np.float64))
    P = np.atleast_2d(np.asarray(pool_features, dtype=np.float64))
    if P.shape[0] == 0 or P.size == 0:
        raise ValueError("empty pool")
    if Q.shape[1] != P.shape[1]:
        raise ValueError(f"feature dimensions differ: {Q.shape[1]} vs {P.shape[1]}")
    if labels is None:
        labels = np.full(Q.shape[0], -1, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (Q.shape[0],):
        raise ValueError("one label per training feature required")
    if normalize:
        Q, P = _l2_normalize(Q), _l2_normalize(P)
    pairs = []
    for start in range(0, Q.shape[0], chunk):
        d2 = squared_distances(Q[start:start + chunk], P)
        best = np.argmin(d2, axis=1)  # first occurrence on ties
        for row, j in enumerate(best):
            i = start + row
            pairs.append(MinedPair(i, int(j), math.sqrt(d2[row, j]), int(labels[i])))
    return pairs


def deduplicate(pairs: Sequence[MinedPair]) -> list[MinedPair]:
    """Keep one claimant per pool item: the closest, then the lowest query index.

    The survivors are returned in query order.
    """
    best: dict[int, MinedPair] = {}
    for p in pairs:
        cur = best.get(p.pool_index)
        if cur is None or (p.distance, p.query_index) < (cur.distance, cur.query_index):
            best[p.pool_index] = p
    return sorted(best.values(), key=lambda p: p.query_index)


def select_pseudo_positives(pairs: Sequence[MinedPair], k: int, seed: int) -> PseudoPositiveSet:
    """Uniformly pick ``min(k, available)`` deduplicated pairs."""
    if k < 0:
        raise ValueError("k must be >= 0")
    eligible = deduplicate(pairs)
    if k >= len(eligible):
        chosen = eligible
    else:
        rng = np.random.default_rng(seed)
        picks = np.sort(rng.choice(len(eligible), size=k, replace=False))
        chosen = [eligible[i] for i in picks]
    return PseudoPositiveSet(tuple(chosen), int(k))


def _sentinel_camera(train: LabeledDataset) -> int:
    return int(train.cameras.max()) + 1 if len(train) else 0


def merge(train: LabeledDataset, pseudo: PseudoPositiveSet, pool: UnlabeledPool) -> LabeledDataset:
    """Append the selected pool vectors with their transferred labels.

    Pseudo records get a camera id one past the largest camera in ``train``.
    """
    if len(pseudo) == 0:
        return train
    if pool.dim != train.dim:
        raise ValueError("pool and training vectors differ in dimension")
    labels = pseudo.labels
    if labels.min() < 0 or labels.max() >= train.num_identities:
        raise ValueError("transferred label outside the training label range")
    cams = np.full(len(pseudo), _sentinel_camera(train), dtype=np.int64)
    return LabeledDataset(
        np.vstack([train.vectors, pool.vectors[pseudo.pool_indices]]),
        np.concatenate([train.identities, labels]),
        np.concatenate([train.cameras, cams]),
        train.num_identities,
    )


def disturb_labels(train: LabeledDataset, count: int, seed: int) -> LabeledDataset:
    """Give ``count`` distinct records a uniformly drawn wrong label."""
    num_classes = train.num_identities
    if num_classes < 2:
        raise ValueError("need at least two identities to draw an incorrect label")
    if not (0 <= count <= len(train)):
        raise ValueError(f"count must lie in [0, {len(train)}]")
    if count == 0:
        return train
    rng = np.random.default_rng(seed)
    victims = rng.choice(len(train), size=count, replace=False)
    labels = train.identities.copy()
    labels[victims] = (labels[victims] + rng.integers(1, num_classes, size=count)) % num_classes
    return LabeledDataset(train.vectors, labels, train.cameras, num_classes)


def disturb_star(train: LabeledDataset, pool: UnlabeledPool, count: int, seed: int) -> LabeledDataset:
    """Append ``count`` random pool vectors with uniformly random labels."""
    if not (0 <= count <= len(pool)):
        raise ValueError(f"count must lie in [0, {len(pool)}]")
    if count == 0:
        return train
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(pool), size=count, replace=False)
    labels = rng.integers(0, train.num_identities, size=count)
    cams = np.full(count, _sentinel_camera(train), dtype=np.int64)
    return LabeledDataset(
        np.vstack([train.vectors, pool.vectors[picks]]),
        np.concatenate([train.identities, labels]),
        np.concatenate([train.cameras, cams]),
        train.num_identities,
    )


def write_pseudo_positives(path, pseudo: PseudoPositiveSet) -> None:
    """JSON-lines, one ``{"query", "pool", "dist", "label"}`` row per pair."""
    lines = [
        json.dumps(
            {"query": p.query_index, "pool": p.pool_index, "dist": p.distance,
             "label": p.transferred_label},
            separators=(",", ":"),
        )
        for p in pseudo.pairs
    ]
    _atomic_write_lines(path, lines)


def read_pseudo_positives(path, k: Optional[int] = None) -> PseudoPositiveSet:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                pairs.append(MinedPair(int(row["query"]), int(row["pool"]),
                                       float(row["dist"]), int(row["label"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"line {lineno}: malformed pseudo-positive row ({exc})") from None
    return PseudoPositiveSet(tuple(pairs), len(pairs) if k is None else k)
