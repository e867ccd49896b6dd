"""Embedding datasets, deterministic splits and the JSON-lines file format.

A labeled row looks like ``{"id": 3, "cam": 1, "vec": [0.5, -1.0]}``; a pool
row carries only ``vec`` (plus an optional opaque ``tag``).  The first row of
a file fixes the dimension.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np


class DataError(ValueError):
    pass


def _as_matrix(vectors, dim: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, dim or 0)
    if arr.ndim != 2:
        raise DataError(f"expected a 2-D array of vectors, got shape {arr.shape}")
    if arr.shape[0] and arr.shape[1] < 1:
        raise DataError("feature dimension must be >= 1")
    if not np.all(np.isfinite(arr)):
        raise DataError("feature vectors must be finite")
    return arr


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature vectors with identity labels and camera ids.

    ``num_identities`` is the size of the label space.  It defaults to the
    number of distinct labels but is carried explicitly through operations
    that must not change it (merging, label disturbance), since a class can
    lose all of its records without the classifier head shrinking.
    """

    vectors: np.ndarray
    identities: np.ndarray
    cameras: np.ndarray
    num_identities: int = -1

    def __post_init__(self):
        vecs = _as_matrix(self.vectors)
        ids = np.asarray(self.identities, dtype=np.int64).reshape(-1)
        cams = np.asarray(self.cameras, dtype=np.int64).reshape(-1)
        if not (len(vecs) == len(ids) == len(cams)):
            raise DataError("vectors, identities and cameras differ in length")
        if ids.size and ids.min() < 0:
            raise DataError("identity labels must be >= 0")
        if cams.size and cams.min() < 0:
            raise DataError("camera ids must be >= 0")
        n_ids = self.num_identities
        if n_ids < 0:
            n_ids = int(np.unique(ids).size)
        for arr in (vecs, ids, cams):
            arr.setflags(write=False)
        object.__setattr__(self, "vectors", vecs)
        object.__setattr__(self, "identities", ids)
        object.__setattr__(self, "cameras", cams)
        object.__setattr__(self, "num_identities", int(n_ids))

    def __len__(self):
        return len(self.identities)

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.num_identities == other.num_identities
            and self.vectors.shape == other.vectors.shape
            and np.array_equal(self.vectors, other.vectors)
            and np.array_equal(self.identities, other.identities)
            and np.array_equal(self.cameras, other.cameras)
        )

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def is_canonical(self) -> bool:
        """True when every label lies in ``0..num_identities-1``."""
        return not len(self) or int(self.identities.max()) < self.num_identities

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            self.vectors[idx], self.identities[idx], self.cameras[idx], self.num_identities
        )

    def with_vectors(self, vectors) -> "LabeledDataset":
        """Same labels and cameras, new features (e.g. extracted embeddings)."""
        return LabeledDataset(vectors, self.identities, self.cameras, self.num_identities)


@dataclass(frozen=True, eq=False)
class UnlabeledPool:
    vectors: np.ndarray
    tags: Optional[tuple] = None

    def __post_init__(self):
        vecs = _as_matrix(self.vectors)
        vecs.setflags(write=False)
        object.__setattr__(self, "vectors", vecs)
        if self.tags is not None:
            tags = tuple(self.tags)
            if len(tags) != len(vecs):
                raise DataError("tags and vectors differ in length")
            object.__setattr__(self, "tags", tags)

    def __len__(self):
        return self.vectors.shape[0]

    def __eq__(self, other):
        if not isinstance(other, UnlabeledPool):
            return NotImplemented
        return (
            self.vectors.shape == other.vectors.shape
            and np.array_equal(self.vectors, other.vectors)
            and self.tags == other.tags
        )

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def canonicalize_labels(dataset: LabeledDataset) -> tuple[LabeledDataset, dict[int, int]]:
    """Remap labels to ``0..C-1`` in ascending order of the original label."""
    if len(dataset) == 0:
        raise DataError("empty dataset")
    distinct, inverse = np.unique(dataset.identities, return_inverse=True)
    mapping = {int(orig): i for i, orig in enumerate(distinct)}
    out = LabeledDataset(dataset.vectors, inverse, dataset.cameras, len(distinct))
    return out, mapping


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.9
    seed: int = 0
    mode: str = "by-record"

    def __post_init__(self):
        if not (0.0 < self.train_fraction <= 1.0):
            raise DataError(f"train_fraction must be in (0, 1], got {self.train_fraction}")
        if self.mode not in ("by-record", "by-identity"):
            raise DataError(f"unknown split mode {self.mode!r}")


def split(dataset: LabeledDataset, spec: SplitSpec) -> tuple[LabeledDataset, LabeledDataset]:
    """Deterministically partition ``dataset`` into (train, held-out).

    By-record mode reserves one record per identity for the train side so no
    classifier output goes untrained.  By-identity mode never puts an identity
    on both sides.  Both partitions keep the input's record order.
    """
    n = len(dataset)
    rng = np.random.default_rng(spec.seed)
    if spec.mode == "by-record":
        perm = rng.permutation(n)
        seen = set()
        reserved, rest = [], []
        for i in perm:
            label = int(dataset.identities[i])
            if label in seen:
                rest.append(i)
            else:
                seen.add(label)
                reserved.append(i)
        n_held = min(n - int(round(spec.train_fraction * n)), len(rest))
        held = np.sort(np.asarray(rest[len(rest) - n_held:], dtype=np.int64))
    else:
        labels = np.unique(dataset.identities)
        if labels.size < 2:
            raise DataError("by-identity split needs at least two identities")
        order = rng.permutation(labels)
        n_train = int(round(spec.train_fraction * labels.size))
        if spec.train_fraction < 1.0:
            n_train = min(max(n_train, 1), labels.size - 1)
        held_ids = order[n_train:]
        held = np.flatnonzero(np.isin(dataset.identities, held_ids))
    mask = np.ones(n, dtype=bool)
    mask[held] = False
    return dataset.subset(np.flatnonzero(mask)), dataset.subset(held)


# ---------------------------------------------------------------------------
# JSON-lines I/O


def _row_vector(obj, lineno: int) -> list:
    vec = obj.get("vec") if isinstance(obj, dict) else None
    if not isinstance(vec, list) or not vec:
        raise DataError(f"line {lineno}: missing or empty 'vec'")
    for v in vec:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise DataError(f"line {lineno}: 'vec' must hold finite numbers")
    return vec


def read_embeddings(path) -> Union[LabeledDataset, UnlabeledPool]:
    """Read a JSON-lines embedding file.

    Returns a :class:`LabeledDataset` when rows carry ``id``/``cam`` and an
    :class:`UnlabeledPool` otherwise.  Mixing the two row kinds is an error.
    """
    vecs, ids, cams, tags = [], [], [], []
    labeled = None
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            vec = _row_vector(obj, lineno)
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise DataError(
                    f"line {lineno}: dimension mismatch (expected {dim}, got {len(vec)})"
                )
            row_labeled = "id" in obj or "cam" in obj
            if labeled is None:
                labeled = row_labeled
            elif labeled != row_labeled:
                raise DataError(f"line {lineno}: labeled and pool rows mixed in one file")
            if labeled:
                ident, cam = obj.get("id"), obj.get("cam")
                for key, val in (("id", ident), ("cam", cam)):
                    if isinstance(val, bool) or not isinstance(val, int) or val < 0:
                        raise DataError(f"line {lineno}: '{key}' must be a non-negative integer")
                ids.append(ident)
                cams.append(cam)
            else:
                tags.append(obj.get("tag"))
            vecs.append(vec)
    if dim is None:
        raise DataError(f"{path}: no records")
    matrix = np.array(vecs, dtype=np.float64)
    if labeled:
        return LabeledDataset(matrix, ids, cams)
    has_tags = any(t is not None for t in tags)
    return UnlabeledPool(matrix, tuple(tags) if has_tags else None)


def _atomic_write_lines(path, lines: Sequence[str]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")
    os.replace(tmp, path)


def write_embeddings(path, data: Union[LabeledDataset, UnlabeledPool]) -> None:
    # json renders floats with repr(), the shortest string that round-trips
    dump = lambda obj: json.dumps(obj, separators=(",", ":"))
    if isinstance(data, LabeledDataset):
        lines = [
            dump({"id": int(i), "cam": int(c), "vec": v})
            for i, c, v in zip(data.identities, data.cameras, data.vectors.tolist())
        ]
    elif isinstance(data, UnlabeledPool):
        lines = []
        for k, v in enumerate(data.vectors.tolist()):
            row = {"vec": v}
            if data.tags is not None and data.tags[k] is not None:
                row["tag"] = data.tags[k]
            lines.append(dump(row))
    else:
        raise TypeError(f"cannot write {type(data).__name__}")
    _atomic_write_lines(path, lines)
