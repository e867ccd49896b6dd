"""Seeded Gaussian "identity" embeddings for desk-scale re-ID experiments.

Every identity has a center and one additive offset per camera, both living
on the first ``identity_dim`` coordinates.  A sample is
``center + camera offset + noise``; the remaining coordinates carry only
nuisance variation the model has to learn to ignore.  Training, query and gallery records
are disjoint draws of the same identities.  The unlabeled pool mixes
look-alikes (other people whose center sits near an existing identity) with
unrelated distractor people.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset, UnlabeledPool
from .seeding import rng_for


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings.  The defaults are the standard benchmark.

    ``identity_dim`` of 0 means every coordinate is informative.
    ``lookalike_std`` is how far a look-alike's center strays from the
    identity it resembles; ``nuisance_std`` is extra noise on the
    uninformative coordinates.
    """

    num_identities: int = 50
    samples_per_identity: int = 6
    dim: int = 32
    cluster_std: float = 0.3
    center_std: float = 1.0
    camera_count: int = 2
    camera_shift_std: float = 0.3
    pool_size: int = 2000
    pool_overlap: float = 0.7
    lookalike_std: float = 0.9
    identity_dim: int = 12
    nuisance_std: float = 1.6
    queries_per_camera: int = 2
    gallery_per_camera: int = 2
    seed: int = 0

    def __post_init__(self):
        counts = ("num_identities", "samples_per_identity", "dim", "camera_count",
                  "pool_size", "queries_per_camera", "gallery_per_camera")
        for name in counts:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not (0 <= self.identity_dim <= self.dim):
            raise ValueError("identity_dim must lie in [0, dim]")
        for name in ("cluster_std", "center_std", "camera_shift_std", "lookalike_std",
                     "nuisance_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not (0.0 <= self.pool_overlap <= 1.0):
            raise ValueError("pool_overlap must lie in [0, 1]")
        if self.camera_count < 2:
            raise ValueError("camera_count must be >= 2 for cross-camera evaluation")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**d)

    @property
    def informative_dims(self) -> int:
        return self.identity_dim or self.dim

    @property
    def num_lookalikes(self) -> int:
        return int(round(self.pool_overlap * self.pool_size))


def generate(config: SynthConfig):
    """Return ``(train, query, gallery, pool)`` for ``config``.

    Training samples cycle through the cameras.  Queries and gallery records
    are fresh draws, ``queries_per_camera`` and ``gallery_per_camera`` per
    (identity, camera), so each query has cross-camera matches.
    """
    train, query, gallery, pool, _ = generate_with_truth(config)
    return train, query, gallery, pool


def generate_with_truth(config: SynthConfig):
    """:func:`generate` plus the hidden source identity of each pool vector.

    The extra array holds the identity a look-alike was derived from, or -1
    for a distractor.  Only diagnostics should look at it.
    """
    c = config
    k = c.informative_dims
    rng_ids = rng_for(c.seed, "identities")
    centers = np.zeros((c.num_identities, c.dim))
    centers[:, :k] = rng_ids.normal(0.0, c.center_std, size=(c.num_identities, k))
    offsets = np.zeros((c.num_identities, c.camera_count, c.dim))
    offsets[..., :k] = rng_ids.normal(0.0, c.camera_shift_std, size=(c.num_identities, c.camera_count, k))

    def noise(rng, n):
        out = np.zeros((n, c.dim))
        if c.cluster_std > 0:
            out += rng.normal(0.0, c.cluster_std, size=(n, c.dim))
        if c.nuisance_std > 0 and k < c.dim:
            out[:, k:] += rng.normal(0.0, c.nuisance_std, size=(n, c.dim - k))
        return out

    def labeled(label, per_id, cam_cycle):
        rng = rng_for(c.seed, label)
        ids = np.repeat(np.arange(c.num_identities), per_id)
        cams = np.tile(cam_cycle, c.num_identities)
        vecs = centers[ids] + offsets[ids, cams] + noise(rng, len(ids))
        return LabeledDataset(vecs, ids, cams, c.num_identities)

    train = labeled("train", c.samples_per_identity,
                    np.arange(c.samples_per_identity) % c.camera_count)
    query = labeled("query", c.queries_per_camera * c.camera_count,
                    np.repeat(np.arange(c.camera_count), c.queries_per_camera))
    gallery = labeled("gallery", c.gallery_per_camera * c.camera_count,
                      np.repeat(np.arange(c.camera_count), c.gallery_per_camera))

    rng = rng_for(c.seed, "pool")
    n_near = c.num_lookalikes
    n_far = c.pool_size - n_near
    # a look-alike is another person whose center is a jittered copy of an
    # existing identity's center, seen through one of that identity's cameras
    near_ids = rng.integers(0, c.num_identities, size=n_near)
    near_cams = rng.integers(0, c.camera_count, size=n_near)
    jitter = np.zeros((n_near, c.dim))
    jitter[:, :k] = rng.normal(0.0, c.lookalike_std, size=(n_near, k))
    near = centers[near_ids] + offsets[near_ids, near_cams] + jitter + noise(rng, n_near)
    far = np.zeros((n_far, c.dim))
    far[:, :k] = (rng.normal(0.0, c.center_std, size=(n_far, k))
                  + rng.normal(0.0, c.camera_shift_std, size=(n_far, k)))
    far += noise(rng, n_far)
    vectors = np.vstack([near, far])
    truth = np.concatenate([near_ids, np.full(n_far, -1)])
    perm = rng.permutation(c.pool_size)
    return train, query, gallery, UnlabeledPool(vectors[perm]), truth[perm]
