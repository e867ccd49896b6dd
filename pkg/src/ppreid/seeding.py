"""Labeled seed derivation so every random component gets its own stream."""

import hashlib

import numpy as np


def derive_seed(root: int, label: str) -> int:
    """Map ``(root, label)`` to a 64-bit seed, stable across platforms."""
    digest = hashlib.sha256(f"{int(root)}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(root: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, label))
