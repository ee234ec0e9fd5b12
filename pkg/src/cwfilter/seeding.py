"""Deterministic seed derivation.

Every random stream in a run descends from one root seed through a named
path, e.g. ``(root, "dual", origin, dt)`` or ``(root, "sim", path_index)``.
Path parts are hashed with SHA-256 (stable across processes and platforms,
unlike ``hash()``), so identical paths always yield identical streams while
distinct paths are statistically independent.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _part_to_word(part) -> int:
    digest = hashlib.sha256(repr(part).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(root: int, *path) -> np.random.SeedSequence:
    """SeedSequence for the stream named by ``path`` under ``root``."""
    entropy = [int(root) & 0xFFFFFFFFFFFFFFFF] + [_part_to_word(p) for p in path]
    return np.random.SeedSequence(entropy)


def derive_rng(root: int, *path) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *path))
