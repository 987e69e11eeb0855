"""Seed derivation, canonical serialization, and config hashing.

Every randomized operation takes an explicit integer seed. A single run-level
seed fans out to per-module streams via ``derive_seed(seed, label)`` and to
per-replicate streams via ``replicate_rng(seed, i)``, so that replicate i's
stream depends only on (seed, i) and results are independent of scheduling.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

_MASK63 = (1 << 63) - 1


def derive_seed(seed: int, label: str) -> int:
    """Derive a module-level substream seed from a run seed and a stable tag."""
    tag = int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "big")
    return (int(seed) ^ tag) & _MASK63


def replicate_rng(seed: int, *path: int) -> np.random.Generator:
    """Generator for one replicate; the stream depends only on (seed, *path)."""
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK63, spawn_key=tuple(int(p) for p in path))
    return np.random.default_rng(ss)


def canonical_json(obj) -> str:
    """Stable, human-readable JSON: sorted keys, fixed layout, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def config_hash(obj) -> str:
    """sha256 hex digest of an object's canonical JSON form."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()
