"""Deterministic seed streams.

A master seed splits into task streams by the counter construction
``SeedSequence(entropy=seed, spawn_key=(crc32(label), index))``.  The same
``(seed, label, index)`` triple therefore always yields the same stream,
independent of scheduling order or worker count.
"""

from __future__ import annotations

import os
import zlib

import numpy as np

SEED_ENV = "ENTCLOCK_SEED"
WORKERS_ENV = "ENTCLOCK_WORKERS"


def label_hash(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def task_seed(seed: int, label: str, index: int = 0) -> np.random.SeedSequence:
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(label_hash(label), int(index)))


def child_seeds(seed, n: int) -> list:
    """``n`` independent child sequences of ``seed`` (int or SeedSequence)."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return seed.spawn(n)


def env_seed(default: int | None = None) -> int | None:
    raw = os.environ.get(SEED_ENV)
    return int(raw) if raw not in (None, "") else default


def env_workers(default: int = 1) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw in (None, ""):
        return default
    val = int(raw)
    if val < 1:
        raise ValueError(f"{WORKERS_ENV} must be >= 1")
    return val
