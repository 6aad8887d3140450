"""Labeled, counter-based generator splitting.

Every random stream is derived from one root seed plus a tuple of labels, so a
task's stream does not depend on how many workers run or in which order.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")


def _label_key(label) -> int:
    digest = hashlib.blake2b(str(label).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive(seed: int, *labels) -> np.random.Generator:
    """Generator for ``(seed, *labels)`` backed by Philox."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_label_key(lab) for lab in labels]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def split(rng: np.random.Generator, count: int) -> list[np.random.Generator]:
    """Child generators drawn from ``rng`` before any parallel dispatch."""
    keys = rng.integers(0, 2**63 - 1, size=(count, 2), dtype=np.int64)
    return [np.random.Generator(np.random.Philox(np.random.SeedSequence([int(a), int(b)])))
            for a, b in keys]


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    """Ordered map; results are identical for any thread count."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def as_generator(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return derive(0 if rng is None else int(rng))


__all__: Sequence[str] = ["derive", "split", "parallel_map", "as_generator"]
