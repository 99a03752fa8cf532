"""Atomic snapshots of the level hierarchy and cached quantile queries.

A snapshot is taken by double collect: read the tritmap, read every level
from 0 upward, read the tritmap again, and repeat until both tritmap reads
describe the same stream size. The levels are then scanned from the top down
and a level is kept only while the running total stays within that size,
which counts every element exactly once even when a propagation was caught
half way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional

import numpy as np

from . import tritmap as tm
from .sequential import EmptySketchError, bracket_from_prefix

if TYPE_CHECKING:
    from .levels import LevelHierarchy

__all__ = ["QueryContext", "Snapshot", "collect_snapshot", "reconstruct", "snapshot_estimate"]


@dataclass
class Snapshot:
    entries: list[tuple[int, np.ndarray]]
    represented_size: int
    tm1: int = 0
    tm2: int = 0
    my_trit: int = 0
    retries: int = 0
    _sorted: Optional[tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)
    _before: Optional[np.ndarray] = field(default=None, repr=False)

    def samples(self) -> tuple[np.ndarray, np.ndarray]:
        """Values and weights sorted by (value, level); built once and cached."""
        if self._sorted is None:
            ordered = sorted(self.entries, key=lambda e: e[0])
            if ordered:
                values = np.concatenate([a for _, a in ordered])
                weights = np.concatenate(
                    [np.full(a.shape[0], 1 << i, dtype=np.int64) for i, a in ordered])
            else:
                values = np.empty(0)
                weights = np.empty(0, dtype=np.int64)
            order = np.argsort(values, kind="stable")
            self._sorted = (values[order], weights[order])
        return self._sorted

    def prefix(self) -> np.ndarray:
        """Exclusive prefix sums of the sorted weights."""
        if self._before is None:
            _, weights = self.samples()
            self._before = np.cumsum(weights) - weights
        return self._before

    def query(self, phi: float) -> float:
        return snapshot_estimate(self, phi)

    def all_elements(self) -> np.ndarray:
        if not self.entries:
            return np.empty(0)
        return np.concatenate([a for _, a in self.entries])


def snapshot_estimate(snapshot: Snapshot, phi: float) -> float:
    if snapshot.represented_size == 0:
        raise EmptySketchError("empty snapshot")
    values, _ = snapshot.samples()
    return bracket_from_prefix(values, snapshot.prefix(), snapshot.represented_size, phi)


def reconstruct(read: list, target: int, k: int):
    """Pick levels top-down while they fit in ``target`` elements.

    Returns (entries, arrays kept, represented size, tritmap of the kept levels).
    """
    entries: list[tuple[int, np.ndarray]] = []
    kept = []
    acc = 0
    my_trit = 0
    for i in range(len(read) - 1, -1, -1):
        arr = read[i]
        if arr is None:
            continue
        if acc == target:
            break
        size = len(arr)
        if size * (1 << i) + acc <= target:
            entries.append((i, arr.elements))
            kept.append(arr)
            acc += size * (1 << i)
            my_trit += (size // k) * 3**i
    return entries, kept, acc, my_trit


def collect_snapshot(hierarchy: "LevelHierarchy") -> Snapshot:
    k = hierarchy.k
    cells = hierarchy.levels
    tcell = hierarchy.tritmap
    reclaimer = hierarchy.reclaimer
    retries = 0
    with reclaimer.guard():
        while True:
            tm1 = tcell.load()
            read = [c.load() for c in cells]
            tm2 = tcell.load()
            target = tm.stream_size(tm1, k)
            if target == tm.stream_size(tm2, k):
                break
            retries += 1
        entries, kept, acc, my_trit = reconstruct(read, target, k)
        poisoned = sum(1 for a in kept if a.poisoned)
        if poisoned:
            reclaimer.report_poison(poisoned)
    return Snapshot(entries, acc, tm1, tm2, my_trit, retries)


class QueryContext:
    """Per-thread query state: the cached snapshot and its freshness threshold.

    A cached snapshot of size ``m`` serves queries while the current stream
    size stays at or below ``(1 + rho) * m``. ``rho = 0`` still serves from
    cache when nothing has been added since.
    """

    def __init__(self, hierarchy: "LevelHierarchy", rho: float = 0.0):
        if rho < 0:
            raise ValueError("rho must be non-negative")
        self.hierarchy = hierarchy
        self.rho = rho
        self.snapshot: Optional[Snapshot] = None
        self.my_trit = 0
        self.hits = 0
        self.misses = 0
        self.collect_retries = 0

    def _fresh_enough(self, current: int) -> bool:
        snap = self.snapshot
        if snap is None or snap.represented_size == 0:
            return False
        return current <= (1.0 + self.rho) * snap.represented_size

    def refresh(self) -> Snapshot:
        snap = collect_snapshot(self.hierarchy)
        self.snapshot = snap
        self.my_trit = snap.my_trit
        self.misses += 1
        self.collect_retries += snap.retries
        return snap

    def query(self, phi: float) -> float:
        if not 0.0 <= phi <= 1.0 or math.isnan(phi):
            raise ValueError(f"phi must lie in [0, 1], got {phi!r}")
        current = tm.stream_size(self.hierarchy.tritmap.load(), self.hierarchy.k)
        if current == 0:
            raise EmptySketchError("no data")
        if self._fresh_enough(current):
            self.hits += 1
            snap = self.snapshot
        else:
            snap = self.refresh()
        return snapshot_estimate(snap, phi)

    @property
    def miss_rate(self) -> float:
        total = self.hits + self.misses
        return self.misses / total if total else 0.0
