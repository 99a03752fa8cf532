"""Shared level hierarchy: batch insertion at level 0 and upward propagation.

Each level lives in an :class:`AtomicCell` holding an immutable
:class:`LevelArray` or ``None``. The tritmap cell describes which levels are
live. Every structural change moves one level cell and the tritmap together
through a DCAS; the caller that wins owns the level it just filled until it
pushes the content further up.
"""

from __future__ import annotations

import itertools
import threading
import time
from typing import Optional

import numpy as np

from . import tritmap as tm
from .atomics import AtomicCell, EpochReclaimer, dcas
from .config import SketchConfig
from .sequential import CoinSource, merge_sorted, sample_odd_or_even

__all__ = ["Backoff", "CapacityExceededError", "LevelArray", "LevelHierarchy"]

_versions = itertools.count(1)


class CapacityExceededError(RuntimeError):
    """A propagation would run past the top level."""


class LevelArray:
    """Immutable sorted array published into one level cell."""

    __slots__ = ("elements", "level", "version", "poisoned")

    def __init__(self, elements: np.ndarray, level: int):
        elements.flags.writeable = False
        self.elements = elements
        self.level = level
        self.version = next(_versions)
        self.poisoned = False

    def __len__(self) -> int:
        return self.elements.shape[0]

    def __repr__(self) -> str:
        return f"LevelArray(level={self.level}, size={len(self)}, v{self.version})"

    def poison(self) -> None:
        self.poisoned = True
        self.elements = np.full(self.elements.shape[0], np.nan)


def _poison(arr: LevelArray) -> None:
    arr.poison()


class Backoff:
    """Yield first, then sleep with exponentially growing pauses."""

    __slots__ = ("_n",)

    CAP = 1e-3

    def __init__(self):
        self._n = 0

    def pause(self) -> None:
        n = self._n
        self._n = n + 1
        if n < 4:
            time.sleep(0)
        else:
            time.sleep(min(self.CAP, 1e-6 * (1 << min(n - 4, 16))))


class LevelHierarchy:
    def __init__(self, config: SketchConfig, reclaimer: Optional[EpochReclaimer] = None):
        self.config = config
        self.k = config.k
        self.max_level = config.max_level
        self.levels = [AtomicCell(None) for _ in range(config.max_level + 1)]
        self.tritmap = AtomicCell(0)
        self.reclaimer = reclaimer or EpochReclaimer()
        self.batches_inserted = 0
        self.dcas_failures = 0
        # test harnesses may set hook(label, level) to pause at protocol steps
        self.hook = None
        self._stats_lock = threading.Lock()
        if config.coins is not None:
            shared = CoinSource.injected(config.coins)
            self._coin = shared.next
        else:
            self._coin_local = threading.local()
            self._coin_seeds = itertools.count()
            self._coin = self._thread_coin

    def _thread_coin(self) -> bool:
        src = getattr(self._coin_local, "src", None)
        if src is None:
            idx = next(self._coin_seeds)
            if self.config.seed is None:
                seed = None
            else:
                seq = np.random.SeedSequence(self.config.seed, spawn_key=(idx,))
                seed = int(seq.generate_state(1)[0])
            src = self._coin_local.src = CoinSource(seed=seed)
        return src.next()

    def stream_size(self) -> int:
        return tm.stream_size(self.tritmap.load(), self.k)

    def batch_update(self, base_copy: np.ndarray, on_inserted=None) -> None:
        """Install a sorted ``2k`` batch at level 0, then propagate it.

        ``on_inserted`` runs right after the batch is published; the
        Gather&Sort owner uses it to reset its buffer index.
        """
        arr = LevelArray(base_copy, 0)
        level0, tcell = self.levels[0], self.tritmap
        if self.hook:
            self.hook("begin", 0)
        backoff = Backoff()
        while True:
            w = tcell.load()
            if w % 3 == 0 and dcas(level0, None, arr, tcell, w, w + tm.delta_batch()):
                break
            self._failed()
            backoff.pause()
        with self._stats_lock:
            self.batches_inserted += 1
        if self.hook:
            self.hook("inserted", 0)
        if on_inserted is not None:
            on_inserted()
        self.propagate(0)

    def propagate(self, level: int) -> None:
        """Push the ``2k`` array owned at ``level`` upward until it settles."""
        with self.reclaimer.guard():
            while True:
                if level >= self.max_level:
                    raise CapacityExceededError(
                        f"propagation past level {self.max_level}; "
                        f"capacity is {self.config.capacity} elements"
                    )
                if self._promote(level):
                    level += 1
                else:
                    return

    def _promote(self, l: int) -> bool:
        """One step of propagation; True when level ``l+1`` now needs pushing."""
        own_cell, next_cell, tcell = self.levels[l], self.levels[l + 1], self.tritmap
        own = own_cell.load()
        sampled = sample_odd_or_even(own.elements, self._coin())
        step = 3**l
        merged: Optional[LevelArray] = None
        merged_from = None
        fresh: Optional[LevelArray] = None
        backoff = Backoff()
        while True:
            w = tcell.load()
            upper = (w // (3 * step)) % 3
            if upper == 1:
                resident = next_cell.load()
                if resident is not None and resident is not merged_from:
                    merged = LevelArray(merge_sorted(sampled, resident.elements), l + 1)
                    merged_from = resident
                if resident is not None and dcas(next_cell, resident, merged,
                                                 tcell, w, w + tm.delta_promote_full(l)):
                    if self.hook:
                        self.hook("merged", l + 1)
                    self.clear_level(l, own)
                    self.reclaimer.retire(resident, _poison)
                    return True
            elif upper == 0:
                if fresh is None:
                    fresh = LevelArray(sampled, l + 1)
                if dcas(next_cell, None, fresh, tcell, w, w + tm.delta_promote_empty(l)):
                    if self.hook:
                        self.hook("moved", l + 1)
                    self.clear_level(l, own)
                    return False
            self._failed()
            backoff.pause()

    def clear_level(self, l: int, owned: LevelArray) -> None:
        self.levels[l].store(None)
        self.reclaimer.retire(owned, _poison)
        if self.hook:
            self.hook("cleared", l)

    def _failed(self) -> None:
        self.dcas_failures += 1  # approximate under contention; diagnostics only

    # diagnostics

    def level_arrays(self) -> list[Optional[LevelArray]]:
        return [c.load() for c in self.levels]

    def dump(self) -> str:
        word = self.tritmap.load()
        sizes = [0 if a is None else len(a) for a in self.level_arrays()]
        top = max([i for i, s in enumerate(sizes) if s] + [len(tm.trits(word)) - 1, 0])
        shown = " ".join(f"L{i}:{sizes[i]}" for i in range(top + 1))
        return f"tritmap={tm.render(word, top + 1)} {shown}"

    def coherence_violations(self) -> list[str]:
        """Check level contents against the tritmap; meaningful when quiescent."""
        word = self.tritmap.load()
        problems = []
        for i, arr in enumerate(self.level_arrays()):
            t = tm.trit(word, i, self.max_level)
            size = 0 if arr is None else len(arr)
            if t == 1 and size != self.k:
                problems.append(f"level {i}: trit 1 but size {size}")
            elif t == 2 and size != 2 * self.k:
                problems.append(f"level {i}: trit 2 but size {size}")
            elif t == 0 and arr is not None:
                problems.append(f"level {i}: trit 0 but holds {size} elements")
            if arr is not None and np.any(np.diff(arr.elements) < 0):
                problems.append(f"level {i}: not sorted")
        return problems
