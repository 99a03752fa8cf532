"""Stage one of ingestion: local buffers feeding shared Gather&Sort units.

An updater fills a private buffer of ``b`` elements, sorts it, reserves ``b``
slots in one of its unit's two ``2k`` buffers with fetch-and-add and copies
the elements in one slot at a time. The copy is deliberately not atomic: the
thread whose reservation ends at ``2k`` becomes the batch owner and snapshots
the buffer right away, so slots another thread has reserved but not yet
written still hold the previous window's values (holes).

The index cell packs a window number above the offset (``window * STRIDE +
offset``). Resetting the offset to zero bumps the window, which lets the
instrumented mode tag every slot write with the window it was reserved in and
count holes exactly.
"""

from __future__ import annotations

import threading
from typing import TYPE_CHECKING, Iterable, Optional

import numpy as np

from .atomics import AtomicCell
from .levels import Backoff

if TYPE_CHECKING:
    from .sketch import ConcurrentSketch

__all__ = ["GatherSortUnit", "Updater", "STRIDE"]

STRIDE = 1 << 40


class GatherSortUnit:
    def __init__(self, k: int, b: int, default: float = 0.0, instrumented: bool = False):
        self.k = k
        self.b = b
        self.size = 2 * k
        self.instrumented = instrumented
        fill = (default, -1) if instrumented else default
        self.buffers = [[fill] * self.size, [fill] * self.size]
        self.index = [AtomicCell(0), AtomicCell(0)]
        self.holes = 0
        self.batches = 0
        self.hole_values: set[float] = set()
        self.trace: Optional[list[tuple[int, int, int]]] = [] if instrumented else None
        self._stats_lock = threading.Lock()

    def reserve(self, i: int) -> tuple[int, int]:
        """F&A ``b`` on buffer ``i``; returns (window, offset) seen before the add."""
        raw = self.index[i].faa(self.b)
        return divmod(raw, STRIDE)

    def reset(self, i: int, window: int) -> None:
        self.index[i].store((window + 1) * STRIDE)

    def buffered(self) -> int:
        """Elements reserved in not-yet-flushed windows (exact when quiescent)."""
        total = 0
        for cell in self.index:
            offset = cell.load() % STRIDE
            total += min(offset, self.size)
        return total

    def make_owner_copy(self, i: int, window: int) -> np.ndarray:
        """Read all ``2k`` slots once, in slot order, and return them sorted."""
        raw = list(self.buffers[i])
        if self.instrumented:
            values = [v for v, _ in raw]
            stale = [v for v, tag in raw if tag != window]
            with self._stats_lock:
                self.batches += 1
                self.holes += len(stale)
                self.hole_values.update(stale)
        else:
            values = raw
        return np.sort(np.asarray(values, dtype=np.float64), kind="stable")


class Updater:
    """Per-thread update context bound to one Gather&Sort unit.

    Not shareable across threads. ``update`` is linearized at the append to
    the local buffer.
    """

    def __init__(self, sketch: "ConcurrentSketch", thread_id: int, node: int):
        self.sketch = sketch
        self.thread_id = thread_id
        self.node = node
        self.unit = sketch.units[node]
        self.b = sketch.config.b
        self.local: list[float] = []
        self.calls = 0
        self.owned_batches = 0

    def update(self, x: float) -> None:
        local = self.local
        local.append(x)
        self.calls += 1
        if len(local) < self.b:
            return
        self._flush()

    def extend(self, xs: Iterable[float]) -> None:
        """Same effect as calling :meth:`update` on each element in order."""
        if isinstance(xs, np.ndarray):
            xs = xs.tolist()
        else:
            xs = list(xs)
        b, pos, n = self.b, 0, len(xs)
        local = self.local
        while pos < n:
            take = min(b - len(local), n - pos)
            local.extend(xs[pos:pos + take])
            pos += take
            self.calls += take
            if len(local) == b:
                self._flush()

    def _flush(self) -> None:
        batch = sorted(self.local)
        self.local.clear()
        unit = self.unit
        b, size = self.b, unit.size
        i = 0
        misses = 0
        backoff = None
        while True:
            window, idx = unit.reserve(i)
            if idx < size:
                slots = unit.buffers[i]
                if unit.instrumented:
                    if unit.trace is not None:
                        unit.trace.append((i, window, idx))
                    for t in range(b):
                        slots[idx + t] = (batch[t], window)
                else:
                    for t in range(b):
                        slots[idx + t] = batch[t]
                if idx + b == size:
                    self._own(i, window)
                return
            i ^= 1
            misses += 1
            if misses % 2 == 0:
                if backoff is None:
                    backoff = Backoff()
                backoff.pause()

    def _own(self, i: int, window: int) -> None:
        unit = self.unit
        copy = unit.make_owner_copy(i, window)
        self.owned_batches += 1
        self.sketch.levels.batch_update(copy, on_inserted=lambda: unit.reset(i, window))
