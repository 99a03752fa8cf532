from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from typing import Iterable, Optional

from . import tritmap as tm
from .atomics import EpochReclaimer
from .config import SketchConfig
from .gather import GatherSortUnit, Updater
from .levels import LevelHierarchy
from .query import QueryContext, Snapshot, collect_snapshot


class InvariantViolation(AssertionError):
    """A runtime audit found the sketch in an impossible state."""


@dataclass
class Audit:
    calls: int
    stream_size: int
    in_units: int
    in_local: int
    holes: int
    poison_detections: int
    coherence: list[str]

    @property
    def missing(self) -> int:
        return self.calls - self.stream_size - self.in_units - self.in_local

    @property
    def ok(self) -> bool:
        return self.missing == 0 and not self.coherence and self.poison_detections == 0


class ConcurrentSketch:
    """Concurrent quantiles sketch.

    Each ingesting thread registers an :class:`Updater`; each querying thread
    creates its own :class:`QueryContext`. Updaters are assigned to
    Gather&Sort units round-robin unless a node is given.

    >>> s = ConcurrentSketch(SketchConfig(k=4, b=2, seed=1))
    >>> u = s.register_updater()
    >>> u.extend(range(16))
    >>> s.stream_size()
    16
    """

    def __init__(self, config: Optional[SketchConfig] = None, **kwargs):
        if config is None:
            config = SketchConfig(**kwargs)
        elif kwargs:
            raise TypeError("pass either a SketchConfig or keyword parameters")
        self.config = config
        self.reclaimer = EpochReclaimer()
        self.levels = LevelHierarchy(config, self.reclaimer)
        self.units = [
            GatherSortUnit(config.k, config.b, config.default_element, config.instrumented)
            for _ in range(config.numa_nodes)
        ]
        self.updaters: list[Updater] = []
        self._ids = itertools.count()
        self._lock = threading.Lock()

    def register_updater(self, node: Optional[int] = None) -> Updater:
        with self._lock:
            tid = next(self._ids)
            if node is None:
                node = tid % len(self.units)
            if not 0 <= node < len(self.units):
                raise ValueError(f"node {node} out of range")
            u = Updater(self, tid, node)
            self.updaters.append(u)
            return u

    def querier(self, rho: Optional[float] = None) -> QueryContext:
        return QueryContext(self.levels, self.config.rho if rho is None else rho)

    def collect_snapshot(self) -> Snapshot:
        return collect_snapshot(self.levels)

    def query(self, phi: float) -> float:
        """One-off query on a fresh snapshot."""
        return self.querier(0.0).query(phi)

    def stream_size(self) -> int:
        return self.levels.stream_size()

    def tritmap(self) -> int:
        return self.levels.tritmap.load()

    @property
    def holes(self) -> int:
        return sum(u.holes for u in self.units)

    @property
    def hole_values(self) -> set[float]:
        out: set[float] = set()
        for u in self.units:
            out |= u.hole_values
        return out

    def audit(self) -> Audit:
        """Conservation audit; only exact when no operation is in flight."""
        calls = sum(u.calls for u in self.updaters)
        return Audit(
            calls=calls,
            stream_size=self.stream_size(),
            in_units=sum(u.buffered() for u in self.units),
            in_local=sum(len(u.local) for u in self.updaters),
            holes=self.holes,
            poison_detections=self.reclaimer.poison_detections,
            coherence=self.levels.coherence_violations(),
        )

    def check(self) -> Audit:
        a = self.audit()
        if not a.ok:
            raise InvariantViolation(f"audit failed: {a}")
        return a

    def dump(self) -> str:
        return self.levels.dump()

    def render_tritmap(self, width: int = 0) -> str:
        return tm.render(self.tritmap(), width)


def ingest(sketch: ConcurrentSketch, parts: Iterable, node: Optional[int] = None) -> list[Updater]:
    """Feed each part from its own thread and wait for all of them."""
    parts = list(parts)
    updaters = [sketch.register_updater(node) for _ in parts]
    errors: list[BaseException] = []

    def run(u: Updater, xs) -> None:
        try:
            u.extend(xs)
        except BaseException as exc:  # surfaced to the caller below
            errors.append(exc)

    threads = [threading.Thread(target=run, args=(u, xs)) for u, xs in zip(updaters, parts)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return updaters
