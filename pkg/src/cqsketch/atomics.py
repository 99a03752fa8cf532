"""Atomic cells, software DCAS and epoch-based reclamation.

Every :class:`AtomicCell` guards its slot with a private lock that plays the
role of a hardware single-word CAS. Double-compare-double-swap is built on
top of that in the descriptor style: a DCAS installs a shared descriptor in
both cells (in cell-address order), decides its outcome with one CAS on the
descriptor status, then swaps the descriptor out for the final values. Any
thread that trips over a descriptor helps finish it. ``load`` never helps; it
resolves a descriptor from its status, which keeps reads wait-free.

``DCAS_MODE = "lock"`` swaps the descriptor machinery for one global lock with
the same interface, which is occasionally handy when debugging.
"""

from __future__ import annotations

import itertools
import threading
from typing import Any, Callable, Optional

__all__ = [
    "AtomicCell",
    "EpochReclaimer",
    "dcas",
    "set_dcas_mode",
    "get_dcas_mode",
]

_UNDECIDED, _SUCCEEDED, _FAILED = 0, 1, 2
_LATE = object()  # install attempted after the descriptor was decided

_addresses = itertools.count()
_global_lock = threading.RLock()
_mode = "descriptor"


def set_dcas_mode(mode: str) -> None:
    global _mode
    if mode not in ("descriptor", "lock"):
        raise ValueError(f"unknown DCAS mode {mode!r}")
    _mode = mode


def get_dcas_mode() -> str:
    return _mode


def _same(a: Any, b: Any) -> bool:
    if a is b:
        return True
    # only machine-word payloads compare by value; references compare by identity
    return type(a) is int and type(b) is int and a == b


class _Descriptor:
    __slots__ = ("entries", "status", "_status_lock")

    def __init__(self, entries):
        self.entries = entries
        self.status = _UNDECIDED
        self._status_lock = threading.Lock()

    def decide(self, outcome: int) -> None:
        with self._status_lock:
            if self.status == _UNDECIDED:
                self.status = outcome

    def logical_value(self, cell: "AtomicCell") -> Any:
        for c, expected, desired in self.entries:
            if c is cell:
                return desired if self.status == _SUCCEEDED else expected
        raise AssertionError("descriptor installed in a foreign cell")


class AtomicCell:
    """A sequentially consistent word: an int or a reference."""

    __slots__ = ("_raw", "_lock", "address")

    def __init__(self, value: Any = None):
        self._raw = value
        self._lock = threading.Lock()
        self.address = next(_addresses)

    def __repr__(self) -> str:
        return f"AtomicCell({self.load()!r})"

    def load(self) -> Any:
        raw = self._raw
        if type(raw) is _Descriptor:
            return raw.logical_value(self)
        return raw

    dcas_read = load

    def store(self, value: Any) -> None:
        if _mode == "lock":
            with _global_lock:
                self._raw = value
            return
        while True:
            with self._lock:
                raw = self._raw
                if type(raw) is not _Descriptor:
                    self._raw = value
                    return
            _help(raw)

    def cas(self, expected: Any, desired: Any) -> bool:
        if _mode == "lock":
            with _global_lock:
                if _same(self._raw, expected):
                    self._raw = desired
                    return True
                return False
        while True:
            with self._lock:
                raw = self._raw
                if type(raw) is not _Descriptor:
                    if _same(raw, expected):
                        self._raw = desired
                        return True
                    return False
            _help(raw)

    def faa(self, delta: int) -> int:
        if _mode == "lock":
            with _global_lock:
                old = self._raw
                self._raw = old + delta
                return old
        while True:
            with self._lock:
                raw = self._raw
                if type(raw) is not _Descriptor:
                    self._raw = raw + delta
                    return raw
            _help(raw)

    # descriptor plumbing

    def _install(self, expected: Any, desc: _Descriptor) -> Any:
        # conditional on desc still being undecided, so a late helper can
        # never re-install a finished descriptor
        with self._lock:
            raw = self._raw
            if raw is desc or type(raw) is _Descriptor:
                return raw
            if desc.status != _UNDECIDED:
                return _LATE
            if _same(raw, expected):
                self._raw = desc
                return desc
            return raw

    def _uninstall(self, desc: _Descriptor, value: Any) -> None:
        with self._lock:
            if self._raw is desc:
                self._raw = value


def _help(desc: _Descriptor) -> bool:
    if desc.status == _UNDECIDED:
        outcome = _SUCCEEDED
        for cell, expected, _ in desc.entries:
            while True:
                got = cell._install(expected, desc)
                if got is desc or got is _LATE:
                    break
                if type(got) is _Descriptor:
                    _help(got)
                    continue
                outcome = _FAILED
                break
            if outcome == _FAILED or got is _LATE:
                break
        desc.decide(outcome)
    ok = desc.status == _SUCCEEDED
    for cell, expected, desired in desc.entries:
        cell._uninstall(desc, desired if ok else expected)
    return ok


def dcas(
    cell1: AtomicCell, expected1: Any, desired1: Any,
    cell2: AtomicCell, expected2: Any, desired2: Any,
) -> bool:
    """Set both cells iff both hold their expected values; all or nothing."""
    if cell1 is cell2:
        raise ValueError("dcas targets must be distinct cells")
    if _mode == "lock":
        with _global_lock:
            if _same(cell1._raw, expected1) and _same(cell2._raw, expected2):
                cell1._raw = desired1
                cell2._raw = desired2
                return True
            return False
    entries = [(cell1, expected1, desired1), (cell2, expected2, desired2)]
    entries.sort(key=lambda e: e[0].address)
    return _help(_Descriptor(tuple(entries)))


class _ThreadRecord:
    __slots__ = ("epoch", "depth")

    def __init__(self):
        self.epoch: Optional[int] = None
        self.depth = 0


class EpochReclaimer:
    """Grace-period reclamation for retired level arrays.

    Readers bracket their accesses with :meth:`guard`. A retired object is
    reclaimed (its ``reclaim`` callback runs, which poisons it) only once
    every thread inside a guard announced an epoch later than the retirement.
    Readers that find a poisoned object report it via :meth:`report_poison`.
    """

    def __init__(self, batch: int = 32):
        self.batch = batch
        self.epoch = 0
        self.retired_count = 0
        self.reclaimed_count = 0
        self.poison_detections = 0
        self._lock = threading.Lock()
        self._limbo: list[tuple[int, Any, Callable[[Any], None]]] = []
        self._records: list[_ThreadRecord] = []
        self._local = threading.local()

    def _record(self) -> _ThreadRecord:
        rec = getattr(self._local, "rec", None)
        if rec is None:
            rec = _ThreadRecord()
            self._local.rec = rec
            with self._lock:
                self._records.append(rec)
        return rec

    def guard(self) -> "_Guard":
        return _Guard(self._record(), self)

    def retire(self, obj: Any, reclaim: Callable[[Any], None]) -> None:
        with self._lock:
            self._limbo.append((self.epoch, obj, reclaim))
            self.epoch += 1
            self.retired_count += 1
            due = len(self._limbo) >= self.batch
        if due:
            self.try_reclaim()

    def try_reclaim(self) -> int:
        with self._lock:
            active = [r.epoch for r in self._records if r.epoch is not None]
            horizon = min(active) if active else self.epoch + 1
            ready = [e for e in self._limbo if e[0] < horizon]
            self._limbo = [e for e in self._limbo if e[0] >= horizon]
            self.reclaimed_count += len(ready)
        for _, obj, reclaim in ready:
            reclaim(obj)
        return len(ready)

    def pending(self) -> int:
        with self._lock:
            return len(self._limbo)

    def report_poison(self, count: int = 1) -> None:
        with self._lock:
            self.poison_detections += count


class _Guard:
    __slots__ = ("rec", "owner")

    def __init__(self, rec: _ThreadRecord, owner: EpochReclaimer):
        self.rec = rec
        self.owner = owner

    def __enter__(self):
        rec = self.rec
        if rec.depth == 0:
            rec.epoch = self.owner.epoch
        rec.depth += 1
        return self

    def __exit__(self, *exc):
        rec = self.rec
        rec.depth -= 1
        if rec.depth == 0:
            rec.epoch = None
        return False
