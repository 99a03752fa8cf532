"""Concurrent quantiles sketch with relaxed, snapshot-based queries."""

from .atomics import AtomicCell, EpochReclaimer, dcas
from .config import ConfigError, SketchConfig
from .gather import GatherSortUnit, Updater
from .levels import CapacityExceededError, LevelArray, LevelHierarchy
from .query import QueryContext, Snapshot, collect_snapshot, snapshot_estimate
from .sequential import (
    CoinSource,
    EmptySketchError,
    SequentialSketch,
    exact_quantile,
    exact_rank,
    merge_sorted,
    sample_odd_or_even,
)
from .sketch import Audit, ConcurrentSketch, InvariantViolation, ingest

__version__ = "0.1.0"

__all__ = [
    "AtomicCell",
    "Audit",
    "CapacityExceededError",
    "CoinSource",
    "ConcurrentSketch",
    "ConfigError",
    "EmptySketchError",
    "EpochReclaimer",
    "GatherSortUnit",
    "InvariantViolation",
    "LevelArray",
    "LevelHierarchy",
    "QueryContext",
    "SequentialSketch",
    "SketchConfig",
    "Snapshot",
    "Updater",
    "collect_snapshot",
    "dcas",
    "exact_quantile",
    "exact_rank",
    "ingest",
    "merge_sorted",
    "sample_odd_or_even",
    "snapshot_estimate",
]
