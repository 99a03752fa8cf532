from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .tritmap import MAX_LEVEL_LIMIT


class ConfigError(ValueError):
    """Invalid sketch or workload parameters."""


@dataclass(frozen=True)
class SketchConfig:
    """Parameters of a concurrent sketch.

    ``numa_nodes`` is the number of Gather&Sort units. ``update_threads`` is
    only used for the relaxation value; any number of updaters may register.
    ``coins`` pins an injected coin sequence shared by all propagations, which
    is meant for single-updater, derandomized runs.
    """

    k: int = 4096
    b: int = 16
    numa_nodes: int = 1
    update_threads: int = 1
    max_level: int = MAX_LEVEL_LIMIT
    rho: float = 0.0
    seed: Optional[int] = None
    coins: Optional[Sequence[bool]] = None
    instrumented: bool = False
    default_element: float = 0.0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be positive")
        if self.b < 1 or (2 * self.k) % self.b:
            raise ConfigError(f"b={self.b} must be positive and divide 2k={2 * self.k}")
        if self.numa_nodes < 1:
            raise ConfigError("need at least one Gather&Sort unit")
        if not 0 <= self.max_level <= MAX_LEVEL_LIMIT:
            raise ConfigError(f"max_level must lie in [0, {MAX_LEVEL_LIMIT}]")
        if self.rho < 0:
            raise ConfigError("rho must be non-negative")

    @property
    def capacity(self) -> int:
        """Largest stream the level hierarchy can absorb."""
        return 2 * self.k * (2 ** (self.max_level + 1) - 1)

    @property
    def relaxation(self) -> int:
        s, n = self.numa_nodes, max(self.update_threads, self.numa_nodes)
        return 4 * self.k * s + (n - s) * self.b
