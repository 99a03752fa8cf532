"""Sequential quantiles sketch and brute-force rank/quantile oracles.

The sketch keeps a base buffer of up to ``2k`` raw elements and a hierarchy
of levels. Level ``i >= 1`` is either empty or holds exactly ``k`` sorted
elements, each standing for ``2**i`` stream elements. When the base fills it
is sorted and halved (odd or even positions, decided by a coin), and the
survivors cascade upward, merging with every full level they meet, until an
empty level absorbs them.

Coins come from a :class:`CoinSource`, which is either a seeded RNG or an
explicit boolean sequence. Feeding two sketches the same sequence makes their
evolution identical, which is what the concurrent sketch is checked against.
"""

from __future__ import annotations

import math
import random
import threading
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

__all__ = [
    "CoinSource",
    "EmptySketchError",
    "SequentialSketch",
    "exact_quantile",
    "exact_rank",
    "merge_sorted",
    "sample_odd_or_even",
    "weighted_bracket",
]


class EmptySketchError(ValueError):
    """Raised when a quantile is requested from something holding no data."""


def exact_rank(stream: Sequence[float] | np.ndarray, x: float) -> int:
    """Number of elements of ``stream`` strictly smaller than ``x``."""
    arr = np.asarray(stream, dtype=np.float64)
    if arr.size == 0:
        return 0
    return int(np.count_nonzero(arr < x))


def exact_quantile(stream: Sequence[float] | np.ndarray, phi: float) -> float:
    """The element at sorted position ``floor(phi * n)`` (clamped to ``n - 1``).

    This is the bracket rule with unit weights, so it breaks ties exactly the
    way :func:`weighted_bracket` does.
    """
    _check_phi(phi)
    arr = np.sort(np.asarray(stream, dtype=np.float64), kind="stable")
    n = arr.size
    if n == 0:
        raise EmptySketchError("empty stream")
    return float(arr[min(math.floor(phi * n), n - 1)])


def sample_odd_or_even(sorted_arr: np.ndarray, coin: bool) -> np.ndarray:
    """Keep 0-based even positions when ``coin`` is false, odd positions otherwise."""
    arr = np.asarray(sorted_arr)
    if arr.shape[0] % 2:
        raise ValueError(f"cannot halve an array of odd length {arr.shape[0]}")
    return arr[1::2].copy() if coin else arr[0::2].copy()


def merge_sorted(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Two-way merge of sorted arrays; on ties elements of ``a`` come first."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return b.copy()
    if b.size == 0:
        return a.copy()
    out = np.empty(a.size + b.size, dtype=np.float64)
    # final slot of b[j] is (#a <= b[j]) + j; a fills the rest in order
    b_pos = np.searchsorted(a, b, side="right") + np.arange(b.size)
    a_mask = np.ones(out.size, dtype=bool)
    a_mask[b_pos] = False
    out[b_pos] = b
    out[a_mask] = a
    return out


def weighted_bracket(values: np.ndarray, weights: np.ndarray, n: int, phi: float) -> float:
    """Pick ``x_j`` with ``W(x_j) <= floor(phi*n) < W(x_{j+1})``.

    ``values``/``weights`` must already be sorted by value. ``W`` is the
    exclusive prefix sum of weights, so ``phi = 0`` yields the minimum.
    """
    return bracket_from_prefix(values, np.cumsum(weights) - weights, n, phi)


def bracket_from_prefix(values: np.ndarray, before: np.ndarray, n: int, phi: float) -> float:
    """:func:`weighted_bracket` with the exclusive prefix sums precomputed."""
    _check_phi(phi)
    if values.size == 0 or n <= 0:
        raise EmptySketchError("empty sketch")
    j = int(np.searchsorted(before, math.floor(phi * n), side="right")) - 1
    return float(values[j])


def _check_phi(phi: float) -> None:
    if not 0.0 <= phi <= 1.0:
        raise ValueError(f"phi must lie in [0, 1], got {phi!r}")


class CoinSource:
    """Stream of fair coin flips, either seeded or replayed from a fixed sequence.

    ``next()`` is safe to call from several threads; in injected mode the
    order in which threads draw decides who gets which coin.
    """

    def __init__(self, seed: Optional[int] = None, sequence: Optional[Iterable[bool]] = None):
        if seed is not None and sequence is not None:
            raise ValueError("give either a seed or an injected sequence, not both")
        self._lock = threading.Lock()
        self.drawn = 0
        if sequence is not None:
            self.mode = "injected-sequence"
            self._iter: Optional[Iterator[bool]] = iter(sequence)
            self._rng = None
        else:
            self.mode = "seeded-rng"
            self._iter = None
            self._rng = random.Random(seed)

    @classmethod
    def injected(cls, sequence: Iterable[bool]) -> "CoinSource":
        return cls(sequence=sequence)

    def next(self) -> bool:
        with self._lock:
            self.drawn += 1
            if self._iter is not None:
                try:
                    return bool(next(self._iter))
                except StopIteration:
                    raise RuntimeError("injected coin sequence exhausted") from None
            return self._rng.random() < 0.5


class SequentialSketch:
    """Single-threaded quantiles sketch with ``k``-sized levels."""

    def __init__(self, k: int, coins: Optional[CoinSource] = None, seed: Optional[int] = None):
        if k < 1:
            raise ValueError("k must be positive")
        self.k = k
        self.coins = coins if coins is not None else CoinSource(seed=seed)
        self.base: list[float] = []
        # levels[0] is unused; the base plays level 0
        self.levels: list[Optional[np.ndarray]] = [None]
        self.n = 0

    def update(self, x: float) -> None:
        self.base.append(float(x))
        self.n += 1
        if len(self.base) == 2 * self.k:
            self._compact_base()

    def extend(self, xs: Iterable[float]) -> None:
        for x in xs:
            self.update(x)

    def _compact_base(self) -> None:
        batch = np.sort(np.asarray(self.base, dtype=np.float64), kind="stable")
        self.base = []
        carry = sample_odd_or_even(batch, self.coins.next())
        level = 1
        while True:
            if level == len(self.levels):
                self.levels.append(None)
            resident = self.levels[level]
            if resident is None:
                self.levels[level] = carry
                return
            self.levels[level] = None
            carry = sample_odd_or_even(merge_sorted(carry, resident), self.coins.next())
            level += 1

    def samples(self) -> tuple[np.ndarray, np.ndarray]:
        """All retained elements with weights, sorted by (value, level)."""
        parts = [np.asarray(self.base, dtype=np.float64)]
        weights = [np.ones(len(self.base), dtype=np.int64)]
        for i, arr in enumerate(self.levels):
            if arr is not None:
                parts.append(arr)
                weights.append(np.full(arr.size, 1 << i, dtype=np.int64))
        values = np.concatenate(parts)
        w = np.concatenate(weights)
        order = np.argsort(values, kind="stable")
        return values[order], w[order]

    def query(self, phi: float) -> float:
        if self.n == 0:
            raise EmptySketchError("empty sketch")
        values, weights = self.samples()
        return weighted_bracket(values, weights, self.n, phi)

    def level_sizes(self) -> list[int]:
        return [len(self.base)] + [0 if a is None else a.size for a in self.levels[1:]]
