"""Base-3 packed level-state word.

Trit ``i`` of the word says what level ``i`` holds: 0 nothing (or an array
that is being cleared), 1 ``k`` elements, 2 ``2k`` elements waiting to be
propagated. All three transitions add a positive amount to the word, so the
shared tritmap only ever grows.
"""

from __future__ import annotations

MAX_LEVEL_LIMIT = 31

__all__ = [
    "MAX_LEVEL_LIMIT",
    "delta_batch",
    "delta_promote_empty",
    "delta_promote_full",
    "from_trits",
    "render",
    "stream_size",
    "trit",
    "trits",
]


def trit(word: int, i: int, max_level: int = MAX_LEVEL_LIMIT) -> int:
    if not 0 <= i <= max_level:
        raise IndexError(f"level {i} outside [0, {max_level}]")
    return (word // 3**i) % 3


def trits(word: int) -> list[int]:
    """Trits from level 0 upward, without trailing zeros."""
    out = []
    while word:
        word, t = divmod(word, 3)
        out.append(t)
    return out


def from_trits(ts) -> int:
    """Inverse of :func:`trits`; ``ts[0]`` is level 0."""
    word = 0
    for i, t in enumerate(ts):
        if t not in (0, 1, 2):
            raise ValueError(f"trit {t!r} at level {i}")
        word += t * 3**i
    return word


def delta_batch() -> int:
    """Level 0 goes 0 -> 2."""
    return 2


def delta_promote_full(level: int) -> int:
    """Levels (l, l+1) go [2, 1] -> [0, 2]."""
    return 3 ** (level + 1) - 2 * 3**level


def delta_promote_empty(level: int) -> int:
    """Levels (l, l+1) go [2, 0] -> [0, 1]."""
    return 3 ** (level + 1) - 2 * 3**level


def stream_size(word: int, k: int) -> int:
    """Number of stream elements the levels described by ``word`` summarize."""
    total = 0
    weight = k
    while word:
        word, t = divmod(word, 3)
        total += t * weight
        weight <<= 1
    return total


def render(word: int, width: int = 0) -> str:
    """Most significant trit first, e.g. ``render(20, 5) == '00202'``."""
    digits = "".join(str(t) for t in reversed(trits(word))) or "0"
    return digits.rjust(width, "0")
