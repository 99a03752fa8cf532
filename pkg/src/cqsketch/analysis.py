"""Hole bounds, a Monte-Carlo hole simulator and the relaxation/error model.

Hole bounds are evaluated with exact rationals (:class:`fractions.Fraction`)
and converted to float at the edge, so binomials with thousands of terms do
not overflow.

Hole model: a batch owner ``T_O`` finishes reserving the last region of a
``2k`` buffer while the writer ``T_j`` of region ``j`` has not written yet.
``T_O`` then writes its own ``b`` slots, reads the ``(j-1)b`` slots of earlier
regions and reads region ``j`` slot by slot; ``T_j`` writes its ``b`` slots.
Each next step belongs to either thread with probability 1/2. A slot is a
hole when ``T_O`` reads it before ``T_j`` writes it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Optional

import numpy as np

__all__ = [
    "HoleEstimate",
    "RelaxationModel",
    "eh_region_bound",
    "eh_region_bound_exact",
    "eh_total_bound",
    "epsilon_relaxed",
    "epsilon_total",
    "p_bound",
    "pi_bound",
    "pi_bound_exact",
    "relaxation",
    "simulate_holes",
]

HOLE_TOTAL_LIMIT = 2.8


def pi_bound_exact(i: int, j: int, b: int) -> Fraction:
    """Bound on the chance that the first hole of region ``j`` is slot ``i+1``."""
    if b < 1 or j < 1 or not 0 <= i <= b - 1:
        raise ValueError(f"need b >= 1, j >= 1, 0 <= i < b; got i={i}, j={j}, b={b}")
    steps = j * b + 2 * i
    return Fraction(math.comb(steps, i), 2 ** (steps + 1))


def pi_bound(i: int, j: int, b: int) -> float:
    return float(pi_bound_exact(i, j, b))


def p_bound(j: int, b: int) -> float:
    """Bound on the chance of at least one hole in region ``j``."""
    return float(sum(pi_bound_exact(i, j, b) for i in range(b)))


@lru_cache(maxsize=4096)
def eh_region_bound_exact(j: int, b: int) -> Fraction:
    """``b^2 * C((j+2)b - 2, b - 1) / 2^((j+2)b - 1)``."""
    if b < 1 or j < 1:
        raise ValueError("need b >= 1 and j >= 1")
    top = (j + 2) * b
    return Fraction(b * b * math.comb(top - 2, b - 1), 2 ** (top - 1))


def eh_region_bound(j: int, b: int) -> float:
    return float(eh_region_bound_exact(j, b))


def eh_total_bound(b: int, k: int) -> float:
    """Sum of the per-region bounds over the ``2k/b`` regions of one buffer."""
    if b < 1 or (2 * k) % b:
        raise ValueError(f"b={b} must divide 2k={2 * k}")
    regions = 2 * k // b
    # exact sum over the common denominator 2^((regions+2)b - 1)
    shift_top = (regions + 2) * b - 1
    numerator = 0
    for j in range(1, regions + 1):
        top = (j + 2) * b
        numerator += b * b * math.comb(top - 2, b - 1) << (shift_top - (top - 1))
    value = float(Fraction(numerator, 1 << shift_top))
    if value > HOLE_TOTAL_LIMIT:
        raise AssertionError(f"expected holes bound {value} exceeds {HOLE_TOTAL_LIMIT}")
    return value


@dataclass(frozen=True)
class HoleEstimate:
    b: int
    regions: int
    trials: int
    mean: float
    stderr: float

    @property
    def ci95(self) -> tuple[float, float]:
        half = 1.96 * self.stderr
        return self.mean - half, self.mean + half


def simulate_holes(b: int, regions: int, trials: int, seed: Optional[int] = None) -> HoleEstimate:
    """Monte-Carlo holes per batch under the two-thread fair-coin scheduler.

    Per region ``j``, ``X_i`` counts the writer's steps before the owner's
    read of slot ``i+1`` (its ``jb+i+1``-th step); the slot is a hole iff
    ``X_i <= i``. ``X_0`` is negative binomial and later ``X_i`` add geometric
    gaps. A region can only hold a hole when ``X_0 < b``, so each region first
    draws how many trials land there (binomial on the exact tail mass), picks
    those trials, samples ``X_0`` from the truncated law and walks the slots.
    """
    if trials < 1 or regions < 1 or b < 1:
        raise ValueError("b, regions and trials must be positive")
    rng = np.random.default_rng(seed)
    per_trial = np.zeros(trials, dtype=np.int64)
    xs = np.arange(b)
    log2 = math.log(2.0)
    for j in range(1, regions + 1):
        n = j * b + 1
        # P(X_0 = x) = C(n+x-1, x) / 2^(n+x)
        logp = np.array([math.lgamma(n + x) - math.lgamma(x + 1) - math.lgamma(n)
                         - (n + x) * log2 for x in range(b)])
        pmf = np.exp(logp)
        tail = float(pmf.sum())
        if tail == 0.0:
            break  # later regions have even less mass
        m = int(rng.binomial(trials, min(tail, 1.0)))
        if m == 0:
            continue
        who = rng.choice(trials, size=m, replace=False)
        x = rng.choice(xs, size=m, p=pmf / tail).astype(np.int64)
        holes = (x <= 0).astype(np.int64)
        for i in range(1, b):
            x = x + rng.geometric(0.5, size=m) - 1
            holes += x <= i
        per_trial[who] += holes
    mean = float(per_trial.mean())
    stderr = float(per_trial.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return HoleEstimate(b, regions, trials, mean, stderr)


@dataclass(frozen=True)
class RelaxationModel:
    k: int
    S: int
    N: int
    b: int
    epsilon_c: float = 0.01
    delta_c: float = 0.01
    epsilon_prime: float = 0.0
    n: int = 10**7

    def __post_init__(self):
        if min(self.k, self.S, self.N, self.b) < 1:
            raise ValueError("k, S, N and b must be positive")
        if self.N < self.S:
            raise ValueError(f"N={self.N} update threads cannot be fewer than S={self.S} nodes")
        if not 0 <= self.epsilon_c < 1 or not 0 < self.delta_c < 1:
            raise ValueError("epsilon_c must lie in [0, 1) and delta_c in (0, 1)")
        if self.epsilon_prime < 0:
            raise ValueError("epsilon_prime must be non-negative")


def relaxation(model: RelaxationModel) -> int:
    """Updates a query may miss: two full buffers per unit plus other threads' local buffers."""
    return 4 * model.k * model.S + (model.N - model.S) * model.b


def epsilon_relaxed(epsilon_c: float, r: int, n: int) -> float:
    if n <= 0:
        raise ValueError("stream size must be positive")
    return epsilon_c + (r / n) * (1.0 - epsilon_c)


def epsilon_total(model: RelaxationModel, r: Optional[int] = None) -> float:
    """Rank error bound of a (possibly cached) relaxed query."""
    r = relaxation(model) if r is None else r
    return epsilon_relaxed(model.epsilon_c, r, model.n) + model.epsilon_prime
