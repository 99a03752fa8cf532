import math
from fractions import Fraction

import numpy as np
import pytest

from cqsketch.analysis import (
    RelaxationModel,
    eh_region_bound,
    eh_region_bound_exact,
    eh_total_bound,
    epsilon_relaxed,
    epsilon_total,
    p_bound,
    pi_bound,
    pi_bound_exact,
    relaxation,
    simulate_holes,
)


def exact_expected_holes(b, regions):
    """Exact mean of the two-thread race by linearity of expectation.

    Slot i+1 of region j is a hole iff the owner's (jb+i+1)-th step comes
    before the writer's (i+1)-th step, i.e. the writer has taken at most i
    steps when the owner takes that step.
    """
    total = Fraction(0)
    for j in range(1, regions + 1):
        for i in range(b):
            n = j * b + i + 1
            total += sum(Fraction(math.comb(n + x - 1, x), 2 ** (n + x)) for x in range(i + 1))
    return float(total)


def brute_race(b, regions, trials, rng):
    """Step-by-step coin flipping, no distributional shortcuts."""
    holes = 0
    for _ in range(trials):
        for j in range(1, regions + 1):
            owner = writer = 0
            while writer < b and owner < j * b + b:
                if rng.random() < 0.5:
                    owner += 1
                    slot = owner - j * b  # 1-based slot in region j being read
                    if slot >= 1 and slot > writer:
                        holes += 1
                else:
                    writer += 1
    return holes / trials


def test_pi_examples():
    for b in (1, 2, 7, 16):
        assert pi_bound_exact(0, 1, b) == Fraction(1, 2 ** (b + 1))
    assert pi_bound_exact(1, 1, 4) == Fraction(6, 128)
    with pytest.raises(ValueError):
        pi_bound(4, 1, 4)
    with pytest.raises(ValueError):
        pi_bound(0, 0, 4)


def test_pi_monotone_in_i():
    for b in range(1, 65):
        for j in range(1, 33):
            vals = [pi_bound_exact(i, j, b) for i in range(b)]
            assert all(x <= y for x, y in zip(vals, vals[1:])), (b, j)
            assert all(0 <= v <= 1 for v in vals)


def test_p_bound():
    assert p_bound(1, 1) == 0.25
    for b in (1, 4, 16, 33):
        ps = [p_bound(j, b) for j in range(1, 20)]
        assert all(x > y for x, y in zip(ps, ps[1:]))
        assert all(0 <= p <= 1 for p in ps)
    ref = Fraction(0)
    for i in range(16):
        ref += Fraction(math.factorial(16 + 2 * i), math.factorial(i) * math.factorial(16 + i)) / 2 ** (17 + 2 * i)
    assert p_bound(1, 16) == pytest.approx(float(ref), rel=1e-15)


def test_region_bound_closed_form():
    assert eh_region_bound_exact(1, 9) == Fraction(81 * math.comb(25, 8), 2**26)
    assert eh_region_bound(1, 9) == pytest.approx(1.305, abs=1e-3)
    # the bound on E[H_j] dominates b * p_j
    for b in (1, 3, 8, 16):
        for j in (1, 2, 5):
            assert b * p_bound(j, b) <= eh_region_bound(j, b) + 1e-15


def test_region_lemmas_over_grid():
    for b in range(1, 65):
        assert eh_region_bound_exact(1, b) <= Fraction(14, 10)
        for j in range(1, 33):
            assert eh_region_bound_exact(j + 1, b) <= eh_region_bound_exact(j, b) / 2, (b, j)


def test_total_bound():
    for b in range(1, 65):
        for k in (32, 64, 96, 256, 1024):
            if (2 * k) % b == 0:
                assert 0 <= eh_total_bound(b, k) <= 2.8
    assert eh_total_bound(16, 4096) == pytest.approx(0.9334, abs=1e-4)
    assert eh_total_bound(2048, 1024) <= 1.4  # one region
    with pytest.raises(ValueError):
        eh_total_bound(3, 4)


def test_exact_mean_below_bound():
    for b in (1, 2, 4, 8):
        for regions in (1, 3):
            exact = exact_expected_holes(b, regions)
            bound = sum(eh_region_bound(j, b) for j in range(1, regions + 1))
            assert exact <= bound + 1e-12


@pytest.mark.parametrize("b,regions", [(1, 1), (2, 3), (4, 2), (8, 4)])
def test_simulation_matches_exact_mean(b, regions):
    est = simulate_holes(b, regions, 200_000, seed=5)
    exact = exact_expected_holes(b, regions)
    assert abs(est.mean - exact) <= 4 * est.stderr + 1e-9


@pytest.mark.parametrize("b,regions", [(1, 2), (3, 2)])
def test_simulation_matches_step_race(b, regions):
    brute = brute_race(b, regions, 40_000, np.random.default_rng(11))
    exact = exact_expected_holes(b, regions)
    assert brute == pytest.approx(exact, abs=0.02)


def test_simulation_contained_in_bound():
    for b, k in [(1, 64), (4, 256), (16, 4096), (32, 4096)]:
        est = simulate_holes(b, 2 * k // b, 50_000, seed=1)
        assert est.ci95[0] <= eh_total_bound(b, k)
    assert simulate_holes(16, 512, 100_000, seed=2).mean < 1
    assert simulate_holes(4, 3, 1000, seed=3) == simulate_holes(4, 3, 1000, seed=3)


def test_relaxation_examples():
    assert relaxation(RelaxationModel(k=4096, S=1, N=8, b=2048)) == 30720
    assert relaxation(RelaxationModel(k=4096, S=4, N=32, b=2048)) == 122880
    assert relaxation(RelaxationModel(k=100, S=3, N=3, b=8)) == 1200
    with pytest.raises(ValueError):
        RelaxationModel(k=4096, S=4, N=2, b=16)


def test_epsilon():
    m = RelaxationModel(k=4096, S=1, N=8, b=2048, epsilon_c=0.01, epsilon_prime=0.05, n=10**7)
    assert epsilon_total(m) == pytest.approx(0.01 + 30720 / 1e7 * 0.99 + 0.05)
    assert round(epsilon_total(m), 5) == 0.06304
    assert epsilon_total(m, r=0) == pytest.approx(0.06)
    assert epsilon_total(RelaxationModel(k=1, S=1, N=1, b=1, n=10**7), r=0) == 0.01
    assert epsilon_relaxed(0.01, 10, 100) < epsilon_relaxed(0.01, 20, 100) < epsilon_relaxed(0.02, 20, 100)
    with pytest.raises(ValueError):
        epsilon_relaxed(0.01, 1, 0)
