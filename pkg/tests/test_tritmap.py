import pytest
from hypothesis import given, strategies as st

from cqsketch import tritmap as tm

K = 64


def test_trit_reads():
    assert tm.trit(2, 0) == 2
    assert tm.trit(0, 5) == 0
    assert tm.trit(3**2 * 2 + 2, 2) == 2
    with pytest.raises(IndexError):
        tm.trit(0, 32)
    with pytest.raises(IndexError):
        tm.trit(0, 4, max_level=3)


def test_batch_delta():
    assert tm.delta_batch() == 2
    assert 0 + tm.delta_batch() == tm.from_trits([2])
    assert tm.from_trits([0, 1]) + tm.delta_batch() == tm.from_trits([2, 1])


def test_promote_full_matches_worked_trace():
    # levels (0, 1) go from trits [2, 1] (word 5) to [0, 2] (word 6)
    assert tm.from_trits([2, 1]) == 5
    assert 5 + tm.delta_promote_full(0) == 6 == tm.from_trits([0, 2])
    w = tm.from_trits([0, 2, 1])
    assert tm.trits(w + tm.delta_promote_full(1)) == [0, 0, 2]


def test_promote_empty():
    assert tm.trits(tm.from_trits([2, 0]) + tm.delta_promote_empty(0)) == [0, 1]
    w = tm.from_trits([1, 0, 2, 0])
    assert tm.trits(w + tm.delta_promote_empty(2)) == [1, 0, 0, 1]


def test_stream_size_examples():
    assert tm.render(tm.from_trits([2, 0, 2]), 5) == "00202"
    assert tm.stream_size(tm.from_trits([2, 0, 2]), K) == 10 * K
    assert tm.render(tm.from_trits([0, 1, 2]), 5) == "00210"
    assert tm.stream_size(tm.from_trits([0, 1, 2]), K) == 10 * K
    assert tm.stream_size(0, K) == 0


def test_word_fits_64_bits():
    top = tm.from_trits([2] * (tm.MAX_LEVEL_LIMIT + 1))
    assert top == 3 ** (tm.MAX_LEVEL_LIMIT + 1) - 1 < 2**64


def test_from_trits_rejects_bad_digit():
    with pytest.raises(ValueError):
        tm.from_trits([0, 3])


def stream_size_by_definition(ts, k):
    return sum({0: 0, 1: k, 2: 2 * k}[t] * 2**i for i, t in enumerate(ts))


legal_trits = st.lists(st.sampled_from([0, 1, 2]), min_size=1, max_size=tm.MAX_LEVEL_LIMIT + 1)


@given(legal_trits)
def test_stream_size_matches_definition(ts):
    assert tm.stream_size(tm.from_trits(ts), K) == stream_size_by_definition(ts, K)


@given(legal_trits, st.data())
def test_deltas_preserve_accounting(ts, data):
    w = tm.from_trits(ts)
    size = tm.stream_size(w, K)
    if ts[0] == 0:
        nw = w + tm.delta_batch()
        assert nw > w and tm.stream_size(nw, K) == size + 2 * K
    movable = [l for l in range(len(ts) - 1) if ts[l] == 2 and ts[l + 1] in (0, 1)]
    if movable:
        l = data.draw(st.sampled_from(movable))
        delta = tm.delta_promote_full(l) if ts[l + 1] == 1 else tm.delta_promote_empty(l)
        nw = w + delta
        assert nw > w
        assert tm.stream_size(nw, K) == size
        after = tm.trits(nw) + [0] * len(ts)
        assert after[l] == 0 and after[l + 1] == ts[l + 1] + 1
