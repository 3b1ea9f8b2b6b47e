from __future__ import annotations

from itertools import product
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hwsimon import (
    BitString,
    CandidateSet,
    InconsistentError,
    ResourceError,
    Undetermined,
    UsageError,
    count_candidates,
    dot_mod2,
    enumerate_candidates,
    hamming_weight,
    solve_unique,
)
from hwsimon.gf2 import nullspace, parity, rank, sample_orthogonal

B = BitString.parse


@st.composite
def same_length(draw, k=2, max_n=20):
    n = draw(st.integers(1, max_n))
    return [BitString(draw(st.integers(0, (1 << n) - 1)), n) for _ in range(k)]


def test_text_form_puts_coordinate_zero_first():
    x = B("011")
    assert x.bits == 6 and [x[j] for j in range(3)] == [0, 1, 1]
    assert str(x) == "011"
    assert BitString.representative(5, 2) == B("00011")


def test_bitstring_rejects_out_of_range():
    with pytest.raises(UsageError):
        BitString(8, 3)
    with pytest.raises(UsageError):
        BitString(0, 64)
    with pytest.raises(UsageError):
        B("01a")


@pytest.mark.parametrize("x,y,expect", [("1010", "1000", 1), ("1011", "0110", 1), ("1101", "0000", 0)])
def test_dot_mod2_examples(x, y, expect):
    assert dot_mod2(B(x), B(y)) == expect


def test_dot_mod2_length_mismatch():
    with pytest.raises(UsageError):
        dot_mod2(B("10"), B("100"))


@pytest.mark.parametrize("s,expect", [("00000", 0), ("11111", 5), ("0110100", 3)])
def test_hamming_weight(s, expect):
    assert hamming_weight(B(s)) == expect


@given(same_length(k=3))
def test_dot_is_symmetric_and_bilinear(xyz):
    x, y, z = xyz
    assert dot_mod2(x, y) == dot_mod2(y, x)
    assert dot_mod2(x ^ y, z) == dot_mod2(x, z) ^ dot_mod2(y, z)


@given(same_length(k=1, max_n=63))
def test_dot_with_zero_vanishes(xs):
    x = xs[0]
    assert dot_mod2(x, BitString.zeros(x.n)) == 0


def test_enumerate_examples():
    assert len(enumerate_candidates(3, 3)) == 7
    assert len(enumerate_candidates(29, 4)) == 27840 == 29 + 406 + 3654 + 23751
    assert [str(m) for m in enumerate_candidates(4, 1).members] == ["1000", "0100", "0010", "0001"]


@pytest.mark.parametrize("n", range(1, 21))
def test_unrestricted_set_has_all_nonzero_strings(n):
    assert len(enumerate_candidates(n, n)) == 2**n - 1


@pytest.mark.parametrize("n,w", [(6, 2), (7, 4), (9, 3)])
def test_enumeration_matches_brute_force(n, w):
    brute = sorted(v for v in range(1, 1 << n) if v.bit_count() <= w)
    cs = enumerate_candidates(n, w)
    assert cs.values.tolist() == brute
    assert len(cs) == count_candidates(n, w) == sum(comb(n, j) for j in range(1, w + 1))


def test_enumeration_cap():
    with pytest.raises(ResourceError, match="representative"):
        enumerate_candidates(30, 30)
    with pytest.raises(UsageError):
        enumerate_candidates(3, 4)


def test_candidate_set_is_read_only():
    cs = enumerate_candidates(4, 2)
    with pytest.raises(ValueError):
        cs.values[0] = 5
    assert B("0011") in cs and B("0111") not in cs


def test_solve_unique_examples():
    single = CandidateSet.from_members([B("101")], 3)
    assert solve_unique([], single) == B("101")
    allc = enumerate_candidates(3, 3)
    # brute force: the only nonzero string orthogonal to 110 and 101 is 111
    brute = [b for b in allc.members if dot_mod2(b, B("110")) == 0 and dot_mod2(b, B("101")) == 0]
    assert brute == [B("111")]
    assert solve_unique([B("110"), B("101")], allc) == B("111")
    assert solve_unique([B("11")], enumerate_candidates(2, 2)) == B("11")


def test_solve_unique_undetermined_and_inconsistent():
    res = solve_unique([B("100")], enumerate_candidates(3, 3))
    assert isinstance(res, Undetermined)
    assert [str(s) for s in res.survivors] == ["010", "001", "011"]
    assert [s.bits for s in res.survivors] == sorted(s.bits for s in res.survivors)
    with pytest.raises(InconsistentError):
        solve_unique([B("10"), B("01")], enumerate_candidates(2, 2))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6).flatmap(lambda n: st.tuples(
    st.just(n), st.integers(1, n), st.lists(st.integers(0, (1 << n) - 1), max_size=8))))
def test_filter_and_gauss_agree(args):
    n, w, zs = args
    cands = enumerate_candidates(n, w)
    zs = [BitString(z, n) for z in zs]
    try:
        a = solve_unique(zs, cands, "filter")
    except InconsistentError:
        with pytest.raises(InconsistentError):
            solve_unique(zs, cands, "gauss")
        return
    assert a == solve_unique(zs, cands, "gauss")


@settings(deadline=None)
@given(st.integers(1, 8).flatmap(lambda n: st.tuples(st.just(n), st.lists(st.integers(0, (1 << n) - 1), max_size=10))))
def test_nullspace_rank_nullity(args):
    n, rows = args
    basis = nullspace(rows, n)
    assert len(basis) + rank(rows, n) == n
    for v in basis:
        assert all(((v & r).bit_count() & 1) == 0 for r in rows)
    # brute force dimension of the orthogonal complement
    brute = sum(all(((v & r).bit_count() & 1) == 0 for r in rows) for v in range(1 << n))
    assert brute == 2 ** len(basis)


def test_parity_matches_python():
    vals = np.arange(1 << 10, dtype=np.uint64)
    assert parity(vals).tolist() == [int(v).bit_count() & 1 for v in range(1 << 10)]


def test_sample_orthogonal_uniform_on_complement():
    rng = np.random.default_rng(0)
    b = 0b0110
    z = sample_orthogonal(b, 4, 80_000, rng)
    assert not parity(z & np.uint64(b)).any()
    counts = np.bincount(z.astype(np.int64), minlength=16)
    support = [v for v in range(16) if not (v & b).bit_count() & 1]
    assert set(np.nonzero(counts)[0]) == set(support)
    from scipy.stats import chisquare

    assert chisquare(counts[support]).pvalue > 1e-4


def test_exhaustive_dot_table_small():
    for x, y in product(range(8), repeat=2):
        assert dot_mod2(BitString(x, 3), BitString(y, 3)) == bin(x & y).count("1") % 2
