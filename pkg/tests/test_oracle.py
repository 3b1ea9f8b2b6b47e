from __future__ import annotations

from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hwsimon import BitString, DataError, ResourceError, UnsupportedStructureError, UsageError
from hwsimon.oracle import (
    CnotCircuit,
    FeistelPermutation,
    OracleInstance,
    RawProgram,
    build_canonical_circuit,
    compile_program,
    emit_circuit_text,
    evaluate_f,
    noiseless_distribution,
    normalize,
    parse_circuit_text,
    read_counts_csv,
    reduce_counts,
    sample_counts,
    simulate_raw,
    statevector_probabilities,
    total_variation,
    verify_two_to_one,
    write_counts_csv,
)

B = BitString.parse


def fbx_reference(x: int, n: int, i: int) -> int:
    """Coordinate-wise f_b for b = 0^(n-i) 1^i, written out directly."""
    k = n - i
    bit = lambda j: (x >> j) & 1  # noqa: E731
    out = 0
    for j in range(n):
        if j < k:
            v = bit(j)
        elif j == k:
            v = 0
        else:
            v = bit(j) ^ bit(k)
        out |= v << j
    return out


def test_weight_two_circuit_on_three_bits():
    c = build_canonical_circuit(3, 2)
    assert c.edges == (("d0", "a0"), ("d1", "a2"), ("d2", "a2"))
    assert emit_circuit_text(c) == "SIMON n=3\nCX d0 a0\nCX d1 a2\nCX d2 a2"


@pytest.mark.parametrize("n", [2, 5, 8])
def test_full_weight_has_no_copy_edges(n):
    c = build_canonical_circuit(n, n)
    expect = []
    for j in range(1, n):
        expect += [("d0", f"a{j}"), (f"d{j}", f"a{j}")]
    assert list(c.edges) == expect


@pytest.mark.parametrize("n", [2, 5, 9])
def test_weight_one_copies_and_leaves_last_ancilla(n):
    c = build_canonical_circuit(n, 1)
    assert list(c.edges) == [(f"d{j}", f"a{j}") for j in range(n - 1)]
    assert all(t != f"a{n - 1}" for _, t in c.edges)


@pytest.mark.parametrize("n,i", [(3, 0), (3, 4), (0, 1)])
def test_bad_weight_rejected(n, i):
    with pytest.raises(UsageError):
        build_canonical_circuit(n, i)


def test_edge_count_formula():
    for n in range(1, 12):
        for i in range(1, n + 1):
            assert len(build_canonical_circuit(n, i).edges) == (n - i) + 2 * (i - 1)


def test_empty_circuit_text_is_header_only():
    assert emit_circuit_text(CnotCircuit(4)) == "SIMON n=4"
    assert parse_circuit_text("SIMON n=4") == CnotCircuit(4)


@given(st.integers(1, 30).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n))))
def test_circuit_text_round_trip(ni):
    c = build_canonical_circuit(*ni)
    assert parse_circuit_text(emit_circuit_text(c)) == c


@pytest.mark.parametrize("text", ["", "SIMON n=x", "SIMON n=2\nCX d0", "SIMON n=2\nCX d0 a5", "SIMON n=2\nCZ d0 a1"])
def test_parse_rejects_garbage(text):
    with pytest.raises(DataError):
        parse_circuit_text(text)


def test_evaluate_examples():
    inst = OracleInstance(3, B("011"))
    assert evaluate_f(inst, B("000")) == B("000")
    assert evaluate_f(inst, B("010")) == B("001")
    assert evaluate_f(inst, B("001")) == B("001")


@settings(deadline=None, max_examples=60)
@given(st.integers(1, 10).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n))))
def test_canonical_circuit_matches_coordinate_formula(ni):
    n, i = ni
    xs = np.arange(1 << n, dtype=np.uint64)
    got = build_canonical_circuit(n, i).apply(xs)
    assert got.tolist() == [fbx_reference(int(x), n, i) for x in xs]


@settings(deadline=None, max_examples=40)
@given(st.integers(1, 7).flatmap(lambda n: st.tuples(
    st.just(n), st.integers(1, (1 << n) - 1), st.integers(0, 2**32), st.sampled_from(["feistel", "table"]))))
def test_collisions_are_exactly_x_and_x_xor_b(args):
    n, b, seed, mode = args
    inst = OracleInstance(n, BitString(b, n), f1_seed=seed, f1_mode=mode)
    ys = inst.f(np.arange(1 << n, dtype=np.uint64))
    same = ys[:, None] == ys[None, :]
    x = np.arange(1 << n)
    expect = (x[:, None] == x[None, :]) | (x[:, None] == (x[None, :] ^ b))
    assert np.array_equal(same, expect)


@settings(deadline=None, max_examples=30)
@given(st.integers(1, 63).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, (1 << n) - 1), st.integers(0, 999))))
def test_collision_holds_for_large_n(args):
    n, b, seed = args
    inst = OracleInstance(n, BitString(b, n), f1_seed=seed)
    rng = np.random.default_rng(seed)
    xs = rng.integers(0, 1 << n, size=64, dtype=np.uint64)
    assert np.array_equal(inst.f(xs), inst.f(xs ^ np.uint64(b)))


def test_verify_examples():
    assert verify_two_to_one(OracleInstance(3, B("011")))
    assert verify_two_to_one(OracleInstance(2, B("11"), f1_seed=7, f1_mode="table"))
    canon = build_canonical_circuit(4, 2)
    for e in range(len(canon.edges)):
        broken = OracleInstance.from_circuit(canon.without_edge(e), B("0011"))
        assert not verify_two_to_one(broken)
    with pytest.raises(ResourceError):
        verify_two_to_one(OracleInstance(13, BitString.representative(13, 2)))


@pytest.mark.parametrize("n", [1, 5, 17, 40, 63])
def test_feistel_is_a_permutation_sample(n):
    f1 = FeistelPermutation(n, 12345)
    if n <= 17:
        xs = np.arange(1 << n, dtype=np.uint64)
        ys = f1(xs)
        assert len(np.unique(ys)) == len(xs) and ys.max() < (1 << n)
    else:
        xs = np.unique(np.random.default_rng(1).integers(0, 1 << n, 5000, dtype=np.uint64))
        ys = f1(xs)
        assert len(np.unique(ys)) == len(xs)
        assert int(ys.max()) < (1 << n)


def test_feistel_and_table_give_same_distribution_shape():
    b = B("0101")
    for mode in ("feistel", "table"):
        dist = noiseless_distribution(OracleInstance(4, b, f1_seed=3, f1_mode=mode))
        assert len(dist) == 8 * 8
        assert set(dist.values()) == {Fraction(1, 64)}


def test_general_b_conjugation_matches_canonical_layout():
    # f0 for a non-canonical b still has kernel {0, b}
    for b in range(1, 32):
        inst = OracleInstance(5, BitString(b, 5))
        assert verify_two_to_one(inst)


def test_noiseless_distribution_against_statevector():
    for n, i in [(2, 1), (3, 2), (4, 4)]:
        c = build_canonical_circuit(n, i)
        probs = statevector_probabilities(c)
        inst = OracleInstance(n, BitString.representative(n, i))
        exact = noiseless_distribution(inst)
        sim = simulate_raw(RawProgram(n, c))
        assert total_variation(sim, {k: float(v) for k, v in exact.items()}) < 1e-12
        assert abs(probs.sum() - 1) < 1e-12


def test_sample_counts_follow_exact_law():
    inst = OracleInstance(3, B("011"), f1_seed=1)
    counts = sample_counts(inst, 40_000, np.random.default_rng(2))
    exact = noiseless_distribution(inst)
    assert set(counts) <= set(exact)
    from scipy.stats import chisquare

    keys = sorted(exact)
    obs = [counts.get(k, 0) for k in keys]
    assert chisquare(obs).pvalue > 1e-4


def test_compile_identity_postprocessing():
    raw = RawProgram(3, build_canonical_circuit(3, 2))
    prog = compile_program(raw)
    assert prog.is_identity_postprocessing
    assert total_variation(prog.distribution(), simulate_raw(raw)) < 1e-12


def test_compile_with_f1_table():
    table = np.array([5, 2, 7, 0, 3, 6, 1, 4], dtype=np.uint64)
    raw = RawProgram(3, build_canonical_circuit(3, 2), f1_table=table)
    prog = compile_program(raw)
    assert not prog.is_identity_postprocessing
    assert total_variation(prog.distribution(), simulate_raw(raw)) < 1e-12


def test_compile_with_wire_swap():
    raw = RawProgram(3, build_canonical_circuit(3, 1), layout=(1, 0, 2))
    prog = compile_program(raw)
    assert total_variation(prog.distribution(), simulate_raw(raw)) < 1e-12


@settings(deadline=None, max_examples=25)
@given(st.integers(2, 6).flatmap(lambda n: st.tuples(
    st.just(n), st.integers(1, (1 << n) - 1), st.permutations(list(range(n))), st.integers(0, 99))))
def test_compile_preserves_distribution(args):
    n, b, layout, seed = args
    inst = OracleInstance(n, BitString(b, n))
    # the generic f0 circuit for b, realised as CNOT rows
    rows = [int(inst.f0(np.array([1 << c], dtype=np.uint64))[0]) for c in range(n)]
    pairs = [(c, t) for c in range(n) for t in range(n) if (rows[c] >> t) & 1]
    table = np.random.default_rng(seed).permutation(1 << n).astype(np.uint64)
    raw = RawProgram(n, CnotCircuit.from_pairs(n, pairs), f1_table=table, layout=tuple(layout))
    prog = compile_program(raw)
    assert prog.b.bits == b
    assert total_variation(prog.distribution(), simulate_raw(raw)) < 1e-9


def test_compile_rejects_non_canonical():
    with pytest.raises(UnsupportedStructureError):
        compile_program(RawProgram(3, CnotCircuit(3, (("a0", "d1"),))))
    with pytest.raises(UnsupportedStructureError):
        compile_program(RawProgram(3, CnotCircuit.from_pairs(3, [(0, 0)])))


def test_reduce_counts_examples():
    assert reduce_counts({"000000": 100}, 2) == {"0000": 100}
    uniform = {format(v, "06b"): 5 for v in range(64)}
    red = reduce_counts(uniform, 2)
    assert len(red) == 16 and set(red.values()) == {20}
    with pytest.raises(UsageError):
        reduce_counts({"000000": 1}, 3)


@pytest.mark.parametrize("n", range(2, 7))
def test_reduction_of_exact_distribution(n):
    for i in range(1, n + 1):
        for m in range(i, n):
            big = noiseless_distribution(OracleInstance(n, BitString.representative(n, i)))
            small = noiseless_distribution(OracleInstance(m, BitString.representative(m, i)))
            scale = 10**6
            red = reduce_counts({k: int(v * scale * 2 ** (2 * n)) for k, v in big.items()}, m)
            assert total_variation(normalize(red), small) == 0


def test_reduction_from_sampled_counts_preserves_total():
    # the reduction argument concerns the canonical circuit, so f1 is the identity here
    inst = OracleInstance(3, B("011"))
    counts = sample_counts(inst, 5000, np.random.default_rng(0))
    red = reduce_counts(counts, 2)
    assert sum(red.values()) == 5000
    exact = {k: float(v) for k, v in noiseless_distribution(OracleInstance(2, B("11"))).items()}
    assert total_variation({k: v / 5000 for k, v in red.items()}, exact) < 0.05


def test_counts_csv_round_trip(tmp_path):
    counts = Counter({"0101": 3, "1100": 9})
    path = tmp_path / "c.csv"
    write_counts_csv(counts, path)
    assert read_counts_csv(path) == dict(counts)
    path.write_text("bitstring,count\n0101,3\n01x1,2\n")
    with pytest.raises(DataError, match=":3:"):
        read_counts_csv(path)
