from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from hwsimon import BitString, CandidateSet, InconsistentError, enumerate_candidates
from hwsimon.gf2 import parity
from hwsimon.players import (
    E_EB,
    GAMMA_EM,
    NoiseModel,
    PosteriorState,
    bayes_update,
    default_max_queries,
    default_threshold,
    ideal_bounds,
    ideal_player_batch,
    ideal_player_run,
    ideal_stopping_times,
    noisy_agent_batch,
    noisy_agent_run,
    nts_iq_exact_unrestricted,
    nts_iq_exact_w1,
    nts_iq_interpolated,
    p_of_hw,
    q_of_hw,
    random_guesser_scores,
    sample_z_ideal,
    sample_z_noisy,
    sample_z_noisy_batch,
)

B = BitString.parse


def test_constants():
    assert abs(E_EB - sum(1 / (2**k - 1) for k in range(1, 200))) < 1e-15
    assert abs(GAMMA_EM - 0.5772156649015329) < 1e-15


def test_sample_ideal_examples():
    rng = np.random.default_rng(0)
    assert all(sample_z_ideal(B("1"), rng) == B("0") for _ in range(20))
    draws = [sample_z_ideal(B("11"), rng).bits for _ in range(10_000)]
    counts = np.bincount(draws, minlength=4)
    assert counts[1] == counts[2] == 0
    assert chisquare(counts[[0, 3]]).pvalue > 1e-3


def test_noisy_sampler_limits():
    rng = np.random.default_rng(1)
    b = B("0110")
    ideal = sample_z_noisy_batch(b.bits, 4, NoiseModel("perfect"), 50_000, rng)
    assert not parity(ideal & np.uint64(b.bits)).any()
    flat = sample_z_noisy_batch(b.bits, 4, NoiseModel("constant_p", p=0.0), 100_000, rng)
    frac = 1 - parity(flat & np.uint64(b.bits)).mean()
    assert abs(frac - 0.5) < 3 * math.sqrt(0.25 / 100_000)
    assert chisquare(np.bincount(flat.astype(np.int64), minlength=16)).pvalue > 1e-3


def test_noisy_sampler_total_probability():
    rng = np.random.default_rng(2)
    model = NoiseModel.from_q(1.0)
    z = sample_z_noisy_batch(B("0111").bits, 4, model, 100_000, rng)
    frac = 1 - parity(z & np.uint64(0b1110)).mean()
    expect = math.exp(-1) + (1 - math.exp(-1)) / 2
    assert abs(expect - 0.6839) < 1e-4
    assert abs(frac - expect) < 3 * math.sqrt(expect * (1 - expect) / 100_000)
    assert sample_z_noisy(B("01"), model, rng).n == 2


def test_q_and_p_of_hw():
    assert p_of_hw(3, 0.0) == 1.0
    assert abs(q_of_hw(2, 0.1) - 0.4) < 1e-15
    assert abs(p_of_hw(2, 0.1) - 0.6703) < 1e-4
    assert q_of_hw(6, 0.3) == pytest.approx(4 * q_of_hw(3, 0.3))


def test_noise_model_f():
    m = NoiseModel("hw_quadratic", lam=0.2)
    p = np.exp(-0.2 * np.arange(1, 4) ** 2)
    assert np.allclose(m.f_of(np.arange(1, 4)), (1 + p) / 2)
    assert m.q_max(3) == pytest.approx(1.8)


def test_ideal_run_examples():
    rng = np.random.default_rng(3)
    single = CandidateSet.from_members([B("110")], 3)
    assert ideal_player_run(B("110"), single, rng) == 0
    for n, expect in [(2, 2.0), (3, 10 / 3)]:
        cands = enumerate_candidates(n, n)
        q = [ideal_player_run(BitString.representative(n, 1), cands, rng) for _ in range(20_000)]
        se = np.std(q, ddof=1) / math.sqrt(len(q))
        assert abs(np.mean(q) - expect) < 3.5 * se


def test_bitsliced_engine_matches_loop():
    """Both implementations sample the same stopping-time law."""
    rng = np.random.default_rng(4)
    n, w, b = 5, 2, BitString.representative(5, 2)
    cands = enumerate_candidates(n, w)
    loop = np.array([ideal_player_run(b, cands, rng) for _ in range(4000)])
    fast = ideal_player_batch(b, w, 40_000, rng)
    diff = loop.mean() - fast.mean()
    se = math.sqrt(loop.var(ddof=1) / len(loop) + fast.var(ddof=1) / len(fast))
    assert abs(diff) < 4 * se


def test_stopping_times_monotone_in_w():
    t = ideal_stopping_times(6, 0b000111, 2000, np.random.default_rng(5))
    assert np.all(np.diff(t[:, 2:], axis=1) >= 0)


@pytest.mark.parametrize("n,expect", [(2, 2.0), (3, 10 / 3)])
def test_unrestricted_formula_examples(n, expect):
    assert nts_iq_exact_unrestricted(n) == pytest.approx(expect)


def test_unrestricted_asymptote():
    for n in (10, 20, 40):
        assert abs(nts_iq_exact_unrestricted(n) - (n + E_EB - 1)) < 2.0 ** (-n + 2)


def test_w1_examples():
    assert nts_iq_exact_w1(2) == pytest.approx(2.0)
    assert nts_iq_exact_w1(3) == pytest.approx(8 / 3)
    for n in (2**10, 2**14):
        assert abs(nts_iq_exact_w1(n) - (math.log2(n) + 0.5 + GAMMA_EM / math.log(2))) < 0.01


def test_w1_formula_is_max_of_geometrics():
    rng = np.random.default_rng(6)
    n = 6
    g = rng.geometric(0.5, size=(200_000, n - 1)).max(axis=1)
    assert abs(g.mean() - nts_iq_exact_w1(n)) < 4 * g.std() / math.sqrt(len(g))


def test_interpolation_examples():
    for n in (3, 8, 15):
        assert nts_iq_interpolated(n, n) == pytest.approx(math.log2(2**n - 1) + E_EB - 1)
        assert abs(nts_iq_interpolated(n, n) - nts_iq_exact_unrestricted(n)) < 2.0 ** (-n + 3)
    n = 40
    assert abs(nts_iq_interpolated(n, 1) - (math.log2(n) + 0.5 + GAMMA_EM / math.log(2))) < 1e-9


def test_interpolation_within_bounds_everywhere():
    for n in range(1, 31):
        for w in range(1, n + 1):
            N = 2**n - 1 if w == n else sum(math.comb(n, j) for j in range(1, w + 1))
            lo, hi = ideal_bounds(N)
            assert lo <= nts_iq_interpolated(n, w) <= hi


def test_bayes_update_examples():
    s = enumerate_candidates(2, 2)
    st0 = PosteriorState.uniform(s)
    post = bayes_update(st0, B("11"), lambda i: 1.0)
    assert post.as_dict() == {B("10"): 0.0, B("01"): 0.0, B("11"): 1.0}
    same = bayes_update(st0, B("10"), lambda i: 0.5)
    assert np.allclose(same.probs, st0.probs)
    two = PosteriorState.uniform(CandidateSet.from_members([B("10"), B("01")], 2))
    post = bayes_update(two, B("10"), lambda i: 0.9)
    d = post.as_dict()
    assert d[B("01")] / d[B("10")] == pytest.approx(9.0)


def test_inconsistent_update_raises():
    two = PosteriorState.uniform(CandidateSet.from_members([B("10"), B("01")], 2))
    one = bayes_update(two, B("10"), lambda i: 1.0)
    with pytest.raises(InconsistentError):
        bayes_update(one, B("01"), lambda i: 1.0)


@settings(deadline=None, max_examples=30)
@given(st.integers(2, 6).flatmap(lambda n: st.tuples(
    st.just(n), st.integers(1, n), st.lists(st.integers(0, (1 << n) - 1), max_size=12),
    st.floats(0.55, 0.99))))
def test_posterior_normalized_after_updates(args):
    n, w, zs, f = args
    state = PosteriorState.uniform(enumerate_candidates(n, w))
    for z in zs:
        state = bayes_update(state, BitString(z, n), lambda i: f)
        assert abs(state.probs.sum() - 1) < 1e-12
        assert np.all(state.probs >= 0)


def test_argmax_tie_goes_to_smallest():
    s = enumerate_candidates(3, 3)
    assert PosteriorState.uniform(s).argmax() == BitString(1, 3)


def test_perfect_agent_tracks_elimination():
    """With f = 1 the posterior support is exactly the surviving set."""
    rng = np.random.default_rng(7)
    n, w = 4, 3
    cands = enumerate_candidates(n, w)
    b = B("0110")
    state = PosteriorState.uniform(cands)
    alive = set(cands.values.tolist())
    for _ in range(8):
        z = sample_z_ideal(b, rng)
        state = bayes_update(state, z, lambda i: 1.0)
        alive = {c for c in alive if not (c & z.bits).bit_count() & 1}
        support = set(cands.values[state.probs > 0].tolist())
        assert support == alive
        assert np.allclose(state.probs[state.probs > 0], 1 / len(alive))


def test_perfect_agent_high_threshold():
    rng = np.random.default_rng(8)
    n, w = 4, 4
    cands = enumerate_candidates(n, w)
    b = BitString.representative(n, 2)
    res = noisy_agent_batch(b, cands, NoiseModel("perfect"), 4000, rng, threshold=0.99)
    ideal = ideal_player_batch(b, w, 20_000, rng)
    assert res.correct.all()
    assert abs(res.queries.mean() - ideal.mean()) < 0.2


def test_single_agent_matches_batch_law():
    rng = np.random.default_rng(9)
    cands = enumerate_candidates(4, 2)
    b = B("0011")
    model = NoiseModel("hw_quadratic", lam=0.1)
    single = [noisy_agent_run(b, cands, model, rng).queries for _ in range(1500)]
    batch = noisy_agent_batch(b, cands, model, 6000, rng).queries
    se = math.sqrt(np.var(single) / len(single) + batch.var() / len(batch))
    assert abs(np.mean(single) - batch.mean()) < 4 * se


def test_agent_success_rate_at_default_threshold():
    rng = np.random.default_rng(10)
    cands = enumerate_candidates(5, 2)
    N = len(cands)
    model = NoiseModel.from_q(1.0)
    scores = []
    for i in (1, 2):
        res = noisy_agent_batch(BitString.representative(5, i), cands, model, 3000, rng)
        scores.append(np.where(res.correct, 1.0, -1 / (N - 1)))
    assert default_threshold(N) == pytest.approx((1 + 1 / N) / 2)
    weights = [5 / N, 10 / N]
    assert sum(wi * s.mean() for wi, s in zip(weights, scores)) >= 0.5


def test_agent_forced_guess_when_budget_exhausted():
    cands = enumerate_candidates(3, 3)
    res = noisy_agent_run(B("011"), cands, NoiseModel("constant_p", p=0.0), np.random.default_rng(0), max_queries=5)
    assert res.forced and res.queries == 5


def test_default_max_queries():
    m = NoiseModel.from_q(1.0)
    assert default_max_queries(7, m, 3) == math.ceil(100 * math.log(7) * math.exp(2.0))
    assert default_max_queries(7, NoiseModel("constant_p", p=0.0), 3) == 100_000


def test_posterior_martingale():
    """Average posterior mass of the truth stays at the prior when the truth is drawn from the prior."""
    rng = np.random.default_rng(11)
    cands = enumerate_candidates(3, 3)
    N = len(cands)
    model = NoiseModel.from_q(0.5)
    f = lambda i: float(model.f_of(i))  # noqa: E731
    paths, steps = 4000, 4
    mass = np.zeros((paths, steps))
    for r in range(paths):
        t = int(rng.integers(0, N))
        b = BitString(int(cands.values[t]), 3)
        state = PosteriorState.uniform(cands)
        for s in range(steps):
            state = bayes_update(state, sample_z_noisy(b, model, rng), f)
            # posterior of a fixed label: its expectation is the prior 1/N
            mass[r, s] = state.probs[0]
    means = mass.mean(axis=0)
    se = mass.std(axis=0, ddof=1) / math.sqrt(paths)
    assert np.all(np.abs(means - 1 / N) < 3.5 * se)


def test_random_guesser():
    s = random_guesser_scores(4, 2, 100_000, np.random.default_rng(12))
    assert abs(s.mean()) < 3 * s.std(ddof=1) / math.sqrt(len(s))
