"""Ideal and noisy quantum players, exact ideal-query formulas and the Bayesian agent."""

from __future__ import annotations

import math
from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import InconsistentError, UsageError
from .gf2 import BitString, CandidateSet, count_candidates, parity, random_words, sample_orthogonal

E_EB = 1.6066951524152917637833015231909245804805796715057564357780795536914184207434
GAMMA_EM = 0.5772156649015328606065120900824024310421593359399235988057672348848677267776
QUERY_CAP = 100_000


@dataclass(frozen=True)
class IdealConstants:
    E_EB: float = E_EB
    gamma_EM: float = GAMMA_EM


# ------------------------------------------------------------------- noise

def q_of_hw(i, lam: float):
    if lam < 0:
        raise UsageError("lambda must be nonnegative")
    return lam * np.asarray(i, dtype=float) ** 2 if np.ndim(i) else lam * float(i) ** 2


def p_of_hw(i, lam: float):
    return np.exp(-q_of_hw(i, lam))


@dataclass(frozen=True)
class NoiseModel:
    """How often a query returns a valid orthogonal z instead of a uniform one."""

    mode: str = "perfect"
    p: float = 1.0
    lam: float = 0.0

    def __post_init__(self):
        if self.mode not in ("perfect", "constant_p", "hw_quadratic"):
            raise UsageError(f"unknown noise mode {self.mode!r}")
        if self.mode == "constant_p" and not 0 <= self.p <= 1:
            raise UsageError("p must lie in [0, 1]")
        if self.mode == "hw_quadratic" and self.lam < 0:
            raise UsageError("lambda must be nonnegative")

    @classmethod
    def from_q(cls, q: float) -> "NoiseModel":
        return cls("constant_p", p=math.exp(-q))

    def p_of(self, hw) -> np.ndarray:
        hw = np.asarray(hw)
        if self.mode == "perfect":
            return np.ones(hw.shape)
        if self.mode == "constant_p":
            return np.full(hw.shape, float(self.p))
        return p_of_hw(hw, self.lam)

    def f_of(self, hw) -> np.ndarray:
        """Pr(z.b = 0) for a hidden string of the given weight."""
        return (1 + self.p_of(hw)) / 2

    def q_max(self, w: int) -> float:
        p = float(np.min(self.p_of(np.arange(1, w + 1))))
        return math.inf if p <= 0 else -math.log(p)


# ---------------------------------------------------------------- samplers

def sample_z_ideal(b: BitString, rng: np.random.Generator) -> BitString:
    return BitString(int(sample_orthogonal(b.bits, b.n, 1, rng)[0]), b.n)


def sample_z_noisy(b: BitString, model: NoiseModel, rng: np.random.Generator) -> BitString:
    return BitString(int(sample_z_noisy_batch(b.bits, b.n, model, 1, rng)[0]), b.n)


def sample_z_noisy_batch(b, n: int, model: NoiseModel, size: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorized noisy draws; ``b`` may be a scalar or one hidden string per draw."""
    b = np.broadcast_to(np.asarray(b, dtype=np.uint64), (size,))
    z = random_words(n, size, rng)
    p = model.p_of(np.bitwise_count(b))
    valid = rng.random(size) < p
    flip = valid & parity(z & b).astype(bool)
    low = b & (~b + np.uint64(1))
    z[flip] ^= low[flip]
    return z


# ------------------------------------------------------------- ideal player

def ideal_player_run(b: BitString, candidates: CandidateSet, rng: np.random.Generator) -> int:
    """Number of ideal samples until b is the only surviving candidate."""
    if b not in candidates:
        raise UsageError(f"{b} is not a candidate")
    alive = candidates.values
    q = 0
    while len(alive) > 1:
        z = sample_orthogonal(b.bits, b.n, 1, rng)[0]
        alive = alive[parity(alive & z) == 0]
        q += 1
    assert alive[0] == b.bits
    return q


def _first_one(words: np.ndarray) -> np.ndarray:
    """1-based index of the lowest set bit; 65 for a zero word.  Overwrites its input."""
    neg = ~words
    neg += np.uint64(1)
    words &= neg
    del neg
    words -= np.uint64(1)
    out = np.bitwise_count(words)
    out += np.uint8(1)
    return out


def _word_table(cols: np.ndarray) -> np.ndarray:
    """For each run, XOR-combinations of the column words over all 2^n subsets."""
    runs, n = cols.shape
    table = np.zeros((runs, 1 << n), dtype=np.uint64)
    for j in range(n):
        width = 1 << j
        np.bitwise_xor(table[:, :width], cols[:, j:j + 1], out=table[:, width:2 * width])
    return table


def ideal_stopping_times(
    n: int, b: int, runs: int, rng: np.random.Generator, chunk: int | None = None
) -> np.ndarray:
    """Stopping times of the ideal player for every weight cap w = 1..n at once.

    Column w-1 holds the query count for candidate set {c : 1 <= HW(c) <= w};
    it is meaningful when HW(b) <= w.  Each run draws 64 orthogonal z's and
    stores bit k of candidate c's word as z_k.c, so candidate c is eliminated
    at the first set bit and the run stops when the last rival is gone.
    """
    if not 1 <= n <= 16:
        raise UsageError("bit-sliced engine handles 1 <= n <= 16")
    if not 0 < b < 1 << n:
        raise UsageError("hidden string must be a nonzero n-bit word")
    hw = np.bitwise_count(np.arange(1 << n, dtype=np.uint64)).astype(np.int64)
    order = np.argsort(hw, kind="stable")
    starts = np.searchsorted(hw[order], np.arange(1, n + 1))
    if chunk is None:
        chunk = max(1, (1 << 17) >> n)  # keeps the word table cache-sized
    out = np.zeros((runs, n), dtype=np.int64)
    for lo in range(0, runs, chunk):
        m = min(chunk, runs - lo)
        out[lo:lo + m] = _stopping_block(n, b, m, rng, order, starts)
    return out


def _stopping_block(n, b, m, rng, order, starts):
    shifts = np.arange(64, dtype=np.uint64)
    while True:
        zs = sample_orthogonal(b, n, m * 64, rng).reshape(m, 64)
        cols = np.empty((m, n), dtype=np.uint64)
        for j in range(n):
            cols[:, j] = np.bitwise_or.reduce(((zs >> np.uint64(j)) & np.uint64(1)) << shifts, axis=1)
        elim = _first_one(_word_table(cols))
        # words of 0 and b are always zero; any other zero word means a rival
        # survived all 64 draws (probability ~ N 2^-64), so redraw the block
        elim[:, 0] = elim[:, b] = 0
        if not (elim == 65).any():
            break
    per_weight = np.maximum.reduceat(elim[:, order], starts, axis=1).astype(np.int64)
    return np.maximum.accumulate(per_weight, axis=1)


def ideal_player_batch(b: BitString, w: int, runs: int, rng: np.random.Generator) -> np.ndarray:
    if not 1 <= b.weight <= w <= b.n:
        raise UsageError("need 1 <= HW(b) <= w <= n")
    return ideal_stopping_times(b.n, b.bits, runs, rng)[:, w - 1]


def nts_iq_exact_unrestricted(n: int) -> float:
    if n < 1:
        raise UsageError("n must be positive")
    return sum(1 / (1 - 2.0**-k) for k in range(1, n))


def nts_iq_exact_w1(n: int) -> float:
    """E[max of n-1 iid Geometric(1/2)] = sum_k 1 - (1 - 2^-k)^(n-1)."""
    if n < 2:
        raise UsageError("need n >= 2")
    total, k = 0.0, 0
    while True:
        term = -math.expm1((n - 1) * math.log1p(-(2.0**-k))) if k else 1.0
        total += term
        if term < 1e-18:
            return total
        k += 1


def nts_iq_interpolated(n: int, w: int) -> float:
    if not 1 <= w <= n:
        raise UsageError("need 1 <= w <= n")
    N = count_candidates(n, w)
    if N == 1:
        return 0.0  # nothing to learn
    t = N / (2**n - 1)
    return math.log2(N) + (0.5 + GAMMA_EM / math.log(2)) * (1 - t) + (E_EB - 1) * t


def ideal_bounds(size: int) -> tuple[float, float]:
    """Lower and upper bound on the ideal NTS for a candidate set of this size."""
    if size < 1:
        raise UsageError("candidate set must be nonempty")
    if size == 1:
        return 0.0, 0.0
    return math.log2(size), math.log2(size - 1) + 2


# ------------------------------------------------------- Bayesian agent

@dataclass(frozen=True)
class PosteriorState:
    candidates: CandidateSet
    probs: np.ndarray

    def __post_init__(self):
        if len(self.probs) != len(self.candidates):
            raise UsageError("one probability per candidate required")

    @classmethod
    def uniform(cls, candidates: CandidateSet) -> "PosteriorState":
        return cls(candidates, np.full(len(candidates), 1 / len(candidates)))

    def as_dict(self) -> dict[BitString, float]:
        return {m: float(p) for m, p in zip(self.candidates.members, self.probs)}

    def argmax(self) -> BitString:
        # ascending storage makes argmax pick the smallest value on ties
        return BitString(int(self.candidates.values[int(np.argmax(self.probs))]), self.candidates.n)

    @property
    def max_prob(self) -> float:
        return float(self.probs.max())


def bayes_update(state: PosteriorState, z: BitString, f) -> PosteriorState:
    """Multiply by f(HW) on consistent candidates, 1 - f(HW) otherwise, renormalize."""
    fw = np.asarray([f(int(i)) for i in range(state.candidates.n + 1)], dtype=float)
    hw = state.candidates.weights
    consistent = parity(state.candidates.values & np.uint64(z.bits)) == 0
    lik = np.where(consistent, fw[hw], 1 - fw[hw])
    post = state.probs * lik
    total = post.sum()
    if not total > 0:
        raise InconsistentError("every candidate has zero posterior weight")
    return PosteriorState(state.candidates, post / total)


def default_threshold(N: int) -> float:
    return (1 + 1 / N) / 2


def default_max_queries(N: int, model: NoiseModel, w: int) -> int:
    qm = model.q_max(w)
    if N <= 1:
        return 0
    if not math.isfinite(qm):
        return QUERY_CAP
    return int(min(QUERY_CAP, math.ceil(100 * math.log(N) * math.exp(2 * qm))))


@dataclass(frozen=True)
class AgentResult:
    queries: int
    guess: BitString
    forced: bool
    posterior_max: float


def noisy_agent_run(
    b: BitString,
    candidates: CandidateSet,
    model: NoiseModel,
    rng: np.random.Generator,
    threshold: float | None = None,
    max_queries: int | None = None,
) -> AgentResult:
    """Sample and update until some candidate reaches the threshold, then guess it."""
    N = len(candidates)
    if b not in candidates:
        raise UsageError(f"{b} is not a candidate")
    threshold = default_threshold(N) if threshold is None else threshold
    if max_queries is None:
        max_queries = default_max_queries(N, model, candidates.w)
    state = PosteriorState.uniform(candidates)
    f = lambda i: float(model.f_of(i))  # noqa: E731
    q = 0
    while state.max_prob < threshold and q < max_queries:
        state = bayes_update(state, sample_z_noisy(b, model, rng), f)
        q += 1
    forced = state.max_prob < threshold
    return AgentResult(q, state.argmax(), forced, state.max_prob)


@dataclass(frozen=True)
class BatchResult:
    queries: np.ndarray
    correct: np.ndarray
    forced: np.ndarray
    posterior_max: np.ndarray


def noisy_agent_batch(
    b: BitString,
    candidates: CandidateSet,
    model: NoiseModel,
    runs: int,
    rng: np.random.Generator,
    threshold: float | None = None,
    max_queries: int | None = None,
) -> BatchResult:
    """Many independent agents for one hidden string, updated in lockstep in log space."""
    N = len(candidates)
    if b not in candidates:
        raise UsageError(f"{b} is not a candidate")
    threshold = default_threshold(N) if threshold is None else threshold
    if max_queries is None:
        max_queries = default_max_queries(N, model, candidates.w)
    truth = candidates.index(b)
    vals = candidates.values
    f = model.f_of(candidates.weights)
    with np.errstate(divide="ignore"):
        log_yes, log_no = np.log(f), np.log1p(-f)
    logw = np.zeros((runs, N))
    queries = np.zeros(runs, dtype=np.int64)
    active = np.arange(runs)
    post_max = np.full(runs, 1 / N)
    guess = np.zeros(runs, dtype=np.int64)

    def settle(idx):
        lw = logw[idx]
        top = lw.max(axis=1, keepdims=True)
        weights = np.exp(lw - top)
        pm = 1 / weights.sum(axis=1)
        return pm, np.argmax(lw, axis=1)

    pm, g = settle(active)
    post_max[active], guess[active] = pm, g
    active = active[pm < threshold]
    step = 0
    while len(active) and step < max_queries:
        z = sample_z_noisy_batch(b.bits, candidates.n, model, len(active), rng)
        odd = parity(z[:, None] & vals[None, :]).astype(bool)
        logw[active] += np.where(odd, log_no, log_yes)
        step += 1
        queries[active] = step
        pm, g = settle(active)
        post_max[active], guess[active] = pm, g
        active = active[pm < threshold]
    forced = np.zeros(runs, dtype=bool)
    forced[active] = True
    return BatchResult(queries, guess == truth, forced, post_max)


def random_guesser_scores(n: int, w: int, rounds: int, rng: np.random.Generator) -> np.ndarray:
    """Scores of a player guessing uniformly at random; the truth index is also uniform."""
    N = count_candidates(n, w)
    truth = rng.integers(0, N, size=rounds)
    guess = rng.integers(0, N, size=rounds)
    penalty = -1 / (N - 1) if N > 1 else -1.0
    return np.where(truth == guess, 1.0, penalty)


def weight_counts(n: int, w: int) -> list[int]:
    return [comb(n, i) for i in range(1, w + 1)]
