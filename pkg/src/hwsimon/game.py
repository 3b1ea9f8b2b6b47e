"""Round scoring, the NTS metric and classical query-sequence analysis."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb, isqrt
from numbers import Real
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidSequenceError, RejectedGuessError, ResourceError, UsageError
from .gf2 import BitString, CandidateSet, count_candidates, enumerate_candidates

INF = math.inf


@dataclass(frozen=True)
class GameConfig:
    n: int
    w: int

    def __post_init__(self):
        if not 1 <= self.w <= self.n <= 63:
            raise UsageError(f"need 1 <= w <= n <= 63, got n={self.n}, w={self.w}")

    @property
    def N_w(self) -> int:
        return count_candidates(self.n, self.w)

    @property
    def p_r(self) -> Fraction:
        return Fraction(1, self.N_w)

    @property
    def penalty(self) -> Fraction:
        # with a single candidate every guess is right, so the value is never used
        if self.N_w == 1:
            return Fraction(-1)
        return -self.p_r / (1 - self.p_r)

    def admissible(self, b: BitString) -> bool:
        return b.n == self.n and 1 <= b.weight <= self.w


@dataclass(frozen=True)
class RoundRecord:
    queries: int
    score: Fraction | float
    guessed: BitString
    truth: BitString

    @property
    def correct(self) -> bool:
        return self.guessed == self.truth


def score_guess(guess: BitString, truth: BitString, cfg: GameConfig) -> Fraction:
    if not cfg.admissible(guess):
        raise RejectedGuessError(f"guess {guess} is outside the candidate set")
    if not cfg.admissible(truth):
        raise UsageError(f"truth {truth} is outside the candidate set")
    return Fraction(1) if guess == truth else cfg.penalty


def nts_from_totals(total_queries, total_score, rounds: int = 1):
    """<Q>/<P>, infinite when the mean score is not positive."""
    if rounds <= 0:
        raise UsageError("need at least one round")
    if total_score <= 0:
        return INF
    return _ratio(total_queries, total_score)


def _ratio(a, b):
    if isinstance(a, (int, Fraction)) and isinstance(b, (int, Fraction)):
        return Fraction(a) / Fraction(b)
    return float(a) / float(b)


def nts(records: Sequence[RoundRecord]):
    if not records:
        raise UsageError("need at least one round")
    return nts_from_totals(sum(r.queries for r in records), sum(r.score for r in records), len(records))


def nts_weighted(Q: Sequence[Real], p: Sequence[Real], n: int, w: int):
    """NTS from per-weight mean queries Q_i and success probabilities p_i, i = 1..w."""
    if len(Q) != w or len(p) != w:
        raise UsageError("need one entry per Hamming weight 1..w")
    N = count_candidates(n, w)
    h = [comb(n, i) for i in range(1, w + 1)]
    num = sum(hi * qi for hi, qi in zip(h, Q))
    den = sum(hi * pi for hi, pi in zip(h, p)) - 1
    if den <= 0:
        return INF
    return _ratio(num * (N - 1), den * N)


def write_rounds_csv(rows: Iterable[dict], path: str | Path) -> None:
    cols = ["n", "w", "hw_b", "queries", "score", "correct"]
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        wr.writeheader()
        for row in rows:
            wr.writerow(row)


# ------------------------------------------------------------ classical side

def k_min(N: int) -> int:
    """Smallest k with k(k-1)/2 >= N - 1, via ceil(sqrt(2N - 7/4) + 1/2)."""
    if N < 1:
        raise UsageError("N_w must be positive")
    # ceil((s + 1)/2) with s = sqrt(8N - 7), done in integers
    d = 8 * N - 7
    r = isqrt(d)
    k = (r + 2) // 2
    while (2 * k - 1) ** 2 < d:
        k += 1
    while k > 1 and (2 * k - 3) ** 2 >= d:
        k -= 1
    return k


def expected_queries_lower_bound(k: int, N: int) -> Fraction:
    return Fraction(k) - Fraction(k * (k - 1) * (k - 2), 6 * N)


def classical_bounds(N: int) -> tuple[int, Fraction, Fraction]:
    """(k_min, lower bound on <Q_C>, lower bound on NTS_C); the last two coincide
    because a classical player that stops only when certain always scores 1."""
    k = k_min(N)
    lb = expected_queries_lower_bound(k, N)
    return k, lb, lb


def _membership(candidates: CandidateSet):
    full = candidates.n, candidates.w
    if len(candidates) == count_candidates(*full):
        w = candidates.w

        def member(v: np.ndarray) -> np.ndarray:
            hw = np.bitwise_count(v)
            return (hw >= 1) & (hw <= w)
    else:
        vals = candidates.values

        def member(v: np.ndarray) -> np.ndarray:
            return np.isin(v, vals)
    return member


def coverage_profile(xs: Sequence[int], candidates: CandidateSet) -> list[int]:
    """|S_i| for i = 0..len(xs): candidates among pairwise XORs of the first i queries."""
    member = _membership(candidates)
    arr = np.asarray(list(xs), dtype=np.uint64)
    covered: set[int] = set()
    out = [0] * min(2, len(arr) + 1)
    for i in range(1, len(arr)):
        diffs = arr[:i] ^ arr[i]
        covered.update(int(v) for v in diffs[member(diffs)])
        out.append(len(covered))
    return out


def stopping_index(profile: Sequence[int], N: int) -> int | None:
    """First j with |S \\ S_j| <= 1, or None."""
    for j, c in enumerate(profile):
        if N - c <= 1:
            return j
    return None


def _check_kdef(profile: Sequence[int], N: int) -> None:
    k = len(profile) - 1
    j = stopping_index(profile, N)
    if j != k:
        if j is None:
            raise InvalidSequenceError(f"after {k} queries {N - profile[-1]} candidates remain unresolved")
        raise InvalidSequenceError(f"sequence already resolves the candidates after {j} < {k} queries")


@dataclass(frozen=True)
class QuerySequence:
    """Fixed classical query order, validated to stop exactly at its last query."""

    xs: tuple[BitString, ...]
    n: int
    w: int
    candidates: CandidateSet | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "xs", tuple(self.xs))
        if any(x.n != self.n for x in self.xs):
            raise UsageError("query length mismatch")
        cands = self.candidates
        if cands is None:
            cands = enumerate_candidates(self.n, self.w)
            object.__setattr__(self, "candidates", cands)
        _check_kdef(coverage_profile([x.bits for x in self.xs], cands), len(cands))

    @classmethod
    def from_ints(cls, xs: Sequence[int], n: int, w: int, candidates: CandidateSet | None = None):
        return cls(tuple(BitString(int(x), n) for x in xs), n, w, candidates)

    @property
    def k(self) -> int:
        return len(self.xs)

    def value(self) -> Fraction:
        return classical_nts_exact(self, self.candidates)


def _nts_from_profile(profile: Sequence[int], N: int) -> Fraction:
    k = len(profile) - 1
    return sum((1 - Fraction(c, N) for c in profile[:k]), Fraction(0))


def classical_nts_exact(seq: QuerySequence, candidates: CandidateSet) -> Fraction:
    """Expected number of queries of the fixed-order strategy, as an exact fraction."""
    N = len(candidates)
    profile = coverage_profile([x.bits for x in seq.xs], candidates)
    _check_kdef(profile, N)
    value = _nts_from_profile(profile, N)
    if candidates.n == seq.n and N == count_candidates(candidates.n, candidates.w) and N > 1:
        assert value >= classical_bounds(N)[2], "value below the closed-form lower bound"
    return value


def classical_nts_bruteforce(seq: QuerySequence, candidates: CandidateSet) -> Fraction:
    """Average over b of the index of the first colliding query (certainty counts as done)."""
    xs = [x.bits for x in seq.xs]
    k = len(xs)
    total = Fraction(0)
    for b in candidates.values:
        b = int(b)
        stop = k
        seen: set[int] = set()
        for i, x in enumerate(xs):
            if x ^ b in seen:
                stop = i + 1
                break
            seen.add(x)
        total += stop
    return total / len(candidates)


def exhaustive_optimum(n: int, w: int, max_nodes: int = 5_000_000) -> tuple[Fraction, QuerySequence]:
    """Minimum exact NTS over all valid sequences, by branch and bound (n <= 4).

    The candidate set is invariant under XOR translation and coordinate
    permutation, so x_1 = 0 and x_2 = 1^h 0^(n-h) lose no generality.
    """
    if n > 4:
        raise ResourceError("exhaustive search is limited to n <= 4")
    cands = enumerate_candidates(n, w)
    N = len(cands)
    if N == 1:
        return Fraction(0), QuerySequence((), n, w, cands)

    def member(v: int) -> bool:
        return 1 <= v.bit_count() <= w

    best = [None, None]
    nodes = [0]

    def future_lb(j: int, c: int) -> Fraction:
        lb = Fraction(0)
        i = j + 1
        ub = c
        while True:
            ub += i - 1 if i >= 1 else 0
            ub = min(ub, N)
            if ub > N - 2:
                break
            lb += 1 - Fraction(ub, N)
            i += 1
        return lb

    def dfs(seq: list[int], covered: set[int], profile: list[int], cost: Fraction):
        nodes[0] += 1
        if nodes[0] > max_nodes:
            raise ResourceError("exhaustive search node budget exhausted")
        j = len(seq)
        c = profile[-1]
        if N - c <= 1:
            if best[0] is None or cost < best[0]:
                best[0], best[1] = cost, list(seq)
            return
        here = cost + 1 - Fraction(c, N)
        if best[0] is not None and here + future_lb(j, c) >= best[0]:
            return
        if j == 1:
            choices = [(1 << h) - 1 for h in range(1, n + 1)]
        else:
            choices = [x for x in range(1 << n) if x not in seq]
        for x in choices:
            new = {x ^ y for y in seq if member(x ^ y)} - covered
            dfs(seq + [x], covered | new, profile + [c + len(new)], here)

    dfs([0], set(), [0, 0], Fraction(1))
    return best[0], QuerySequence.from_ints(best[1], n, w, cands)


# ---------------------------------------------------------- heuristic search

def _sequence_value(xs: np.ndarray, member_tab: np.ndarray, N: int) -> tuple[float, int]:
    """(NTS, k) of the prefix that first satisfies the stopping rule; inf if none."""
    covered = np.zeros(len(member_tab), dtype=bool)
    c = 0
    total = 0.0
    for i in range(len(xs)):
        if N - c <= 1:
            return total, i
        total += 1 - c / N
        diffs = (xs[:i] ^ xs[i]).astype(np.int64)
        fresh = diffs[member_tab[diffs] & ~covered[diffs]]
        covered[fresh] = True
        c += len(fresh)
    if N - c <= 1:
        return total, len(xs)
    return INF, len(xs)


def _greedy(n: int, member_tab: np.ndarray, N: int, chunk: int = 1 << 22) -> list[int]:
    size = 1 << n
    covered = np.zeros(size, dtype=bool)
    used = np.zeros(size, dtype=bool)
    seq = [0]
    used[0] = True
    c = 0
    allx = np.arange(size, dtype=np.int64)
    while N - c > 1:
        prev = np.array(seq, dtype=np.int64)
        gain = np.zeros(size, dtype=np.int64)
        step = max(1, chunk // len(prev))
        for lo in range(0, size, step):
            block = allx[lo:lo + step, None] ^ prev[None, :]
            gain[lo:lo + step] = (member_tab[block] & ~covered[block]).sum(axis=1)
        gain[used] = -1
        x = int(np.argmax(gain))
        if gain[x] <= 0:
            raise InvalidSequenceError("greedy construction stalled")
        diffs = prev ^ x
        fresh = diffs[member_tab[diffs] & ~covered[diffs]]
        covered[fresh] = True
        c += len(fresh)
        seq.append(x)
        used[x] = True
    return seq


def heuristic_sequence_search(n: int, w: int, budget: int = 2000, seed: int = 0) -> QuerySequence:
    """Greedy max-new-coverage construction refined by seeded swap/replace hill climbing."""
    if n > 24:
        raise ResourceError("heuristic search needs a 2^n lookup table; n <= 24")
    N = count_candidates(n, w)
    if N == 1:
        return QuerySequence((), n, w)
    hw = np.bitwise_count(np.arange(1 << n, dtype=np.uint64))
    member_tab = (hw >= 1) & (hw <= w)
    best = np.array(_greedy(n, member_tab, N), dtype=np.uint64)
    best_val, _ = _sequence_value(best, member_tab, N)
    rng = np.random.default_rng(seed)
    for _ in range(budget):
        cand = best.copy()
        if rng.random() < 0.5 and len(cand) > 2:
            a, b = rng.choice(np.arange(1, len(cand)), size=2, replace=False)
            cand[a], cand[b] = cand[b], cand[a]
        else:
            j = int(rng.integers(1, len(cand)))
            cand[j] = rng.integers(0, 1 << n, dtype=np.uint64)
            if len(np.unique(cand)) < len(cand):
                continue
        val, k = _sequence_value(cand, member_tab, N)
        if val <= best_val:
            best, best_val = cand[:k], val
    return QuerySequence.from_ints([int(x) for x in best], n, w, enumerate_candidates(n, w))
