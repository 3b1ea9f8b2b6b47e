"""Word-packed GF(2) vectors, candidate sets and the orthogonality solver.

A length-n bit string is stored in a single machine word.  Coordinate ``j``
is bit ``j`` of the integer; the textual form writes coordinate 0 first, so
``BitString.parse("011")`` has coordinates (0, 1, 1) and integer value 6.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb
from typing import Iterable, Sequence

import numpy as np

from .errors import InconsistentError, ResourceError, UsageError

MAX_N = 63
DEFAULT_CANDIDATE_CAP = 2**26


@dataclass(frozen=True, order=True)
class BitString:
    bits: int
    n: int

    def __post_init__(self):
        if not 1 <= self.n <= MAX_N:
            raise UsageError(f"length must be in [1, {MAX_N}], got {self.n}")
        if self.bits < 0 or self.bits >> self.n:
            raise UsageError(f"value {self.bits} does not fit in {self.n} bits")

    @classmethod
    def parse(cls, text: str) -> "BitString":
        text = text.strip()
        if not text or set(text) - {"0", "1"}:
            raise UsageError(f"not a bit string: {text!r}")
        return cls(str_to_int(text), len(text))

    @classmethod
    def zeros(cls, n: int) -> "BitString":
        return cls(0, n)

    @classmethod
    def ones(cls, n: int) -> "BitString":
        return cls((1 << n) - 1, n)

    @classmethod
    def representative(cls, n: int, i: int) -> "BitString":
        """The string 0^(n-i) 1^i used as the per-weight representative."""
        if not 0 <= i <= n:
            raise UsageError(f"weight {i} outside [0, {n}]")
        return cls(((1 << i) - 1) << (n - i), n)

    def __str__(self) -> str:
        return int_to_str(self.bits, self.n)

    def __xor__(self, other: "BitString") -> "BitString":
        _check_same_length(self, other)
        return BitString(self.bits ^ other.bits, self.n)

    def __getitem__(self, j: int) -> int:
        if not 0 <= j < self.n:
            raise IndexError(j)
        return (self.bits >> j) & 1

    @property
    def weight(self) -> int:
        return self.bits.bit_count()


def str_to_int(text: str) -> int:
    return sum(1 << j for j, ch in enumerate(text) if ch == "1")


def int_to_str(value: int, n: int) -> str:
    return "".join("1" if (value >> j) & 1 else "0" for j in range(n))


def _check_same_length(x: BitString, y: BitString) -> None:
    if x.n != y.n:
        raise UsageError(f"length mismatch: {x.n} vs {y.n}")


def dot_mod2(x: BitString, y: BitString) -> int:
    _check_same_length(x, y)
    return (x.bits & y.bits).bit_count() & 1


def hamming_weight(x: BitString) -> int:
    return x.bits.bit_count()


def parity(values: np.ndarray) -> np.ndarray:
    """Elementwise popcount parity of an unsigned integer array."""
    return (np.bitwise_count(values) & 1).astype(np.uint8)


def count_candidates(n: int, w: int) -> int:
    """N_w: number of nonzero length-n strings with weight at most w."""
    return sum(comb(n, j) for j in range(1, min(w, n) + 1))


@dataclass(frozen=True)
class CandidateSet:
    """Admissible hidden strings, stored as ascending uint64 values."""

    values: np.ndarray
    n: int
    w: int

    def __post_init__(self):
        self.values.setflags(write=False)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def members(self) -> list[BitString]:
        return [BitString(int(v), self.n) for v in self.values]

    @property
    def weights(self) -> np.ndarray:
        return np.bitwise_count(self.values).astype(np.int64)

    def __contains__(self, b: BitString) -> bool:
        if b.n != self.n:
            return False
        i = np.searchsorted(self.values, np.uint64(b.bits))
        return bool(i < len(self.values) and self.values[i] == b.bits)

    def index(self, b: BitString) -> int:
        i = int(np.searchsorted(self.values, np.uint64(b.bits)))
        if i >= len(self.values) or self.values[i] != b.bits:
            raise UsageError(f"{b} is not a candidate")
        return i

    @classmethod
    def from_members(cls, members: Iterable[BitString], n: int, w: int | None = None) -> "CandidateSet":
        vals = sorted({m.bits for m in members})
        for v in vals:
            if v == 0 or v >> n:
                raise UsageError(f"invalid candidate value {v} for n={n}")
        w = n if w is None else w
        if any(v.bit_count() > w for v in vals):
            raise UsageError("candidate exceeds the weight limit")
        return cls(np.array(vals, dtype=np.uint64), n, w)


def enumerate_candidates(n: int, w: int, cap: int = DEFAULT_CANDIDATE_CAP) -> CandidateSet:
    if not 1 <= w <= n <= MAX_N:
        raise UsageError(f"need 1 <= w <= n <= {MAX_N}, got n={n}, w={w}")
    size = count_candidates(n, w)
    if size > cap:
        raise ResourceError(
            f"N_w = {size} exceeds the candidate cap {cap}; "
            "use the per-weight representative mode instead"
        )
    if w == n:
        values = np.arange(1, 1 << n, dtype=np.uint64)
    else:
        out = []
        for j in range(1, w + 1):
            out.extend(sum(1 << k for k in c) for c in combinations(range(n), j))
        values = np.array(sorted(out), dtype=np.uint64)
    return CandidateSet(values, n, w)


@dataclass(frozen=True)
class Undetermined:
    survivors: tuple[BitString, ...]

    @property
    def size(self) -> int:
        return len(self.survivors)


def _as_int_rows(zs: Sequence[BitString], n: int) -> list[int]:
    for z in zs:
        if z.n != n:
            raise UsageError(f"length mismatch: {z.n} vs {n}")
    return [z.bits for z in zs]


def rref(rows: Sequence[int], n: int) -> tuple[list[int], list[int]]:
    """Reduced row echelon form over GF(2); returns (rows, pivot columns)."""
    work = [r for r in rows if r]
    pivots: list[int] = []
    rank = 0
    for col in range(n):
        mask = 1 << col
        pivot = next((r for r in range(rank, len(work)) if work[r] & mask), None)
        if pivot is None:
            continue
        work[rank], work[pivot] = work[pivot], work[rank]
        for r in range(len(work)):
            if r != rank and work[r] & mask:
                work[r] ^= work[rank]
        pivots.append(col)
        rank += 1
        if rank == len(work):
            break
    return work[:rank], pivots


def rank(rows: Sequence[int], n: int) -> int:
    return len(rref(rows, n)[0])


def nullspace(rows: Sequence[int], n: int) -> list[int]:
    """Basis of {v : r.v = 0 for every row r}."""
    reduced, pivots = rref(rows, n)
    free = [c for c in range(n) if c not in set(pivots)]
    basis = []
    for f in free:
        v = 1 << f
        for row, p in zip(reduced, pivots):
            if (row >> f) & 1:
                v |= 1 << p
        basis.append(v)
    return basis


def in_span(vec: int, basis_rref: Sequence[int], pivots: Sequence[int]) -> bool:
    for row, p in zip(basis_rref, pivots):
        if (vec >> p) & 1:
            vec ^= row
    return vec == 0


def _survivors_filter(rows: list[int], candidates: CandidateSet) -> np.ndarray:
    keep = np.ones(len(candidates), dtype=bool)
    for z in rows:
        keep &= parity(candidates.values & np.uint64(z)) == 0
    return candidates.values[keep]


def _survivors_gauss(rows: list[int], candidates: CandidateSet) -> np.ndarray:
    null_rows, null_pivots = rref(nullspace(rows, candidates.n), candidates.n)
    keep = [in_span(int(c), null_rows, null_pivots) for c in candidates.values]
    return candidates.values[np.array(keep, dtype=bool)]


def solve_unique(
    zs: Sequence[BitString], candidates: CandidateSet, method: str = "filter"
) -> BitString | Undetermined:
    """The unique candidate orthogonal to every z, or the surviving subset."""
    rows = _as_int_rows(zs, candidates.n)
    if method == "filter":
        alive = _survivors_filter(rows, candidates)
    elif method == "gauss":
        alive = _survivors_gauss(rows, candidates)
    else:
        raise UsageError(f"unknown method {method!r}")
    if len(alive) == 0:
        raise InconsistentError("no candidate is orthogonal to all observations")
    if len(alive) == 1:
        return BitString(int(alive[0]), candidates.n)
    return Undetermined(tuple(BitString(int(v), candidates.n) for v in alive))


def sample_orthogonal(b: int, n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws from {z : z.b = 0}.

    A uniform z with z.b = 1 is mapped to z xor e, where e is the lowest set
    bit of b.  That flip is a bijection between the two cosets, so the result
    is uniform on the orthogonal complement.
    """
    if b == 0:
        raise UsageError("hidden string must be nonzero")
    z = random_words(n, size, rng)
    low = np.uint64(b & -b)
    bad = parity(z & np.uint64(b)).astype(bool)
    z[bad] ^= low
    return z


def random_words(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform n-bit words as uint64."""
    return rng.integers(0, 1 << n, size=size, dtype=np.uint64)
