"""Two-to-one oracles, their CNOT circuits, compilation and count reduction.

Qubit labels are ``d<j>`` for data and ``a<j>`` for ancilla.  Inside the
state-vector simulator data qubit j is bit j and ancilla j is bit n + j of
the basis index.
"""

from __future__ import annotations

import csv
import re
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError, ResourceError, UnsupportedStructureError, UsageError
from .gf2 import BitString, int_to_str, nullspace, parity, sample_orthogonal, str_to_int

MAX_ENUM_N = 12
MAX_TABLE_N = 20
MAX_STATEVECTOR_N = 8
FEISTEL_ROUNDS = 4

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


# ---------------------------------------------------------------- circuits

def _qubit(label: str, n: int) -> tuple[str, int]:
    m = re.fullmatch(r"([da])(\d+)", label)
    if not m or int(m.group(2)) >= n:
        raise UsageError(f"bad qubit label {label!r} for n={n}")
    return m.group(1), int(m.group(2))


@dataclass(frozen=True)
class CnotCircuit:
    n: int
    edges: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple((str(c), str(t)) for c, t in self.edges))
        for c, t in self.edges:
            _qubit(c, self.n)
            _qubit(t, self.n)
            if c == t:
                raise UsageError(f"control equals target on {c}")

    @classmethod
    def from_pairs(cls, n: int, pairs: Sequence[tuple[int, int]]) -> "CnotCircuit":
        """Build from (data index, ancilla index) pairs."""
        return cls(n, tuple((f"d{c}", f"a{t}") for c, t in pairs))

    def data_to_ancilla(self) -> list[tuple[int, int]]:
        """Edges as integer pairs; fails if any edge is not data -> ancilla."""
        out = []
        for c, t in self.edges:
            (kc, jc), (kt, jt) = _qubit(c, self.n), _qubit(t, self.n)
            if kc != "d" or kt != "a":
                raise UnsupportedStructureError(f"edge {c}->{t} is not data->ancilla")
            out.append((jc, jt))
        return out

    def without_edge(self, index: int) -> "CnotCircuit":
        return CnotCircuit(self.n, self.edges[:index] + self.edges[index + 1:])

    def linear_rows(self) -> list[int]:
        """Row t is the bitmask of data inputs XORed into ancilla t."""
        rows = [0] * self.n
        for c, t in self.data_to_ancilla():
            rows[t] ^= 1 << c
        return rows

    def apply(self, xs: np.ndarray) -> np.ndarray:
        """Ancilla register after running on data inputs xs (ancilla starts at 0)."""
        xs = np.asarray(xs, dtype=np.uint64)
        ys = np.zeros_like(xs)
        for c, t in self.data_to_ancilla():
            ys ^= ((xs >> np.uint64(c)) & np.uint64(1)) << np.uint64(t)
        return ys


def build_canonical_circuit(n: int, i: int) -> CnotCircuit:
    """f0 circuit for the hidden string 0^(n-i) 1^i."""
    if not 1 <= n <= 63 or not 1 <= i <= n:
        raise UsageError(f"need 1 <= i <= n, got n={n}, i={i}")
    k = n - i
    pairs = []
    for j in range(n):
        if j < k:
            pairs.append((j, j))
        elif j > k:
            pairs += [(k, j), (j, j)]
    return CnotCircuit.from_pairs(n, pairs)


def emit_circuit_text(c: CnotCircuit) -> str:
    return "\n".join([f"SIMON n={c.n}"] + [f"CX {a} {b}" for a, b in c.edges])


def parse_circuit_text(text: str) -> CnotCircuit:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise DataError("empty circuit text")
    m = re.fullmatch(r"SIMON n=(\d+)", lines[0])
    if not m:
        raise DataError(f"bad header {lines[0]!r}")
    n = int(m.group(1))
    edges = []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 3 or parts[0] != "CX":
            raise DataError(f"bad gate line {ln!r}")
        edges.append((parts[1], parts[2]))
    try:
        return CnotCircuit(n, tuple(edges))
    except UsageError as e:
        raise DataError(str(e)) from e


# ----------------------------------------------------- bit permutations, f0

def sort_permutation(b: int, n: int) -> tuple[int, ...]:
    """Source coordinate for each target slot: zeros of b first, then ones."""
    zeros = [j for j in range(n) if not (b >> j) & 1]
    ones = [j for j in range(n) if (b >> j) & 1]
    return tuple(zeros + ones)


def permute_bits(xs: np.ndarray, perm: Sequence[int]) -> np.ndarray:
    """out bit t = in bit perm[t]."""
    xs = np.asarray(xs, dtype=np.uint64)
    out = np.zeros_like(xs)
    for t, s in enumerate(perm):
        out |= ((xs >> np.uint64(s)) & np.uint64(1)) << np.uint64(t)
    return out


def inverse_permutation(perm: Sequence[int]) -> tuple[int, ...]:
    inv = [0] * len(perm)
    for t, s in enumerate(perm):
        inv[s] = t
    return tuple(inv)


def canonical_f0(xs: np.ndarray, n: int, i: int) -> np.ndarray:
    """f0 for b = 0^(n-i) 1^i, evaluated on an array of words."""
    xs = np.asarray(xs, dtype=np.uint64)
    k = n - i
    high = np.uint64(((1 << n) - 1) & ~((1 << (k + 1)) - 1))
    pivot = (xs >> np.uint64(k)) & np.uint64(1)
    return (xs & ~np.uint64(1 << k)) ^ (pivot * high)


def general_f0(xs: np.ndarray, b: int, n: int) -> np.ndarray:
    """f0 for arbitrary b: sort coordinates so b becomes 0^(n-i) 1^i."""
    perm = sort_permutation(b, n)
    return canonical_f0(permute_bits(xs, perm), n, b.bit_count())


# ---------------------------------------------------------------- f1 layer

def _splitmix(z: np.ndarray) -> np.ndarray:
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class FeistelPermutation:
    """Keyed permutation of [0, 2^n) via a balanced Feistel net and cycle walking."""

    def __init__(self, n: int, seed: int, rounds: int = FEISTEL_ROUNDS):
        self.n = n
        self.half = (n + 1) // 2
        self.keys = np.random.SeedSequence(seed).generate_state(rounds, dtype=np.uint64)

    def _block(self, v: np.ndarray) -> np.ndarray:
        h = np.uint64(self.half)
        mask = np.uint64((1 << self.half) - 1)
        left, right = v >> h, v & mask
        for k in self.keys:
            left, right = right, left ^ (_splitmix(right ^ k) & mask)
        return (left << h) | right

    def __call__(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.uint64)
        out = self._block(xs)
        if 2 * self.half == self.n:
            return out
        limit = np.uint64(1 << self.n)
        out_of_range = out >= limit
        while out_of_range.any():
            out[out_of_range] = self._block(out[out_of_range])
            out_of_range = out >= limit
        return out


class TablePermutation:
    def __init__(self, table: np.ndarray):
        table = np.asarray(table, dtype=np.uint64)
        size = len(table)
        n = size.bit_length() - 1
        if size != 1 << n or not np.array_equal(np.sort(table), np.arange(size, dtype=np.uint64)):
            raise UsageError("f1 table must be a permutation of [0, 2^n)")
        self.n = n
        self.table = table

    def __call__(self, xs: np.ndarray) -> np.ndarray:
        return self.table[np.asarray(xs, dtype=np.uint64).astype(np.int64)]


def _identity(xs: np.ndarray) -> np.ndarray:
    return np.asarray(xs, dtype=np.uint64).copy()


# ---------------------------------------------------------------- instances

@dataclass(frozen=True)
class OracleInstance:
    """Hidden b together with the permutation layer f1 (f = f1 o f0).

    f1_mode is ``identity``, ``feistel`` (any n) or ``table`` (n <= 20, a
    Fisher-Yates table drawn from f1_seed).  A custom f0 circuit may be
    attached, mainly to exhibit broken constructions.
    """

    n: int
    b: BitString
    f1_seed: int | None = None
    f1_mode: str = "feistel"
    f1_table: np.ndarray | None = field(default=None, compare=False)
    circuit: CnotCircuit | None = None

    def __post_init__(self):
        if self.b.n != self.n or self.b.bits == 0:
            raise UsageError("b must be a nonzero string of length n")
        mode = self.f1_mode if self.f1_seed is not None or self.f1_table is not None else "identity"
        if self.f1_table is not None:
            f1 = TablePermutation(self.f1_table)
            if f1.n != self.n:
                raise UsageError("f1 table size does not match n")
        elif mode == "identity":
            f1 = _identity
        elif mode == "feistel":
            f1 = FeistelPermutation(self.n, self.f1_seed)
        elif mode == "table":
            if self.n > MAX_TABLE_N:
                raise ResourceError(f"explicit f1 table needs n <= {MAX_TABLE_N}")
            rng = np.random.default_rng(self.f1_seed)
            f1 = TablePermutation(rng.permutation(1 << self.n))
        else:
            raise UsageError(f"unknown f1 mode {self.f1_mode!r}")
        object.__setattr__(self, "_f1", f1)

    @classmethod
    def from_circuit(cls, circuit: CnotCircuit, b: BitString, **kw) -> "OracleInstance":
        return cls(circuit.n, b, circuit=circuit, **kw)

    def f0(self, xs: np.ndarray) -> np.ndarray:
        if self.circuit is not None:
            return self.circuit.apply(xs)
        return general_f0(xs, self.b.bits, self.n)

    def f1(self, ys: np.ndarray) -> np.ndarray:
        return self._f1(ys)

    def f(self, xs: np.ndarray) -> np.ndarray:
        return self.f1(self.f0(xs))


def evaluate_f(inst: OracleInstance, x: BitString) -> BitString:
    if x.n != inst.n:
        raise UsageError(f"length mismatch: {x.n} vs {inst.n}")
    y = inst.f(np.array([x.bits], dtype=np.uint64))
    return BitString(int(y[0]), inst.n)


def verify_two_to_one(inst: OracleInstance) -> bool:
    """True iff every output has exactly two preimages, x and x xor b."""
    if inst.n > MAX_ENUM_N:
        raise ResourceError(f"full enumeration needs n <= {MAX_ENUM_N}")
    xs = np.arange(1 << inst.n, dtype=np.uint64)
    ys = inst.f(xs)
    if not np.array_equal(ys, inst.f(xs ^ np.uint64(inst.b.bits))):
        return False
    return len(np.unique(ys)) == 1 << (inst.n - 1)


def image_of_f(inst: OracleInstance) -> np.ndarray:
    if inst.n > MAX_ENUM_N:
        raise ResourceError(f"full enumeration needs n <= {MAX_ENUM_N}")
    return np.unique(inst.f(np.arange(1 << inst.n, dtype=np.uint64)))


# ------------------------------------------------------------ distributions

def outcome_key(z: int, a: int, n: int) -> str:
    """2n-character outcome label: data bits then ancilla bits."""
    return int_to_str(z, n) + int_to_str(a, n)


def split_key(key: str) -> tuple[int, int, int]:
    if len(key) % 2 or set(key) - {"0", "1"}:
        raise DataError(f"bad outcome label {key!r}")
    n = len(key) // 2
    return str_to_int(key[:n]), str_to_int(key[n:]), n


def noiseless_distribution(inst: OracleInstance) -> dict[str, Fraction]:
    """Exact (z, a) law: z uniform on b-perp, a uniform on the image, independent."""
    n, b = inst.n, inst.b.bits
    zs = [z for z in range(1 << n) if not (z & b).bit_count() & 1]
    image = [int(a) for a in image_of_f(inst)]
    p = Fraction(1, len(zs) * len(image))
    return {outcome_key(z, a, n): p for z in zs for a in image}


def sample_counts(inst: OracleInstance, shots: int, rng: np.random.Generator) -> dict[str, int]:
    """Noiseless measurement record drawn without a state vector."""
    n = inst.n
    zs = sample_orthogonal(inst.b.bits, n, shots, rng)
    xs = rng.integers(0, 1 << n, size=shots, dtype=np.uint64)
    ancilla = inst.f(xs)
    return dict(Counter(outcome_key(int(z), int(a), n) for z, a in zip(zs, ancilla)))


def reduce_counts(counts: Mapping[str, int], m: int) -> dict[str, int]:
    """Marginalize Simon-n counts onto the trailing m data and m ancilla bits."""
    if not counts:
        return {}
    lengths = {len(k) for k in counts}
    if len(lengths) != 1:
        raise DataError("outcome labels have mixed lengths")
    width = lengths.pop()
    n = width // 2
    if not 1 <= m < n:
        raise UsageError(f"need 1 <= m < n, got m={m}, n={n}")
    out: Counter = Counter()
    for key, c in counts.items():
        split_key(key)
        out[key[n - m:n] + key[2 * n - m:]] += c
    return dict(out)


def total_variation(p: Mapping[str, float], q: Mapping[str, float]) -> float:
    keys = set(p) | set(q)
    return sum(abs(p.get(k, 0) - q.get(k, 0)) for k in keys) / 2


def normalize(counts: Mapping[str, int]) -> dict[str, Fraction]:
    total = sum(counts.values())
    return {k: Fraction(v, total) for k, v in counts.items()}


def read_counts_csv(path: str | Path) -> dict[str, int]:
    """``bitstring,count`` histogram; malformed rows are reported with their line number."""
    counts: dict[str, int] = {}
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or {"bitstring", "count"} - set(reader.fieldnames):
                raise DataError(f"{path}: counts CSV needs columns bitstring,count")
            for line, row in enumerate(reader, start=2):
                try:
                    key = (row["bitstring"] or "").strip()
                    if not key or set(key) - {"0", "1"}:
                        raise ValueError(f"bad outcome label {key!r}")
                    c = int(row["count"])
                except (TypeError, ValueError) as e:
                    raise DataError(f"{path}:{line}: {e}") from None
                if c < 0:
                    raise DataError(f"{path}:{line}: negative count for {key}")
                counts[key] = counts.get(key, 0) + c
    except OSError as e:
        raise DataError(f"cannot read counts from {path}: {e}") from e
    if len({len(k) for k in counts}) > 1:
        raise DataError(f"{path}: outcome labels have mixed lengths")
    return counts


def write_counts_csv(counts: Mapping[str, int], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bitstring", "count"])
        for key in sorted(counts):
            w.writerow([key, counts[key]])


# -------------------------------------------------------------- compilation

@dataclass(frozen=True)
class RawProgram:
    """H on data, f0 CNOTs, f1 on ancilla, H on data, optional wire reorder.

    ``layout[j]`` is the output position of wire j in both registers.
    """

    n: int
    f0: CnotCircuit
    f1_table: np.ndarray | None = field(default=None, compare=False)
    layout: tuple[int, ...] | None = None


@dataclass(frozen=True)
class CompiledProgram:
    circuit: CnotCircuit
    b: BitString
    perm: tuple[int, ...]
    f0_rows: tuple[int, ...]
    f1_table: np.ndarray | None = field(default=None, compare=False)
    layout: tuple[int, ...] | None = None

    @property
    def n(self) -> int:
        return self.circuit.n

    @property
    def is_identity_postprocessing(self) -> bool:
        ident = tuple(range(self.n))
        return (
            self.f1_table is None
            and self.perm == ident
            and (self.layout is None or self.layout == ident)
            and self.circuit.linear_rows() == list(self.f0_rows)
        )

    def postprocess(self, zs: np.ndarray, ancilla: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map canonical-circuit outcomes to outcomes of the raw program."""
        n = self.n
        inv = inverse_permutation(self.perm)
        zs = permute_bits(zs, inv)
        k = n - self.b.weight
        pre = np.asarray(ancilla, dtype=np.uint64) & ~np.uint64(1 << k)
        xs = permute_bits(pre, inv)
        raw = _apply_rows(xs, self.f0_rows)
        if self.f1_table is not None:
            raw = TablePermutation(self.f1_table)(raw)
        if self.layout is not None:
            inv_layout = inverse_permutation(self.layout)
            zs, raw = permute_bits(zs, inv_layout), permute_bits(raw, inv_layout)
        return zs, raw

    def distribution(self) -> dict[str, float]:
        """Simulate the canonical circuit and push outcomes through postprocessing."""
        probs = statevector_probabilities(self.circuit)
        n = self.n
        z, a = np.nonzero(probs > 1e-15)
        zz, aa = self.postprocess(z.astype(np.uint64), a.astype(np.uint64))
        out: dict[str, float] = {}
        for zi, ai, z0, a0 in zip(zz, aa, z, a):
            key = outcome_key(int(zi), int(ai), n)
            out[key] = out.get(key, 0.0) + float(probs[z0, a0])
        return out


def _apply_rows(xs: np.ndarray, rows: Sequence[int]) -> np.ndarray:
    out = np.zeros_like(xs)
    for t, row in enumerate(rows):
        out |= parity(xs & np.uint64(row)).astype(np.uint64) << np.uint64(t)
    return out


def compile_program(raw: RawProgram) -> CompiledProgram:
    """Rewrite to the canonical weight-HW(b) circuit plus classical postprocessing."""
    n = raw.n
    if raw.f0.n != n:
        raise UnsupportedStructureError("circuit size does not match program")
    rows = raw.f0.linear_rows()
    kernel = nullspace(rows, n)
    if len(kernel) != 1:
        raise UnsupportedStructureError(
            f"f0 kernel has dimension {len(kernel)}; a two-to-one oracle needs exactly 1"
        )
    if raw.layout is not None and sorted(raw.layout) != list(range(n)):
        raise UnsupportedStructureError("layout is not a permutation of the wires")
    if raw.f1_table is not None and len(raw.f1_table) != 1 << n:
        raise UnsupportedStructureError("f1 table size does not match n")
    b = BitString(kernel[0], n)
    return CompiledProgram(
        circuit=build_canonical_circuit(n, b.weight),
        b=b,
        perm=sort_permutation(b.bits, n),
        f0_rows=tuple(rows),
        f1_table=None if raw.f1_table is None else np.asarray(raw.f1_table, dtype=np.uint64),
        layout=raw.layout,
    )


compile = compile_program


# ------------------------------------------------------- state-vector check

def _walsh_hadamard_data(state: np.ndarray, n: int) -> np.ndarray:
    idx = np.arange(1 << n, dtype=np.uint64)
    h = np.where(parity(idx[:, None] & idx[None, :]), -1.0, 1.0) / np.sqrt(1 << n)
    return state @ h


def _statevector(n: int, gates: Sequence[tuple[int, int]], f1_table=None) -> np.ndarray:
    if n > MAX_STATEVECTOR_N:
        raise ResourceError(f"state-vector simulation limited to n <= {MAX_STATEVECTOR_N}")
    size = 1 << (2 * n)
    # rows index the ancilla register, columns the data register
    state = np.zeros((1 << n, 1 << n))
    state[0, 0] = 1.0
    state = _walsh_hadamard_data(state, n)
    idx = np.arange(size, dtype=np.int64)
    for c, t in gates:
        flat = state.reshape(-1)
        dst = idx ^ (((idx >> c) & 1) << t)
        new = np.empty_like(flat)
        new[dst] = flat
        state = new.reshape(1 << n, 1 << n)
    if f1_table is not None:
        table = np.asarray(f1_table, dtype=np.int64)
        new = np.empty_like(state)
        new[table] = state
        state = new
    return _walsh_hadamard_data(state, n)


def _qubit_index(label: str, n: int) -> int:
    kind, j = _qubit(label, n)
    return j if kind == "d" else n + j


def statevector_probabilities(circuit: CnotCircuit, f1_table=None) -> np.ndarray:
    """Outcome probabilities indexed [z, a] for the H-sandwiched circuit."""
    n = circuit.n
    gates = [(_qubit_index(c, n), _qubit_index(t, n)) for c, t in circuit.edges]
    state = _statevector(n, gates, f1_table)
    return (state**2).T


def simulate_raw(raw: RawProgram) -> dict[str, float]:
    """Reference distribution of an uncompiled program, by brute force."""
    n = raw.n
    probs = statevector_probabilities(raw.f0, raw.f1_table)
    out: dict[str, float] = {}
    inv_layout = inverse_permutation(raw.layout) if raw.layout is not None else None
    for z, a in zip(*np.nonzero(probs > 1e-15)):
        zz, aa = np.uint64(z), np.uint64(a)
        if inv_layout is not None:
            zz = permute_bits(np.array([zz]), inv_layout)[0]
            aa = permute_bits(np.array([aa]), inv_layout)[0]
        key = outcome_key(int(zz), int(aa), n)
        out[key] = out.get(key, 0.0) + float(probs[z, a])
    return out
