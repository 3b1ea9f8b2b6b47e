"""Divergences, mutual information, query-count bounds, readout unfolding and a diffusion model.

Information is measured in bits.  Functions that must be exact for small n
accept Fraction probabilities and evaluate logarithms with mpmath.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import mpmath
import numpy as np

from .errors import BoundInapplicableError, DataError, NumericalError, ResourceError, UsageError
from .gf2 import BitString, count_candidates, parity, str_to_int

LN2 = math.log(2)
MAX_ENUM_N = 10


# ------------------------------------------------------------ distributions

@dataclass(frozen=True)
class DiscreteDistribution:
    """Weights over outcomes 0..len-1; floats or Fractions."""

    weights: tuple

    def __post_init__(self):
        w = tuple(self.weights)
        object.__setattr__(self, "weights", w)
        if not w:
            raise UsageError("empty distribution")
        if any(x < 0 for x in w):
            raise UsageError("negative probability")
        total = sum(w)
        exact = all(isinstance(x, (int, Fraction)) for x in w)
        if (exact and total != 1) or (not exact and abs(total - 1) > 1e-12):
            raise UsageError(f"probabilities sum to {float(total)}, not 1")

    @classmethod
    def from_array(cls, arr) -> "DiscreteDistribution":
        return cls(tuple(float(x) for x in np.asarray(arr, dtype=float)))

    @property
    def exact(self) -> bool:
        return all(isinstance(x, (int, Fraction)) for x in self.weights)

    def array(self) -> np.ndarray:
        return np.array([float(x) for x in self.weights])

    def __len__(self) -> int:
        return len(self.weights)


def _weights(P) -> Sequence:
    return P.weights if isinstance(P, DiscreteDistribution) else list(P)


def entropy(P) -> float:
    w = np.asarray([float(x) for x in _weights(P)])
    w = w[w > 0]
    return float(-(w * np.log2(w)).sum())


def binary_entropy(x: float) -> float:
    if x <= 0 or x >= 1:
        return 0.0
    return float(-(x * math.log2(x) + (1 - x) * math.log2(1 - x)))


def cp_function(p: float) -> float:
    """((1+p) ln(1+p) - p) / p^2, continuous on [-1, inf]."""
    if p < -1:
        raise UsageError("C(p) is defined for p >= -1")
    if p == -1:
        return 1.0
    if math.isinf(p):
        return 0.0
    if abs(p) < 1e-4:
        return 0.5 - p / 6 + p * p / 12 - p**3 / 20
    return ((1 + p) * math.log1p(p) - p) / (p * p)


def kl_divergence(P, Q) -> float:
    p = np.asarray([float(x) for x in _weights(P)])
    q = np.asarray([float(x) for x in _weights(Q)])
    if len(p) != len(q):
        raise UsageError("distributions differ in size")
    if np.any((p > 0) & (q == 0)):
        return math.inf
    m = p > 0
    return float((p[m] * np.log2(p[m] / q[m])).sum())


def chi2_divergence(P, Q):
    """Sum (P - Q)^2 / Q; exact when both inputs hold Fractions."""
    p, q = _weights(P), _weights(Q)
    if len(p) != len(q):
        raise UsageError("distributions differ in size")
    if any(pi > 0 and qi == 0 for pi, qi in zip(p, q)):
        return math.inf
    return sum((pi - qi) ** 2 / qi for pi, qi in zip(p, q) if qi > 0)


def kl_divergence_exact(P, Q, dps: int = 50) -> mpmath.mpf:
    """KL divergence of rational distributions at high precision."""
    with mpmath.workdps(dps):
        total = mpmath.mpf(0)
        for pi, qi in zip(_weights(P), _weights(Q)):
            if pi == 0:
                continue
            if qi == 0:
                return mpmath.inf
            r = Fraction(pi) / Fraction(qi)
            total += mpmath.mpf(Fraction(pi).numerator) / Fraction(pi).denominator * mpmath.log(
                mpmath.mpf(r.numerator) / r.denominator, 2
            )
        return +total


@dataclass(frozen=True)
class DivergenceCheck:
    dkl: float
    chi2: float
    bounds_hold: bool
    lower: float = 0.0
    upper: float = math.inf


def dkl_vs_chi2_check(P, Q, tol: float = 1e-12) -> DivergenceCheck:
    """KL and chi-squared divergences and whether both C(p) sandwich bounds hold.

    The bounds use the tightest admissible p on each side: p1 = 1 - min dP/dQ
    for the upper bound and p2 = max dP/dQ - 1 for the lower bound.
    """
    p = np.asarray([float(x) for x in _weights(P)])
    q = np.asarray([float(x) for x in _weights(Q)])
    if np.any((p > 0) & (q == 0)):
        return DivergenceCheck(math.inf, math.inf, True)
    m = q > 0
    ratio = p[m] / q[m]
    dkl = kl_divergence(p, q)
    chi2 = float(((p[m] - q[m]) ** 2 / q[m]).sum())
    p1 = min(1.0, max(0.0, 1 - ratio.min()))
    p2 = max(0.0, ratio.max() - 1)
    upper = chi2 * cp_function(-p1) / LN2
    lower = chi2 * cp_function(p2) / LN2
    slack = tol * max(1.0, chi2)
    return DivergenceCheck(dkl, chi2, bool(lower - slack <= dkl <= upper + slack), lower, upper)


# -------------------------------------------------- z distributions and MI

def _prior_arrays(P_B: Mapping[int, object] | Sequence[tuple[int, object]]):
    items = P_B.items() if isinstance(P_B, Mapping) else P_B
    items = [(int(b.bits) if isinstance(b, BitString) else int(b), w) for b, w in items]
    if any(b == 0 for b, _ in items):
        raise UsageError("the zero string cannot be a hidden string")
    return items


def z_distribution(P_B, n: int, p=1) -> list:
    """P_Z(z) = 2^-n (1 + p M_z), M_z = sum_b P_B(b) (-1)^(b.z); exact for rational input."""
    items = _prior_arrays(P_B)
    if n > MAX_ENUM_N + 6:
        raise ResourceError("explicit z distribution too large")
    scale = Fraction(1, 2**n) if isinstance(p, (int, Fraction)) and all(
        isinstance(w, (int, Fraction)) for _, w in items) else 2.0**-n
    out = []
    for z in range(1 << n):
        M = sum(w if not (b & z).bit_count() & 1 else -w for b, w in items)
        out.append(scale * (1 + p * M))
    return out


def chi2_pz_pu(P_B, n: int | None = None):
    """Chi-squared divergence of the z law from uniform, equal to sum P_B(b)^2."""
    items = _prior_arrays(P_B)
    if not items:
        raise UsageError("prior must be nonempty")
    return sum(w * w for _, w in items)


def _log2_exact(x: Fraction):
    return mpmath.log(mpmath.mpf(x.numerator) / x.denominator, 2)


@dataclass(frozen=True)
class InfoPerQuery:
    mutual_info: float | None
    decomposition: float | None
    r: float | None
    r_bounds: tuple[float, float]
    K: float


def info_per_query(p, P_B, n: int, exact: bool = False) -> InfoPerQuery:
    """I(B; Z_p) by enumeration, its 1 - H((1+p)/2) - r split and the interval for r."""
    items = _prior_arrays(P_B)
    K = sum(w * w for _, w in items)
    pf = float(p)
    r_bounds = (
        float(K) * pf * pf * cp_function(pf) / LN2,
        float(K) * pf * pf * cp_function(-pf) / LN2,
    )
    if n > MAX_ENUM_N:
        return InfoPerQuery(None, None, None, r_bounds, float(K))
    if exact:
        with mpmath.workdps(50):
            pz = z_distribution(items, n, Fraction(p))
            P = Fraction(p)
            mi = mpmath.mpf(0)
            for b, w in items:
                for z in range(1 << n):
                    cond = Fraction(1, 2**n) * (1 + (P if not (b & z).bit_count() & 1 else -P))
                    if cond > 0:
                        mi += mpmath.mpf(w.numerator) / w.denominator * (
                            mpmath.mpf(cond.numerator) / cond.denominator) * _log2_exact(cond / pz[z])
            r = kl_divergence_exact(pz, [Fraction(1, 2**n)] * (1 << n))
            h = (1 + P) / 2
            hb = mpmath.mpf(0)
            for x in (h, 1 - h):
                if x > 0:
                    hb -= mpmath.mpf(x.numerator) / x.denominator * _log2_exact(x)
            return InfoPerQuery(mi, 1 - hb - r, r, r_bounds, float(K))
    vals = np.array([b for b, _ in items], dtype=np.uint64)
    wts = np.array([float(w) for _, w in items])
    zs = np.arange(1 << n, dtype=np.uint64)
    sign = 1 - 2 * parity(vals[:, None] & zs[None, :]).astype(float)
    cond = (1 + pf * sign) / 2**n
    pz = wts @ cond
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(cond > 0, cond * np.log2(cond / pz[None, :]), 0.0)
    mi = float(wts @ terms.sum(axis=1))
    r = kl_divergence(pz, np.full(1 << n, 2.0**-n))
    return InfoPerQuery(mi, 1 - binary_entropy((1 + pf) / 2) - r, r, r_bounds, float(K))


def expected_queries_bound(H_prior: float, p: float, K1: float) -> float:
    """Upper bound on expected queries for an agent stopping once sum of squared posteriors >= K1."""
    if H_prior == 0:
        return 0.0
    den = 1 - binary_entropy((1 + p) / 2) - K1 * p * p * cp_function(-p) / LN2
    if den <= 0:
        raise BoundInapplicableError(f"denominator {den:.3g} is not positive")
    return H_prior / den


def expected_queries_asymptotic(H_prior: float, p: float, K1: float) -> float:
    return 2 * LN2 * H_prior / (p * p * (1 - K1))


def nts_q_upper_bound(n: int, w: int, q: float) -> float:
    """8 ln(N_w) e^(2q) / (1 - N_w^-2), dropping the O(e^-q) denominator term."""
    if q < 0:
        raise UsageError("q must be nonnegative")
    N = count_candidates(n, w)
    if N == 1:
        return 0.0
    return 8 * math.log(N) * math.exp(2 * q) / (1 - N**-2)


def _xlog2(coef: float, ratio: float) -> float:
    return 0.0 if coef == 0 else coef * math.log2(ratio)


def mutual_info_zb(p: float, q: float, n: int) -> float:
    """I(Z;B) for the three-outcome model with uniform b over all nonzero strings."""
    if not (0 <= p <= 1 and 0 <= q <= 1) or n < 1:
        raise UsageError("need p, q in [0,1] and n >= 1")
    if n == 1:
        p = 0.0
    full = 2**n - 1
    good = 2 ** (n - 1) - 1
    bad = 2 ** (n - 1)
    second = _xlog2(p, p * full / good) if good else 0.0
    third = _xlog2(1 - p, (1 - p) * full / bad)
    return (1 - q) * (second + third)


def mutual_info_zb_enumerate(p: float, q: float, n: int) -> float:
    """The same quantity by summing over every nonzero b and every z."""
    if n > MAX_ENUM_N:
        raise ResourceError(f"enumeration limited to n <= {MAX_ENUM_N}")
    if n == 1:
        p = 0.0
    zs = np.arange(1 << n, dtype=np.uint64)
    bs = np.arange(1, 1 << n, dtype=np.uint64)
    good = 2 ** (n - 1) - 1
    orth = parity(bs[:, None] & zs[None, :]) == 0
    cond = np.where(orth, (1 - q) * p / good if good else 0.0, (1 - q) * (1 - p) / 2 ** (n - 1))
    cond[:, 0] = q
    prior = 1 / len(bs)
    pz = cond.sum(axis=0) * prior
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(cond > 0, cond * np.log2(cond / pz[None, :]), 0.0)
    return float(terms.sum() * prior)


def extract_pq(counts: Mapping[str, int], b: BitString) -> tuple[float, float]:
    """q = frequency of z = 0; p = Pr(z.b = 0 | z != 0)."""
    total = zero = good = 0
    for key, c in counts.items():
        if len(key) != b.n:
            raise DataError(f"outcome {key!r} does not have {b.n} bits")
        z = str_to_int(key)
        total += c
        if z == 0:
            zero += c
        elif not (z & b.bits).bit_count() & 1:
            good += c
    if total == 0:
        raise DataError("empty histogram")
    q = zero / total
    if b.n == 1:
        return 0.0, q
    if zero == total:
        raise NumericalError("every outcome is z = 0; p is undefined")
    return good / (total - zero), q


# --------------------------------------------------------------- unfolding

def mem_ibu(observed, R, theta0=None, iters: int = 50, tol: float | None = None) -> np.ndarray:
    """Iterative Bayesian unfolding of observed = R theta for column-stochastic R."""
    p = np.asarray(observed.array() if isinstance(observed, DiscreteDistribution) else observed, dtype=float)
    R = np.asarray(R, dtype=float)
    k = len(p)
    if R.ndim != 2 or R.shape[0] != k:
        raise UsageError("response matrix rows must match the observed outcomes")
    if np.any(R < 0) or not np.allclose(R.sum(axis=0), 1, atol=1e-9):
        raise UsageError("response matrix must be column stochastic")
    theta = np.full(R.shape[1], 1 / R.shape[1]) if theta0 is None else np.asarray(theta0, dtype=float)
    if np.any(theta <= 0):
        raise UsageError("initial guess must be strictly positive")
    theta = theta / theta.sum()
    for _ in range(iters):
        den = R @ theta
        if np.any((den == 0) & (p > 0)):
            raise NumericalError("zero predicted probability for an observed outcome")
        ratio = np.divide(p, den, out=np.zeros_like(p), where=den > 0)
        new = theta * (R.T @ ratio)
        new /= new.sum()
        done = tol is not None and np.abs(new - theta).sum() < tol
        theta = new
        if done:
            break
    return theta


def read_response_matrix_csv(path: str | Path) -> np.ndarray:
    try:
        R = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read response matrix {path}: {e}") from e
    return R


def read_calibration_csv(path: str | Path) -> dict[int, float]:
    out: dict[int, float] = {}
    try:
        with open(path, newline="") as fh:
            rd = csv.DictReader(fh)
            for line, row in enumerate(rd, start=2):
                try:
                    hw, f = int(row["hw"]), float(row["f"])
                except (KeyError, TypeError, ValueError) as e:
                    raise DataError(f"{path}:{line}: bad calibration row") from e
                if not 0 < f < 1:
                    raise DataError(f"{path}:{line}: f must lie in (0, 1)")
                out[hw] = f
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    return out


# --------------------------------------------------------------- diffusion

@dataclass(frozen=True)
class DiffusionState:
    Y: np.ndarray
    t: float
    truth: int

    @property
    def X(self) -> np.ndarray:
        return posterior_from_y(self.Y)


def posterior_from_y(Y: np.ndarray) -> np.ndarray:
    """Uniform prior reweighted by e^Y, normalized over the last axis.

    The truth's coordinate carries the +t drift, so it gains weight; this is
    the sign under which X is the posterior of the truth given the paths.
    """
    Y = np.asarray(Y, dtype=float)
    e = np.exp(Y - Y.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class DiffusionTrajectory:
    times: np.ndarray
    X: np.ndarray  # (paths, steps + 1, N)
    truth: np.ndarray

    def entropy(self) -> np.ndarray:
        X = self.X
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(X > 0, X * np.log2(X), 0.0)
        return -terms.sum(axis=-1)


def diffusion_simulate(
    num_candidates: int,
    truth,
    T: float,
    dt: float,
    rng: np.random.Generator,
    paths: int = 1,
) -> DiffusionTrajectory:
    """Euler-Maruyama paths of Y_b = W_b + t [b = truth] and the induced X."""
    if dt <= 0 or dt > 0.01:
        raise UsageError("dt must lie in (0, 0.01]")
    steps = int(round(T / dt))
    if steps < 0 or abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise UsageError("T must be a nonnegative multiple of dt")
    N = num_candidates
    truth = np.broadcast_to(np.asarray(truth, dtype=np.int64), (paths,)).copy()
    if np.any((truth < 0) | (truth >= N)):
        raise UsageError("truth index out of range")
    drift = np.zeros((paths, N))
    drift[np.arange(paths), truth] = dt
    incr = rng.normal(0.0, math.sqrt(dt), size=(paths, steps, N)) + drift[:, None, :]
    Y = np.concatenate([np.zeros((paths, 1, N)), np.cumsum(incr, axis=1)], axis=1)
    return DiffusionTrajectory(np.arange(steps + 1) * dt, posterior_from_y(Y), truth)


def entropy_rate_theory(X: np.ndarray) -> float:
    """d/dt E[H(X)] = -(1 - sum X^2) / (2 ln 2)."""
    X = np.asarray(X, dtype=float)
    return -(1 - float((X * X).sum())) / (2 * LN2)


def entropy_rate_estimate(
    N: int, paths: int, dt: float, horizon: float, rng: np.random.Generator
) -> tuple[float, float]:
    """Least-squares slope of the ensemble entropy over [0, horizon], with its standard error.

    The truth is drawn uniformly per path so the ensemble matches the prior.
    """
    truth = rng.integers(0, N, size=paths)
    traj = diffusion_simulate(N, truth, horizon, dt, rng, paths)
    H = traj.entropy()
    H0 = math.log2(N)
    t = traj.times
    # regression through the known starting value H(0) = log2 N
    per_path = ((H - H0) @ t) / (t @ t)
    return float(per_path.mean()), float(per_path.std(ddof=1) / math.sqrt(paths))
