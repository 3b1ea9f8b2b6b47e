"""Scaling-model fits, information criteria and the majority-vote model comparison.

Three models of NTS as a function of x = log2 N_w:

    polylog  a * x**alpha
    poly     b * (2**(beta x) - 1)
    mixed    c * (exp(C x**g ln(1+x)**(1-g)) - 1)

All vanish at x = 0.  Fits are weighted least squares solved by a damped
Gauss-Newton (Levenberg-Marquardt) iteration from several starting points.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import DataError, UsageError

MODELS = ("polylog", "poly", "mixed")
PARAM_NAMES = {"polylog": ("a", "alpha"), "poly": ("b", "beta"), "mixed": ("c", "C", "gamma")}
# index of the parameter whose t and p are reported as the headline test
LEADING = {"polylog": 1, "poly": 1, "mixed": 1}
MEASURES = ("p", "t", "r2", "adj_r2", "aic", "aicc", "bic")
HIGHER_IS_BETTER = {"p": False, "t": True, "r2": True, "adj_r2": True, "aic": False, "aicc": False, "bic": False}
SIGMA_FLOOR = 1e-6
LN2 = math.log(2.0)
_EXP_CAP = 700.0


# ------------------------------------------------------------------ data

@dataclass(frozen=True)
class ScalingDataset:
    x: np.ndarray
    y: np.ndarray
    sigma: np.ndarray
    label: str = ""
    w: int | None = None
    mitigated: bool | None = None

    def __post_init__(self):
        x, y, s = (np.asarray(v, dtype=float).ravel() for v in (self.x, self.y, self.sigma))
        if not (len(x) == len(y) == len(s)):
            raise DataError("x, y and sigma must have equal length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(s))):
            raise DataError("dataset contains non-finite values")
        if np.any(np.diff(x) <= 0):
            raise DataError("x must be strictly increasing")
        if np.any(s <= 0):
            raise DataError("sigma must be positive")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sigma", s)

    def __len__(self) -> int:
        return len(self.x)

    @classmethod
    def from_points(cls, points: Iterable[tuple[float, float, float]], floor: float = SIGMA_FLOOR, **meta):
        pts = sorted(points)
        if not pts:
            raise DataError("empty dataset")
        x, y, s = (np.array(c, dtype=float) for c in zip(*pts))
        return cls(x, y, np.maximum(s, floor), **meta)

    def drop_first(self, k: int = 4) -> "ScalingDataset":
        """Discard the k smallest-x points (small-size effects)."""
        return ScalingDataset(self.x[k:], self.y[k:], self.sigma[k:], self.label, self.w, self.mitigated)


def read_datasets_csv(path: str | Path, floor: float = SIGMA_FLOOR, label: str = "") -> dict[int, ScalingDataset]:
    """Parse a ``w,log2Nw,nts_mean,nts_std`` file into one dataset per w."""
    groups: dict[int, list[tuple[float, float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"w", "log2Nw", "nts_mean", "nts_std"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise DataError(f"{path}: header must contain {sorted(need)}")
        for line, row in enumerate(reader, start=2):
            try:
                w = int(row["w"])
                pt = (float(row["log2Nw"]), float(row["nts_mean"]), float(row["nts_std"]))
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{line}: malformed row ({exc})") from None
            if not all(math.isfinite(v) for v in pt):
                raise DataError(f"{path}:{line}: non-finite value")
            groups.setdefault(w, []).append(pt)
    if not groups:
        raise DataError(f"{path}: no data rows")
    return {w: ScalingDataset.from_points(p, floor, label=label, w=w) for w, p in sorted(groups.items())}


def write_datasets_csv(datasets: Mapping[int, ScalingDataset], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["w", "log2Nw", "nts_mean", "nts_std"])
        for w, ds in sorted(datasets.items()):
            for x, y, s in zip(ds.x, ds.y, ds.sigma):
                out.writerow([w, repr(float(x)), repr(float(y)), repr(float(s))])


# ---------------------------------------------------------------- models

def _check_params(model: str, params: Sequence[float]) -> tuple[float, ...]:
    if model not in MODELS:
        raise UsageError(f"unknown model {model!r}; choose from {MODELS}")
    params = tuple(float(v) for v in params)
    if len(params) != len(PARAM_NAMES[model]):
        raise UsageError(f"{model} takes {len(PARAM_NAMES[model])} parameters")
    if model == "mixed":
        c, C, g = params
        if not (c > 0 and C > 0 and 0 <= g <= 1):
            raise UsageError("mixed model needs c > 0, C > 0 and 0 <= gamma <= 1")
    elif params[0] <= 0:
        raise UsageError(f"{model} amplitude must be positive")
    return params


def _mixed_core(x: np.ndarray, g: float) -> np.ndarray:
    L = np.log1p(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        core = np.where(x > 0, x**g * L ** (1 - g), 0.0)
    return core


def _eval(model: str, p: Sequence[float], x: np.ndarray) -> np.ndarray:
    if model == "polylog":
        a, alpha = p
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(x > 0, a * np.abs(x) ** alpha, 0.0)
    if model == "poly":
        b, beta = p
        return b * np.expm1(np.minimum(beta * LN2 * x, _EXP_CAP))
    c, C, g = p
    return c * np.expm1(np.minimum(C * _mixed_core(x, g), _EXP_CAP))


def model_eval(model: str, params: Sequence[float], x) -> np.ndarray:
    """Model value at x = log2 N_w."""
    params = _check_params(model, params)
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise UsageError("x = log2 N_w must be nonnegative")
    return _eval(model, params, x)


def _jacobian(model: str, p: Sequence[float], x: np.ndarray) -> np.ndarray:
    pos = x > 0
    lx = np.log(np.where(pos, x, 1.0))
    if model == "polylog":
        a, alpha = p
        base = np.where(pos, np.where(pos, x, 1.0) ** alpha, 0.0)
        return np.column_stack([base, a * base * lx])
    if model == "poly":
        b, beta = p
        e = np.exp(np.minimum(beta * LN2 * x, _EXP_CAP))
        return np.column_stack([e - 1, b * e * LN2 * x])
    c, C, g = p
    core = _mixed_core(x, g)
    e = np.exp(np.minimum(C * core, _EXP_CAP))
    lL = np.log(np.where(pos, np.log1p(x), 1.0))
    dg = np.where(pos, c * e * C * core * (lx - lL), 0.0)
    return np.column_stack([e - 1, c * e * core, dg])


def _bounds(model: str) -> tuple[np.ndarray, np.ndarray]:
    if model == "mixed":
        return np.array([1e-12, 1e-12, 0.0]), np.array([np.inf, np.inf, 1.0])
    return np.array([1e-12, 1e-9]), np.array([np.inf, np.inf])


# ------------------------------------------------------------------- fit

@dataclass
class FitReport:
    model: str
    params: dict[str, float]
    stderr: dict[str, float]
    t: dict[str, float]
    p: dict[str, float]
    r2: float
    adj_r2: float
    aic: float
    aicc: float
    bic: float
    ss_res: float
    dof: int
    n_points: int
    converged: bool = True
    iterations: int = 0
    reduces_to: str | None = None

    @property
    def leading(self) -> str:
        return PARAM_NAMES[self.model][LEADING[self.model]]

    @property
    def t_lead(self) -> float:
        return self.t[self.leading]

    @property
    def p_lead(self) -> float:
        return self.p[self.leading]

    def measures(self) -> "Measures":
        return Measures(self.p_lead, self.t_lead, self.r2, self.adj_r2, self.aic, self.aicc, self.bic)

    def predict(self, x) -> np.ndarray:
        return _eval(self.model, tuple(self.params.values()), np.asarray(x, dtype=float))

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: jsonable(v) for k, v in d.items()}


def jsonable(v):
    """Replace non-finite floats by strings so the result is strict JSON."""
    if isinstance(v, dict):
        return {k: jsonable(u) for k, u in v.items()}
    if isinstance(v, (list, tuple)):
        return [jsonable(u) for u in v]
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return v


def _objective(model, p, ds) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        r = (ds.y - _eval(model, p, ds.x)) / ds.sigma
        S = float(r @ r)
    return S if math.isfinite(S) else math.inf


def _levenberg_marquardt(model, p0, ds, max_iter=500, rtol=1e-10):
    """Damped Gauss-Newton with clamping to the feasible box; only descent steps are accepted."""
    lo, hi = _bounds(model)
    p = np.clip(np.asarray(p0, dtype=float), lo, hi)
    S = _objective(model, p, ds)
    lam = 1e-3
    history = [S]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = _jacobian(model, p, ds.x) / ds.sigma[:, None]
        r = (ds.y - _eval(model, p, ds.x)) / ds.sigma
        A = J.T @ J
        g = J.T @ r
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(g))):
            break
        improved = False
        while lam < 1e16:
            M = A + lam * np.diag(np.maximum(np.diag(A), 1e-300))
            try:
                step = np.linalg.solve(M, g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = np.clip(p + step, lo, hi)
            S_new = _objective(model, trial, ds)
            if np.isfinite(S_new) and S_new <= S:
                improved = True
                break
            lam *= 4
        if not improved:
            converged = True  # no descent direction left at any damping
            break
        change = (S - S_new) / max(S, 1e-300)
        p, S = trial, S_new
        history.append(S)
        lam = max(lam / 3, 1e-12)
        if change < rtol:
            converged = True
            break
    return p, S, converged, it, history


def _starts(model: str, ds: ScalingDataset, count: int = 8) -> list[np.ndarray]:
    """Log-spaced exponent starts; amplitude from a weighted linear solve."""
    out = []
    if model == "polylog":
        grid = np.logspace(-1, 1, count)
        shapes = [(e, lambda e=e: _eval("polylog", (1.0, e), ds.x)) for e in grid]
    elif model == "poly":
        grid = np.logspace(-2.5, 0.5, count)
        shapes = [(e, lambda e=e: _eval("poly", (1.0, e), ds.x)) for e in grid]
    else:
        grid = np.logspace(-2, 0.5, count)
        shapes = [((e, g), lambda e=e, g=g: _eval("mixed", (1.0, e, g), ds.x)) for e in grid for g in (0.0, 0.5, 1.0)]
    wts = 1 / ds.sigma**2
    for e, shape in shapes:
        f = shape()
        den = float(np.sum(wts * f * f))
        amp = float(np.sum(wts * f * ds.y)) / den if den > 0 and np.isfinite(den) else 1.0
        amp = amp if amp > 0 and np.isfinite(amp) else 1.0
        out.append(np.array([amp, *np.atleast_1d(e)], dtype=float))
    return out


def fit(model: str, data: ScalingDataset, starts: int = 8, max_iter: int = 500, rtol: float = 1e-10) -> FitReport:
    """Weighted least-squares fit of one scaling model."""
    if model not in MODELS:
        raise UsageError(f"unknown model {model!r}; choose from {MODELS}")
    k = len(PARAM_NAMES[model])
    N = len(data)
    if N < k:
        raise UsageError(f"{N} points cannot determine {k} parameters")
    best = None
    for p0 in _starts(model, data, max(starts, 8)):
        res = _levenberg_marquardt(model, p0, data, max_iter, rtol)
        if best is None or res[1] < best[1]:
            best = res
    p, S, converged, iters, _ = best
    return _report(model, p, S, data, converged, iters)


def _report(model, p, S, ds, converged, iters) -> FitReport:
    k = len(p)
    N = len(ds)
    dof = N - k
    names = PARAM_NAMES[model]
    J = _jacobian(model, p, ds.x) / ds.sigma[:, None]
    if dof > 0:
        try:
            cov = np.linalg.pinv(J.T @ J) * (S / dof)
            se = np.sqrt(np.maximum(np.diag(cov), 0.0))
        except np.linalg.LinAlgError:
            se = np.full(k, np.nan)
    else:
        se = np.full(k, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, p / se, np.where(se == 0, np.inf, np.nan))
    pv = np.array([2 * stats.t.sf(abs(ti), dof) if dof > 0 and np.isfinite(ti) else (0.0 if np.isinf(ti) and dof > 0 else np.nan) for ti in t])
    wts = 1 / ds.sigma**2
    ybar = float(np.sum(wts * ds.y) / np.sum(wts))
    ss_tot = float(np.sum(wts * (ds.y - ybar) ** 2))
    r2 = 1 - S / ss_tot if ss_tot > 0 else (1.0 if S == 0 else -math.inf)
    adj = 1 - (1 - r2) * (N - 1) / dof if dof > 0 else math.nan
    ln_term = N * math.log(S / N) if S > 0 else -math.inf
    aic = ln_term + 2 * k
    aicc = aic + 2 * k * (k + 1) / (N - k - 1) if N - k - 1 > 0 else math.inf
    bic = ln_term + k * math.log(N)
    reduces = None
    if model == "mixed":
        reduces = "polylog" if p[2] <= 1e-9 else ("poly" if p[2] >= 1 - 1e-9 else None)
    return FitReport(
        model,
        dict(zip(names, map(float, p))),
        dict(zip(names, map(float, se))),
        dict(zip(names, map(float, t))),
        dict(zip(names, map(float, pv))),
        float(r2), float(adj), float(aic), float(aicc), float(bic),
        float(S), dof, N, converged, iters, reduces,
    )


# ------------------------------------------------------------- bootstrap

def bootstrap_nts(
    folds: Sequence[float], B: int = 100_000, rng: np.random.Generator | None = None, size: int = 9, chunk: int = 50_000
) -> tuple[float, float]:
    """Mean and spread of resample means (size draws with replacement, B times)."""
    vals = np.asarray(folds, dtype=float)
    if vals.size < 2:
        raise UsageError("bootstrap needs at least two replicas")
    if np.all(vals == vals[0]):
        return float(vals[0]), 0.0
    rng = np.random.default_rng() if rng is None else rng
    means = np.empty(B)
    for lo in range(0, B, chunk):
        hi = min(B, lo + chunk)
        idx = rng.integers(0, vals.size, size=(hi - lo, size))
        means[lo:hi] = vals[idx].mean(axis=1)
    return float(means.mean()), float(means.std(ddof=1))


def fold_means(values: Sequence[float], folds: int = 10, rng: np.random.Generator | None = None) -> np.ndarray:
    """Split per-round values into shuffled folds and return each fold's mean."""
    vals = np.asarray(values, dtype=float)
    if vals.size < folds:
        raise UsageError(f"need at least {folds} values for {folds} folds")
    if rng is not None:
        vals = vals[rng.permutation(vals.size)]
    return np.array([part.mean() for part in np.array_split(vals, folds)])


# ------------------------------------------------------- model comparison

def akaike_weights(aics: Sequence[float]) -> np.ndarray:
    a = np.asarray(aics, dtype=float)
    if a.size < 2 or not np.all(np.isfinite(a)):
        raise UsageError("need at least two finite AIC values")
    rel = np.exp(-(a - a.min()) / 2)
    return rel / rel.sum()


@dataclass(frozen=True)
class Measures:
    p: float
    t: float
    r2: float
    adj_r2: float
    aic: float
    aicc: float
    bic: float

    def get(self, name: str) -> float:
        return getattr(self, name)


@dataclass
class WeightVerdict:
    """Comparison of two models on one dataset."""

    per_measure: dict[str, str]
    votes: dict[str, int]
    winner: str
    akaike_weight: float

    @property
    def score(self) -> str:
        a, b = self.votes.values()
        return f"{a}-{b}"


@dataclass
class ModelVerdict:
    models: tuple[str, str]
    by_w: dict[int, WeightVerdict] = field(default_factory=dict)
    w_t: int | None = None

    def winners(self) -> dict[int, str]:
        return {w: v.winner for w, v in self.by_w.items()}

    def to_dict(self) -> dict:
        return {
            "models": list(self.models),
            "w_t": self.w_t,
            "by_w": {str(w): asdict(v) for w, v in self.by_w.items()},
        }

    def to_markdown(self) -> str:
        a, b = self.models
        head = f"| w | {' | '.join(MEASURES)} | votes {a}-{b} | winner | Akaike weight ({a}) |"
        rule = "|" + "---|" * (len(MEASURES) + 4)
        rows = [head, rule]
        for w, v in sorted(self.by_w.items()):
            cells = " | ".join(v.per_measure[m] for m in MEASURES)
            rows.append(f"| {w} | {cells} | {v.score} | {v.winner} | {v.akaike_weight:.4f} |")
        rows.append("")
        rows.append(f"Transition weight w_t: {self.w_t if self.w_t is not None else 'none'}")
        return "\n".join(rows) + "\n"


def compare(first: Measures, second: Measures, models: tuple[str, str] = ("polylog", "poly")) -> WeightVerdict:
    """Per-measure winners and the majority vote; equal values count for neither side."""
    a, b = models
    per: dict[str, str] = {}
    votes = {a: 0, b: 0}
    for m in MEASURES:
        u, v = first.get(m), second.get(m)
        if u == v or (math.isnan(u) and math.isnan(v)):
            per[m] = "tie"
            continue
        if math.isnan(u) or math.isnan(v):
            win = b if math.isnan(u) else a
        elif HIGHER_IS_BETTER[m]:
            win = a if u > v else b
        else:
            win = a if u < v else b
        per[m] = win
        votes[win] += 1
    winner = a if votes[a] > votes[b] else (b if votes[b] > votes[a] else "tie")
    if math.isfinite(first.aic) and math.isfinite(second.aic):
        aw = float(akaike_weights([first.aic, second.aic])[0])
    else:
        aw = math.nan
    return WeightVerdict(per, votes, winner, aw)


def transition_weight(winners: Mapping[int, str], challenger: str = "poly") -> int | None:
    """Smallest w at which the challenger model wins, scanning upward."""
    for w in sorted(winners):
        if winners[w] == challenger:
            return w
    return None


def model_select(
    measures_by_w: Mapping[int, Mapping[str, Measures | FitReport]], models: tuple[str, str] = ("polylog", "poly")
) -> ModelVerdict:
    a, b = models
    verdict = ModelVerdict(models)
    for w in sorted(measures_by_w):
        entry = measures_by_w[w]
        if a not in entry or b not in entry:
            raise UsageError(f"w={w}: both {a} and {b} results are required")
        ma, mb = (e.measures() if isinstance(e, FitReport) else e for e in (entry[a], entry[b]))
        verdict.by_w[w] = compare(ma, mb, models)
    verdict.w_t = transition_weight(verdict.winners(), b)
    return verdict


def fit_all(
    datasets: Mapping[int, ScalingDataset], models: Sequence[str] = ("polylog", "poly"), drop_first: int = 0
) -> dict[int, dict[str, FitReport]]:
    out: dict[int, dict[str, FitReport]] = {}
    for w, ds in sorted(datasets.items()):
        ds = ds.drop_first(drop_first) if drop_first else ds
        out[w] = {m: fit(m, ds) for m in models}
    return out


# ------------------------------------------------------ published tables

def read_measures_csv(path: str | Path) -> dict[str, dict[int, dict[str, Measures]]]:
    """Load ``case,w,model,p,t,aic,aicc,bic,r2,adj_r2`` rows grouped by case and w."""
    out: dict[str, dict[int, dict[str, Measures]]] = {}
    with open(path, newline="") as fh:
        for line, row in enumerate(csv.DictReader(fh), start=2):
            try:
                m = Measures(*(float(row[k]) for k in MEASURES))
                out.setdefault(row["case"], {}).setdefault(int(row["w"]), {})[row["model"]] = m
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{line}: malformed row ({exc})") from None
    return out


def load_published_measures() -> dict[str, dict[int, dict[str, Measures]]]:
    """Published per-w fit statistics for the two devices, with and without mitigation."""
    ref = resources.files("hwsimon") / "data" / "device_fit_measures.csv"
    with resources.as_file(ref) as path:
        return read_measures_csv(path)


def reports_to_json(fits: Mapping[int, Mapping[str, FitReport]], verdict: ModelVerdict | None = None) -> str:
    doc = {"fits": {str(w): {m: r.to_dict() for m, r in per.items()} for w, per in fits.items()}}
    if verdict is not None:
        doc["verdict"] = jsonable(verdict.to_dict())
    return json.dumps(doc, indent=2, sort_keys=True)
