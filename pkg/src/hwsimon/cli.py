"""Command-line front end: ``hwsimon {oracle,simulate,bounds,ingest,fit,report}``.

Every subcommand accepts ``--config FILE`` with flat ``key=value`` lines;
explicit flags override values from the file.  Exit codes: 0 ok, 2 usage,
3 data, 4 resource, 5 numerical.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import game, infotheory, oracle, players, statfit
from .errors import DataError, ResourceError, SimonError, UsageError
from .gf2 import BitString, count_candidates, enumerate_candidates

CONFIG_ALIASES = {"lambda": "lam", "rounds_per_hw": "rounds"}
SIGNIFICANCE = 3.0  # a mean score within this many standard errors of 0 counts as no information


# ------------------------------------------------------------------ config

def read_config(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise DataError(f"cannot read config {path}: {e}") from e
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        out[CONFIG_ALIASES.get(key, key)] = value
    return out


def _merge(args: argparse.Namespace, defaults: dict) -> argparse.Namespace:
    """Fill unset flags from the config file, then from the defaults."""
    conf = read_config(args.config) if getattr(args, "config", None) else {}
    types = getattr(args, "_types", {})
    known = set(vars(args)) - {"func", "command", "config", "_types"}
    unknown = set(conf) - known
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key, default in defaults.items():
        if getattr(args, key, None) is not None:
            continue
        if key in conf:
            kind = types.get(key) or (type(default) if default is not None else str)
            try:
                val = _coerce(conf[key], kind)
            except ValueError:
                raise UsageError(f"config value for {key!r} is invalid: {conf[key]!r}") from None
            setattr(args, key, val)
        else:
            setattr(args, key, default)
    return args


def _coerce(text: str, kind):
    if kind is bool:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(text)
    return kind(text)


def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "inf" if v == math.inf else repr(v)
    return str(v)


def _write_csv(path: str | None, header: Sequence[str], rows) -> None:
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([_fmt(v) for v in row])
    finally:
        if path:
            fh.close()


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


# ------------------------------------------------------------------ oracle

def cmd_oracle(args) -> int:
    args = _merge(args, {"n": None, "i": None, "out": None})
    if args.n is None:
        raise UsageError("--n is required")
    weights = [args.i] if args.i is not None else list(range(1, args.n + 1))
    for i in weights:
        if not 1 <= i <= args.n:
            raise UsageError(f"hidden weight i={i} must lie in [1, {args.n}]")
    texts = {i: oracle.emit_circuit_text(oracle.build_canonical_circuit(args.n, i)) + "\n" for i in weights}
    if args.out is None:
        for i in weights:
            sys.stdout.write(texts[i])
        return 0
    out = Path(args.out)
    if len(weights) == 1 and "{i}" not in args.out and not out.is_dir():
        out.write_text(texts[weights[0]])
        return 0
    for i in weights:
        target = Path(args.out.format(i=i, n=args.n)) if "{i}" in args.out else out / f"simon{args.n}_hw{i}.txt"
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(texts[i])
    return 0


# ---------------------------------------------------------------- simulate

@dataclass(frozen=True)
class ExperimentConfig:
    n: int
    w: int
    rounds: int
    player: str = "ideal"
    noise: str = "perfect"
    p: float = 1.0
    lam: float = 0.0
    threshold: float | None = None
    max_queries: int | None = None
    seed: int = 0

    def validate(self) -> "ExperimentConfig":
        game.GameConfig(self.n, self.w)
        if self.rounds < 1:
            raise UsageError("rounds must be positive")
        if self.player not in ("ideal", "noisy", "random"):
            raise UsageError(f"unknown player {self.player!r}")
        if self.threshold is not None and not 0 < self.threshold <= 1:
            raise UsageError("threshold must lie in (0, 1]")
        if self.max_queries is not None and self.max_queries < 0:
            raise UsageError("max_queries must be nonnegative")
        self.model()
        return self

    def model(self) -> players.NoiseModel:
        return players.NoiseModel(self.noise, p=self.p, lam=self.lam)


def _play_weight(cfg: ExperimentConfig, i: int, candidates) -> tuple[np.ndarray, np.ndarray]:
    """Queries and correctness for cfg.rounds rounds against the weight-i representative."""
    rng = _rng(cfg.seed, i)
    b = BitString.representative(cfg.n, i)
    if cfg.player == "ideal":
        q = players.ideal_player_batch(b, cfg.w, cfg.rounds, rng)
        return q.astype(np.int64), np.ones(cfg.rounds, dtype=bool)
    if cfg.player == "random":
        N = len(candidates)
        guess = rng.integers(0, N, size=cfg.rounds)
        return np.zeros(cfg.rounds, dtype=np.int64), guess == candidates.index(b)
    res = players.noisy_agent_batch(b, candidates, cfg.model(), cfg.rounds, rng, cfg.threshold, cfg.max_queries)
    return res.queries, res.correct


def run_experiment(cfg: ExperimentConfig) -> tuple[list[tuple], dict]:
    """Per-round rows and the summary for one (n, w) configuration."""
    cfg.validate()
    n, w = cfg.n, cfg.w
    N = count_candidates(n, w)
    candidates = None if cfg.player == "ideal" else enumerate_candidates(n, w)
    penalty = -1 / (N - 1) if N > 1 else -1.0
    rows: list[tuple] = []
    Q, P, per_hw = [], [], []
    mean_score = var_score = 0.0
    for i in range(1, w + 1):
        q, ok = _play_weight(cfg, i, candidates)
        scores = np.where(ok, 1.0, penalty)
        rows.extend((n, w, i, int(a), float(s), int(c)) for a, s, c in zip(q, scores, ok))
        h = math.comb(n, i) / N
        Q.append(float(q.mean()))
        P.append(float(ok.mean()))
        mean_score += h * float(scores.mean())
        var_score += h * h * (float(scores.var(ddof=1)) if len(scores) > 1 else 0.0) / len(scores)
        per_hw.append({"hw": i, "Q": Q[-1], "p": P[-1], "mean_score": float(scores.mean())})
    raw = float(game.nts_weighted(Q, P, n, w)) if N > 1 else 0.0
    se = math.sqrt(var_score)
    informative = N == 1 or mean_score > SIGNIFICANCE * se
    summary = {
        "n": n,
        "w": w,
        "N_w": N,
        "player": cfg.player,
        "rounds_per_hw": cfg.rounds,
        "seed": cfg.seed,
        "per_hw": per_hw,
        "mean_score": mean_score,
        "score_se": se,
        "nts_raw": raw,
        "nts": raw if informative else math.inf,
    }
    return rows, summary


def cmd_simulate(args) -> int:
    args = _merge(
        args,
        {
            "n": None, "w": None, "rounds": 1000, "player": "ideal", "noise": None, "p": 1.0, "lam": 0.0,
            "q": None, "threshold": None, "max_queries": None, "seed": 0, "rounds_out": None, "summary_out": None,
        },
    )
    if args.n is None or args.w is None:
        raise UsageError("--n and --w are required")
    noise = args.noise
    p = args.p
    if args.q is not None:
        noise, p = "constant_p", math.exp(-args.q)
    if noise is None:
        noise = "perfect" if args.player != "noisy" else ("hw_quadratic" if args.lam else "perfect")
    cfg = ExperimentConfig(
        args.n, args.w, args.rounds, args.player, noise, p, args.lam, args.threshold, args.max_queries, args.seed
    )
    rows, summary = run_experiment(cfg)
    if args.rounds_out:
        _write_csv(args.rounds_out, ["n", "w", "hw_b", "queries", "score", "correct"], rows)
    text = json.dumps(statfit.jsonable(summary), indent=2, sort_keys=True) + "\n"
    _emit(text, args.summary_out)
    return 0


# ------------------------------------------------------------------ bounds

def bounds_rows(n_min: int, n_max: int, w: int, q: float | None, heuristic_budget: int, heuristic_max_n: int):
    for n in range(n_min, n_max + 1):
        we = min(w, n)
        N = count_candidates(n, we)
        k, _, lb = game.classical_bounds(N)
        if N == 1:
            lb = 0  # a single candidate needs no queries; the formula value does not apply
        ub = gap = None
        if n <= heuristic_max_n:
            ub = float(game.heuristic_sequence_search(n, we, budget=heuristic_budget).value())
            gap = ub - float(lb)
        iq_lo, iq_hi = players.ideal_bounds(N)
        interp = players.nts_iq_interpolated(n, we)
        q_ub = infotheory.nts_q_upper_bound(n, we, q) if q is not None else None
        yield (n, we, N, k, float(lb), ub, gap, interp, iq_lo, iq_hi, q_ub)


BOUNDS_HEADER = [
    "n", "w", "N_w", "k_min", "nts_c_lower", "nts_c_heuristic", "ub_minus_lb",
    "nts_iq_interp", "nts_iq_lower", "nts_iq_upper", "nts_q_upper",
]


def cmd_bounds(args) -> int:
    args = _merge(
        args, {"n_min": 2, "n_max": None, "w": None, "q": None, "heuristic_budget": 200, "heuristic_max_n": 14, "out": None}
    )
    if args.n_max is None or args.w is None:
        raise UsageError("--n-max and --w are required")
    if not 1 <= args.n_min <= args.n_max or args.w < 1:
        raise UsageError("need 1 <= n-min <= n-max and w >= 1")
    rows = list(bounds_rows(args.n_min, args.n_max, args.w, args.q, args.heuristic_budget, args.heuristic_max_n))
    _write_csv(args.out, BOUNDS_HEADER, rows)
    return 0


# ------------------------------------------------------------------ ingest

def _parse_count_spec(spec: str) -> tuple[str, BitString]:
    path, sep, label = spec.rpartition(":")
    if not sep or not path:
        raise UsageError(f"expected PATH:B for counts input, got {spec!r}")
    return path, BitString.parse(label)


def ingest_counts(specs: Sequence[str], reduce_to: int | None = None) -> tuple[list[dict], list[dict]]:
    """Per-file (n, hw, p, q) and the pooled f(HW) calibration."""
    pq_rows: list[dict] = []
    pooled: dict[tuple[int, int], list[int]] = defaultdict(lambda: [0, 0])
    for spec in specs:
        path, b = _parse_count_spec(spec)
        counts = oracle.read_counts_csv(path)
        if not counts:
            raise DataError(f"{path}: no counts")
        width = len(next(iter(counts)))
        if width not in (b.n, 2 * b.n):
            raise DataError(f"{path}: outcomes have {width} bits but b has {b.n}")
        if reduce_to is not None:
            if width != 2 * b.n:
                raise DataError(f"{path}: reduction needs 2n-bit outcome labels")
            if not b.weight <= reduce_to < b.n:
                raise UsageError(f"--reduce {reduce_to} needs HW(b)={b.weight} <= m < n={b.n}")
            counts = oracle.reduce_counts(counts, reduce_to)
            b = BitString.parse(str(b)[b.n - reduce_to:])
            if b.bits == 0:
                raise DataError(f"{path}: hidden string vanishes after reduction to m={reduce_to}")
            width = 2 * reduce_to
        n = b.n
        data: dict[str, int] = defaultdict(int)
        for key, c in counts.items():
            data[key[:n]] += c
        p, q = infotheory.extract_pq(data, b)
        total = sum(data.values())
        good = sum(c for k, c in data.items() if not (BitString.parse(k).bits & b.bits).bit_count() & 1)
        pooled[(n, b.weight)][0] += good
        pooled[(n, b.weight)][1] += total
        pq_rows.append({"source": path, "n": n, "b": str(b), "hw": b.weight, "p": p, "q": q, "shots": total})
    calib = [
        {"n": n, "hw": hw, "f": good / total, "shots": total} for (n, hw), (good, total) in sorted(pooled.items())
    ]
    return pq_rows, calib


def read_rounds_csv(path: str | Path) -> dict[tuple[int, int], dict[int, tuple[np.ndarray, np.ndarray]]]:
    """Rounds grouped by (n, w) and hidden weight: (queries, correct)."""
    raw: dict[tuple[int, int], dict[int, tuple[list, list]]] = defaultdict(lambda: defaultdict(lambda: ([], [])))
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            need = {"n", "w", "hw_b", "queries", "correct"}
            if reader.fieldnames is None or need - set(reader.fieldnames):
                raise DataError(f"{path}: rounds CSV needs columns {sorted(need)}")
            for line, row in enumerate(reader, start=2):
                try:
                    key = (int(row["n"]), int(row["w"]))
                    hw, qv, ok = int(row["hw_b"]), int(row["queries"]), int(row["correct"])
                except (TypeError, ValueError) as e:
                    raise DataError(f"{path}:{line}: {e}") from None
                if not 1 <= hw <= key[1] <= key[0] or qv < 0 or ok not in (0, 1):
                    raise DataError(f"{path}:{line}: value out of range")
                raw[key][hw][0].append(qv)
                raw[key][hw][1].append(ok)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    return {k: {hw: (np.array(a), np.array(c, dtype=bool)) for hw, (a, c) in v.items()} for k, v in raw.items()}


def rounds_to_datasets(
    rounds, B: int = 100_000, seed: int = 0, folds: int = 10
) -> tuple[dict[int, statfit.ScalingDataset], list[str]]:
    """Bootstrapped NTS per (n, w) from per-round records; returns datasets and warnings."""
    pts: dict[int, list[tuple[float, float, float]]] = defaultdict(list)
    warnings = []
    for (n, w), per_hw in sorted(rounds.items()):
        if set(per_hw) != set(range(1, w + 1)):
            raise DataError(f"n={n}, w={w}: need rounds for every weight 1..{w}")
        rng = _rng(seed, n, w)
        fold_nts = []
        for f in range(folds):
            Q, P = [], []
            for i in range(1, w + 1):
                q, ok = per_hw[i]
                if len(q) < folds:
                    raise DataError(f"n={n}, w={w}, hw={i}: need at least {folds} rounds")
                part = np.array_split(np.arange(len(q)), folds)[f]
                Q.append(float(q[part].mean()))
                P.append(float(ok[part].mean()))
            fold_nts.append(float(game.nts_weighted(Q, P, n, w)))
        if not all(math.isfinite(v) for v in fold_nts):
            warnings.append(f"n={n}, w={w}: NTS is infinite in some fold; point omitted")
            continue
        mean, sd = statfit.bootstrap_nts(fold_nts, B, rng)
        pts[w].append((math.log2(count_candidates(n, w)), mean, sd))
    return {w: statfit.ScalingDataset.from_points(p, w=w) for w, p in pts.items()}, warnings


def cmd_ingest(args) -> int:
    args = _merge(
        args,
        {
            "counts": None, "reduce": None, "pq_out": None, "calibration_out": None, "rounds": None,
            "dataset_out": None, "bootstrap_B": 100_000, "seed": 0,
        },
    )
    if not args.counts and not args.rounds:
        raise UsageError("give --counts PATH:B and/or --rounds PATH")
    if args.counts:
        specs = args.counts if isinstance(args.counts, list) else [s for s in args.counts.split(",") if s]
        pq_rows, calib = ingest_counts(specs, args.reduce)
        _write_csv(args.pq_out, ["source", "n", "b", "hw", "p", "q", "shots"], [list(r.values()) for r in pq_rows])
        _write_csv(args.calibration_out, ["n", "hw", "f", "shots"], [list(r.values()) for r in calib])
    if args.rounds:
        paths = args.rounds if isinstance(args.rounds, list) else [s for s in args.rounds.split(",") if s]
        merged: dict = {}
        for path in paths:
            for key, per_hw in read_rounds_csv(path).items():
                if key in merged:
                    raise DataError(f"{path}: n={key[0]}, w={key[1]} appears in more than one file")
                merged[key] = per_hw
        datasets, warnings = rounds_to_datasets(merged, args.bootstrap_B, args.seed)
        for msg in warnings:
            print(f"warning: {msg}", file=sys.stderr)
        if args.dataset_out:
            statfit.write_datasets_csv(datasets, args.dataset_out)
        else:
            rows = [(w, x, y, s) for w, ds in sorted(datasets.items()) for x, y, s in zip(ds.x, ds.y, ds.sigma)]
            _write_csv(None, ["w", "log2Nw", "nts_mean", "nts_std"], rows)
    return 0


# --------------------------------------------------------------------- fit

def cmd_fit(args) -> int:
    args = _merge(
        args,
        {"data": None, "models": "polylog,poly", "drop_first": 0, "bootstrap_B": 100_000, "seed": 0,
         "json_out": None, "markdown_out": None},
    )
    if not args.data:
        raise UsageError("a dataset CSV is required")
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    for m in models:
        if m not in statfit.MODELS:
            raise UsageError(f"unknown model {m!r}")
    with open(args.data, newline="") as fh:
        header = next(csv.reader(fh), [])
    if "hw_b" in header:
        datasets, warnings = rounds_to_datasets(read_rounds_csv(args.data), args.bootstrap_B, args.seed)
        for msg in warnings:
            print(f"warning: {msg}", file=sys.stderr)
    else:
        datasets = statfit.read_datasets_csv(args.data)
    fits = statfit.fit_all(datasets, models, args.drop_first)
    verdict = None
    if "polylog" in models and "poly" in models:
        verdict = statfit.model_select(fits)
    _emit(statfit.reports_to_json(fits, verdict) + "\n", args.json_out)
    if verdict is not None:
        _emit(verdict.to_markdown(), args.markdown_out)
    return 0


# ------------------------------------------------------------------ report

def cmd_report(args) -> int:
    args = _merge(args, {"measures": None, "case": None, "out": None})
    tables = statfit.read_measures_csv(args.measures) if args.measures else statfit.load_published_measures()
    cases = [args.case] if args.case else list(tables)
    parts = []
    for case in cases:
        if case not in tables:
            raise DataError(f"unknown case {case!r}; available: {', '.join(tables)}")
        parts.append(f"## {case}\n\n" + statfit.model_select(tables[case]).to_markdown())
    _emit("\n".join(parts), args.out)
    return 0


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hwsimon", description="Weight-restricted Simon game toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_, fn):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="flat key=value file; flags override it")
        p.set_defaults(func=fn)
        return p

    p = add("oracle", "emit the CNOT layout of the canonical f0 circuit", cmd_oracle)
    p.add_argument("--n", type=int)
    p.add_argument("--i", type=int, help="hidden weight; all weights 1..n when omitted")
    p.add_argument("--out", help="file, directory, or template containing {i}")

    p = add("simulate", "play rounds against per-weight representatives", cmd_simulate)
    p.add_argument("--n", type=int)
    p.add_argument("--w", type=int)
    p.add_argument("--rounds", type=int, help="rounds per hidden weight")
    p.add_argument("--player", choices=["ideal", "noisy", "random"])
    p.add_argument("--noise", choices=["perfect", "constant_p", "hw_quadratic"])
    p.add_argument("--p", type=float)
    p.add_argument("--lam", "--lambda", dest="lam", type=float)
    p.add_argument("--q", type=float, help="constant noise with p = exp(-q)")
    p.add_argument("--threshold", type=float)
    p.add_argument("--max-queries", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--rounds-out")
    p.add_argument("--summary-out")

    p = add("bounds", "tabulate classical and quantum query bounds", cmd_bounds)
    p.add_argument("--n-min", type=int)
    p.add_argument("--n-max", type=int)
    p.add_argument("--w", type=int)
    p.add_argument("--q", type=float)
    p.add_argument("--heuristic-budget", type=int)
    p.add_argument("--heuristic-max-n", type=int)
    p.add_argument("--out")

    p = add("ingest", "turn counts or round records into calibration tables and fit datasets", cmd_ingest)
    p.add_argument("--counts", action="append", metavar="PATH:B")
    p.add_argument("--reduce", type=int, metavar="M")
    p.add_argument("--pq-out")
    p.add_argument("--calibration-out")
    p.add_argument("--rounds", action="append", metavar="PATH")
    p.add_argument("--dataset-out")
    p.add_argument("--bootstrap-B", dest="bootstrap_B", type=int)
    p.add_argument("--seed", type=int)

    p = add("fit", "fit scaling models and vote", cmd_fit)
    p.add_argument("data", nargs="?")
    p.add_argument("--models")
    p.add_argument("--drop-first", type=int, nargs="?", const=4)
    p.add_argument("--bootstrap-B", dest="bootstrap_B", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--json-out")
    p.add_argument("--markdown-out")

    p = add("report", "majority-vote tables from fit statistics", cmd_report)
    p.add_argument("--measures", help="CSV of per-w statistics; defaults to the bundled device tables")
    p.add_argument("--case")
    p.add_argument("--out")
    for p in sub.choices.values():
        # config values are coerced with the same converters as the flags
        p.set_defaults(_types={a.dest: a.type for a in p._actions if a.type is not None})
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SimonError as e:
        print(f"hwsimon {args.command}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"hwsimon {args.command}: {e}", file=sys.stderr)
        return DataError.exit_code
    except MemoryError:
        print(f"hwsimon {args.command}: out of memory", file=sys.stderr)
        return ResourceError.exit_code


if __name__ == "__main__":
    sys.exit(main())
