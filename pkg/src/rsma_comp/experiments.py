"""Monte Carlo pipelines: rate regions by weight sweep and sum rate versus SNR.

Each realization is an independent task (its own generator, its own warm-start
chain along the weight sweep), so serial and parallel runs reduce to the same
tables. Per-scheme solves try several starting points and keep the best:

* the scheme's own initialisation,
* the same scheme's solution at the previous weight point (region sweeps),
* for RS and 1-layer RS, every already-solved restriction embedded with zeros.

The last item is what makes the nesting RS >= 1-layer RS >= MU-LP and
RS >= SC-SIC hold per draw and weight: AO is monotone from its start.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import channels, cone, schemes, wmmse
from .model import InvalidInstanceError, ProblemInstance
from .rates import evaluate

__all__ = [
    "ConfigError",
    "UnsupportedRegionError",
    "ExperimentConfig",
    "RegionPoint",
    "SchemeOutcome",
    "ExperimentResult",
    "DEFAULT_WEIGHT_EXPONENTS",
    "REFERENCE_SNR_DB",
    "REFERENCE_QOS",
    "weight_grid",
    "parse_grid",
    "convex_hull_2d",
    "hull_dominates",
    "hull_distance",
    "hull_gap",
    "sweep_chains",
    "monte_carlo_average",
    "solve_schemes",
    "rate_region",
    "sum_rate_vs_snr",
    "run",
]

DEFAULT_WEIGHT_EXPONENTS = tuple([-3.0] + [round(-1.0 + 0.05 * i, 10) for i in range(41)] + [3.0])
REFERENCE_SNR_DB = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
REFERENCE_QOS = (0.001, 0.01, 0.03, 0.08, 0.1, 0.1, 0.1)
Z95 = 1.96

# restrictions whose solutions seed each scheme
RESTRICTIONS = {
    "1lrs": ("mulp",),
    "rs": ("mulp", "1lrs", "scsic", "scsic-group"),
}
SOLVE_ORDER = ("mulp", "scsic", "scsic-group", "1lrs", "rs")


class ConfigError(ValueError):
    pass


class UnsupportedRegionError(ConfigError):
    pass


def weight_grid(exponents=DEFAULT_WEIGHT_EXPONENTS) -> List[Tuple[float, np.ndarray]]:
    """``(x, u)`` pairs with ``u = (1, 10^x)``."""
    return [(float(x), np.array([1.0, 10.0 ** x])) for x in exponents]


def parse_grid(text) -> Tuple[float, ...]:
    """``"default"``, a comma list, or ``start:stop:step`` (stop inclusive)."""
    text = str(text).strip()
    if text == "default":
        return DEFAULT_WEIGHT_EXPONENTS
    if ":" in text and "," not in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
            raise ConfigError(f"bad grid range {text!r}; expected start:stop:step")
        n = int(math.floor((parts[1] - parts[0]) / parts[2] + 1e-9)) + 1
        return tuple(round(parts[0] + i * parts[2], 10) for i in range(n))
    try:
        vals = tuple(float(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"bad grid {text!r}") from None
    if not vals:
        raise ConfigError("empty weight grid")
    return vals


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment run."""

    kind: str = "region"                 # region | sumrate
    topology: str = "two-cell"
    alpha: float = 1.0
    beta: float = 1.0
    snr_db: Tuple[float, ...] = (20.0,)
    schemes: Tuple[str, ...] = ("rs", "1lrs", "mulp", "scsic")
    realizations: int = 25
    seed: int = 0
    weight_exponents: Tuple[float, ...] = DEFAULT_WEIGHT_EXPONENTS
    qos: Tuple[float, ...] = (0.0,)
    tolerance: float = wmmse.DEFAULT_TOLERANCE
    max_iters: int = wmmse.DEFAULT_MAX_ITERS
    warm_start: bool = True

    def __post_init__(self):
        for name in ("snr_db", "schemes", "weight_exponents", "qos"):
            v = getattr(self, name)
            if isinstance(v, (str, bytes)):
                v = (v,)
            object.__setattr__(self, name, tuple(v))
        object.__setattr__(self, "snr_db", tuple(float(v) for v in self.snr_db))
        object.__setattr__(self, "qos", tuple(float(v) for v in self.qos))
        object.__setattr__(self, "weight_exponents", tuple(float(v) for v in self.weight_exponents))
        self.validate()

    @property
    def K(self):
        return 2 if self.topology == "two-cell" else 3

    @property
    def M(self):
        return self.K

    def validate(self):
        if self.kind not in ("region", "sumrate"):
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.topology not in channels.TOPOLOGIES:
            raise ConfigError(f"unknown topology {self.topology!r}")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {v}")
        if not self.snr_db:
            raise ConfigError("SNR grid is empty")
        if not all(math.isfinite(s) for s in self.snr_db):
            raise ConfigError("SNR values must be finite")
        if self.realizations < 1:
            raise ConfigError("realization count must be at least 1")
        if not self.schemes:
            raise ConfigError("no schemes selected")
        for s in self.schemes:
            if s not in schemes.SCHEME_NAMES:
                raise ConfigError(f"unknown scheme {s!r}; expected one of {schemes.SCHEME_NAMES}")
        if len(set(self.schemes)) != len(self.schemes):
            raise ConfigError("duplicate scheme names")
        if len(self.qos) not in (1, len(self.snr_db)):
            raise ConfigError(f"QoS schedule has {len(self.qos)} entries for "
                              f"{len(self.snr_db)} SNR points")
        if any(q < 0 for q in self.qos):
            raise ConfigError("QoS thresholds must be nonnegative")
        if self.kind == "region":
            if self.K != 2:
                raise UnsupportedRegionError("rate regions need a two-user topology")
            if not self.weight_exponents:
                raise ConfigError("weight grid is empty")
        if not self.tolerance > 0:
            raise ConfigError("tolerance must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be at least 1")

    def qos_at(self, i):
        return self.qos[0] if len(self.qos) == 1 else self.qos[i]

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        return cls(**d)


@dataclass
class SchemeOutcome:
    """Best solution of one scheme variant (decoding order) on one instance."""

    scheme: str
    variant: str
    solution: wmmse.Solution
    start: str                     # which candidate start won

    @property
    def wsr(self):
        return self.solution.wsr if self.solution.feasible else -math.inf

    @property
    def feasible(self):
        return self.solution.feasible


@dataclass
class RegionPoint:
    scheme: str
    variant: str
    u2_exponent: float
    weights: np.ndarray
    rates: np.ndarray
    realization_count: int
    infeasible_count: int = 0
    halfwidth: Optional[float] = None


def _layout_key(layout):
    return (layout.streams, layout.describe_orders(), layout.allocation_pairs)


def _best(outcomes):
    best = None
    for o in outcomes:
        if best is None or (o.feasible and (not best.feasible or o.wsr > best.wsr)):
            best = o
    return best


def solve_schemes(names, instance: ProblemInstance, channel, previous=None,
                  tolerance=wmmse.DEFAULT_TOLERANCE, max_iters=wmmse.DEFAULT_MAX_ITERS
                  ) -> Dict[str, List[SchemeOutcome]]:
    """Solve each named scheme on one instance, every decoding-order variant.

    ``previous`` maps ``(scheme, variant)`` to a warm-start solution, which
    replaces the scheme's own initialisation when present. Returns
    ``{scheme: [outcome per variant]}``; restrictions are solved first so the
    larger schemes can start from them.
    """
    K = instance.K
    previous = previous or {}
    memo = {}
    results: Dict[str, List[SchemeOutcome]] = {}

    def run(layout, key, **kw):
        k = (_layout_key(layout), key)
        if k not in memo:
            memo[k] = wmmse.ao_solve(instance, layout, channel, tolerance=tolerance,
                                     max_iters=max_iters, **kw)
        return memo[k]

    for name in SOLVE_ORDER:
        if name not in names:
            continue
        outs = []
        for label, layout in schemes.scheme_variants(name, K):
            prev = previous.get((name, label))
            if prev is not None and prev.feasible:
                tries = [("warm", run(layout, ("warm", id(prev)), init=prev.precoders))]
            else:
                tries = [("init", run(layout, "init"))]
            for r in RESTRICTIONS.get(name, ()):
                if r not in results:
                    continue
                seed = _best(results[r])
                if not seed.feasible:
                    continue
                try:
                    init = seed.solution.precoders.embed(layout)
                except (KeyError, InvalidInstanceError, ValueError):
                    continue
                tries.append((r, run(layout, ("from", r, seed.variant), init=init)))
            best_start, best_sol = tries[0]
            for start, sol in tries[1:]:
                if sol.feasible and (not best_sol.feasible or sol.wsr > best_sol.wsr):
                    best_start, best_sol = start, sol
            outs.append(SchemeOutcome(name, label, best_sol, best_start))
        results[name] = outs
    return results


# --- geometry ------------------------------------------------------------------

def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull_2d(points) -> np.ndarray:
    """Vertices of the upper-right (Pareto) boundary of the convex hull.

    Returns an ``(h, 2)`` array ordered by increasing first coordinate; these
    are the extreme points of ``conv(points) - R_+^2``.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise ValueError("need at least one point")
    uniq = sorted(set(map(tuple, pts)))
    if len(uniq) == 1:
        return np.array(uniq)
    upper = []
    for p in reversed(uniq):           # right to left gives the upper chain
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    upper = upper[::-1]                # left to right
    ys = [p[1] for p in upper]
    top = max(i for i, y in enumerate(ys) if y == max(ys))
    xs = [p[0] for p in upper]
    right = max(i for i, x in enumerate(xs) if x == max(xs))
    return np.array(upper[top:right + 1])


def _down_closed_normals(H):
    normals = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    for a, b in zip(H[:-1], H[1:]):
        n = np.array([a[1] - b[1], b[0] - a[0]])
        normals.append(n / np.linalg.norm(n))
    return normals


def _segment_distance(q, a, b):
    ab = b - a
    t = 0.0 if not ab.any() else float(np.clip((q - a) @ ab / (ab @ ab), 0.0, 1.0))
    return float(np.linalg.norm(q - (a + t * ab)))


def hull_distance(outer, q) -> float:
    """Euclidean distance from ``q`` to ``conv(outer) - R_+^2`` (0 inside)."""
    H = convex_hull_2d(outer)
    q = np.asarray(q, dtype=float)
    if all(n @ q <= np.max(H @ n) + 1e-12 for n in _down_closed_normals(H)):
        return 0.0
    # boundary: horizontal ray left of the top vertex, the Pareto chain,
    # vertical ray below the rightmost vertex
    top, right = H[0], H[-1]
    d = min(_segment_distance(q, a, b) for a, b in zip(H[:-1], H[1:])) if len(H) > 1 \
        else float(np.linalg.norm(q - top))
    if q[0] <= top[0]:
        d = min(d, abs(q[1] - top[1]))
    if q[1] <= right[1]:
        d = min(d, abs(q[0] - right[0]))
    return d


def hull_gap(outer, inner) -> float:
    """Largest distance from a vertex of ``inner``'s hull to ``outer``'s down-closed hull."""
    return max(hull_distance(outer, q) for q in convex_hull_2d(inner))


def hull_dominates(outer, inner, tol=1e-2) -> bool:
    """Whether the down-closed hull of ``outer`` contains that of ``inner`` up to ``tol``.

    Distance to a convex set is convex, so checking the vertices of
    ``inner``'s boundary covers every point on it.
    """
    return hull_gap(outer, inner) <= tol


def monte_carlo_average(values) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Mean and normal-approximation 95% half-width along axis 0.

    The half-width is ``None`` for a single realization.
    """
    v = np.asarray(values, dtype=float)
    if v.shape[0] == 0:
        raise ValueError("need at least one realization")
    mean = v.mean(axis=0)
    if v.shape[0] == 1:
        return mean, None
    return mean, Z95 * v.std(axis=0, ddof=1) / math.sqrt(v.shape[0])


# --- per-realization tasks ----------------------------------------------------------

@dataclass
class _Record:
    """Outcome of one scheme variant on one realization at one grid point."""

    realization: int
    scheme: str
    variant: str
    point: float                   # u2 exponent or SNR
    status: str
    feasible: bool
    wsr: float
    rates: Tuple[float, ...]
    iterations: int
    start: str
    best: bool = False             # best variant of its scheme at this point
    solution: Optional[wmmse.Solution] = field(default=None, repr=False)


def _records(index, point, results, keep):
    out = []
    for name, outs in results.items():
        best = _best(outs)
        for o in outs:
            sol = o.solution
            out.append(_Record(index, name, o.variant, point, sol.status, sol.feasible,
                               sol.wsr if sol.feasible else float("nan"),
                               tuple(float(r) for r in sol.report.totals),
                               sol.iterations, o.start, o is best, sol if keep else None))
    return out


def sweep_chains(exponents):
    """Warm-start chains: from the grid point nearest ``x = 0`` outwards, both ways.

    Moving towards the extremes, a user whose weight vanishes may lose all
    power; walking outwards means such a zero-power stream is never carried
    back towards balanced weights.
    """
    xs = sorted(set(exponents))
    c = min(range(len(xs)), key=lambda i: (abs(xs[i]), xs[i]))
    up = xs[c:]
    down = xs[c::-1]
    return [up, down[1:]], xs[c]


def _region_task(args):
    config, index, keep = args
    ch = channels.draw(config.topology, config.alpha, config.beta, config.seed, index)
    (up, down), centre = sweep_chains(config.weight_exponents)
    done = {}
    for chain, start in ((up, {}), (down, None)):
        previous = start
        for x in chain:
            if previous is None:
                previous = done[centre][1]
            u = np.array([1.0, 10.0 ** x])
            inst = ProblemInstance.from_snr(config.M, config.K, config.snr_db[0],
                                            config.qos_at(0), u)
            res = solve_schemes(config.schemes, inst, ch,
                                previous if config.warm_start else None,
                                config.tolerance, config.max_iters)
            previous = {(o.scheme, o.variant): o.solution for outs in res.values() for o in outs}
            done[x] = (res, previous)
    out = []
    for x in config.weight_exponents:
        out.extend(_records(index, x, done[x][0], keep))
    return out


def _sumrate_task(args):
    config, index, keep = args
    ch = channels.draw(config.topology, config.alpha, config.beta, config.seed, index)
    out = []
    for i, snr in enumerate(config.snr_db):
        inst = ProblemInstance.from_snr(config.M, config.K, snr, config.qos_at(i), 1.0)
        res = solve_schemes(config.schemes, inst, ch, None, config.tolerance, config.max_iters)
        out.extend(_records(index, snr, res, keep))
    return out


def _map(fn, tasks, threads):
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    import multiprocessing as mp
    with mp.get_context("spawn").Pool(min(threads, len(tasks))) as pool:
        return pool.map(fn, tasks, chunksize=1)


# --- results ---------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: List[_Record]
    rows: List[dict]
    hulls: Dict[str, np.ndarray] = field(default_factory=dict)
    points: List[RegionPoint] = field(default_factory=list)

    def scheme_rows(self, scheme):
        return [r for r in self.rows if r["scheme"] == scheme]

    def best_records(self, scheme, point=None):
        return [r for r in self.records if r.scheme == scheme and r.best
                and (point is None or r.point == point)]

    # CSV writers
    def results_csv(self):
        K = self.config.K
        cols = (["scheme", "alpha", "beta", "snr_db", "u2_exponent", "realization_count"]
                + [f"rate_user_{k}" for k in range(1, K + 1)]
                + ["sum_rate", "halfwidth", "decoding_order", "infeasible_count"])
        return _csv(cols, self.rows)

    def hull_csv(self):
        cols = ["scheme", "vertex", "rate_user_1", "rate_user_2"]
        rows = []
        for name in self.config.schemes:
            if name not in self.hulls:
                continue
            for i, (a, b) in enumerate(self.hulls[name]):
                rows.append(dict(scheme=name, vertex=i, rate_user_1=a, rate_user_2=b))
        return _csv(cols, rows)

    def realizations_csv(self):
        K = self.config.K
        key = "u2_exponent" if self.config.kind == "region" else "snr_db"
        cols = (["realization", "scheme", "decoding_order", key, "status", "feasible", "best",
                 "start", "iterations", "wsr"] + [f"rate_user_{k}" for k in range(1, K + 1)])
        rows = []
        for r in self.records:
            row = dict(realization=r.realization, scheme=r.scheme, decoding_order=r.variant,
                       status=r.status, feasible=int(r.feasible), best=int(r.best),
                       start=r.start, iterations=r.iterations, wsr=r.wsr)
            row[key] = r.point
            for k, v in enumerate(r.rates, 1):
                row[f"rate_user_{k}"] = v
            rows.append(row)
        return _csv(cols, rows)

    def manifest(self):
        from . import __version__
        return {
            "library": "rsma_comp",
            "version": __version__,
            "config": self.config.to_dict(),
            "seed": self.config.seed,
            "tolerances": {
                "ao_tolerance": self.config.tolerance,
                "ao_max_iters": self.config.max_iters,
                "cone_feastol": cone.FEASTOL,
                "cone_reltol": cone.RELTOL,
                "cone_max_iters": cone.MAX_ITERS,
                "monotone_slack": wmmse.MONOTONE_SLACK,
            },
            "files": self.file_names(),
        }

    def file_names(self):
        names = ["results.csv", "realizations.csv", "manifest.json"]
        if self.config.kind == "region":
            names.insert(1, "hull.csv")
        return names

    def write(self, outdir):
        os.makedirs(outdir, exist_ok=True)
        files = {"results.csv": self.results_csv(), "realizations.csv": self.realizations_csv()}
        if self.config.kind == "region":
            files["hull.csv"] = self.hull_csv()
        for name, text in files.items():
            with open(os.path.join(outdir, name), "w", newline="") as fh:
                fh.write(text)
        with open(os.path.join(outdir, "manifest.json"), "w") as fh:
            json.dump(self.manifest(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return [os.path.join(outdir, n) for n in self.file_names()]


def _fmt(v):
    if v is None:
        return "NA"
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "NA"
        return "%.9g" % (v + 0.0)
    return str(v)


def _csv(cols, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in cols])
    return buf.getvalue()


def _summary_row(config, scheme, variant, point, recs):
    K = config.K
    ok = [r for r in recs if r.feasible]
    row = dict(scheme=scheme, alpha=config.alpha, beta=config.beta,
               decoding_order=variant, infeasible_count=len(recs) - len(ok),
               realization_count=len(ok))
    if config.kind == "region":
        row["snr_db"] = config.snr_db[0]
        row["u2_exponent"] = point
    else:
        row["snr_db"] = point
        row["u2_exponent"] = None
    if ok:
        rates = np.array([r.rates for r in ok])
        mean, _ = monte_carlo_average(rates)
        smean, shw = monte_carlo_average(rates.sum(axis=1))
        for k in range(K):
            row[f"rate_user_{k + 1}"] = float(mean[k])
        row["sum_rate"] = float(smean)
        row["halfwidth"] = None if shw is None else float(shw)
    else:
        for k in range(K):
            row[f"rate_user_{k + 1}"] = None
        row["sum_rate"] = None
        row["halfwidth"] = None
    return row, (np.array([row[f"rate_user_{k + 1}"] for k in range(K)]) if ok else None)


def _collect(config, per_task):
    records = [r for task in per_task for r in task]
    records.sort(key=lambda r: (r.realization,))
    return records


def rate_region(config: ExperimentConfig, threads=1, keep_solutions=False) -> ExperimentResult:
    """Average rate pairs per (scheme, decoding order, weight) and hull them per scheme.

    Points are averaged across realizations first and the hull is taken over
    all weights and decoding orders of a scheme second.
    """
    if config.kind != "region":
        config = ExperimentConfig(**{**config.to_dict(), "kind": "region"})
    tasks = [(config, i, keep_solutions) for i in range(config.realizations)]
    records = _collect(config, _map(_region_task, tasks, threads))
    rows, points, hulls = [], [], {}
    for name in config.schemes:
        variants = [lab for lab, _ in schemes.scheme_variants(name, config.K)]
        pts = []
        for x, u in weight_grid(config.weight_exponents):
            for lab in variants:
                recs = [r for r in records if r.scheme == name and r.variant == lab and r.point == x]
                row, mean = _summary_row(config, name, lab, x, recs)
                rows.append(row)
                if mean is not None:
                    pts.append(mean)
                    points.append(RegionPoint(name, lab, x, u, mean, row["realization_count"],
                                              row["infeasible_count"], row["halfwidth"]))
        if pts:
            hulls[name] = convex_hull_2d(np.array(pts))
    return ExperimentResult(config, records, rows, hulls, points)


def sum_rate_vs_snr(config: ExperimentConfig, threads=1, keep_solutions=False) -> ExperimentResult:
    """Average, per scheme and SNR, the sum rate of the best decoding order of each draw."""
    if config.kind != "sumrate":
        config = ExperimentConfig(**{**config.to_dict(), "kind": "sumrate"})
    tasks = [(config, i, keep_solutions) for i in range(config.realizations)]
    records = _collect(config, _map(_sumrate_task, tasks, threads))
    rows = []
    for name in config.schemes:
        for snr in config.snr_db:
            recs = [r for r in records if r.scheme == name and r.point == snr and r.best]
            row, _ = _summary_row(config, name, "best", snr, recs)
            rows.append(row)
    return ExperimentResult(config, records, rows)


def run(config: ExperimentConfig, threads=1, keep_solutions=False) -> ExperimentResult:
    if config.kind == "region":
        return rate_region(config, threads, keep_solutions)
    return sum_rate_vs_snr(config, threads, keep_solutions)


def verify_records(config: ExperimentConfig, result: ExperimentResult, tol=1e-6) -> float:
    """Largest deviation between stored rates and a fresh rate-engine evaluation.

    Needs ``keep_solutions=True``; feasible records only.
    """
    worst = 0.0
    for r in result.records:
        if not r.feasible or r.solution is None:
            continue
        sol = r.solution
        ch = channels.draw(config.topology, config.alpha, config.beta, config.seed, r.realization)
        rep = evaluate(sol.layout, sol.precoders, ch, sol.allocation,
                       sol.report.weights, 1.0)
        worst = max(worst, float(np.max(np.abs(rep.totals - np.array(r.rates)))))
    return worst
