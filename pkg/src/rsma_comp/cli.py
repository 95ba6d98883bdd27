"""Command-line front end.

Subcommands::

    rsma-comp solve          one channel draw, one weight vector
    rsma-comp region         two-user rate region by weight sweep
    rsma-comp sumrate        sum rate versus SNR
    rsma-comp dump-channels  write the channel draws of an experiment
    rsma-comp replay         rerun whatever a manifest.json describes

Every flag is validated before any computation. On failure a one-line JSON
error record goes to stderr and the exit status is nonzero (2 for bad
arguments, 1 for run-time failures).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import re
import sys
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__, channels, experiments, schemes
from .experiments import ConfigError, ExperimentConfig
from .model import InvalidInstanceError, ProblemInstance

__all__ = ["CliConfig", "CliError", "parse_args", "run", "main", "THREADS_ENV"]

THREADS_ENV = "RSMA_COMP_THREADS"
_NUMERIC = re.compile(r"^-[\d.][\d.,:eE+-]*$")
log = logging.getLogger(__name__)


class CliError(Exception):
    """Bad command line; ``flag`` names the offending option when known."""

    def __init__(self, message, flag=None):
        super().__init__(message)
        self.flag = flag

    def record(self):
        return {"error": "usage", "flag": self.flag, "message": str(self)}


@dataclass
class CliConfig:
    subcommand: str
    experiment: Optional[ExperimentConfig] = None
    output: str = "."
    threads: int = 1
    verbosity: int = 0
    # solve only
    weights: Optional[tuple] = None
    realization: int = 0
    manifest: Optional[dict] = field(default=None, repr=False)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        m = re.search(r"argument (\S+?):", message)
        flag = m.group(1).split("/")[-1] if m else None
        if flag is None and "unrecognized arguments:" in message:
            flag = message.split("unrecognized arguments:")[1].split()[0]
        raise CliError(message, flag)


def _floats(text, flag):
    try:
        vals = tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise CliError(f"{flag}: expected comma-separated numbers, got {text!r}", flag) from None
    if not vals:
        raise CliError(f"{flag}: empty list", flag)
    if not all(math.isfinite(v) for v in vals):
        raise CliError(f"{flag}: values must be finite", flag)
    return vals


def _common(p, default_schemes, snr_default):
    p.add_argument("--topology", default="two-cell", choices=channels.TOPOLOGIES)
    p.add_argument("--alpha", default="1.0")
    p.add_argument("--beta", default="1.0")
    p.add_argument("--snr-db", default=snr_default)
    p.add_argument("--schemes", default=default_schemes)
    p.add_argument("--qos", default="0")
    p.add_argument("--seed", default="0")
    p.add_argument("--tolerance", default=str(experiments.wmmse.DEFAULT_TOLERANCE))
    p.add_argument("--max-iters", default=str(experiments.wmmse.DEFAULT_MAX_ITERS))
    p.add_argument("--output", default=".", help="output directory")
    p.add_argument("--threads", default=None,
                   help=f"worker processes (falls back to ${THREADS_ENV}, then 1)")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser():
    p = _Parser(prog="rsma-comp", description="Rate-splitting CoMP precoder experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="solve one instance for each scheme")
    _common(s, "rs,1lrs,mulp,scsic", "20")
    s.add_argument("--weights", default=None, help="comma list of user weights (default all 1)")
    s.add_argument("--realization", default="0", help="channel draw index")

    for name, helptext, snr in (("region", "rate region by weight sweep", "20"),
                                ("sumrate", "sum rate versus SNR", "0,5,10,15,20,25,30")):
        r = sub.add_parser(name, help=helptext)
        _common(r, "rs,1lrs,mulp,scsic", snr)
        r.add_argument("--realizations", default="25")
        if name == "region":
            r.add_argument("--weights-grid", default="default",
                           help='"default", a comma list of exponents, or start:stop:step')

    d = sub.add_parser("dump-channels", help="write the channel draws as CSV")
    d.add_argument("--topology", default="two-cell", choices=channels.TOPOLOGIES)
    d.add_argument("--alpha", default="1.0")
    d.add_argument("--beta", default="1.0")
    d.add_argument("--realizations", default="25")
    d.add_argument("--seed", default="0")
    d.add_argument("--output", default=".", help="output directory")
    d.add_argument("-v", "--verbose", action="count", default=0)

    rp = sub.add_parser("replay", help="rerun the experiment described by a manifest")
    rp.add_argument("manifest")
    rp.add_argument("--output", default=".", help="output directory")
    rp.add_argument("--threads", default=None)
    rp.add_argument("-v", "--verbose", action="count", default=0)
    return p


def _int(text, flag, lo=None):
    try:
        v = int(str(text))
    except ValueError:
        raise CliError(f"{flag}: expected an integer, got {text!r}", flag) from None
    if lo is not None and v < lo:
        raise CliError(f"{flag}: must be at least {lo}, got {v}", flag)
    return v


def _float(text, flag):
    return _floats(text, flag)[0] if "," not in str(text) else _scalar_error(flag, text)


def _scalar_error(flag, text):
    raise CliError(f"{flag}: expected a single number, got {text!r}", flag)


def _unit(text, flag):
    v = _float(text, flag)
    if not 0.0 < v <= 1.0:
        raise CliError(f"{flag}: must lie in (0, 1], got {v}", flag)
    return v


def _threads(text):
    if text is None:
        text = os.environ.get(THREADS_ENV)
        if text is None or not text.strip():
            return 1
        return _int(text, THREADS_ENV, 1)
    return _int(text, "--threads", 1)


def _scheme_list(text):
    names = tuple(s.strip() for s in str(text).split(",") if s.strip())
    if not names:
        raise CliError("--schemes: empty list", "--schemes")
    for s in names:
        if s not in schemes.SCHEME_NAMES:
            raise CliError(f"--schemes: unknown scheme {s!r}; expected one of "
                           f"{', '.join(schemes.SCHEME_NAMES)}", "--schemes")
    if len(set(names)) != len(names):
        raise CliError("--schemes: duplicate scheme names", "--schemes")
    return names


def _experiment(a, kind):
    snr = _floats(a.snr_db, "--snr-db")
    qos = _floats(a.qos, "--qos")
    if any(q < 0 for q in qos):
        raise CliError("--qos: thresholds must be nonnegative", "--qos")
    if len(qos) not in (1, len(snr)):
        raise CliError(f"--qos: schedule has {len(qos)} entries for {len(snr)} SNR points",
                       "--qos")
    if kind in ("region", "solve") and len(snr) != 1:
        raise CliError("--snr-db: a single SNR is expected here", "--snr-db")
    tol = _float(a.tolerance, "--tolerance")
    if not tol > 0:
        raise CliError("--tolerance: must be positive", "--tolerance")
    kw = dict(
        kind="sumrate" if kind == "sumrate" else "region",
        topology=a.topology,
        alpha=_unit(a.alpha, "--alpha"),
        beta=_unit(a.beta, "--beta"),
        snr_db=snr,
        schemes=_scheme_list(a.schemes),
        realizations=_int(getattr(a, "realizations", "1"), "--realizations", 1),
        seed=_int(a.seed, "--seed", 0),
        qos=qos,
        tolerance=tol,
        max_iters=_int(a.max_iters, "--max-iters", 1),
    )
    if kind == "region":
        try:
            kw["weight_exponents"] = experiments.parse_grid(a.weights_grid)
        except ConfigError as e:
            raise CliError(f"--weights-grid: {e}", "--weights-grid") from None
    elif kind == "solve":
        kw["kind"] = "sumrate"        # no two-user restriction for single solves
    try:
        return ExperimentConfig(**kw)
    except ConfigError as e:
        raise CliError(str(e), _flag_for(str(e))) from None


def _flag_for(message):
    for key, flag in (("rate regions", "--topology"), ("alpha", "--alpha"), ("beta", "--beta"),
                      ("scheme", "--schemes"), ("QoS", "--qos"), ("SNR", "--snr-db"),
                      ("weight grid", "--weights-grid")):
        if key in message:
            return flag
    return None


def _join_negative(argv):
    """Fold ``--flag -5,0`` into ``--flag=-5,0`` so negative lists are not read as options."""
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if (tok.startswith("--") and "=" not in tok and i + 1 < len(argv)
                and _NUMERIC.match(argv[i + 1])):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def parse_args(argv: Optional[Sequence[str]] = None) -> CliConfig:
    """Parse and fully validate ``argv``; raises :class:`CliError` on bad input."""
    a = build_parser().parse_args(_join_negative(sys.argv[1:] if argv is None else list(argv)))
    cmd = a.subcommand
    if cmd == "replay":
        try:
            with open(a.manifest) as fh:
                manifest = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise CliError(f"cannot read manifest: {e}", "manifest") from None
        cfg = CliConfig(cmd, output=a.output, threads=_threads(a.threads),
                        verbosity=a.verbose, manifest=manifest)
        _replay_config(cfg)
        return cfg
    if cmd == "dump-channels":
        exp = ExperimentConfig(kind="sumrate", topology=a.topology,
                               alpha=_unit(a.alpha, "--alpha"), beta=_unit(a.beta, "--beta"),
                               realizations=_int(a.realizations, "--realizations", 1),
                               seed=_int(a.seed, "--seed", 0))
        return CliConfig(cmd, exp, a.output, 1, a.verbose)
    exp = _experiment(a, cmd)
    cfg = CliConfig(cmd, exp, a.output, _threads(a.threads), a.verbose)
    if cmd == "solve":
        K = exp.K
        w = (1.0,) * K if a.weights is None else _floats(a.weights, "--weights")
        if len(w) != K or any(v <= 0 for v in w):
            raise CliError(f"--weights: expected {K} positive values", "--weights")
        cfg.weights = w
        cfg.realization = _int(a.realization, "--realization", 0)
    return cfg


def _replay_config(cfg: CliConfig):
    m = cfg.manifest
    if not isinstance(m, dict) or "config" not in m:
        raise CliError("manifest has no config section", "manifest")
    try:
        cfg.experiment = ExperimentConfig.from_dict(m["config"])
    except (ConfigError, TypeError) as e:
        raise CliError(f"manifest config invalid: {e}", "manifest") from None
    solve = m.get("solve")
    if solve is not None:
        cfg.weights = tuple(float(v) for v in solve["weights"])
        cfg.realization = int(solve["realization"])
        if len(cfg.weights) != cfg.experiment.K:
            raise CliError("manifest weights do not match the topology", "manifest")


# --- execution --------------------------------------------------------------------------

def _solve(cfg: CliConfig):
    exp = cfg.experiment
    ch = channels.draw(exp.topology, exp.alpha, exp.beta, exp.seed, cfg.realization)
    inst = ProblemInstance.from_snr(exp.M, exp.K, exp.snr_db[0], exp.qos_at(0),
                                    np.array(cfg.weights))
    res = experiments.solve_schemes(exp.schemes, inst, ch, None, exp.tolerance, exp.max_iters)
    K = exp.K
    cols = (["scheme", "decoding_order", "best", "status", "feasible", "iterations", "start",
             "wsr"] + [f"rate_user_{k}" for k in range(1, K + 1)]
            + [f"power_bs_{m}" for m in range(1, exp.M + 1)])
    rows, trace_rows = [], []
    for name in exp.schemes:
        best = experiments._best(res[name])
        for o in res[name]:
            sol = o.solution
            row = dict(scheme=name, decoding_order=o.variant, best=int(o is best),
                       status=sol.status, feasible=int(sol.feasible),
                       iterations=sol.iterations, start=o.start,
                       wsr=sol.wsr if sol.feasible else None)
            for k, v in enumerate(sol.report.totals, 1):
                row[f"rate_user_{k}"] = float(v)
            for m, v in enumerate(sol.power_usage, 1):
                row[f"power_bs_{m}"] = float(v)
            rows.append(row)
            for it, wsr, pres, qres in sol.trace_rows():
                trace_rows.append(dict(scheme=name, decoding_order=o.variant, iteration=it,
                                       wsr=wsr, max_power_residual=pres,
                                       max_qos_residual=qres))
    tcols = ["scheme", "decoding_order", "iteration", "wsr", "max_power_residual",
             "max_qos_residual"]
    files = {"solution.csv": experiments._csv(cols, rows),
             "trace.csv": experiments._csv(tcols, trace_rows)}
    manifest = {
        "library": "rsma_comp",
        "version": __version__,
        "config": exp.to_dict(),
        "seed": exp.seed,
        "solve": {"weights": list(cfg.weights), "realization": cfg.realization},
        "tolerances": experiments.ExperimentResult(exp, [], []).manifest()["tolerances"],
        "files": ["solution.csv", "trace.csv", "manifest.json"],
    }
    return _write(cfg.output, files, manifest)


def _write(outdir, files, manifest):
    os.makedirs(outdir, exist_ok=True)
    paths = []
    for name, text in files.items():
        path = os.path.join(outdir, name)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        paths.append(path)
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths + [path]


def _dump(cfg: CliConfig):
    exp = cfg.experiment
    draws = [channels.draw(exp.topology, exp.alpha, exp.beta, exp.seed, i)
             for i in range(exp.realizations)]
    os.makedirs(cfg.output, exist_ok=True)
    path = os.path.join(cfg.output, "channels.csv")
    channels.write_channels_csv(path, draws)
    return [path]


def run(cfg: CliConfig):
    """Execute a validated config; returns the written paths."""
    cmd = cfg.subcommand
    if cmd == "dump-channels":
        return _dump(cfg)
    if cmd == "solve" or (cmd == "replay" and cfg.weights is not None):
        return _solve(cfg)
    result = experiments.run(cfg.experiment, threads=cfg.threads)
    return result.write(cfg.output)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        cfg = parse_args(argv)
    except CliError as e:
        print(json.dumps(e.record()), file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING - 10 * min(cfg.verbosity, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        paths = run(cfg)
    except (OSError, InvalidInstanceError, ValueError, RuntimeError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
