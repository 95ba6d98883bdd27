"""Small dense conic solver for convex QCQPs.

Programs are stated as

    minimize    c^T z
    subject to  a_i^T z <= b_i                      (linear)
                ||F_j z + f_j||^2 + q_j^T z <= r_j  (convex quadratic)

Each quadratic constraint is lowered to a rotated second-order cone and the
resulting SOCP is solved with a primal-dual interior-point method on the
homogeneous self-dual embedding, using Nesterov-Todd scaling and Mehrotra
predictor-corrector steps. Infeasibility is detected from the embedding
(``tau -> 0``) without a separate phase-one problem.

The implementation is dense and aimed at the few-dozen-variable programs the
WMMSE inner step produces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from . import _hsd

__all__ = [
    "ProgramError",
    "LinearConstraint",
    "QuadraticConstraint",
    "ConvexProgram",
    "PrimalDualSolution",
    "KKTResiduals",
    "solve",
    "kkt_residuals",
    "dumps",
    "loads",
]

FEASTOL = 1e-8
RELTOL = 1e-8
MAX_ITERS = 200
STALL_ITERS = 25
REFINE_STEPS = 3
POLISH_STEPS = 6
NEAR = 1e3


class ProgramError(ValueError):
    """Raised when a program is malformed (shapes, non-finite data)."""


@dataclass
class LinearConstraint:
    a: np.ndarray
    b: float
    name: str = ""

    def value(self, z):
        return float(self.a @ z - self.b)


@dataclass
class QuadraticConstraint:
    """``||F z + f||^2 + q^T z <= r``."""

    F: np.ndarray
    f: np.ndarray
    q: np.ndarray
    r: float
    name: str = ""

    def value(self, z):
        v = self.F @ z + self.f
        return float(v @ v + self.q @ z - self.r)

    def gradient(self, z):
        return 2.0 * self.F.T @ (self.F @ z + self.f) + self.q


class ConvexProgram:
    """A linear objective over linear and convex quadratic constraints.

    Parameters
    ----------
    n : int
        Number of real decision variables.
    c : array_like, optional
        Objective coefficients (defaults to zeros).
    """

    def __init__(self, n: int, c=None):
        if n < 1:
            raise ProgramError("program needs at least one variable")
        self.n = int(n)
        self.c = np.zeros(self.n) if c is None else self._vec(c, "objective")
        self.linear: List[LinearConstraint] = []
        self.quadratic: List[QuadraticConstraint] = []

    def _vec(self, v, what):
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.shape != (self.n,):
            raise ProgramError(f"{what}: expected length {self.n}, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise ProgramError(f"{what}: non-finite entries")
        return v

    def add_linear(self, a, b, name=""):
        con = LinearConstraint(self._vec(a, "linear row"), float(b), name)
        self.linear.append(con)
        return con

    def add_quadratic(self, F, q=None, r=0.0, f=None, name=""):
        F = np.atleast_2d(np.asarray(F, dtype=float))
        if F.shape[1] != self.n:
            raise ProgramError(f"quadratic F: expected {self.n} columns, got {F.shape[1]}")
        if not np.all(np.isfinite(F)):
            raise ProgramError("quadratic F: non-finite entries")
        q = np.zeros(self.n) if q is None else self._vec(q, "quadratic q")
        if f is None:
            f = np.zeros(F.shape[0])
        else:
            f = np.asarray(f, dtype=float).reshape(-1)
            if f.shape[0] != F.shape[0]:
                raise ProgramError("quadratic f: length must match rows of F")
        con = QuadraticConstraint(F, f, q, float(r), name)
        self.quadratic.append(con)
        return con

    @property
    def num_constraints(self):
        return len(self.linear) + len(self.quadratic)

    def objective(self, z):
        return float(self.c @ z)

    def lower(self):
        """Return ``(G, h, l, soc_sizes)`` with ``G z + s = h``, ``s`` in the cone."""
        rows = []
        rhs = []
        for con in self.linear:
            rows.append(con.a[None, :])
            rhs.append([con.b])
        sizes = []
        for con in self.quadratic:
            # ||v||^2 <= u  <=>  ||(u - 1, 2 v)|| <= u + 1,  u = r - q^T z
            blk = np.vstack([con.q, con.q, -2.0 * con.F])
            rows.append(blk)
            rhs.append(np.concatenate([[con.r + 1.0, con.r - 1.0], 2.0 * con.f]))
            sizes.append(blk.shape[0])
        if rows:
            G = np.vstack(rows)
            h = np.concatenate([np.asarray(x, dtype=float) for x in rhs])
        else:
            G = np.zeros((0, self.n))
            h = np.zeros(0)
        return G, h, len(self.linear), sizes


@dataclass
class PrimalDualSolution:
    status: str
    x: np.ndarray
    linear_duals: np.ndarray
    quadratic_duals: np.ndarray
    objective: float
    dual_objective: float
    iterations: int
    primal_residual: float
    dual_residual: float
    gap: float
    cone_duals: List[np.ndarray] = field(default_factory=list, repr=False)
    certificate: str = ""
    trace: List[dict] = field(default_factory=list, repr=False)

    @property
    def optimal(self):
        return self.status == "optimal"


# --- solver --------------------------------------------------------------

_CERTIFICATES = {
    _hsd.PRIMAL_INFEASIBLE: "primal infeasible: G^T z = 0, h^T z < 0",
    _hsd.DUAL_INFEASIBLE: "dual infeasible: G x + s = 0, c^T x < 0",
}
_TRACE_KEYS = ("pobj", "dobj", "pres", "dres", "gap", "tau", "kappa")


def solve(program: ConvexProgram, max_iters=MAX_ITERS, feastol=FEASTOL, reltol=RELTOL,
          hint=None, polish=True) -> PrimalDualSolution:
    """Solve ``program`` with the homogeneous self-dual interior-point method.

    Starts from ``x = 0``, ``s = z = e``, ``tau = kappa = 1``. If the
    iteration breaks down numerically or stalls, the best iterate seen is
    returned; it is reported ``optimal`` only if it met the tolerances.
    An optimal result is then polished on its active set (see
    ``_polish``) unless ``polish`` is false. ``hint`` is accepted for
    interface compatibility and ignored.
    """
    del hint
    G, h, l, sizes = program.lower()
    c = np.asarray(program.c, dtype=float)
    # unit-norm objective; the iterates then do not depend on the objective scale
    cscale = float(np.linalg.norm(c)) or 1.0
    sizes = np.asarray(sizes, dtype=np.int64)
    heads = l + np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64) if len(sizes) \
        else np.zeros(0, dtype=np.int64)
    (code, x, z, tau, kappa, it, trace, best_it, best_ok, best_x, best_z, best_tau) = \
        _hsd.hsd_solve(np.ascontiguousarray(G, dtype=float), np.asarray(h, dtype=float),
                       c / cscale, int(l), heads, sizes,
                       int(max_iters), float(feastol), float(reltol), STALL_ITERS, REFINE_STEPS)
    certificate = _CERTIFICATES.get(code, "")
    if code == _hsd.OPTIMAL:
        status = "optimal"
    elif code in _CERTIFICATES:
        status = "infeasible"
    else:
        status = "max-iter"
        if best_it >= 0:
            x, z, tau, it = best_x, best_z, best_tau, best_it
            trace = trace[: it + 1]
            if best_ok:
                status = "optimal"
        if code == _hsd.BREAKDOWN:
            certificate = "numerical breakdown"
    if status == "infeasible":
        xo, zo = x, z
    else:
        xo, zo = x / tau, cscale * z / tau
    trace = trace.copy()
    trace[:, [0, 1, 4]] *= cscale
    nl = len(program.linear)
    cone_duals = [zo[i:i + 1].copy() for i in range(nl)]
    off = l
    for q in sizes:
        cone_duals.append(zo[off:off + q].copy())
        off += q
    quad_duals = np.array([d[0] + d[1] for d in cone_duals[nl:]])
    rows = [dict(iteration=i, **dict(zip(_TRACE_KEYS, map(float, r)))) for i, r in enumerate(trace)]
    last = rows[-1]
    sol = PrimalDualSolution(
        status=status,
        x=xo,
        linear_duals=zo[:nl].copy(),
        quadratic_duals=quad_duals,
        objective=last["pobj"],
        dual_objective=last["dobj"],
        iterations=int(it),
        primal_residual=last["pres"],
        dual_residual=last["dres"],
        gap=last["gap"],
        cone_duals=cone_duals,
        certificate=certificate,
        trace=rows,
    )
    if not polish or status == "infeasible":
        return sol
    if sol.optimal:
        return _polish(program, sol)
    near = (last["pres"] <= NEAR * feastol and last["dres"] <= NEAR * feastol
            and last["gap"] <= NEAR * reltol * (1.0 + abs(last["pobj"])))
    if near:
        # a fallback close to the tolerances is optimal if the polished point meets them
        out = _polish(program, sol)
        if (out is not sol and out.primal_residual <= feastol and out.dual_residual <= feastol
                and out.gap <= reltol * (1.0 + abs(out.objective))):
            out.status = "optimal"
            out.certificate = "recovered by polishing after " + (sol.certificate or "stall")
            return out
    return sol


def _cone_duals(program, mu_lin, mu_quad, z):
    duals = [np.array([m]) for m in mu_lin]
    for con, lam in zip(program.quadratic, mu_quad):
        v = con.F @ z + con.f
        u = float(v @ v)
        duals.append(lam * np.concatenate([[(1.0 + u) / 2.0, (1.0 - u) / 2.0], -v]))
    return duals


def _polish(program: ConvexProgram, sol: PrimalDualSolution) -> PrimalDualSolution:
    """Refine an interior-point solution by Newton steps on the active KKT system.

    Constraints with a clearly positive multiplier are held at equality and
    the remaining ones dropped. The polished point replaces the original only
    if it stays feasible, keeps the multipliers nonnegative and lowers the
    KKT residual; otherwise ``sol`` is returned unchanged.
    """
    mu_lin = np.asarray(sol.linear_duals, dtype=float)
    mu_quad = np.asarray(sol.quadratic_duals, dtype=float)
    scale = max(1.0, float(np.max(np.r_[mu_lin, mu_quad], initial=0.0)))
    act_lin = [i for i, m in enumerate(mu_lin) if m > 1e-6 * scale]
    act_quad = [j for j, m in enumerate(mu_quad) if m > 1e-6 * scale]
    na = len(act_lin) + len(act_quad)
    n = program.n
    if na == 0 or na > n:
        return sol
    A_lin = np.array([program.linear[i].a for i in act_lin]).reshape(-1, n)
    quads = [program.quadratic[j] for j in act_quad]
    x = sol.x.copy()
    mu = np.r_[mu_lin[act_lin], mu_quad[act_quad]]

    def residual(x, mu):
        g = program.c + A_lin.T @ mu[:len(act_lin)]
        vals = [program.linear[i].value(x) for i in act_lin]
        for t, con in enumerate(quads):
            g = g + mu[len(act_lin) + t] * con.gradient(x)
            vals.append(con.value(x))
        return np.r_[g, vals]

    res = residual(x, mu)
    for _ in range(POLISH_STEPS):
        H = np.zeros((n, n))
        J = np.zeros((na, n))
        J[:len(act_lin)] = A_lin
        for t, con in enumerate(quads):
            H += 2.0 * mu[len(act_lin) + t] * con.F.T @ con.F
            J[len(act_lin) + t] = con.gradient(x)
        K = np.block([[H, J.T], [J, np.zeros((na, na))]])
        try:
            step = np.linalg.solve(K, -res)
        except np.linalg.LinAlgError:
            return sol
        if not np.all(np.isfinite(step)):
            return sol
        x = x + step[:n]
        mu = mu + step[n:]
        new = residual(x, mu)
        if np.linalg.norm(new) >= np.linalg.norm(res):
            res = new
            break
        res = new
    if np.any(mu < 0.0):
        return sol
    full_lin = np.zeros(len(program.linear))
    full_lin[act_lin] = mu[:len(act_lin)]
    full_quad = np.zeros(len(program.quadratic))
    full_quad[act_quad] = mu[len(act_lin):]
    duals = _cone_duals(program, full_lin, full_quad, x)
    tol = 1e-12 * (1.0 + float(np.max(np.abs(program.lower()[1]), initial=0.0)))
    viol = max((con.value(x) for con in list(program.linear) + list(program.quadratic)),
               default=0.0)
    if viol > tol:
        return sol
    before = kkt_residuals(program, sol).max()
    after = kkt_residuals(program, sol, x=x, duals=duals).max()
    if not after < before:
        return sol
    G, h, _, _ = program.lower()
    zvec = np.concatenate(duals) if duals else np.zeros(0)
    pobj = float(program.c @ x)
    dobj = float(-h @ zvec)
    return PrimalDualSolution(
        status=sol.status,
        x=x,
        linear_duals=full_lin,
        quadratic_duals=full_quad,
        objective=pobj,
        dual_objective=dobj,
        iterations=sol.iterations,
        primal_residual=max(viol, 0.0),
        dual_residual=float(np.linalg.norm(G.T @ zvec + program.c)) / (1.0 + float(np.linalg.norm(program.c))),
        gap=abs(pobj - dobj),
        cone_duals=duals,
        certificate=sol.certificate,
        trace=sol.trace,
    )


@dataclass
class KKTResiduals:
    stationarity: float
    primal: float
    dual: float
    complementarity: float

    def max(self):
        return max(self.stationarity, self.primal, self.dual, self.complementarity)


def _slack(con, z):
    if isinstance(con, LinearConstraint):
        return np.array([con.b - con.a @ z])
    u = con.r - con.q @ z
    return np.concatenate([[u + 1.0, u - 1.0], 2.0 * (con.F @ z + con.f)])


def kkt_residuals(program: ConvexProgram, solution: PrimalDualSolution, x=None,
                  duals=None) -> KKTResiduals:
    """KKT residuals of the lowered conic program at a primal-dual point.

    ``duals`` holds one conic multiplier per constraint (linear first, then
    quadratic), as in ``solution.cone_duals``; ``x`` and ``duals`` default to
    the solution's and can be overridden to probe perturbed points.
    """
    z = solution.x if x is None else np.asarray(x, dtype=float)
    duals = solution.cone_duals if duals is None else [np.atleast_1d(np.asarray(d, float))
                                                       for d in duals]
    cons = list(program.linear) + list(program.quadratic)
    grad = program.c.copy()
    primal = 0.0
    dual = 0.0
    comp = 0.0
    for con, d in zip(cons, duals):
        if isinstance(con, LinearConstraint):
            grad += d[0] * con.a
            dual = max(dual, -d[0])
        else:
            grad += (d[0] + d[1]) * con.q - 2.0 * con.F.T @ d[2:]
            dual = max(dual, float(np.linalg.norm(d[1:])) - d[0])
        primal = max(primal, con.value(z))
        comp = max(comp, abs(float(_slack(con, z) @ d)))
    return KKTResiduals(
        stationarity=float(np.linalg.norm(grad)),
        primal=max(primal, 0.0),
        dual=max(dual, 0.0),
        complementarity=comp,
    )


# --- text dump -------------------------------------------------------------

def _fmt(v):
    return " ".join(repr(float(t)) for t in np.asarray(v).reshape(-1))


def dumps(program: ConvexProgram) -> str:
    """One line per item: ``var``, ``min``, then ``lin``/``quad`` constraints."""
    lines = [f"var {program.n}", f"min {_fmt(program.c)}"]
    for con in program.linear:
        lines.append(f"lin {_fmt(con.a)} <= {con.b!r}")
    for con in program.quadratic:
        rows = con.F.shape[0]
        lines.append(
            f"quad {rows} F {_fmt(con.F)} f {_fmt(con.f)} q {_fmt(con.q)} <= {con.r!r}"
        )
    return "\n".join(lines) + "\n"


def loads(text: str) -> ConvexProgram:
    lines = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
    if not lines or lines[0][0] != "var":
        raise ProgramError("dump must start with 'var <n>'")
    n = int(lines[0][1])
    prog = ConvexProgram(n)
    for tok in lines[1:]:
        kind = tok[0]
        if kind == "min":
            prog.c = prog._vec([float(t) for t in tok[1:]], "objective")
        elif kind == "lin":
            prog.add_linear([float(t) for t in tok[1:-2]], float(tok[-1]))
        elif kind == "quad":
            rows = int(tok[1])
            i_f, i_q = tok.index("f"), tok.index("q")
            F = np.array([float(t) for t in tok[3:i_f]]).reshape(rows, n)
            f = [float(t) for t in tok[i_f + 1:i_q]]
            q = [float(t) for t in tok[i_q + 1:-2]]
            prog.add_quadratic(F, q=q, r=float(tok[-1]), f=f)
        else:
            raise ProgramError(f"unknown line kind {kind!r}")
    return prog
