"""WMMSE alternating optimisation for weighted-sum-rate RS precoding.

Each outer iteration fixes the MMSE equalizers ``g`` and weights ``w`` at the
current precoder, then solves a convex QCQP jointly in the precoders and the
transformed common-rate shares ``x = -c``. Per-BS power limits enter as one
quadratic constraint per base station.

The augmented WMSE is kept in the base-2 form

    xi = 1 + (w * eps - 1 - ln w) / ln 2,

which equals ``w * eps - log2 w`` whenever ``w = 1 / eps`` (so every value at
an MMSE point, ``xi = 1 - R``, is unchanged), and whose minimiser over ``w``
is exactly ``1 / eps``. The second property is what makes ``c = -x`` a valid
rate allocation at the new precoder and the WSR sequence nondecreasing.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import cone, rates
from .model import InvalidInstanceError, PrecoderSet, ProblemInstance, StreamLayout, UserSet
from .rates import CommonRateAllocation, RateReport, channel_matrix

__all__ = [
    "AssemblyError",
    "WmmseState",
    "WmmseProgram",
    "IterationRecord",
    "Solution",
    "mmse_equalizer",
    "mmse_weight",
    "augmented_wmse",
    "mmse_update",
    "assemble_subproblem",
    "initial_precoders",
    "ao_solve",
    "DEFAULT_TOLERANCE",
    "DEFAULT_MAX_ITERS",
]

log = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-4
DEFAULT_MAX_ITERS = 300
MONOTONE_SLACK = 1e-9
WARN_DROP = 1e-6
POWER_TOL = 1e-8
QOS_TOL = 1e-4
LN2 = math.log(2.0)


class AssemblyError(ValueError):
    pass


# --- closed-form receive side -------------------------------------------------

def _pair_quantities(layout, P, H, noise_variance):
    """Signal projection ``h_k^H p_A``, ``|.|^2`` and ``T_k^A`` for every decode pair."""
    proj = H.conj() @ P
    g2 = np.abs(proj) ** 2
    plan = layout.plan
    hp = proj[plan.pair_user, plan.pair_stream]
    sig = g2[plan.pair_user, plan.pair_stream]
    interf = np.sum(g2[plan.pair_user] * plan.interferers, axis=1)
    return hp, sig, sig + interf + noise_variance


def _pair_index(layout, k, A):
    A = A if isinstance(A, UserSet) else UserSet.of(A)
    try:
        return layout.decode_pairs.index((k, A))
    except ValueError:
        raise InvalidInstanceError(f"user {k} does not decode {A!r}") from None


def mmse_equalizer(k, A, layout, precoders, channel, noise_variance=1.0) -> complex:
    """``g = p_A^H h_k / T_k^A``."""
    i = _pair_index(layout, k, A)
    P = rates._matrix(layout, precoders)
    hp, _, T = _pair_quantities(layout, P, channel_matrix(channel), noise_variance)
    return complex(np.conj(hp[i]) / T[i])


def mmse_weight(k, A, layout, precoders, channel, noise_variance=1.0) -> float:
    """``w = T / (T - |h_k^H p_A|^2)``, always >= 1."""
    i = _pair_index(layout, k, A)
    P = rates._matrix(layout, precoders)
    _, sig, T = _pair_quantities(layout, P, channel_matrix(channel), noise_variance)
    return float(T[i] / (T[i] - sig[i]))


def _mse(g, hp, T):
    return np.abs(g) ** 2 * T - 2.0 * np.real(g * hp) + 1.0


def _xi(w, eps):
    return 1.0 + (w * eps - 1.0 - np.log(w)) / LN2


def augmented_wmse(k, A, g, w, layout, precoders, channel, noise_variance=1.0) -> float:
    """Augmented weighted MSE of user ``k`` decoding ``A`` for given ``g`` and ``w``."""
    if not w > 0:
        raise ValueError("MSE weight must be positive")
    i = _pair_index(layout, k, A)
    P = rates._matrix(layout, precoders)
    hp, _, T = _pair_quantities(layout, P, channel_matrix(channel), noise_variance)
    return float(_xi(w, _mse(g, hp[i], T[i])))


@dataclass
class WmmseState:
    """Receive-side variables and current iterate of the AO loop.

    ``equalizers``/``weights`` are aligned with ``layout.decode_pairs``;
    ``x`` with ``layout.allocation_pairs``.
    """

    layout: StreamLayout
    precoders: PrecoderSet
    equalizers: np.ndarray
    weights: np.ndarray
    x: np.ndarray
    iteration: int = 0
    trace: List[float] = field(default_factory=list)


def mmse_update(layout, precoders, channel, noise_variance=1.0, x=None, iteration=0):
    P = rates._matrix(layout, precoders)
    if not isinstance(precoders, PrecoderSet):
        precoders = PrecoderSet(layout, P)
    hp, sig, T = _pair_quantities(layout, P, channel_matrix(channel), noise_variance)
    g = np.conj(hp) / T
    w = T / (T - sig)
    if x is None:
        x = np.zeros(len(layout.allocation_pairs))
    return WmmseState(layout, precoders, g, w, np.asarray(x, float), iteration)


# --- convex inner problem -------------------------------------------------------

class WmmseProgram(cone.ConvexProgram):
    """Inner QCQP plus the bookkeeping needed to read precoders back out."""

    layout: StreamLayout
    M: int
    x_offset: int
    extra_index: int
    constants: np.ndarray

    def precoder_matrix(self, z):
        n = self.layout.num_streams
        blk = np.asarray(z[: 2 * self.M * n]).reshape(n, 2, self.M)
        return (blk[:, 0, :] + 1j * blk[:, 1, :]).T

    def x_values(self, z):
        return np.asarray(z[self.x_offset: self.x_offset + len(self.layout.allocation_pairs)])

    def constraint_count(self, prefix):
        return sum(1 for c in self.linear + self.quadratic if c.name.startswith(prefix))


def _projection_rows(H, n_streams, nz):
    """Per user, real rows mapping ``z`` to (Re, Im) of ``h_k^H p_j`` for every stream j."""
    K, M = H.shape
    rows = np.zeros((K, 2 * n_streams, nz))
    for j in range(n_streams):
        re = slice(2 * M * j, 2 * M * j + M)
        im = slice(2 * M * j + M, 2 * M * (j + 1))
        rows[:, 2 * j, re] = H.real
        rows[:, 2 * j, im] = H.imag
        rows[:, 2 * j + 1, re] = -H.imag
        rows[:, 2 * j + 1, im] = H.real
    return rows


def _add_scaled(prog, F, q=None, r=0.0, name=""):
    # row equilibration: the IPM loses digits when r and q run into the hundreds
    d = max(1.0, abs(r), float(np.max(np.abs(q))) if q is not None else 0.0)
    q = None if q is None else q / d
    return prog.add_quadratic(F / math.sqrt(d), q=q, r=r / d, name=name)


def assemble_subproblem(state: WmmseState, instance: ProblemInstance, layout: StreamLayout,
                        channel, phase_one=False) -> WmmseProgram:
    """Convex program in ``(P, x)`` for fixed equalizers and weights.

    Variables are ``[Re p_A, Im p_A]`` per stream, one ``X_k^A`` per enabled
    share, and a trailing auxiliary: the objective epigraph, or in
    ``phase_one`` the common QoS slack being minimised.
    """
    H = channel_matrix(channel)
    K, M = H.shape
    if M != instance.M or K != instance.K or K != layout.K:
        raise AssemblyError("channel, instance and layout dimensions disagree")
    pairs = layout.decode_pairs
    g = np.asarray(state.equalizers)
    w = np.asarray(state.weights)
    if g.shape != (len(pairs),) or w.shape != (len(pairs),):
        raise AssemblyError("equalizers/weights must cover every decode pair")
    if np.any(~np.isfinite(g)) or np.any(~(w > 0)):
        raise AssemblyError("equalizers must be finite and weights positive")

    n = layout.num_streams
    shares = layout.allocation_pairs
    nx = len(shares)
    x_off = 2 * M * n
    nz = x_off + nx + 1
    aux = nz - 1
    xi_of = {pair: x_off + i for i, pair in enumerate(shares)}
    plan = layout.plan
    rows = _projection_rows(H, n, nz)
    sigma2 = instance.noise_variance

    # xi_k^A(z) = ||F z||^2 + q^T z + const for every decode pair
    a = w / LN2
    consts = a * np.abs(g) ** 2 * sigma2 + a + 1.0 - (1.0 + np.log(w)) / LN2
    quad = []
    for i, (k, A) in enumerate(pairs):
        u = plan.pair_user[i]
        j = plan.pair_stream[i]
        cols = np.flatnonzero(plan.interferers[i])
        sel = np.concatenate([[2 * j, 2 * j + 1], np.ravel(np.column_stack([2 * cols, 2 * cols + 1]))])
        F = math.sqrt(a[i]) * abs(g[i]) * rows[u, sel.astype(int)]
        q = -2.0 * a[i] * (g[i].real * rows[u, 2 * j] - g[i].imag * rows[u, 2 * j + 1])
        quad.append((F, q))

    prog = WmmseProgram(nz)
    prog.layout = layout
    prog.M = M
    prog.x_offset = x_off
    prog.extra_index = aux
    prog.constants = consts

    # common-rate constraints: sum_k' X_k'^A + 1 >= xi_k^A for every decoder k
    for i, (k, A) in enumerate(pairs):
        if A.order < 2:
            continue
        F, q = quad[i]
        q = q.copy()
        for kk in layout.allocation_users(A):
            q[xi_of[(A, kk)]] -= 1.0
        _add_scaled(prog, F, q=q, r=1.0 - consts[i], name=f"common[{A.label}@{k}]")

    # per-BS power
    for m in range(M):
        F = np.zeros((2 * n, nz))
        for j in range(n):
            F[2 * j, 2 * M * j + m] = 1.0
            F[2 * j + 1, 2 * M * j + M + m] = 1.0
        _add_scaled(prog, F, r=float(instance.per_bs_power[m]), name=f"power[{m + 1}]")

    # QoS: xi_k,tot <= 1 - R_k^th
    for k in range(1, K + 1):
        lin = np.zeros(nz)
        for (A, kk), idx in xi_of.items():
            if kk == k:
                lin[idx] = 1.0
        if phase_one:
            lin[aux] = -1.0
        ip = plan.private_pair[k - 1]
        if ip >= 0:
            F, q = quad[ip]
            _add_scaled(prog, F, q=q + lin, r=1.0 - instance.qos[k - 1] - consts[ip],
                               name=f"qos[{k}]")
        else:
            # no private stream: xi_k^k is identically 1
            prog.add_linear(lin, -instance.qos[k - 1], name=f"qos[{k}]")

    for (A, k), idx in xi_of.items():
        e = np.zeros(nz)
        e[idx] = 1.0
        prog.add_linear(e, 0.0, name=f"x_nonpos[{A.label}@{k}]")

    c = np.zeros(nz)
    if phase_one:
        c[aux] = 1.0
    else:
        u = instance.weights
        for (A, k), idx in xi_of.items():
            c[idx] = u[k - 1]
        c[aux] = 1.0
        Fs, qs, r = [], np.zeros(nz), 0.0
        for k in range(1, K + 1):
            ip = plan.private_pair[k - 1]
            if ip < 0:
                continue
            F, q = quad[ip]
            Fs.append(math.sqrt(u[k - 1]) * F)
            qs += u[k - 1] * q
            r -= u[k - 1] * consts[ip]
        qs[aux] = -1.0
        if Fs:
            _add_scaled(prog, np.vstack(Fs), q=qs, r=r, name="epigraph")
        else:
            prog.add_linear(qs, r, name="epigraph")
    prog.c = c
    return prog


# --- initialisation ---------------------------------------------------------------

def initial_precoders(instance: ProblemInstance, layout: StreamLayout, channel) -> PrecoderSet:
    """Matched-filter private precoders and dominant-direction common precoders.

    Half of the total power goes to the highest-order streams (when there are
    lower-order ones), the rest is split equally; all columns are then scaled
    by one factor so that the most loaded BS sits exactly at its limit.
    """
    H = channel_matrix(channel)
    M = H.shape[1]
    streams = layout.streams
    n = len(streams)
    top = max(s.order for s in streams)
    n_top = sum(1 for s in streams if s.order == top)
    p_tot = instance.total_power
    if top == 1 or n_top == n:
        q = np.full(n, p_tot / n)
    else:
        q = np.array([0.5 * p_tot / n_top if s.order == top else 0.5 * p_tot / (n - n_top)
                      for s in streams])
    P = np.zeros((M, n), dtype=complex)
    for j, s in enumerate(streams):
        if s.order == 1:
            v = H[s.members[0] - 1]
        else:
            stacked = H[[k - 1 for k in s.members]].T
            U, _, _ = np.linalg.svd(stacked)
            v = U[:, 0]
        nv = np.linalg.norm(v)
        if nv < 1e-12:
            v = np.zeros(M, dtype=complex)
            v[0] = 1.0
            nv = 1.0
        P[:, j] = math.sqrt(q[j]) * v / nv
    used = np.sum(np.abs(P) ** 2, axis=1)
    ratio = np.where(used > 0, instance.per_bs_power / np.maximum(used, 1e-300), np.inf)
    P *= math.sqrt(float(np.min(ratio)))
    return PrecoderSet(layout, P)


# --- driver ---------------------------------------------------------------------------

@dataclass
class IterationRecord:
    iteration: int
    wsr: float
    max_power_residual: float
    max_qos_residual: float


@dataclass(eq=False)
class Solution:
    precoders: PrecoderSet
    allocation: CommonRateAllocation
    report: RateReport
    status: str                # converged | max_iter | stalled | infeasible | solver_failure
    iterations: int
    trace: List[IterationRecord]
    power_usage: np.ndarray
    diagnostics: List[str] = field(default_factory=list)
    inner_iterations: int = 0

    @property
    def wsr(self):
        return self.report.wsr

    @property
    def feasible(self):
        return self.status != "infeasible"

    @property
    def converged(self):
        return self.status == "converged"

    @property
    def layout(self):
        return self.precoders.layout

    def trace_rows(self):
        return [(r.iteration, r.wsr, r.max_power_residual, r.max_qos_residual) for r in self.trace]


def _repair_power(P, limits):
    used = np.sum(np.abs(P) ** 2, axis=1)
    over = used > limits
    if np.any(over):
        P = P.copy()
        P[over] *= np.sqrt(limits[over] / used[over])[:, None]
    return P


def _repair_allocation(layout, x, stream_rates):
    c = np.maximum(-np.asarray(x, float), 0.0)
    for j, A in enumerate(layout.streams):
        if A.order < 2:
            continue
        idx = [i for i, (B, _) in enumerate(layout.allocation_pairs) if B == A]
        tot = c[idx].sum()
        if tot > stream_rates[j]:
            c[idx] *= stream_rates[j] / tot if tot > 0 else 0.0
    return CommonRateAllocation.from_vector(layout, c)


def _record(it, report, P, instance):
    used = np.sum(np.abs(P) ** 2, axis=1)
    return IterationRecord(
        it, report.wsr,
        float(np.max(used - instance.per_bs_power)),
        float(np.max(instance.qos - report.totals)),
    )


def _usable(sol):
    # inexact iterates are fine: every candidate is re-checked by the rate engine
    return sol.status != "infeasible" and np.all(np.isfinite(sol.x))


def _inner(state, instance, layout, H, phase_one, solver_options):
    prog = assemble_subproblem(state, instance, layout, H, phase_one=phase_one)
    sol = cone.solve(prog, **solver_options)
    return prog, sol


def ao_solve(instance: ProblemInstance, layout: StreamLayout, channel,
             init: Optional[PrecoderSet] = None, allocation: Optional[CommonRateAllocation] = None,
             tolerance=DEFAULT_TOLERANCE, max_iters=DEFAULT_MAX_ITERS,
             solver_options=None) -> Solution:
    """Run the WMMSE alternating optimisation from ``init``.

    Stops when the WSR changes by at most ``tolerance`` between accepted
    iterations or after ``max_iters`` inner solves. If the starting point
    misses a QoS target, a feasibility phase first minimises the largest QoS
    shortfall; an unreachable target yields status ``infeasible``.
    """
    H = channel_matrix(channel)
    solver_options = dict(solver_options or {})
    if init is None:
        init = initial_precoders(instance, layout, H)
    elif init.layout != layout:
        if init.layout.streams == layout.streams:
            init = init.with_layout(layout)
        else:
            init = init.embed(layout)
    used = init.per_bs_power()
    if np.any(used > instance.per_bs_power * (1 + 1e-9) + POWER_TOL):
        raise InvalidInstanceError("initial precoders exceed a per-BS power limit")
    P = _repair_power(init.matrix, instance.per_bs_power)
    sigma2 = instance.noise_variance
    u = instance.weights
    diagnostics = []
    inner_iters = 0

    alloc = None
    if allocation is not None:
        try:
            alloc = allocation.embed(layout)
            rep0 = rates.evaluate(layout, P, H, alloc, u, sigma2)
            if np.any(rep0.totals < instance.qos - 1e-12):
                alloc = None
        except (rates.InfeasibleAllocationError, InvalidInstanceError):
            alloc = None
    if alloc is None:
        alloc = rates.best_allocation(layout, P, H, u, instance.qos, sigma2)

    if alloc is None:
        # feasibility phase: minimise the largest QoS shortfall in WMSE terms
        slack_prev = math.inf
        for it in range(max_iters):
            state = mmse_update(layout, P, H, sigma2)
            prog, sol = _inner(state, instance, layout, H, True, solver_options)
            inner_iters += sol.iterations
            if not _usable(sol):
                diagnostics.append(f"feasibility phase: inner solver {sol.status}")
                break
            P = _repair_power(prog.precoder_matrix(sol.x), instance.per_bs_power)
            alloc = rates.best_allocation(layout, P, H, u, instance.qos, sigma2)
            if alloc is not None:
                break
            slack = float(sol.x[prog.extra_index])
            if slack_prev - slack < 1e-7:
                diagnostics.append(f"feasibility phase stalled at QoS shortfall {slack:.3g}")
                break
            slack_prev = slack
        if alloc is None:
            zero = CommonRateAllocation.zeros(layout)
            rep = rates.evaluate(layout, P, H, zero, u, sigma2)
            return Solution(PrecoderSet(layout, P), zero, rep, "infeasible", 0,
                            [], np.sum(np.abs(P) ** 2, axis=1), diagnostics, inner_iters)

    report = rates.evaluate(layout, P, H, alloc, u, sigma2)
    inexact = 0
    trace = [_record(0, report, P, instance)]
    status = "max_iter"
    it = 0
    for it in range(1, max_iters + 1):
        state = mmse_update(layout, P, H, sigma2, x=-alloc.vector(), iteration=it)
        prog, sol = _inner(state, instance, layout, H, False, solver_options)
        inner_iters += sol.iterations
        if not _usable(sol):
            diagnostics.append(f"iteration {it}: inner solver {sol.status}")
            status = "solver_failure"
            it -= 1
            break
        if not sol.optimal:
            inexact += 1
        P_new = _repair_power(prog.precoder_matrix(sol.x), instance.per_bs_power)
        pre = rates.evaluate(layout, P_new, H, None, u, sigma2)
        new_alloc = _repair_allocation(layout, prog.x_values(sol.x), pre.stream_rates)
        new_report = rates.evaluate(layout, P_new, H, new_alloc, u, sigma2)
        change = new_report.wsr - report.wsr
        if change < -MONOTONE_SLACK:
            status = "converged"
            if change < -WARN_DROP:
                diagnostics.append(f"iteration {it}: WSR dropped by {-change:.3g}; step rejected")
                log.info("non-monotone WMMSE step (%.3g) rejected", change)
                if change < -tolerance:
                    status = "stalled"
            it -= 1
            break
        P, alloc, report = P_new, new_alloc, new_report
        trace.append(_record(it, report, P, instance))
        if abs(change) <= tolerance:
            status = "converged"
            break
    if inexact:
        diagnostics.append(f"{inexact} inner solve(s) stopped short of full accuracy")
    return Solution(PrecoderSet(layout, P), alloc, report, status, it, trace,
                    np.sum(np.abs(P) ** 2, axis=1), diagnostics, inner_iters)
