"""Compiled core of the homogeneous self-dual interior-point method.

Works on the lowered SOCP ``min c^T x  s.t.  G x + s = h,  s in K`` where
``K`` is an orthant of size ``l`` followed by second-order cones starting at
``heads`` with lengths ``sizes``. Everything here is dense and loop-based so
numba can compile it; the Python wrapper in :mod:`rsma_comp.cone` owns the
program representation and result bookkeeping.
"""

import math

import numpy as np
from numba import njit

# status codes returned by hsd_solve
OPTIMAL = 0
PRIMAL_INFEASIBLE = 1
DUAL_INFEASIBLE = 2
MAX_ITER = 3
BREAKDOWN = 4
STALLED = 5



@njit(cache=True, error_model="numpy")
def _jdot(u, v, st, sz):
    acc = u[st] * v[st]
    for i in range(st + 1, st + sz):
        acc -= u[i] * v[i]
    return acc


@njit(cache=True, error_model="numpy")
def _jdet(u, st, sz):
    # factored form avoids cancellation near the cone boundary
    t = 0.0
    for i in range(st + 1, st + sz):
        t += u[i] * u[i]
    t = math.sqrt(t)
    return (u[st] - t) * (u[st] + t)


@njit(cache=True, error_model="numpy")
def _identity(m, l, heads):
    e = np.zeros(m)
    e[:l] = 1.0
    for b in range(heads.shape[0]):
        e[heads[b]] = 1.0
    return e


@njit(cache=True, error_model="numpy")
def _jprod(u, v, l, heads, sizes):
    out = np.empty(u.shape[0])
    for i in range(l):
        out[i] = u[i] * v[i]
    for b in range(heads.shape[0]):
        st = heads[b]
        acc = 0.0
        for i in range(st, st + sizes[b]):
            acc += u[i] * v[i]
        out[st] = acc
        for i in range(st + 1, st + sizes[b]):
            out[i] = u[st] * v[i] + v[st] * u[i]
    return out


@njit(cache=True, error_model="numpy")
def _jdiv(lam, x, l, heads, sizes):
    """Solve ``lam o y = x``."""
    out = np.empty(x.shape[0])
    for i in range(l):
        out[i] = x[i] / lam[i]
    for b in range(heads.shape[0]):
        st = heads[b]
        sz = sizes[b]
        y0 = _jdot(lam, x, st, sz) / _jdet(lam, st, sz)
        out[st] = y0
        for i in range(st + 1, st + sz):
            out[i] = (x[i] - y0 * lam[i]) / lam[st]
    return out


@njit(cache=True, error_model="numpy")
def _max_step(u, d, l, heads, sizes):
    """Largest ``a >= 0`` keeping ``u + a d`` in the cone (``u`` interior)."""
    alpha = np.inf
    for i in range(l):
        if d[i] < 0.0:
            alpha = min(alpha, -u[i] / d[i])
    for b in range(heads.shape[0]):
        st = heads[b]
        sz = sizes[b]
        a = _jdet(d, st, sz)
        bq = 2.0 * _jdot(u, d, st, sz)
        c = _jdet(u, st, sz)
        if c <= 0.0:
            return 0.0
        if abs(a) < 1e-300:
            if bq < 0.0:
                alpha = min(alpha, -c / bq)
        else:
            disc = bq * bq - 4.0 * a * c
            if disc >= 0.0:
                qv = -0.5 * (bq + math.copysign(math.sqrt(disc), bq))
                if qv != 0.0:
                    r1 = qv / a
                    r2 = c / qv
                    if r1 > 0.0:
                        alpha = min(alpha, r1)
                    if r2 > 0.0:
                        alpha = min(alpha, r2)
    return alpha


@njit(cache=True, error_model="numpy")
def _nt_scaling(s, z, l, heads, sizes, d, w, beta, lam):
    """Fill the Nesterov-Todd scaling data so that ``W z = W^{-1} s = lam``.

    ``lam`` is formed from the normalised points directly, which stays
    accurate when ``s`` and ``z`` approach the cone boundary.
    """
    for i in range(l):
        d[i] = math.sqrt(s[i] / z[i])
        lam[i] = math.sqrt(s[i] * z[i])
    for b in range(heads.shape[0]):
        st = heads[b]
        sz = sizes[b]
        sn = math.sqrt(max(_jdet(s, st, sz), 1e-300))
        zn = math.sqrt(max(_jdet(z, st, sz), 1e-300))
        dot = 0.0
        for i in range(st, st + sz):
            dot += (s[i] / sn) * (z[i] / zn)
        gam = math.sqrt(max((1.0 + dot) / 2.0, 1e-300))
        s0 = s[st] / sn
        z0 = z[st] / zn
        w[st] = (s0 + z0) / (2.0 * gam)
        rt = math.sqrt(sn * zn)
        lam[st] = rt * gam
        den = s0 + z0 + 2.0 * gam
        for i in range(st + 1, st + sz):
            w[i] = (s[i] / sn - z[i] / zn) / (2.0 * gam)
            lam[i] = rt * ((gam + z0) * s[i] / sn + (gam + s0) * z[i] / zn) / den
        beta[b] = math.sqrt(sn / zn)


@njit(cache=True, error_model="numpy")
def _apply(v, l, heads, sizes, d, w, beta, inverse):
    """``W v`` or ``W^{-1} v`` for the block-diagonal NT scaling."""
    out = np.empty(v.shape[0])
    for i in range(l):
        out[i] = v[i] / d[i] if inverse else v[i] * d[i]
    sgn = -1.0 if inverse else 1.0
    for b in range(heads.shape[0]):
        st = heads[b]
        sz = sizes[b]
        bt = 1.0 / beta[b] if inverse else beta[b]
        w0 = w[st]
        t = 0.0
        for i in range(st + 1, st + sz):
            t += sgn * w[i] * v[i]
        v0 = v[st]
        out[st] = bt * (w0 * v0 + t)
        coef = v0 + t / (1.0 + w0)
        for i in range(st + 1, st + sz):
            out[i] = bt * (v[i] + coef * sgn * w[i])
    return out


@njit(cache=True, error_model="numpy")
def _norm(v):
    return math.sqrt(np.dot(v, v))


@njit(cache=True, error_model="numpy")
def _kkt_matvec(A, c, hs, kt, x1, x2, x3):
    """Product with the scaled KKT matrix [[0, A, c], [-A^T, I, hs], [-c^T, -hs^T, kt]]."""
    y1 = A @ x2 + c * x3
    y2 = x2 - A.T @ x1 + hs * x3
    y3 = -np.dot(c, x1) - np.dot(hs, x2) + kt * x3
    return y1, y2, y3


@njit(cache=True, error_model="numpy")
def _chol_solve(L, b):
    return _backward(L, _forward(L, b))


@njit(cache=True, error_model="numpy")
def _forward(L, b):
    n = b.shape[0]
    y = np.empty(n)
    for i in range(n):
        acc = b[i]
        for j in range(i):
            acc -= L[i, j] * y[j]
        y[i] = acc / L[i, i]
    return y


@njit(cache=True, error_model="numpy")
def _backward(L, y):
    n = y.shape[0]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        acc = y[i]
        for j in range(i + 1, n):
            acc -= L[j, i] * x[j]
        x[i] = acc / L[i, i]
    return x


@njit(cache=True, error_model="numpy")
def _kkt_solve_once(L, v, den, A, c, hs, b1, b2, b3):
    # eliminate the identity block: dz = b2 + A^T dx - hs dtau
    u = _chol_solve(L, b1 - A @ b2)
    Atu = A.T @ u
    dtau = (b3 + np.dot(c, u) + np.dot(hs, b2) + np.dot(hs, Atu)) / den
    dx = u + v * dtau
    dz = b2 + A.T @ dx - hs * dtau
    return dx, dz, dtau


@njit(cache=True, error_model="numpy")
def _kkt_solve(L, v, den, A, c, hs, kt, b1, b2, b3, refine):
    dx, dz, dtau = _kkt_solve_once(L, v, den, A, c, hs, b1, b2, b3)
    for _ in range(refine):
        y1, y2, y3 = _kkt_matvec(A, c, hs, kt, dx, dz, dtau)
        ex, ez, et = _kkt_solve_once(L, v, den, A, c, hs, b1 - y1, b2 - y2, b3 - y3)
        dx = dx + ex
        dz = dz + ez
        dtau = dtau + et
    return dx, dz, dtau


@njit(cache=True, error_model="numpy")
def _direction(L, v, den, A, hs, c, kt, l, heads, sizes, d, w, beta, lam, lamsq,
               r1, r3, r4, eta, target, corr, corr_tk, sig_mu, tau, kappa, refine):
    ds_hat = _jdiv(lam, target - lamsq - corr, l, heads, sizes)
    b1 = -eta * r1
    b2 = _apply(-eta * r3, l, heads, sizes, d, w, beta, True) + ds_hat
    b3 = -eta * r4 + (sig_mu - tau * kappa - corr_tk) / tau
    dx, dzt, dtau = _kkt_solve(L, v, den, A, c, hs, kt, b1, b2, b3, refine)
    dst = ds_hat - dzt
    dkappa = (sig_mu - tau * kappa - corr_tk - kappa * dtau) / tau
    return dx, dzt, dst, dtau, dkappa


@njit(cache=True, error_model="numpy")
def _step(lam, dzt, dst, tau, dtau, kappa, dkappa, l, heads, sizes):
    a = min(_max_step(lam, dst, l, heads, sizes), _max_step(lam, dzt, l, heads, sizes))
    if dtau < 0.0:
        a = min(a, -tau / dtau)
    if dkappa < 0.0:
        a = min(a, -kappa / dkappa)
    return a


@njit(cache=True, error_model="numpy")
def hsd_solve(G, h, c, l, heads, sizes, max_iters, feastol, reltol, stall_iters, refine):
    """Run the interior-point iteration.

    Returns ``(status, x, z, tau, kappa, iterations, trace, best_it,
    best_acceptable, best_x, best_z, best_tau)``; ``trace`` rows are
    ``(pobj, dobj, pres, dres, gap, tau, kappa)``.
    """
    m, n = G.shape
    GT = np.ascontiguousarray(G.T)
    nb = heads.shape[0]
    degree = l + nb

    x = np.zeros(n)
    s = _identity(m, l, heads)
    z = _identity(m, l, heads)
    e = _identity(m, l, heads)
    tau = 1.0
    kappa = 1.0
    hnorm = max(1.0, _norm(h))
    cnorm = max(1.0, _norm(c))

    trace = np.full((max_iters + 1, 7), np.nan)
    status = MAX_ITER
    best_merit = np.inf
    best_acc = False
    best_it = -1
    best_x = x.copy()
    best_z = z.copy()
    best_tau = tau

    d = np.ones(l)
    w = np.zeros(m)
    beta = np.ones(nb)
    lam = np.empty(m)
    GsT = np.empty((n, m))
    zero = np.zeros(m)

    it_done = 0
    for it in range(max_iters + 1):
        it_done = it
        r1 = GT @ z + c * tau
        r3 = h * tau - G @ x - s
        r4 = -np.dot(c, x) - np.dot(h, z) - kappa

        pres = _norm(r3) / (tau * hnorm)
        dres = _norm(r1) / (tau * cnorm)
        pobj = np.dot(c, x) / tau
        dobj = -np.dot(h, z) / tau
        comp = np.dot(s, z) / (tau * tau)
        gap = max(comp, abs(pobj - dobj))
        trace[it, 0] = pobj
        trace[it, 1] = dobj
        trace[it, 2] = pres
        trace[it, 3] = dres
        trace[it, 4] = gap
        trace[it, 5] = tau
        trace[it, 6] = kappa
        if not (np.isfinite(pres) and np.isfinite(dres) and np.isfinite(gap)
                and np.isfinite(tau) and np.isfinite(kappa)):
            status = BREAKDOWN
            break
        acceptable = (pres <= feastol and dres <= feastol
                      and gap <= reltol * (1.0 + abs(pobj)))
        if acceptable:
            status = OPTIMAL
            break
        merit = max(max(pres / feastol, dres / feastol), gap / (reltol * (1.0 + abs(pobj))))
        if merit < best_merit:
            best_merit = merit
            best_acc = acceptable
            best_it = it
            best_x[:] = x
            best_z[:] = z
            best_tau = tau
        elif best_acc or (it - best_it >= stall_iters and tau > kappa):
            # past the accurate region, or no progress for a while
            status = STALLED
            break
        hz = np.dot(h, z)
        if hz < 0.0 and _norm(GT @ z) / -hz <= feastol:
            status = PRIMAL_INFEASIBLE
            break
        cx = np.dot(c, x)
        if cx < 0.0 and _norm(G @ x + s) / -cx <= feastol:
            status = DUAL_INFEASIBLE
            break
        if it == max_iters:
            break

        mu = (np.dot(s, z) + tau * kappa) / (degree + 1)
        _nt_scaling(s, z, l, heads, sizes, d, w, beta, lam)
        for j in range(n):
            GsT[j] = _apply(GT[j], l, heads, sizes, d, w, beta, True)
        hs = _apply(h, l, heads, sizes, d, w, beta, True)
        kt = kappa / tau
        # R^T R = Gs^T Gs without squaring the condition number
        if not np.all(np.isfinite(GsT)):
            status = BREAKDOWN
            break
        R = np.linalg.qr(GsT.T)[1]
        dg = np.abs(np.diag(R))
        ok = dg.min() > 1e-13 * dg.max()
        L = R.T.copy()
        if not ok:
            M = GsT @ GsT.T
            reg = 1e-14 * (1.0 + np.trace(M) / n)
            for _ in range(6):
                try:
                    L = np.linalg.cholesky(M + reg * np.eye(n))
                    ok = True
                    break
                except Exception:
                    reg *= 100.0
        if not ok:
            status = BREAKDOWN
            break
        v = _chol_solve(L, GsT @ hs - c)
        den = -np.dot(c, v) - np.dot(hs, GsT.T @ v) + np.dot(hs, hs) + kt
        lamsq = _jprod(lam, lam, l, heads, sizes)

        # predictor
        dx, dzt, dst, dtau, dkappa = _direction(
            L, v, den, GsT, hs, c, kt, l, heads, sizes, d, w, beta, lam, lamsq,
            r1, r3, r4, 1.0, zero, zero, 0.0, 0.0, tau, kappa, refine)
        a_aff = min(1.0, _step(lam, dzt, dst, tau, dtau, kappa, dkappa, l, heads, sizes))
        sigma = (1.0 - a_aff) ** 3

        # corrector
        sig_mu = sigma * mu
        corr = _jprod(dst, dzt, l, heads, sizes)
        corr_tk = dtau * dkappa
        dx, dzt, dst, dtau, dkappa = _direction(
            L, v, den, GsT, hs, c, kt, l, heads, sizes, d, w, beta, lam, lamsq,
            r1, r3, r4, 1.0 - sigma, sig_mu * e, corr, corr_tk, sig_mu, tau, kappa, refine)
        alpha = min(1.0, 0.99 * _step(lam, dzt, dst, tau, dtau, kappa, dkappa, l, heads, sizes))

        x = x + alpha * dx
        z = z + alpha * _apply(dzt, l, heads, sizes, d, w, beta, True)
        s = s + alpha * _apply(dst, l, heads, sizes, d, w, beta, False)
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa

    return (status, x, z, tau, kappa, it_done, trace[:it_done + 1].copy(),
            best_it, best_acc, best_x, best_z, best_tau)
