"""Interference, SINR and rate bookkeeping for a given precoder and layout.

This module is the reference evaluator: anything the optimiser reports is
re-derived from here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.optimize import linprog

from .model import InvalidInstanceError, PrecoderSet, StreamLayout, UserSet

__all__ = [
    "InfeasibleAllocationError",
    "CommonRateAllocation",
    "RateReport",
    "ALLOCATION_TOL",
    "channel_matrix",
    "interference",
    "sinr",
    "stream_rate",
    "common_stream_rate",
    "user_total_rate",
    "wsr",
    "evaluate",
    "best_allocation",
]

ALLOCATION_TOL = 1e-7


class InfeasibleAllocationError(ValueError):
    """Shares of a stream exceed the rate every decoder of it supports."""


def channel_matrix(channel) -> np.ndarray:
    """``K x M`` complex matrix whose row ``k`` is ``h_k``."""
    H = getattr(channel, "H", channel)
    H = np.asarray(H, dtype=complex)
    if H.ndim == 1:
        H = H[None, :]
    return H


def _matrix(layout, precoders):
    P = precoders.matrix if isinstance(precoders, PrecoderSet) else np.asarray(precoders, complex)
    if P.ndim == 1:
        P = P[:, None]
    if P.shape[1] != layout.num_streams:
        raise InvalidInstanceError(
            f"expected {layout.num_streams} precoder columns, got {P.shape[1]}")
    return P


def _as_stream(A):
    return A if isinstance(A, UserSet) else UserSet.of(A)


def _gains(layout, precoders, channel):
    H = channel_matrix(channel)
    P = _matrix(layout, precoders)
    if H.shape[1] != P.shape[0]:
        raise InvalidInstanceError(f"channel has {H.shape[1]} BSs, precoders {P.shape[0]}")
    if H.shape[0] != layout.K:
        raise InvalidInstanceError(f"channel has {H.shape[0]} users, layout {layout.K}")
    return np.abs(H.conj() @ P) ** 2


def interference(k, A, layout, precoders, channel) -> float:
    """Power of the streams not yet removed by SIC when user ``k`` decodes ``A``."""
    A = _as_stream(A)
    others = layout.interferers(k, A)
    g = _gains(layout, precoders, channel)[k - 1]
    return float(sum(g[layout.index(s)] for s in others))


def sinr(k, A, layout, precoders, channel, noise_variance=1.0) -> float:
    A = _as_stream(A)
    I = interference(k, A, layout, precoders, channel)
    g = _gains(layout, precoders, channel)[k - 1, layout.index(A)]
    return float(g / (I + noise_variance))


def stream_rate(k, A, layout, precoders, channel, noise_variance=1.0) -> float:
    """Rate (bit/s/Hz) at which user ``k`` can decode stream ``A``."""
    return float(np.log2(1.0 + sinr(k, A, layout, precoders, channel, noise_variance)))


def common_stream_rate(A, layout, precoders, channel, noise_variance=1.0) -> float:
    A = _as_stream(A)
    return min(stream_rate(k, A, layout, precoders, channel, noise_variance) for k in A)


@dataclass(frozen=True, eq=False)
class CommonRateAllocation:
    """Shares ``C_k^A`` of the multi-user streams, keyed by ``(A, k)``."""

    layout: StreamLayout
    shares: Dict[Tuple[UserSet, int], float]

    def __post_init__(self):
        clean = {}
        for (A, k), v in dict(self.shares).items():
            A = _as_stream(A)
            if A.order < 2:
                raise InvalidInstanceError(f"1-order stream {A!r} carries no shared rate")
            if (A, k) not in self.layout.allocation:
                raise InvalidInstanceError(f"share ({A!r}, {k}) not enabled in layout")
            v = float(v)
            if not v >= 0:
                raise InfeasibleAllocationError(f"negative share for ({A!r}, {k})")
            clean[(A, int(k))] = v
        object.__setattr__(self, "shares", clean)

    @classmethod
    def zeros(cls, layout):
        return cls(layout, {})

    @classmethod
    def from_vector(cls, layout, values):
        return cls(layout, dict(zip(layout.allocation_pairs, np.asarray(values, float))))

    def share(self, A, k) -> float:
        return self.shares.get((_as_stream(A), k), 0.0)

    def vector(self):
        return np.array([self.share(A, k) for A, k in self.layout.allocation_pairs])

    def user_common(self, k) -> float:
        return float(sum(v for (A, kk), v in self.shares.items() if kk == k))

    def stream_total(self, A) -> float:
        A = _as_stream(A)
        return float(sum(v for (B, _), v in self.shares.items() if B == A))

    def embed(self, layout):
        return CommonRateAllocation(layout, self.shares)


@dataclass(eq=False)
class RateReport:
    """Rates of one precoder under one layout.

    ``decode_rates`` and ``sinrs`` are aligned with ``layout.decode_pairs``;
    ``stream_rates`` with ``layout.streams``.
    """

    layout: StreamLayout
    sinrs: np.ndarray
    decode_rates: np.ndarray
    stream_rates: np.ndarray
    private_rates: np.ndarray
    allocation: CommonRateAllocation
    totals: np.ndarray
    weights: np.ndarray
    wsr: float

    def decode_rate(self, k, A) -> float:
        A = _as_stream(A)
        i = self.layout.decode_pairs.index((k, A))
        return float(self.decode_rates[i])

    def stream_rate(self, A) -> float:
        return float(self.stream_rates[self.layout.index(_as_stream(A))])

    @property
    def sum_rate(self):
        return float(np.sum(self.totals))


def _pair_rates(layout, precoders, channel, noise_variance):
    g = _gains(layout, precoders, channel)
    plan = layout.plan
    sig = g[plan.pair_user, plan.pair_stream]
    interf = np.sum(g[plan.pair_user] * plan.interferers, axis=1)
    gam = sig / (interf + noise_variance)
    return gam, np.log2(1.0 + gam)


def evaluate(layout, precoders, channel, allocation=None, weights=None,
             noise_variance=1.0, tol=ALLOCATION_TOL) -> RateReport:
    """Full rate report; raises if ``allocation`` overdraws a stream by more than ``tol``."""
    plan = layout.plan
    gam, rates = _pair_rates(layout, precoders, channel, noise_variance)
    stream_rates = np.array([rates[idx].min() for idx in plan.stream_pairs])
    private = np.where(plan.private_pair >= 0, rates[np.maximum(plan.private_pair, 0)], 0.0)
    if allocation is None:
        allocation = CommonRateAllocation.zeros(layout)
    elif allocation.layout is not layout and allocation.layout != layout:
        allocation = CommonRateAllocation(layout, allocation.shares)
    for j, A in enumerate(layout.streams):
        if A.order < 2:
            continue
        used = allocation.stream_total(A)
        if used > stream_rates[j] + tol:
            raise InfeasibleAllocationError(
                f"stream {A!r}: shares {used:.9g} exceed rate {stream_rates[j]:.9g}")
    totals = private + np.array([allocation.user_common(k) for k in range(1, layout.K + 1)])
    u = np.ones(layout.K) if weights is None else np.asarray(weights, float).reshape(-1)
    if u.shape != (layout.K,):
        raise InvalidInstanceError(f"expected {layout.K} weights")
    return RateReport(layout, gam, rates, stream_rates, private, allocation, totals, u,
                      float(u @ totals))


def user_total_rate(k, allocation, layout, precoders, channel, noise_variance=1.0) -> float:
    rep = evaluate(layout, precoders, channel, allocation, noise_variance=noise_variance)
    return float(rep.totals[k - 1])


def wsr(weights, allocation, layout, precoders, channel, noise_variance=1.0) -> float:
    return evaluate(layout, precoders, channel, allocation, weights, noise_variance).wsr


def best_allocation(layout, precoders, channel, weights, qos=None, noise_variance=1.0
                    ) -> Optional[CommonRateAllocation]:
    """WSR-maximising shares for fixed precoders, or ``None`` if QoS cannot be met."""
    pairs = layout.allocation_pairs
    K = layout.K
    _, rates = _pair_rates(layout, precoders, channel, noise_variance)
    plan = layout.plan
    private = np.where(plan.private_pair >= 0, rates[np.maximum(plan.private_pair, 0)], 0.0)
    qos = np.zeros(K) if qos is None else np.asarray(qos, float)
    if not pairs:
        return CommonRateAllocation.zeros(layout) if np.all(private >= qos - 1e-12) else None
    u = np.asarray(weights, float)
    stream_rates = np.array([rates[idx].min() for idx in plan.stream_pairs])
    c = -np.array([u[k - 1] for _, k in pairs])
    A_ub, b_ub = [], []
    for j, A in enumerate(layout.streams):
        if A.order < 2:
            continue
        A_ub.append([1.0 if B == A else 0.0 for B, _ in pairs])
        b_ub.append(stream_rates[j])
    for k in range(1, K + 1):
        if qos[k - 1] > private[k - 1]:
            A_ub.append([-1.0 if kk == k else 0.0 for _, kk in pairs])
            b_ub.append(private[k - 1] - qos[k - 1])
    res = linprog(c, A_ub=np.array(A_ub), b_ub=np.array(b_ub), bounds=(0, None), method="highs")
    if res.status != 0:
        return None
    vals = np.maximum(res.x, 0.0)
    # trim LP round-off so the shares never overdraw a stream
    for j, A in enumerate(layout.streams):
        if A.order < 2:
            continue
        idx = [i for i, (B, _) in enumerate(pairs) if B == A]
        tot = vals[idx].sum()
        if tot > stream_rates[j]:
            vals[idx] *= stream_rates[j] / tot
    return CommonRateAllocation.from_vector(layout, vals)
