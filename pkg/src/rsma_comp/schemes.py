"""Multiple-access schemes as restrictions of the generalized RS layout.

SDMA (MU-LP) keeps only private streams, 1-layer RS adds the single K-order
common stream, and the two NOMA variants (SC-SIC and SC-SIC per group) keep a
nested chain of streams in which each user's whole message rides one stream.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .model import (
    MAX_ORDER_SEARCH_USERS,
    InvalidInstanceError,
    PrecoderSet,
    SizeError,
    StreamLayout,
    UserSet,
    enumerate_decoding_orders,
    enumerate_streams,
)
from . import rates

__all__ = [
    "GeneralizedRS",
    "OneLayerRS",
    "MULP",
    "SCSIC",
    "SCSICPerGroup",
    "build_scheme",
    "scheme_variants",
    "parse_scheme",
    "SCHEME_NAMES",
    "full_layout",
    "reduction_check",
]


@dataclass(frozen=True)
class GeneralizedRS:
    name = "rs"


@dataclass(frozen=True)
class OneLayerRS:
    name = "1lrs"


@dataclass(frozen=True)
class MULP:
    name = "mulp"


@dataclass(frozen=True)
class SCSIC:
    """Superposition coding; ``order[0]``'s message is decoded by everyone."""

    order: Tuple[int, ...]
    name = "scsic"


@dataclass(frozen=True)
class SCSICPerGroup:
    """SC-SIC inside each group, MU-LP across groups.

    ``groups`` partitions the users; each group tuple lists its SIC order.
    """

    groups: Tuple[Tuple[int, ...], ...]
    name = "scsic-group"


SCHEME_NAMES = ("rs", "1lrs", "mulp", "scsic", "scsic-group")


def _check_perm(order, K):
    if sorted(order) != list(range(1, K + 1)):
        raise InvalidInstanceError(f"{tuple(order)} is not a permutation of users 1..{K}")


def _chain(order):
    """Nested streams {o_i, ..., o_n}; o_i's message rides the i-th one."""
    streams, alloc = [], []
    for i, k in enumerate(order):
        A = UserSet(tuple(order[i:]))
        streams.append(A)
        if A.order >= 2:
            alloc.append((A, k))
    return streams, alloc


def build_scheme(kind, K) -> StreamLayout:
    if K < 1:
        raise InvalidInstanceError("need at least one user")
    if isinstance(kind, GeneralizedRS):
        return StreamLayout(K, enumerate_streams(K))
    if isinstance(kind, OneLayerRS):
        return StreamLayout(K, enumerate_streams(K, lambda s: s.order in (1, K)))
    if isinstance(kind, MULP):
        return StreamLayout(K, enumerate_streams(K, lambda s: s.order == 1))
    if isinstance(kind, SCSIC):
        _check_perm(kind.order, K)
        streams, alloc = _chain(kind.order)
        return StreamLayout(K, streams, allocation=alloc)
    if isinstance(kind, SCSICPerGroup):
        flat = [k for g in kind.groups for k in g]
        if any(len(g) == 0 for g in kind.groups):
            raise InvalidInstanceError("groups must be nonempty")
        _check_perm(flat, K)
        streams, alloc = [], []
        for g in kind.groups:
            s, a = _chain(tuple(g))
            streams += s
            alloc += a
        return StreamLayout(K, streams, allocation=alloc)
    raise InvalidInstanceError(f"unknown scheme {kind!r}")


def default_groups(K):
    """User 1 alone, everyone else in the second group."""
    return ((1,), tuple(range(2, K + 1))) if K > 1 else ((1,),)


def scheme_variants(name, K):
    """Layouts over which a named scheme optimises its decoding order.

    Returns a list of ``(label, layout)``. ``rs`` enumerates the orders of
    every stream order with more than one active stream; ``scsic`` every user
    permutation; ``scsic-group`` the intra-group orders of the default
    grouping.
    """
    if K > MAX_ORDER_SEARCH_USERS:
        raise SizeError(f"decoding-order search supports K <= {MAX_ORDER_SEARCH_USERS}")
    if name in ("rs", "1lrs"):
        base = build_scheme(GeneralizedRS() if name == "rs" else OneLayerRS(), K)
        layouts = [base]
        for l in range(2, K):
            perms = enumerate_decoding_orders(base, l)
            if len(perms) > 1:
                layouts = [L.with_decoding_order(l, p) for L in layouts for p in perms]
        return [(L.describe_orders(), L) for L in layouts]
    if name == "mulp":
        return [("-", build_scheme(MULP(), K))]
    if name == "scsic":
        return [(">".join(map(str, p)), build_scheme(SCSIC(p), K))
                for p in itertools.permutations(range(1, K + 1))]
    if name == "scsic-group":
        groups = default_groups(K)
        out = []
        for combo in itertools.product(*(itertools.permutations(g) for g in groups)):
            label = "|".join(">".join(map(str, g)) for g in combo)
            out.append((label, build_scheme(SCSICPerGroup(tuple(combo)), K)))
        return out
    raise InvalidInstanceError(f"unknown scheme name {name!r}; expected one of {SCHEME_NAMES}")


def parse_scheme(name):
    if name not in SCHEME_NAMES:
        raise InvalidInstanceError(f"unknown scheme name {name!r}; expected one of {SCHEME_NAMES}")
    return name


def full_layout(K) -> StreamLayout:
    return build_scheme(GeneralizedRS(), K)


def reduction_check(kind, K, solution, channel, instance, tol=1e-9) -> bool:
    """Whether ``solution`` stays feasible with the same WSR once embedded in full RS.

    ``solution`` is any object exposing ``precoders`` and ``allocation``
    (e.g. a WMMSE ``Solution``) computed under the layout of ``kind``.
    """
    layout = solution.precoders.layout
    if kind is not None and build_scheme(kind, K).streams != layout.streams:
        return False
    own = rates.evaluate(layout, solution.precoders, channel, solution.allocation,
                         instance.weights, instance.noise_variance)
    full = full_layout(K)
    # equal-order streams absent from the restriction carry no power, so any
    # decoding order among them leaves every interference term unchanged
    P = solution.precoders.embed(full)
    alloc = solution.allocation.embed(full)
    try:
        emb = rates.evaluate(full, P, channel, alloc, instance.weights, instance.noise_variance)
    except rates.InfeasibleAllocationError:
        return False
    power_ok = np.all(P.per_bs_power() <= instance.per_bs_power + 1e-8)
    qos_ok = np.all(emb.totals >= instance.qos - 1e-4)
    return bool(power_ok and qos_ok and abs(emb.wsr - own.wsr) <= tol)
