"""Core types: problem instances, user-subset streams and decoding orders.

Users are numbered ``1..K`` throughout the public API. A stream is identified
by the sorted tuple of users that decode it; its *order* is the number of
those users. Higher-order streams are always decoded first, and streams of
equal order are decoded according to a per-order permutation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "InvalidInstanceError",
    "SizeError",
    "ProblemInstance",
    "UserSet",
    "StreamLayout",
    "PrecoderSet",
    "enumerate_streams",
    "streams_for_user",
    "enumerate_decoding_orders",
    "MAX_ORDER_SEARCH_USERS",
]

# exhaustive decoding-order search is factorial in the number of streams
MAX_ORDER_SEARCH_USERS = 4


class InvalidInstanceError(ValueError):
    pass


class SizeError(InvalidInstanceError):
    pass


def _frozen_array(values, n, what, dtype=float):
    arr = np.array(values, dtype=dtype).reshape(-1)
    if arr.size == 1 and n > 1:
        arr = np.full(n, arr[0], dtype=dtype)
    if arr.shape != (n,):
        raise InvalidInstanceError(f"{what}: expected {n} entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInstanceError(f"{what}: non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Weighted-sum-rate problem data for ``M`` single-antenna BSs and ``K`` users.

    ``per_bs_power``, ``qos`` and ``weights`` accept a scalar (broadcast) or
    a full vector.
    """

    M: int
    K: int
    per_bs_power: np.ndarray
    qos: np.ndarray = None
    weights: np.ndarray = None
    noise_variance: float = 1.0

    def __post_init__(self):
        if self.M < 1:
            raise InvalidInstanceError("need at least one base station")
        if self.K < 1:
            raise InvalidInstanceError("need at least one user")
        power = _frozen_array(self.per_bs_power, self.M, "per_bs_power")
        qos = _frozen_array(0.0 if self.qos is None else self.qos, self.K, "qos")
        weights = _frozen_array(1.0 if self.weights is None else self.weights, self.K, "weights")
        if np.any(power <= 0):
            raise InvalidInstanceError("per-BS power limits must be positive")
        if np.any(qos < 0):
            raise InvalidInstanceError("QoS thresholds must be nonnegative")
        if np.any(weights <= 0):
            raise InvalidInstanceError("weights must be positive")
        if not self.noise_variance > 0:
            raise InvalidInstanceError("noise variance must be positive")
        object.__setattr__(self, "per_bs_power", power)
        object.__setattr__(self, "qos", qos)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "noise_variance", float(self.noise_variance))

    @property
    def total_power(self):
        return float(np.sum(self.per_bs_power))

    @classmethod
    def from_snr(cls, M, K, snr_db, qos=0.0, weights=1.0, noise_variance=1.0):
        """Split ``P_tot = 10^(snr/10)`` equally across the ``M`` base stations."""
        p_tot = 10.0 ** (snr_db / 10.0)
        return cls(M, K, np.full(M, p_tot / M), qos, weights, noise_variance)

    def replace(self, **changes):
        fields = dict(M=self.M, K=self.K, per_bs_power=self.per_bs_power, qos=self.qos,
                      weights=self.weights, noise_variance=self.noise_variance)
        fields.update(changes)
        return ProblemInstance(**fields)


@dataclass(frozen=True, order=False)
class UserSet:
    """Sorted, nonempty set of user ids decoding one stream."""

    members: Tuple[int, ...]

    def __post_init__(self):
        members = tuple(int(k) for k in self.members)
        if not members:
            raise InvalidInstanceError("a stream must be decoded by at least one user")
        if any(k < 1 for k in members):
            raise InvalidInstanceError("user ids start at 1")
        if len(set(members)) != len(members):
            raise InvalidInstanceError(f"duplicate users in {members}")
        object.__setattr__(self, "members", tuple(sorted(members)))

    @classmethod
    def of(cls, *users):
        if len(users) == 1 and isinstance(users[0], (str, tuple, list, frozenset, set)):
            arg = users[0]
            users = tuple(int(ch) for ch in arg) if isinstance(arg, str) else tuple(arg)
        return cls(tuple(users))

    @property
    def order(self):
        return len(self.members)

    def __contains__(self, k):
        return k in self.members

    def __iter__(self):
        return iter(self.members)

    def __len__(self):
        return len(self.members)

    @property
    def label(self):
        sep = "" if all(k < 10 for k in self.members) else ","
        return sep.join(str(k) for k in self.members)

    def sort_key(self):
        return (-self.order, self.members)

    def __repr__(self):
        return f"s{{{self.label}}}"


def enumerate_streams(K: int, mask: Optional[Callable[[UserSet], bool]] = None) -> List[UserSet]:
    """All nonempty user subsets passing ``mask``, highest order first.

    Within one order the subsets are lexicographic.
    """
    if K < 1:
        raise InvalidInstanceError("need at least one user")
    out = []
    for l in range(K, 0, -1):
        for combo in itertools.combinations(range(1, K + 1), l):
            s = UserSet(combo)
            if mask is None or mask(s):
                out.append(s)
    return out


@dataclass(frozen=True)
class _Plan:
    """Index arrays used by the vectorised rate evaluation."""

    pair_user: np.ndarray        # 0-based user of each decode pair
    pair_stream: np.ndarray      # stream column of each decode pair
    interferers: np.ndarray      # bool (pairs, streams)
    private_pair: np.ndarray     # decode pair of user k's 1-order stream, -1 if none
    stream_pairs: Tuple[np.ndarray, ...]


@dataclass(frozen=True)
class StreamLayout:
    """Active streams, per-order decoding orders and allowed rate shares.

    Parameters
    ----------
    K : int
        Number of users.
    streams : sequence of UserSet
        Active streams; stored highest order first, lexicographic within an
        order. Precoder columns follow this order.
    decoding_orders : mapping l -> sequence of UserSet, optional
        Permutation of the active ``l``-order streams. Missing orders default
        to the canonical (lexicographic) order.
    allocation : iterable of (UserSet, int), optional
        ``(A, k)`` pairs whose common-rate share ``C_k^A`` may be nonzero.
        Defaults to every member of every stream of order >= 2.
    """

    K: int
    streams: Tuple[UserSet, ...]
    decoding_orders: Tuple[Tuple[UserSet, ...], ...] = None
    allocation: FrozenSet[Tuple[UserSet, int]] = None

    def __post_init__(self):
        if self.K < 1:
            raise InvalidInstanceError("need at least one user")
        raw = tuple(s if isinstance(s, UserSet) else UserSet.of(s) for s in self.streams)
        streams = tuple(sorted(set(raw), key=UserSet.sort_key))
        if len(streams) != len(raw):
            raise InvalidInstanceError("streams must be distinct")
        if not streams:
            raise InvalidInstanceError("layout needs at least one stream")
        for s in streams:
            if s.members[-1] > self.K:
                raise InvalidInstanceError(f"stream {s!r} names a user beyond K={self.K}")
        object.__setattr__(self, "streams", streams)

        given = {} if self.decoding_orders is None else self.decoding_orders
        if not isinstance(given, dict):
            given = {l + 1: perm for l, perm in enumerate(given)}
        orders = []
        for l in range(1, self.K + 1):
            active = [s for s in streams if s.order == l]
            perm = tuple(given.get(l, ())) or tuple(active)
            perm = tuple(UserSet.of(p) if not isinstance(p, UserSet) else p for p in perm)
            if sorted(perm, key=UserSet.sort_key) != active:
                raise InvalidInstanceError(
                    f"decoding order for order {l} must permute the active {l}-order streams")
            orders.append(perm)
        object.__setattr__(self, "decoding_orders", tuple(orders))

        if self.allocation is None:
            alloc = frozenset((s, k) for s in streams if s.order >= 2 for k in s.members)
        else:
            alloc = frozenset((UserSet.of(a) if not isinstance(a, UserSet) else a, int(k))
                              for a, k in self.allocation)
        for a, k in alloc:
            if a not in streams or k not in a:
                raise InvalidInstanceError(f"allocation pair ({a!r}, {k}) not in layout")
        for s in streams:
            if s.order >= 2 and not any((s, k) in alloc for k in s.members):
                raise InvalidInstanceError(f"stream {s!r} carries no user's message")
        object.__setattr__(self, "allocation", alloc)

    # -- lookups ------------------------------------------------------------
    @property
    def num_streams(self):
        return len(self.streams)

    def index(self, stream) -> int:
        stream = stream if isinstance(stream, UserSet) else UserSet.of(stream)
        try:
            return self._index[stream]
        except KeyError:
            raise InvalidInstanceError(f"stream {stream!r} not active in layout") from None

    @cached_property
    def _index(self) -> Dict[UserSet, int]:
        return {s: i for i, s in enumerate(self.streams)}

    def __contains__(self, stream):
        return stream in self._index

    def decoding_order(self, l) -> Tuple[UserSet, ...]:
        return self.decoding_orders[l - 1]

    def allocation_users(self, stream) -> List[int]:
        return [k for k in stream.members if (stream, k) in self.allocation]

    @cached_property
    def allocation_pairs(self) -> Tuple[Tuple[UserSet, int], ...]:
        """Enabled ``(A, k)`` share pairs with ``|A| >= 2`` in canonical order."""
        return tuple((s, k) for s in self.streams if s.order >= 2
                     for k in s.members if (s, k) in self.allocation)

    def private_stream(self, k) -> Optional[UserSet]:
        s = UserSet((k,))
        return s if s in self._index else None

    def with_decoding_order(self, l, perm) -> "StreamLayout":
        orders = {i + 1: p for i, p in enumerate(self.decoding_orders)}
        orders[l] = tuple(perm)
        return StreamLayout(self.K, self.streams, orders, self.allocation)

    @cached_property
    def decode_pairs(self) -> Tuple[Tuple[int, UserSet], ...]:
        """Every ``(k, A)`` with ``k in A``, grouped by user then SIC order."""
        return tuple((k, s) for k in range(1, self.K + 1) for s in streams_for_user(k, self))

    def interferers(self, k, stream) -> List[UserSet]:
        """Streams that still interfere when user ``k`` decodes ``stream``."""
        stream = stream if isinstance(stream, UserSet) else UserSet.of(stream)
        if k not in stream:
            raise InvalidInstanceError(f"user {k} does not decode {stream!r}")
        self.index(stream)
        l = stream.order
        same = [s for s in self.decoding_order(l) if k in s]
        later = same[same.index(stream) + 1:]
        lower = [s for s in self.streams if k in s and s.order < l]
        foreign = [s for s in self.streams if k not in s]
        return later + lower + foreign

    @cached_property
    def plan(self) -> _Plan:
        pairs = self.decode_pairs
        n = self.num_streams
        pair_user = np.array([k - 1 for k, _ in pairs], dtype=int)
        pair_stream = np.array([self.index(s) for _, s in pairs], dtype=int)
        interf = np.zeros((len(pairs), n), dtype=bool)
        for i, (k, s) in enumerate(pairs):
            for t in self.interferers(k, s):
                interf[i, self.index(t)] = True
        private = np.full(self.K, -1, dtype=int)
        for i, (k, s) in enumerate(pairs):
            if s.order == 1:
                private[k - 1] = i
        stream_pairs = tuple(np.flatnonzero(pair_stream == j) for j in range(n))
        for arr in (pair_user, pair_stream, interf, private):
            arr.setflags(write=False)
        return _Plan(pair_user, pair_stream, interf, private, stream_pairs)

    def describe_orders(self) -> str:
        parts = []
        for l in range(self.K, 0, -1):
            perm = self.decoding_order(l)
            if len(perm) > 1 and l > 1:
                parts.append(">".join(s.label for s in perm))
        return "|".join(parts) or "-"


def streams_for_user(k: int, layout: StreamLayout) -> List[UserSet]:
    """Streams decoded by user ``k`` in SIC order (high order first, then ``pi_l``)."""
    if not 1 <= k <= layout.K:
        raise InvalidInstanceError(f"unknown user id {k}")
    out = []
    for l in range(layout.K, 0, -1):
        out.extend(s for s in layout.decoding_order(l) if k in s)
    return out


def enumerate_decoding_orders(layout: StreamLayout, l: int) -> List[Tuple[UserSet, ...]]:
    """All permutations of the active ``l``-order streams."""
    if layout.K > MAX_ORDER_SEARCH_USERS:
        raise SizeError(
            f"exhaustive decoding-order search supports K <= {MAX_ORDER_SEARCH_USERS}")
    if not 1 <= l <= layout.K:
        raise InvalidInstanceError(f"order {l} outside 1..{layout.K}")
    active = [s for s in layout.streams if s.order == l]
    if not active:
        return []
    return list(itertools.permutations(active))


@dataclass(frozen=True, eq=False)
class PrecoderSet:
    """One complex ``M``-vector per active stream, as columns of ``matrix``."""

    layout: StreamLayout
    matrix: np.ndarray

    def __post_init__(self):
        P = np.array(self.matrix, dtype=complex)
        if P.ndim != 2 or P.shape[1] != self.layout.num_streams:
            raise InvalidInstanceError(
                f"precoder matrix needs {self.layout.num_streams} columns, got shape {P.shape}")
        if not np.all(np.isfinite(P)):
            raise InvalidInstanceError("precoders must be finite")
        P.setflags(write=False)
        object.__setattr__(self, "matrix", P)

    @property
    def M(self):
        return self.matrix.shape[0]

    def column(self, stream) -> np.ndarray:
        return self.matrix[:, self.layout.index(stream)]

    def per_bs_power(self) -> np.ndarray:
        """Diagonal of ``P P^H``."""
        return np.sum(np.abs(self.matrix) ** 2, axis=1)

    def embed(self, layout: StreamLayout) -> "PrecoderSet":
        """Zero-pad into a larger layout containing all of this layout's streams."""
        P = np.zeros((self.M, layout.num_streams), dtype=complex)
        for j, s in enumerate(self.layout.streams):
            P[:, layout.index(s)] = self.matrix[:, j]
        return PrecoderSet(layout, P)

    def with_layout(self, layout: StreamLayout) -> "PrecoderSet":
        """Same columns under a layout with identical streams (e.g. new decoding order)."""
        if layout.streams != self.layout.streams:
            raise InvalidInstanceError("layouts differ in their active streams")
        return PrecoderSet(layout, self.matrix)
