import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import channel
from rsma_comp import rates
from rsma_comp.model import (
    InvalidInstanceError,
    PrecoderSet,
    ProblemInstance,
    SizeError,
    StreamLayout,
    UserSet,
    enumerate_decoding_orders,
    enumerate_streams,
    streams_for_user,
)


def U(*m):
    return UserSet.of(*m)


def labels(streams):
    return [s.members for s in streams]


class TestProblemInstance:
    def test_from_snr_splits_power(self):
        inst = ProblemInstance.from_snr(2, 2, 20.0)
        assert inst.total_power == pytest.approx(100.0)
        np.testing.assert_allclose(inst.per_bs_power, [50.0, 50.0])

    @pytest.mark.parametrize("kw", [
        dict(M=0, K=1, per_bs_power=[], qos=0, weights=1),
        dict(M=1, K=0, per_bs_power=[1.0], qos=[], weights=[]),
        dict(M=1, K=1, per_bs_power=[0.0], qos=0, weights=1),
        dict(M=1, K=1, per_bs_power=[1.0], qos=-0.1, weights=1),
        dict(M=1, K=1, per_bs_power=[1.0], qos=0, weights=0.0),
    ])
    def test_invariants(self, kw):
        with pytest.raises(InvalidInstanceError):
            ProblemInstance(**kw)


class TestUserSet:
    def test_canonical(self):
        assert U(2, 1) == U(1, 2)
        assert U(3, 1, 2).members == (1, 2, 3)
        assert U(1, 3).order == 2

    @pytest.mark.parametrize("bad", [(), (0,), (1, 1)])
    def test_invalid(self, bad):
        with pytest.raises(InvalidInstanceError):
            UserSet(bad)


class TestEnumerateStreams:
    def test_two_users(self):
        assert labels(enumerate_streams(2)) == [(1, 2), (1,), (2,)]

    def test_three_users(self):
        s = enumerate_streams(3)
        assert len(s) == 7
        assert s[0] == U(1, 2, 3) and s[-1] == U(3)

    def test_one_layer_filter(self):
        s = enumerate_streams(3, lambda a: a.order in (1, 3))
        assert labels(s) == [(1, 2, 3), (1,), (2,), (3,)]

    def test_zero_users(self):
        with pytest.raises(InvalidInstanceError):
            enumerate_streams(0)

    @given(st.integers(1, 6))
    def test_counts(self, K):
        s = enumerate_streams(K)
        assert len(s) == 2 ** K - 1
        assert len(set(s)) == len(s)
        for k in range(1, K + 1):
            assert sum(k in a for a in s) == 2 ** (K - 1)
        orders = [a.order for a in s]
        assert orders == sorted(orders, reverse=True)
        assert s == enumerate_streams(K)


class TestStreamsForUser:
    def test_two_users(self):
        L = StreamLayout(2, enumerate_streams(2))
        assert labels(streams_for_user(1, L)) == [(1, 2), (1,)]

    def test_fig1_order(self):
        L = StreamLayout(3, enumerate_streams(3), {2: [U(1, 2), U(1, 3), U(2, 3)]})
        assert labels(streams_for_user(1, L)) == [(1, 2, 3), (1, 2), (1, 3), (1,)]

    def test_nested_group_layout(self):
        L = StreamLayout(3, [U(1), U(2, 3), U(3)], allocation=[(U(2, 3), 2)])
        assert labels(streams_for_user(2, L)) == [(2, 3)]

    def test_unknown_user(self):
        with pytest.raises(InvalidInstanceError):
            streams_for_user(3, StreamLayout(2, enumerate_streams(2)))

    @given(st.permutations([U(1, 2), U(1, 3), U(2, 3)]))
    def test_respects_pi(self, perm):
        L = StreamLayout(3, enumerate_streams(3), {2: perm})
        for k in (1, 2, 3):
            mine = [s for s in streams_for_user(k, L) if s.order == 2]
            assert mine == [s for s in perm if k in s]


class TestLayout:
    def test_order_must_permute(self):
        with pytest.raises(InvalidInstanceError):
            StreamLayout(3, enumerate_streams(3), {2: [U(1, 2), U(1, 3)]})

    def test_duplicate_streams(self):
        with pytest.raises(InvalidInstanceError):
            StreamLayout(2, [U(1), U(1)])

    def test_common_stream_needs_a_message(self):
        with pytest.raises(InvalidInstanceError):
            StreamLayout(2, enumerate_streams(2), allocation=[])

    def test_interferers_need_membership(self):
        L = StreamLayout(2, enumerate_streams(2))
        with pytest.raises(InvalidInstanceError):
            L.interferers(2, U(1))


class TestDecodingOrders:
    def test_counts(self):
        L = StreamLayout(3, enumerate_streams(3))
        assert len(enumerate_decoding_orders(L, 2)) == 6
        assert len(enumerate_decoding_orders(L, 3)) == 1
        assert enumerate_decoding_orders(StreamLayout(3, [U(1), U(2), U(3)]), 2) == []

    def test_private_order_irrelevant(self, rng):
        base = StreamLayout(2, enumerate_streams(2))
        ch = channel(rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))
        P = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
        reps = []
        for perm in enumerate_decoding_orders(base, 1):
            L = base.with_decoding_order(1, perm)
            reps.append(rates.evaluate(L, PrecoderSet(L, P), ch).decode_rates)
        assert len(reps) == 2
        np.testing.assert_allclose(reps[0], reps[1], rtol=0, atol=1e-14)

    def test_size_limit(self):
        L = StreamLayout(5, enumerate_streams(5, lambda a: a.order == 1))
        with pytest.raises(SizeError):
            enumerate_decoding_orders(L, 1)


class TestPrecoderSet:
    def test_column_count(self):
        L = StreamLayout(2, enumerate_streams(2))
        with pytest.raises(InvalidInstanceError):
            PrecoderSet(L, np.zeros((2, 2)))

    @settings(max_examples=25)
    @given(st.integers(1, 4), st.integers(0, 2 ** 31))
    def test_per_bs_power(self, M, seed):
        r = np.random.default_rng(seed)
        L = StreamLayout(2, enumerate_streams(2))
        P = r.standard_normal((M, 3)) + 1j * r.standard_normal((M, 3))
        ps = PrecoderSet(L, P)
        np.testing.assert_allclose(ps.per_bs_power(), np.real(np.diag(P @ P.conj().T)))

    def test_embed_keeps_columns(self):
        small = StreamLayout(2, [U(1), U(2)])
        full = StreamLayout(2, enumerate_streams(2))
        P = PrecoderSet(small, np.array([[1, 2], [3, 4]], dtype=complex)).embed(full)
        np.testing.assert_array_equal(P.column(U(1, 2)), 0)
        np.testing.assert_array_equal(P.column(U(2)), [2, 4])
