import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_channel
from rsma_comp import schemes, wmmse
from rsma_comp.model import InvalidInstanceError, ProblemInstance, SizeError, UserSet
from rsma_comp.schemes import (
    MULP,
    SCSIC,
    GeneralizedRS,
    OneLayerRS,
    SCSICPerGroup,
    build_scheme,
    reduction_check,
)


def U(*m):
    return UserSet.of(*m)


class TestBuild:
    def test_scsic_chain(self):
        L = build_scheme(SCSIC((1, 2, 3)), 3)
        assert list(L.streams) == [U(1, 2, 3), U(2, 3), U(3)]
        assert list(L.allocation_pairs) == [(U(1, 2, 3), 1), (U(2, 3), 2)]

    def test_scsic_other_order(self):
        L = build_scheme(SCSIC((3, 1, 2)), 3)
        assert list(L.streams) == [U(1, 2, 3), U(1, 2), U(2)]
        assert list(L.allocation_pairs) == [(U(1, 2, 3), 3), (U(1, 2), 1)]

    def test_per_group(self):
        L = build_scheme(SCSICPerGroup(((1,), (2, 3))), 3)
        assert sorted(L.streams, key=lambda s: s.members) == [U(1), U(2, 3), U(3)]
        assert list(L.allocation_pairs) == [(U(2, 3), 2)]

    def test_mulp(self):
        assert list(build_scheme(MULP(), 2).streams) == [U(1), U(2)]

    def test_one_layer(self):
        assert list(build_scheme(OneLayerRS(), 3).streams) == [U(1, 2, 3), U(1), U(2), U(3)]

    @pytest.mark.parametrize("kind", [SCSIC((1, 2)), SCSIC((1, 1, 2)), SCSICPerGroup(((1,), (1, 2))),
                                      SCSICPerGroup(((1,), ()))])
    def test_invalid(self, kind):
        with pytest.raises(InvalidInstanceError):
            build_scheme(kind, 3)

    def test_unknown(self):
        with pytest.raises(InvalidInstanceError):
            build_scheme("noma", 2)
        with pytest.raises(InvalidInstanceError):
            schemes.parse_scheme("noma")
        with pytest.raises(InvalidInstanceError):
            schemes.scheme_variants("noma", 2)

    @given(st.integers(1, 5))
    def test_stream_counts(self, K):
        assert build_scheme(MULP(), K).num_streams == K
        assert build_scheme(GeneralizedRS(), K).num_streams == 2 ** K - 1
        assert build_scheme(SCSIC(tuple(range(1, K + 1))), K).num_streams == K
        if K >= 2:
            assert build_scheme(OneLayerRS(), K).num_streams == K + 1


class TestVariants:
    def test_counts(self):
        assert len(schemes.scheme_variants("scsic", 3)) == 6
        assert len(schemes.scheme_variants("scsic-group", 3)) == 2
        assert len(schemes.scheme_variants("rs", 3)) == 6
        assert len(schemes.scheme_variants("rs", 2)) == 1
        assert len(schemes.scheme_variants("mulp", 3)) == 1

    def test_size_limit(self):
        with pytest.raises(SizeError):
            schemes.scheme_variants("scsic", 5)


def _instance(K, seed):
    r = np.random.default_rng(seed)
    ch = random_channel(r, K, K)
    inst = ProblemInstance.from_snr(K, K, float(r.uniform(0, 20)), 0.0,
                                    r.uniform(0.2, 1.0, K))
    return ch, inst


class TestReduction:
    @pytest.mark.parametrize("kind", [MULP(), OneLayerRS(), SCSIC((2, 1, 3)),
                                      SCSICPerGroup(((1,), (3, 2)))])
    def test_embedding_keeps_wsr(self, kind):
        ch, inst = _instance(3, 4)
        L = build_scheme(kind, 3)
        sol = wmmse.ao_solve(inst, L, ch, max_iters=30)
        assert reduction_check(kind, 3, sol, ch, inst)

    def test_wrong_kind(self):
        ch, inst = _instance(2, 1)
        sol = wmmse.ao_solve(inst, build_scheme(MULP(), 2), ch, max_iters=5)
        assert not reduction_check(OneLayerRS(), 2, sol, ch, inst)


@settings(max_examples=6, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_nesting_from_restricted_start(seed):
    """Starting the larger scheme at the smaller scheme's solution never loses WSR."""
    ch, inst = _instance(2, seed)
    small = wmmse.ao_solve(inst, build_scheme(MULP(), 2), ch, max_iters=40)
    one = build_scheme(OneLayerRS(), 2)
    mid = wmmse.ao_solve(inst, one, ch, init=small.precoders.embed(one),
                         allocation=small.allocation.embed(one), max_iters=40)
    noma = wmmse.ao_solve(inst, build_scheme(SCSIC((1, 2)), 2), ch, max_iters=40)
    full = schemes.full_layout(2)
    big = wmmse.ao_solve(inst, full, ch, init=mid.precoders.embed(full),
                         allocation=mid.allocation.embed(full), max_iters=40)
    big_noma = wmmse.ao_solve(inst, full, ch, init=noma.precoders.embed(full),
                              allocation=noma.allocation.embed(full), max_iters=40)
    assert mid.wsr >= small.wsr - 1e-6
    assert big.wsr >= mid.wsr - 1e-6
    assert big_noma.wsr >= noma.wsr - 1e-6
