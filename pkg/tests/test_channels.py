import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsma_comp import channels
from rsma_comp.channels import ChannelState


class TestSampler:
    def test_zero_variance(self, rng):
        assert channels.sample_complex_gaussian(0.0, rng) == 0

    def test_unit_power(self):
        x = channels.sample_complex_gaussian(1.0, np.random.default_rng(0), size=100_000)
        assert 0.98 <= np.mean(np.abs(x) ** 2) <= 1.02
        # circular symmetry: each part carries half the power
        assert np.var(x.real) == pytest.approx(0.5, rel=0.03)
        assert np.var(x.imag) == pytest.approx(0.5, rel=0.03)

    def test_deterministic(self):
        a = channels.sample_complex_gaussian(np.ones(5), np.random.default_rng(3))
        b = channels.sample_complex_gaussian(np.ones(5), np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_negative(self, rng):
        with pytest.raises(ValueError):
            channels.sample_complex_gaussian(-1.0, rng)


class TestProfiles:
    def test_two_cell_symmetric(self):
        np.testing.assert_array_equal(channels.two_cell_variances(1, 1), np.ones((2, 2)))

    def test_two_cell_example(self):
        np.testing.assert_allclose(channels.two_cell_variances(0.05, 0.1),
                                   [[1, 0.05], [0.005, 0.1]], rtol=1e-15)

    @given(st.floats(0.01, 1.0))
    def test_equal_norms_at_unit_beta(self, alpha):
        v = channels.two_cell_variances(alpha, 1.0)
        assert v[0].sum() == pytest.approx(1 + alpha)
        assert v[1].sum() == pytest.approx(1 + alpha)

    def test_three_cell(self):
        np.testing.assert_array_equal(channels.three_cell_variances(1, 1),
                                      [[1, 1, 0], [1, 1, 1], [0, 1, 1]])
        v = channels.three_cell_variances(0.5, 0.3)
        assert v[1, 0] == pytest.approx(0.15) and v[1, 2] == pytest.approx(0.15)

    @pytest.mark.parametrize("a,b", [(0.0, 0.5), (0.5, 0.0), (1.5, 0.5), (0.5, -1), (0.5, 2)])
    def test_range(self, a, b, rng):
        with pytest.raises(ValueError):
            channels.wyner_two_cell(a, b, rng)
        with pytest.raises(ValueError):
            channels.wyner_three_cell(a, b, rng)

    def test_unknown_topology(self):
        with pytest.raises(ValueError):
            channels.draw("ring", 0.5, 0.5, 0, 0)


@pytest.mark.parametrize("topology", channels.TOPOLOGIES)
def test_statistics(topology):
    draws = [channels.draw(topology, 0.5, 0.3, 11, i) for i in range(10_000)]
    H = np.stack([d.H for d in draws])
    var = draws[0].variances
    emp = np.mean(np.abs(H) ** 2, axis=0)
    live = var > 0
    np.testing.assert_allclose(emp[live], var[live], rtol=0.05)
    assert np.all(H[:, ~live] == 0)
    # normalised cross-correlation between distinct live entries
    flat = H[:, live] / np.sqrt(var[live])
    C = np.abs(flat.conj().T @ flat) / len(draws)
    off = C[~np.eye(C.shape[0], dtype=bool)]
    assert off.max() <= 0.05


def test_structural_zeros_every_draw():
    for i in range(200):
        H = channels.draw("three-cell", 0.7, 0.9, 5, i).H
        assert H[0, 2] == 0 and H[2, 0] == 0
        assert H.shape == (3, 3)


class TestDeterminism:
    def test_seed_and_index(self):
        a = channels.draw("two-cell", 0.5, 0.5, 9, 4)
        b = channels.draw("two-cell", 0.5, 0.5, 9, 4)
        np.testing.assert_array_equal(a.H, b.H)
        assert not np.array_equal(a.H, channels.draw("two-cell", 0.5, 0.5, 9, 5).H)
        assert not np.array_equal(a.H, channels.draw("two-cell", 0.5, 0.5, 10, 4).H)

    def test_order_independent(self):
        fwd = [channels.draw("three-cell", 0.5, 0.5, 1, i).H for i in range(5)]
        back = [channels.draw("three-cell", 0.5, 0.5, 1, i).H for i in reversed(range(5))]
        for x, y in zip(fwd, reversed(back)):
            np.testing.assert_array_equal(x, y)


class TestCsv:
    def test_round_trip(self, tmp_path):
        chs = [channels.draw("three-cell", 0.4, 0.6, 2, i) for i in range(3)]
        path = tmp_path / "ch.csv"
        channels.write_channels_csv(path, chs)
        back = channels.read_channels_csv(path)
        assert [c.index for c in back] == [0, 1, 2]
        for a, b in zip(chs, back):
            np.testing.assert_array_equal(a.H, b.H)

    def test_format(self):
        buf = io.StringIO()
        channels.write_channels_csv(buf, [ChannelState(np.array([[1 + 2j]]), np.ones((1, 1)), 0, 7)])
        assert buf.getvalue() == "realization,user,bs,re,im\n7,1,1,1.0,2.0\n"
