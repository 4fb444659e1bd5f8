import numpy as np
import pytest

from core.python import modem
from core.python.channel import complex_normal
from core.python.errors import ConfigurationError, DimensionError, NumericError


@pytest.fixture(params=[4, 16, 64])
def qam(request):
    return modem.build_constellation(request.param, 2.5)


class TestGrayCode:
    def test_neighbours_differ_in_one_bit(self):
        g = modem.gray_code(4)
        assert sorted(g) == list(range(16))
        assert all(bin(a ^ b).count("1") == 1 for a, b in zip(g[:-1], g[1:]))

    def test_negative(self):
        with pytest.raises(ValueError):
            modem.gray_code(-1)


class TestConstellation:
    def test_mean_power(self, qam):
        assert qam.mean_power == pytest.approx(2.5, rel=1e-12)

    def test_alpha(self, qam):
        assert qam.alpha == pytest.approx(3 * 2.5 / (2 * (qam.m_points - 1)))

    def test_unique_labels(self, qam):
        assert len({tuple(label) for label in qam.labels}) == qam.m_points

    def test_gray_neighbours(self, qam):
        spacing = 2 * np.sqrt(qam.alpha)
        for i, p in enumerate(qam.points):
            dist = np.abs(qam.points - p)
            for j in np.flatnonzero(np.isclose(dist, spacing)):
                assert np.sum(qam.labels[i] != qam.labels[j]) == 1

    def test_zero_label_positive_half_plane(self, qam):
        assert np.all(qam.points[qam.labels[:, 0] == 0].real > 0)

    def test_names(self):
        assert modem.constellation_from_token("QPSK", 1.0).name == "qpsk"
        assert modem.constellation_from_token("64qam", 1.0).name == "64qam"

    @pytest.mark.parametrize("m,rho", [(8, 1.0), (16, 0.0), (4, np.nan)])
    def test_rejects(self, m, rho):
        with pytest.raises(ConfigurationError):
            modem.build_constellation(m, rho)

    def test_unknown_token(self):
        with pytest.raises(ConfigurationError, match="constellation"):
            modem.constellation_from_token("8psk", 1.0)


class TestSizeConstellation:
    @pytest.mark.parametrize(
        "capacity,n,expected", [(1.0, 4, 4), (1.0, 5, 16), (1.0, 7, 64), (2.0, 8, 64), (0.1, 2, 4)]
    )
    def test_sizes(self, capacity, n, expected):
        assert modem.size_constellation(capacity, n) == expected


class TestMapBits:
    def test_round_trip_noiseless(self, qam, rng):
        bits = rng.integers(0, 2, qam.bits_per_symbol * 50)
        symbols = modem.map_bits(bits, qam)
        llrs = modem.llr_demap(symbols, 0.01, qam, symbols=False).bit_llrs
        np.testing.assert_array_equal(modem.hard_decision(llrs), bits)

    def test_msb_first(self):
        qpsk = modem.build_constellation(4, 2.0)
        np.testing.assert_allclose(modem.map_bits([0, 0, 1, 1], qpsk), [1 + 1j, -1 - 1j])

    def test_bad_length(self):
        with pytest.raises(DimensionError):
            modem.map_bits([0, 1, 1], modem.build_constellation(16, 1.0))


class TestLlrDemap:
    def test_qpsk_closed_form(self, rng):
        qpsk = modem.build_constellation(4, 3.0)
        est = complex_normal(rng, 20, 3.0)
        v = 0.7
        llrs = modem.llr_demap(est, v, qpsk, symbols=False).bit_llrs.reshape(-1, 2)
        scale = 4 * np.sqrt(qpsk.alpha) / v
        np.testing.assert_allclose(llrs[:, 0], scale * est.real, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(llrs[:, 1], scale * est.imag, rtol=1e-10, atol=1e-12)

    def test_max_log_qpsk_exact(self, rng):
        qpsk = modem.build_constellation(4, 1.0)
        est = complex_normal(rng, 10)
        exact = modem.llr_demap(est, 0.3, qpsk, symbols=False).bit_llrs
        approx = modem.llr_demap(est, 0.3, qpsk, max_log=True, symbols=False).bit_llrs
        np.testing.assert_allclose(approx, exact, rtol=1e-10, atol=1e-12)

    def test_infinite_variance(self, qam):
        result = modem.llr_demap(np.array([0.3 + 0.1j]), np.inf, qam)
        np.testing.assert_array_equal(result.bit_llrs, 0)

    def test_zero_variance(self, qam):
        with pytest.raises(NumericError):
            modem.llr_demap(np.array([0.3 + 0.1j]), 0.0, qam)

    def test_symbol_log_app(self):
        qpsk = modem.build_constellation(4, 2.0)
        result = modem.llr_demap(np.array([1 + 1j]), 0.5, qpsk)
        assert result.symbol_log_app.shape == (1, 4)
        assert np.argmax(result.symbol_log_app[0]) == 0
        assert result.symbol_log_app[0, 0] > 0

    def test_per_symbol_variance(self):
        qpsk = modem.build_constellation(4, 2.0)
        llrs = modem.llr_demap(np.array([0.5, 0.5]), np.array([0.1, 1.0]), qpsk, symbols=False).bit_llrs
        assert llrs[0] == pytest.approx(10 * llrs[2])


class TestSymbolErrorProbability:
    def test_qpsk_value(self):
        assert float(modem.symbol_error_probability(0.5, 4, 1.0)) == pytest.approx(0.151, abs=0.002)

    def test_matches_monte_carlo(self):
        rng = np.random.default_rng(12)
        qpsk = modem.build_constellation(4, 1.0)
        n = 200_000
        idx = rng.integers(0, 4, n)
        est = qpsk.points[idx] + complex_normal(rng, n, 0.5)
        nearest = np.argmin(np.abs(est[:, None] - qpsk.points[None, :]), axis=1)
        assert np.mean(nearest != idx) == pytest.approx(
            float(modem.symbol_error_probability(0.5, 4, 1.0)), abs=0.005
        )

    def test_limits(self):
        assert float(modem.symbol_error_probability(np.inf, 16, 1.0)) == pytest.approx(1 - 1 / 16)
        assert float(modem.symbol_error_probability(1e-9, 16, 1.0)) == pytest.approx(0.0, abs=1e-12)
        assert float(modem.symbol_error_probability(0.5, 1.0, 1.0)) == 0.0

    def test_fractional_size_monotone(self):
        sizes = [3.5, 4.0, 10.7, 16.0, 40.2]
        probs = [float(modem.symbol_error_probability(0.2, m, 1.0)) for m in sizes]
        assert np.all(np.diff(probs) > 0)
