import numpy as np
import pytest

from core.python import lfc
from core.python.channel import complex_normal
from core.python.errors import ConfigurationError, DegenerateChannelError, DimensionError, MisuseError


def _qpsk(rng, rho, size):
    return np.sqrt(rho / 2) * ((1 - 2 * rng.integers(0, 2, size)) + 1j * (1 - 2 * rng.integers(0, 2, size)))


class TestBeta:
    def test_range(self):
        b = lfc.beta(np.array([0.0, 0.5, 3.0]), 2.0, 0.5, 0.25)
        assert b[0] == 1.0
        assert np.all((b > 0) & (b <= 1))

    def test_gamma_zero_is_repetition(self):
        assert lfc.beta(1.7 + 0.2j, 5.0, 0.0, 1.0) == 1.0

    @pytest.mark.parametrize(
        "rho,gamma,sigma2,field", [(0.0, 0.5, 0.0, "rho"), (1.0, 1.5, 0.0, "gamma"), (1.0, 0.5, -1.0, "sigma2")]
    )
    def test_rejects(self, rho, gamma, sigma2, field):
        with pytest.raises(ConfigurationError, match=field):
            lfc.beta(1.0, rho, gamma, sigma2)


class TestBuildCode:
    def test_structure(self, rng):
        code = lfc.build_code(complex_normal(rng, 5), 2.0, 0.3, 0.1)
        assert code.n == 5
        assert code.g[0] == 1.0
        np.testing.assert_array_equal(np.triu(code.F), 0)
        assert np.all(np.diff(code.log_phi_sq) <= 0)

    def test_gamma_schedule_zero_columns(self, rng):
        gains = complex_normal(rng, 4)
        code = lfc.build_code(gains, 1.5, [0.5, 0.0, 0.5, 0.0], 0.2)
        np.testing.assert_array_equal(code.F[:, 1], 0)
        assert np.any(code.F[:, 0] != 0)

    def test_scalar_and_schedule_agree(self, rng):
        gains = complex_normal(rng, 4)
        a = lfc.build_code(gains, 2.0, 0.4, 0.3)
        b = lfc.build_code(gains, 2.0, [0.4] * 4, 0.3)
        np.testing.assert_allclose(a.F, b.F, rtol=1e-14)
        np.testing.assert_allclose(a.q, b.q, rtol=1e-14)

    def test_bad_schedule_length(self, rng):
        with pytest.raises(DimensionError):
            lfc.build_code(complex_normal(rng, 3), 1.0, [0.5, 0.5], 0.0)

    def test_nan_gain(self):
        with pytest.raises(ConfigurationError, match="gains"):
            lfc.build_code(np.array([1.0, np.nan]), 1.0, 0.5, 0.0)

    def test_truncate(self, rng):
        gains = complex_normal(rng, 5)
        code = lfc.build_code(gains, 2.0, 0.5, 0.1)
        sub = code.truncate(3)
        np.testing.assert_allclose(sub.F, code.F[:3, :3], rtol=1e-14)
        np.testing.assert_allclose(sub.g, code.g[:3], rtol=1e-14)
        with pytest.raises(DimensionError):
            code.truncate(6)


class TestEncodeDuality:
    def test_matrix_matches_recursion(self):
        rng = np.random.default_rng(99)
        for _ in range(1000):
            n = int(rng.integers(1, 9))
            rho = float(rng.uniform(0.1, 10.0))
            gamma = float(rng.uniform(0.0, 1.0))
            sigma2 = float(rng.choice([0.0, 0.1, 1.0]))
            gains = complex_normal(rng, n)
            theta = complex_normal(rng, 1, rho)[0]
            w = complex_normal(rng, n, 1.0 + sigma2)

            code = lfc.build_code(gains, rho, gamma, sigma2)
            x_matrix = lfc.encode_matrix(code, theta, w)

            x = theta
            x_rec = [x]
            for k in range(n - 1):
                x = lfc.encode_step(x, gains[k], w[k], rho, gamma, sigma2)
                x_rec.append(x)
            np.testing.assert_allclose(x_matrix, x_rec, rtol=1e-10, atol=1e-12)

    def test_batched_columns(self, rng):
        gains = complex_normal(rng, 3)
        code = lfc.build_code(gains, 2.0, 0.5, 0.0)
        theta = complex_normal(rng, 4, 2.0)
        w = complex_normal(rng, (3, 4))
        x = lfc.encode_matrix(code, theta, w)
        assert x.shape == (3, 4)
        np.testing.assert_allclose(x[:, 2], lfc.encode_matrix(code, theta[2], w[:, 2]))

    def test_feedback_residual(self, rng):
        x = complex_normal(rng, 6)
        z = complex_normal(rng, 6)
        h = 0.3 + 0.9j
        np.testing.assert_allclose(lfc.feedback_residual(h * x + z, h, x), z, atol=1e-14)


class TestPowerConstraint:
    @pytest.mark.parametrize("gamma", [0.0, 0.01, 1.0])
    @pytest.mark.parametrize("sigma2", [0.0, 0.25])
    def test_average_power(self, gamma, sigma2):
        rng = np.random.default_rng(5)
        rho, n, sessions = 3.0, 4, 100_000
        gains = complex_normal(rng, (n, sessions))
        x = _qpsk(rng, rho, sessions)
        for k in range(n):
            assert np.mean(np.abs(x) ** 2) == pytest.approx(rho, rel=0.02)
            w = complex_normal(rng, sessions) + complex_normal(rng, sessions, sigma2)
            x = lfc.encode_step(x, gains[k], w, rho, gamma, sigma2)


class TestCombinePerfect:
    def test_matches_noisy_branch(self, rng):
        for n in (1, 2, 4):
            gains = complex_normal(rng, n)
            ys = complex_normal(rng, (n, 3))
            perfect = lfc.combine_perfect(ys, gains, 2.0)
            code = lfc.build_code(gains, 2.0, 1.0, 0.0)
            noisy = lfc.combine_noisy(ys, code)
            np.testing.assert_allclose(perfect.theta_hat, noisy.theta_hat, rtol=1e-8, atol=1e-10)
            assert perfect.snr == pytest.approx(noisy.snr, rel=1e-8)

    def test_snr_product_form(self, rng):
        gains = complex_normal(rng, 5)
        state = lfc.combine_perfect(np.zeros(5), gains, 3.0)
        assert state.snr == pytest.approx(lfc.perfect_snr(gains, 3.0), rel=1e-12)
        assert state.err_var == pytest.approx(3.0 / state.snr, rel=1e-12)

    def test_noiseless_recovery(self, rng):
        gains = complex_normal(rng, 4)
        rho = 2.0
        code = lfc.build_code(gains, rho, 1.0, 0.0)
        theta = _qpsk(rng, rho, 10)
        x = lfc.encode_matrix(code, theta, np.zeros((4, 10)))
        state = lfc.combine_perfect(gains[:, None] * x, gains, rho)
        est, _ = lfc.unbiased_estimate(state)
        np.testing.assert_allclose(est, theta, rtol=1e-8)

    def test_misuse(self):
        with pytest.raises(MisuseError, match="combine_noisy"):
            lfc.combine_perfect(np.zeros(2), np.ones(2), 1.0, sigma2=0.1)
        with pytest.raises(MisuseError):
            lfc.combine_perfect(np.zeros(2), np.ones(2), 1.0, gamma=0.5)


class TestCombineNoisy:
    def test_noiseless_recovery(self, rng):
        gains = complex_normal(rng, 4)
        rho = 1.5
        code = lfc.build_code(gains, rho, 0.3, 0.5)
        theta = _qpsk(rng, rho, 8)
        x = lfc.encode_matrix(code, theta, np.zeros((4, 8)))
        est, _ = lfc.unbiased_estimate(lfc.combine_noisy(gains[:, None] * x, code))
        np.testing.assert_allclose(est, theta, rtol=1e-8)

    def test_error_variance(self):
        rng = np.random.default_rng(17)
        rho, sigma2, n, samples = 2.0, 0.25, 3, 100_000
        gains = np.array([0.8 + 0.3j, -0.4 + 1.1j, 0.2 - 0.5j])
        code = lfc.build_code(gains, rho, 0.4, sigma2)
        theta = _qpsk(rng, rho, samples)
        z = complex_normal(rng, (n, samples))
        noise = complex_normal(rng, (n, samples), sigma2)
        x = lfc.encode_matrix(code, theta, z + noise)
        y = gains[:, None] * x + z

        est, err_var = lfc.unbiased_estimate(lfc.combine_noisy(y, code))
        assert np.mean(np.abs(est - theta) ** 2) == pytest.approx(err_var, rel=0.03)
        assert err_var == pytest.approx(rho / lfc.post_snr(code), rel=1e-12)

    def test_partial_observations(self, rng):
        gains = complex_normal(rng, 4)
        code = lfc.build_code(gains, 2.0, 0.5, 0.1)
        state = lfc.combine_noisy(complex_normal(rng, (2, 5)), code)
        assert state.k == 2
        assert state.snr == pytest.approx(lfc.post_snr(code.truncate(2)), rel=1e-12)

    def test_too_many_observations(self, rng):
        code = lfc.build_code(complex_normal(rng, 2), 1.0, 0.5, 0.1)
        with pytest.raises(DimensionError):
            lfc.combine_noisy(np.zeros(3), code)

    def test_dispatch(self, rng):
        gains = complex_normal(rng, 3)
        ys = complex_normal(rng, 3)
        perfect = lfc.build_code(gains, 1.0, 1.0, 0.0)
        assert perfect.perfect
        assert lfc.combine(ys, perfect).snr == pytest.approx(lfc.perfect_snr(gains, 1.0), rel=1e-12)
        assert not lfc.build_code(gains, 1.0, 0.9, 0.0).perfect


class TestUnbiasedEstimate:
    def test_zero_gains(self):
        state = lfc.combine(np.zeros(3), lfc.build_code(np.zeros(3), 1.0, 0.5, 0.1))
        assert state.snr == 0.0
        assert state.err_var == np.inf
        with pytest.raises(DegenerateChannelError):
            lfc.unbiased_estimate(state)

    def test_zero_gains_perfect(self):
        state = lfc.combine_perfect(np.zeros(2), np.zeros(2), 1.0)
        with pytest.raises(DegenerateChannelError):
            lfc.unbiased_estimate(state)


class TestPostSnr:
    def test_single_transmission(self):
        code = lfc.build_code(np.array([0.6 - 0.8j]), 4.0, 0.5, 0.2)
        assert lfc.post_snr(code) == pytest.approx(4.0, rel=1e-12)

    def test_gamma_zero_is_mrc(self, rng):
        gains = complex_normal(rng, 5)
        code = lfc.build_code(gains, 2.5, 0.0, 0.7)
        assert lfc.post_snr(code) == pytest.approx(2.5 * np.sum(np.abs(gains) ** 2), rel=1e-12)

    def test_two_round_closed_form(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            h = complex_normal(rng, 2)
            rho = float(rng.uniform(0.01, 20))
            gamma = float(rng.uniform(0, 1))
            sigma2 = float(rng.uniform(0, 2))
            code = lfc.build_code(h, rho, gamma, sigma2)
            closed = lfc.snr_n2_closed(h[0], h[1], rho, gamma, sigma2)
            assert lfc.post_snr(code) == pytest.approx(closed, rel=1e-8)

    def test_nondecreasing_in_rounds(self, rng):
        code = lfc.build_code(complex_normal(rng, 6), 2.0, 0.3, 0.5)
        snrs = [lfc.post_snr(code.truncate(k)) for k in range(1, 7)]
        assert np.all(np.diff(snrs) >= -1e-12)

    def test_batch_matches_single(self, rng):
        gains = complex_normal(rng, (20, 4))
        batch = lfc.post_snr_batch(gains, 1.5, 0.2, 0.3)
        single = [lfc.post_snr(lfc.build_code(g, 1.5, 0.2, 0.3)) for g in gains]
        np.testing.assert_allclose(batch, single, rtol=1e-10)


class TestSnrBounds:
    def test_low_rho_sandwich(self):
        rng = np.random.default_rng(8)
        rho, gamma, sigma2 = 0.01, 0.5, 0.25
        h = complex_normal(rng, (2, 100_000))
        mean = np.mean(lfc.snr_n2_closed(h[0], h[1], rho, gamma, sigma2))
        upper = 2 * rho * (1 + np.sqrt(gamma) * rho + gamma * rho**2)
        lower = 2 * rho * (1 + np.sqrt(gamma) * rho - (1 + sigma2) / 2 * gamma * rho)
        assert mean < upper * 1.01
        assert mean > lower * 0.99

    def test_high_rho_limit(self):
        rng = np.random.default_rng(9)
        rho, sigma2 = 1e4, 1.0
        gains = complex_normal(rng, (10_000, 2))
        mean = np.mean(lfc.post_snr_batch(gains, rho, 1.0, sigma2))
        assert mean == pytest.approx(rho * (1 + 1 / sigma2), rel=0.1)


class TestOptimizeGamma:
    def test_perfect_feedback(self):
        assert lfc.optimize_gamma(3.0, 0.0, 4) == 1.0

    def test_grid_oracle(self):
        rho, sigma2, n = 3.0, 0.25, 4
        gamma0 = lfc.optimize_gamma(rho, sigma2, n)
        grid = np.linspace(0, 1, 2001)
        awgn = np.ones((1, n))
        best = max(lfc.post_snr_batch(awgn, rho, g, sigma2)[0] for g in grid)
        found = lfc.post_snr_batch(awgn, rho, gamma0, sigma2)[0]
        assert found >= best * (1 - 1e-6)

    def test_very_noisy_feedback(self):
        assert lfc.optimize_gamma(3.0, 1e6, 4) < 1e-3

    def test_cached(self):
        assert lfc.optimize_gamma(2.0, 0.5, 3) == lfc.optimize_gamma(2.0, 0.5, 3)

    def test_rejects_bad_n(self):
        with pytest.raises(ConfigurationError, match="n"):
            lfc.optimize_gamma(1.0, 0.1, 0)


class TestAverageSnr:
    @pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
    def test_small_fixed_gamma_beats_mrc(self, n):
        rho, sigma2 = 3.0, 0.25
        awgn = np.ones((1, n))
        assert lfc.post_snr_batch(awgn, rho, 0.01, sigma2)[0] > rho * n

    @pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
    def test_gamma0_transfers_across_n(self, n):
        rho, sigma2 = 3.0, 0.25
        awgn = np.ones((1, n))
        fixed = lfc.post_snr_batch(awgn, rho, lfc.optimize_gamma(rho, sigma2, 4), sigma2)[0]
        tuned = lfc.post_snr_batch(awgn, rho, lfc.optimize_gamma(rho, sigma2, n), sigma2)[0]
        assert fixed >= 0.9 * tuned

    def test_lfc_beats_mrc_in_fading(self):
        rng = np.random.default_rng(4)
        rho, n = 3.0, 4
        traces = complex_normal(rng, (10_000, n))
        mrc = lfc.post_snr_batch(traces, rho, 0.0, 0.0)
        gaps = []
        for sigma2 in (1.0, 0.25, 0.1, 0.0):
            gamma0 = lfc.optimize_gamma(rho, sigma2, n)
            gaps.append(lfc.post_snr_batch(traces, rho, gamma0, sigma2) - mrc)

        def lower_ci95(samples):
            return np.mean(samples) - 1.96 * np.std(samples, ddof=1) / np.sqrt(len(samples))

        for gap in gaps:
            assert lower_ci95(gap) > 0
        # gap widens as the feedback gets cleaner
        for noisier, cleaner in zip(gaps, gaps[1:]):
            assert lower_ci95(cleaner - noisier) > 0

    def test_curve_shape(self, rng):
        traces = complex_normal(rng, (50, 3))
        gammas = np.linspace(0, 1, 5)
        curve = lfc.average_snr_curve(2.0, 0.1, gammas, traces)
        assert curve.shape == (5,)
        assert curve[0] == pytest.approx(2.0 * np.mean(np.sum(np.abs(traces) ** 2, axis=1)), rel=1e-10)
