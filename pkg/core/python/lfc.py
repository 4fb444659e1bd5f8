"""
Linear channel-output-feedback coding.

A code over N retransmissions is the triple (g, F, q):

    x = g theta + F (z + n)          transmit structure, F strictly lower triangular
    y = D x + z                      D = diag(gains)
    theta_hat = q . y                destination combiner

with g_i = phi[i-1], phi[k] = prod_{l<=k} beta[l] and
beta[k] = (1 + (1 + sigma2) gamma rho |h[k]|^2) ** -0.5.

The same code is applied independently to every symbol position of a packet, so
every function here broadcasts over a trailing packet axis.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import linalg, optimize

from core.python.errors import (
    ConfigurationError,
    DegenerateChannelError,
    DimensionError,
    MisuseError,
)

logger = logging.getLogger(__name__)

# Unbiasing refuses |phi|^2 above this
DEGENERATE_PHI_SQ = 1.0 - 1e-12
_LOG_DEGENERATE = np.log(DEGENERATE_PHI_SQ)

GAMMA_GRID_POINTS = 64
GAMMA_XTOL = 1e-4


def _check_params(rho, gamma, sigma2):
    if not np.isfinite(rho) or rho <= 0:
        raise ConfigurationError(f"must be > 0, got {rho}", field="rho")
    gamma = np.asarray(gamma, dtype=float)
    if not np.all(np.isfinite(gamma)) or np.any(gamma < 0) or np.any(gamma > 1):
        raise ConfigurationError(f"must lie in [0, 1], got {gamma}", field="gamma")
    if not np.isfinite(sigma2) or sigma2 < 0:
        raise ConfigurationError(f"must be >= 0, got {sigma2}", field="sigma2")


def _gamma_schedule(gamma, n):
    """Expand a scalar gamma, or validate a per-round schedule of length n"""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.ndim == 0:
        return np.full(n, float(gamma))
    if gamma.shape != (n,):
        raise DimensionError(f"gamma schedule of shape {gamma.shape} for N={n}")
    return gamma


def beta(gain, rho, gamma, sigma2):
    """Per-round power normalization beta in (0, 1]"""
    _check_params(rho, gamma, sigma2)
    return 1.0 / np.sqrt(1.0 + (1.0 + sigma2) * gamma * rho * np.abs(gain) ** 2)


def log_phi_sq(gains, rho, gamma, sigma2):
    """
    Running log|phi[k]|^2 for k = 0..N, accumulated as a sum of log beta^2.

    Args:
        gains: Effective scalar gains, shape (..., N)
        rho: Average power per channel use
        gamma: Scalar or per-round schedule of length N
        sigma2: Feedback noise variance

    Returns:
        Array of shape (..., N + 1) with a leading 0 for phi[0] = 1
    """
    gains = np.asarray(gains)
    n = gains.shape[-1]
    sched = _gamma_schedule(gamma, n)
    log_b2 = -np.log1p((1.0 + sigma2) * sched * rho * np.abs(gains) ** 2)
    lead = np.zeros(gains.shape[:-1] + (1,))
    return np.concatenate([lead, np.cumsum(log_b2, axis=-1)], axis=-1)


def _feedback_matrices(gains, rho, gamma, sigma2):
    """Batched (g, F, log|phi|^2) for gains of shape (T, N)"""
    n = gains.shape[-1]
    sched = _gamma_schedule(gamma, n)
    log_phi = log_phi_sq(gains, rho, sched, sigma2)
    lp = log_phi[..., :n]
    g = np.exp(0.5 * lp)

    # f_ij = -sqrt(gamma_j) rho conj(h_j) phi[i-1] / phi[j-1]  for i > j
    lower = np.tril(np.ones((n, n), dtype=bool), k=-1)
    diff = lp[..., :, None] - lp[..., None, :]
    ratio = np.exp(0.5 * np.where(lower, diff, -np.inf))
    coeff = -np.sqrt(sched) * rho * np.conj(gains)
    F = coeff[..., None, :] * ratio
    return g.astype(complex), F, log_phi


def _noise_covariance(gains, F, sigma2):
    """C = (DF + I)(DF + I)^H + sigma2 DF (DF)^H"""
    n = gains.shape[-1]
    DF = gains[..., :, None] * F
    A = DF + np.eye(n)
    AH = np.conj(np.swapaxes(A, -1, -2))
    DFH = np.conj(np.swapaxes(DF, -1, -2))
    return A @ AH + sigma2 * (DF @ DFH)


@dataclass(frozen=True, eq=False)
class FeedbackCode:
    """
    One linear feedback code instance.

    q holds row weights so that the (MMSE-scaled) estimate is theta_hat = q @ y.
    """

    rho: float
    gamma: object
    sigma2: float
    gains: np.ndarray
    g: np.ndarray
    F: np.ndarray
    q: np.ndarray
    log_phi_sq: np.ndarray = field(repr=False)

    @property
    def n(self):
        return len(self.gains)

    @property
    def gamma_schedule(self):
        return _gamma_schedule(self.gamma, self.n)

    @property
    def perfect(self):
        """Perfect channel-output feedback with full side-information power"""
        return self.sigma2 == 0 and bool(np.all(self.gamma_schedule == 1.0))

    def truncate(self, k):
        """Code for the first k retransmissions"""
        if not 1 <= k <= self.n:
            raise DimensionError(f"cannot truncate a length-{self.n} code to {k}")
        if k == self.n:
            return self
        return build_code(self.gains[:k], self.rho, self.gamma_schedule[:k], self.sigma2)


def build_code(gains, rho, gamma, sigma2):
    """
    Construct (g, F, q) for the given effective gains.

    Args:
        gains: N effective scalar channel gains
        rho: Average power per channel use
        gamma: Power split in [0, 1], scalar or per-round schedule
        sigma2: Feedback noise variance

    Returns:
        FeedbackCode
    """
    _check_params(rho, gamma, sigma2)
    gains = np.atleast_1d(np.asarray(gains, dtype=complex))
    if gains.ndim != 1 or gains.size < 1:
        raise DimensionError(f"need a non-empty vector of gains, got shape {gains.shape}")
    if not np.all(np.isfinite(gains)):
        raise ConfigurationError("gains contain NaN or Inf", field="gains")

    sched = _gamma_schedule(gamma, gains.size)
    g, F, log_phi = _feedback_matrices(gains[None, :], rho, sched, sigma2)
    g, F, log_phi = g[0], F[0], log_phi[0]

    if sigma2 == 0 and np.all(sched == 1.0):
        q = _perfect_weights(gains, rho)
    else:
        q, _ = _noisy_weights(gains, g, F, rho, sigma2)

    gamma_value = float(sched[0]) if np.all(sched == sched[0]) else sched
    return FeedbackCode(
        rho=float(rho),
        gamma=gamma_value,
        sigma2=float(sigma2),
        gains=gains,
        g=g,
        F=F,
        q=q,
        log_phi_sq=log_phi,
    )


def encode_matrix(code, theta, w):
    """Matrix form x = g theta + F w, w the noise seen by the source (z + n)"""
    theta = np.asarray(theta)
    w = np.asarray(w)
    if w.shape[0] != code.n:
        raise DimensionError(f"noise of length {w.shape[0]} for a length-{code.n} code")
    g = code.g.reshape((code.n,) + (1,) * theta.ndim)
    return g * theta + np.tensordot(code.F, w, axes=(1, 0))


def encode_step(x_k, gain_k, residual_k, rho, gamma, sigma2):
    """x[k+1] = beta[k] (x[k] - sqrt(gamma) rho conj(h[k]) (z[k] + n[k]))"""
    b = beta(gain_k, rho, gamma, sigma2)
    return b * (x_k - np.sqrt(gamma) * rho * np.conj(gain_k) * residual_k)


def feedback_residual(r_k, gain_k, x_k):
    """Source-side reconstruction of z[k] + n[k] from the fed-back output"""
    return r_k - gain_k * x_k


@dataclass(frozen=True)
class EstimatorState:
    """
    Destination estimate after k observations.

    theta_hat is the biased (MMSE-scaled) estimate; err_var is the conditional
    error variance of the unbiased estimate theta_hat / (1 - |phi[k]|^2).
    """

    k: int
    theta_hat: np.ndarray
    log_phi_sq: float
    err_var: float

    @property
    def phi_sq(self):
        return float(np.exp(self.log_phi_sq))

    @property
    def snr(self):
        return float(np.expm1(-self.log_phi_sq))


def _state_from_snr(k, theta_hat, snr, rho):
    snr = max(float(snr), 0.0)
    err_var = rho / snr if snr > 0 else np.inf
    return EstimatorState(k=k, theta_hat=theta_hat, log_phi_sq=-np.log1p(snr), err_var=err_var)


def _perfect_weights(gains, rho):
    """q_i = phi[i-1] beta^2_(1,0)[i] rho conj(h[i])"""
    log_phi = log_phi_sq(gains, rho, 1.0, 0.0)
    b2 = np.exp(np.diff(log_phi))
    return np.exp(0.5 * log_phi[:-1]) * b2 * rho * np.conj(gains)


def _noisy_weights(gains, g, F, rho, sigma2):
    """MMSE row weights rho conj(C^-1 D g) / (1 + rho g^H D^H C^-1 D g) and the SNR"""
    C = _noise_covariance(gains, F, sigma2)
    v = gains * g
    try:
        factor = linalg.cho_factor(C, lower=True)
    except linalg.LinAlgError as exc:
        raise DegenerateChannelError(f"noise covariance not positive definite: {exc}")
    w = linalg.cho_solve(factor, v)
    s = max(float(np.real(np.vdot(v, w))), 0.0)
    q = rho * np.conj(w) / (1.0 + rho * s)
    return q, rho * s


def combine_perfect(ys, gains, rho, sigma2=0.0, gamma=1.0):
    """
    Closed-form combiner for perfect channel-output feedback.

    Args:
        ys: First k received values, shape (k,) or (k, L)
        gains: At least k gains
        rho: Average power per channel use
        sigma2, gamma: Must describe the perfect branch (0 and 1)

    Returns:
        EstimatorState after k observations
    """
    if sigma2 != 0 or np.any(np.asarray(gamma) != 1):
        raise MisuseError(
            f"combine_perfect needs sigma2=0 and gamma=1 (got sigma2={sigma2}, "
            f"gamma={gamma}); use combine_noisy"
        )
    ys = np.asarray(ys)
    k = ys.shape[0]
    gains = np.asarray(gains, dtype=complex)[:k]
    if gains.size != k:
        raise DimensionError(f"{k} observations but only {gains.size} gains")

    q = _perfect_weights(gains, rho)
    theta_hat = np.tensordot(q, ys, axes=(0, 0))
    lp = float(log_phi_sq(gains, rho, 1.0, 0.0)[-1])
    snr = float(np.expm1(-lp))
    return EstimatorState(
        k=k,
        theta_hat=theta_hat,
        log_phi_sq=lp,
        err_var=rho / snr if snr > 0 else np.inf,
    )


def combine_noisy(ys, code):
    """
    LMMSE combiner for noisy feedback, using the k x k truncation of the code.

    Args:
        ys: First k received values, shape (k,) or (k, L)
        code: FeedbackCode over N >= k retransmissions

    Returns:
        EstimatorState after k observations
    """
    ys = np.asarray(ys)
    k = ys.shape[0]
    if k > code.n:
        raise DimensionError(f"{k} observations for a length-{code.n} code")
    sub = code.truncate(k)
    q, snr = _noisy_weights(sub.gains, sub.g, sub.F, sub.rho, sub.sigma2)
    theta_hat = np.tensordot(q, ys, axes=(0, 0))
    return _state_from_snr(k, theta_hat, snr, sub.rho)


def combine(ys, code):
    """Dispatch to the closed form when the code has perfect feedback"""
    if code.perfect:
        return combine_perfect(ys, code.gains, code.rho)
    return combine_noisy(ys, code)


def unbiased_estimate(state):
    """
    Remove the (1 - |phi[k]|^2) shrinkage.

    Returns:
        (theta_hat_u, err_var)
    """
    if state.log_phi_sq > _LOG_DEGENERATE:
        raise DegenerateChannelError(
            f"|phi[{state.k}]|^2 = {state.phi_sq:.15f}: no usable gain observed"
        )
    return state.theta_hat / -np.expm1(state.log_phi_sq), state.err_var


def post_snr(code):
    """Post-processed SNR rho g^H D^H C^-1 D g of the full code"""
    _, snr = _noisy_weights(code.gains, code.g, code.F, code.rho, code.sigma2)
    return snr


def post_snr_batch(gains, rho, gamma, sigma2):
    """
    Post-processed SNR for many traces at once.

    Args:
        gains: Array of shape (T, N)
        rho, gamma, sigma2: Code parameters

    Returns:
        Array of T SNR values
    """
    _check_params(rho, gamma, sigma2)
    gains = np.atleast_2d(np.asarray(gains, dtype=complex))
    g, F, _ = _feedback_matrices(gains, rho, gamma, sigma2)
    C = _noise_covariance(gains, F, sigma2)
    v = gains * g
    w = np.linalg.solve(C, v[..., None])[..., 0]
    return rho * np.maximum(np.real(np.sum(np.conj(v) * w, axis=-1)), 0.0)


def perfect_snr(gains, rho):
    """prod(1 + rho |h|^2) - 1 along the last axis"""
    gains = np.asarray(gains)
    return np.expm1(np.sum(np.log1p(rho * np.abs(gains) ** 2), axis=-1))


def snr_n2_closed(h1, h2, rho, gamma, sigma2):
    """Explicit two-retransmission post-processed SNR"""
    a1 = np.abs(h1) ** 2
    a2 = np.abs(h2) ** 2
    b2 = 1.0 / (1.0 + (1.0 + sigma2) * gamma * rho * a1)
    num = b2 * a2 * (1.0 + np.sqrt(gamma) * rho * a1) ** 2
    den = 1.0 + sigma2 * gamma * rho**2 * b2 * a1 * a2
    return rho * (a1 + num / den)


def average_snr_curve(rho, sigma2, gammas, traces):
    """Mean post-processed SNR over traces (T, N) for every gamma in gammas"""
    return np.array([post_snr_batch(traces, rho, g, sigma2).mean() for g in gammas])


@lru_cache(maxsize=256)
def _optimize_gamma_cached(rho, sigma2, n):
    awgn = np.ones((1, n))

    def snr(g):
        return float(post_snr_batch(awgn, rho, float(np.clip(g, 0.0, 1.0)), sigma2)[0])

    grid = np.linspace(0.0, 1.0, GAMMA_GRID_POINTS)
    values = np.array([snr(g) for g in grid])
    i = int(np.argmax(values))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, GAMMA_GRID_POINTS - 1)]

    res = optimize.minimize_scalar(
        lambda g: -snr(g), bounds=(lo, hi), method="bounded", options={"xatol": GAMMA_XTOL}
    )
    best = float(res.x) if -res.fun > values[i] else float(grid[i])
    logger.debug(f"gamma_0(rho={rho}, sigma2={sigma2}, N={n}) = {best:.5f}")
    return best


def optimize_gamma(rho, sigma2, n):
    """
    Power split maximizing the AWGN-proxy post-processed SNR.

    A 64-point grid over [0, 1] locates the peak, then a bounded scalar search
    refines it to 1e-4.

    Args:
        rho: Average power per channel use
        sigma2: Feedback noise variance
        n: Number of retransmissions

    Returns:
        gamma_0 in [0, 1]
    """
    _check_params(rho, 0.0, sigma2)
    if int(n) < 1:
        raise ConfigurationError(f"must be >= 1, got {n}", field="n")
    if sigma2 == 0:
        return 1.0
    return _optimize_gamma_cached(float(rho), float(sigma2), int(n))
