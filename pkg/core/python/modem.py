"""
Square-QAM modulation scaled to the average power constraint.

Points sit on the grid +-1 +-1j, +-1 +-3j, ... scaled by sqrt(alpha) with
alpha = 3 rho / (2 (M - 1)), so the mean power over equiprobable points is rho.
Each axis is Gray labelled; the high half of a label drives I, the low half Q.
Label bit 0 maps to the positive half-plane.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from core.python.errors import ConfigurationError, DimensionError, NumericError

logger = logging.getLogger(__name__)

TOKENS = {"qpsk": 4, "16qam": 16, "64qam": 64}
SQUARE_SIZES = (4, 16, 64)


def gray_code(n):
    """Binary reflected Gray sequence of n bits"""
    if n < 0:
        raise ValueError("n must be non-negative")
    i = np.arange(1 << n, dtype=int)
    return i ^ (i >> 1)


def _gray_pam(m_axis):
    """Gray-labelled odd-integer levels, label 0 on the most positive level"""
    n = int(np.log2(m_axis))
    levels = np.linspace(m_axis - 1, -(m_axis - 1), m_axis)
    pam = np.zeros(m_axis)
    pam[gray_code(n)] = levels
    return pam


@dataclass(frozen=True, eq=False)
class Constellation:
    """Scaled square QAM indexed by label value"""

    m_points: int
    alpha: float
    rho: float
    points: np.ndarray
    labels: np.ndarray

    @property
    def bits_per_symbol(self):
        return int(np.log2(self.m_points))

    @property
    def name(self):
        return "qpsk" if self.m_points == 4 else f"{self.m_points}qam"

    @property
    def mean_power(self):
        return float(np.mean(np.abs(self.points) ** 2))


def build_constellation(m_points, rho):
    """
    Build a Gray-labelled square QAM with mean power rho.

    Args:
        m_points: 4, 16 or 64
        rho: Average power per channel use

    Returns:
        Constellation
    """
    if m_points not in SQUARE_SIZES:
        raise ConfigurationError(
            f"square QAM size must be one of {SQUARE_SIZES}, got {m_points}",
            field="constellation",
        )
    if not np.isfinite(rho) or rho <= 0:
        raise ConfigurationError(f"must be > 0, got {rho}", field="rho")

    alpha = 3.0 * rho / (2.0 * (m_points - 1))
    k = int(np.log2(m_points))
    n = k // 2
    pam = _gray_pam(1 << n)

    s = np.arange(m_points)
    i_vals = pam[s >> n]
    q_vals = pam[s & ((1 << n) - 1)]
    points = np.sqrt(alpha) * (i_vals + 1j * q_vals)

    labels = ((s[:, None] >> np.arange(k - 1, -1, -1)) & 1).astype(np.uint8)
    logger.debug(f"Built {m_points}-QAM with alpha={alpha:.6g} for rho={rho:.6g}")
    return Constellation(m_points=m_points, alpha=alpha, rho=float(rho), points=points, labels=labels)


def constellation_from_token(token, rho):
    """Resolve 'qpsk' | '16qam' | '64qam'"""
    try:
        m = TOKENS[str(token).lower()]
    except KeyError:
        raise ConfigurationError(
            f"unknown constellation {token!r}, expected one of {sorted(TOKENS)}",
            field="constellation",
        )
    return build_constellation(m, rho)


def size_constellation(capacity_bits, n):
    """Largest square QAM with |Theta| < 2^(N C), never below QPSK"""
    bound = 2.0 ** (n * capacity_bits)
    for m in sorted(SQUARE_SIZES, reverse=True):
        if m < bound:
            return m
    return SQUARE_SIZES[0]


def map_bits(bits, constellation):
    """Map a bit stream onto constellation points, bits MSB first per symbol"""
    bits = np.asarray(bits, dtype=np.int64)
    b = constellation.bits_per_symbol
    if bits.ndim != 1 or bits.size % b != 0:
        raise DimensionError(
            f"number of bits ({bits.size}) must be divisible by bits per symbol ({b})"
        )
    powers = 1 << np.arange(b - 1, -1, -1)
    indices = bits.reshape(-1, b) @ powers
    return constellation.points[indices]


@dataclass(frozen=True)
class DemapResult:
    bit_llrs: np.ndarray
    symbol_log_app: np.ndarray = None


def _reduce(metric, mask, max_log):
    sub = np.where(mask, metric, -np.inf)
    if max_log:
        return np.max(sub, axis=-1)
    return special.logsumexp(sub, axis=-1)


def llr_demap(theta_hat_u, err_var, constellation, max_log=False, symbols=True):
    """
    Soft demapping under a circular Gaussian estimator-error model.

    Args:
        theta_hat_u: Unbiased symbol estimates, shape (L,)
        err_var: Conditional error variance, scalar or shape (L,); inf gives zero LLRs
        constellation: Constellation used at the source
        max_log: Use max instead of log-sum-exp
        symbols: Also return the per-symbol log-APP set log(p_j / sum_{l != j} p_l)

    Returns:
        DemapResult with bit LLRs log p(0)/p(1) of shape (L * bits_per_symbol,)
    """
    theta = np.atleast_1d(np.asarray(theta_hat_u, dtype=complex))
    var = np.broadcast_to(np.asarray(err_var, dtype=float), theta.shape)
    if np.any(np.isnan(var)) or np.any(var <= 0):
        raise NumericError("err_var must be > 0 for demapping")

    dist = np.abs(theta[:, None] - constellation.points[None, :]) ** 2
    metric = -dist / var[:, None]

    labels = constellation.labels
    b = constellation.bits_per_symbol
    llrs = np.empty((theta.size, b))
    for j in range(b):
        zero = labels[:, j] == 0
        llrs[:, j] = _reduce(metric, zero[None, :], max_log) - _reduce(
            metric, ~zero[None, :], max_log
        )

    log_app = None
    if symbols:
        m = constellation.m_points
        log_app = np.empty((theta.size, m))
        for j in range(m):
            others = np.ones(m, dtype=bool)
            others[j] = False
            log_app[:, j] = metric[:, j] - _reduce(metric, others[None, :], max_log)

    return DemapResult(bit_llrs=llrs.reshape(-1), symbol_log_app=log_app)


def hard_decision(llrs):
    """Bit 0 where LLR >= 0"""
    return (np.asarray(llrs) < 0).astype(np.uint8)


def symbol_error_probability(err_var, m_points, rho):
    """
    Exact conditional error probability of square QAM with mean power rho.

    m_points may be real-valued so the rate can scale continuously with N.
    """
    err_var = np.asarray(err_var, dtype=float)
    m = float(m_points)
    if m <= 1.0:
        return np.zeros_like(err_var)
    alpha = 3.0 * rho / (2.0 * (m - 1.0))
    sigma = np.sqrt(err_var / 2.0)
    with np.errstate(divide="ignore"):
        tail = stats.norm.sf(np.sqrt(alpha) / sigma)
    per_axis = 2.0 * (1.0 - 1.0 / np.sqrt(m)) * tail
    return 1.0 - (1.0 - per_axis) ** 2
