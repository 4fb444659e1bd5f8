"""
Rayleigh block fading channel with noisy channel-output feedback.

Forward link:  y[k] = h[k] x[k] + z[k],   z ~ CN(0, I)
Feedback link: r[k] = y[k] + n[k],        n ~ CN(0, sigma2 I)

Gains are drawn fresh for every retransmission block and stay constant within it.
"""

import logging
from dataclasses import dataclass

import numpy as np

from core.python.errors import ConfigurationError, DimensionError

logger = logging.getLogger(__name__)

FORWARD_NOISE_VAR = 1.0


def complex_normal(rng, shape, var=1.0):
    """CN(0, var) samples built from two real normals of variance var/2"""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass(frozen=True)
class TraceConfig:
    """Antenna dimensions, blocklength and feedback noise of one session"""

    n_max: int
    sigma2: float = 0.0
    mt: int = 1
    mr: int = 1

    def __post_init__(self):
        if int(self.n_max) < 1:
            raise ConfigurationError(f"must be >= 1, got {self.n_max}", field="n_max")
        if int(self.mt) < 1 or int(self.mr) < 1:
            raise ConfigurationError(
                f"antenna counts must be >= 1, got mt={self.mt} mr={self.mr}",
                field="antennas",
            )
        if not np.isfinite(self.sigma2) or self.sigma2 < 0:
            raise ConfigurationError(f"must be >= 0, got {self.sigma2}", field="sigma2")

    @property
    def kind(self):
        if self.mt == 1 and self.mr == 1:
            return "siso"
        if self.mr == 1:
            return "miso"
        return "mimo"


@dataclass(frozen=True)
class ChannelTrace:
    """
    Per-retransmission gains of one packet session.

    forward_gains has shape (N,) for SISO, (N, Mt) for MISO and (N, Mr, Mt) for MIMO.
    """

    forward_gains: np.ndarray
    feedback_noise_var: float
    n_max: int

    @property
    def forward_noise_var(self):
        return FORWARD_NOISE_VAR

    def gain(self, k):
        """Gain of 1-based block k"""
        if not 1 <= k <= self.n_max:
            raise DimensionError(f"block {k} outside 1..{self.n_max}")
        return self.forward_gains[k - 1]


def sample_trace(trace_config, rng):
    """
    Draw N independent Rayleigh block fading realizations.

    Args:
        trace_config: TraceConfig with antenna dims, N and sigma2
        rng: numpy Generator owned by the session

    Returns:
        ChannelTrace
    """
    n = trace_config.n_max
    kind = trace_config.kind
    if kind == "siso":
        shape = (n,)
    elif kind == "miso":
        shape = (n, trace_config.mt)
    else:
        shape = (n, trace_config.mr, trace_config.mt)

    gains = complex_normal(rng, shape)
    logger.debug(f"Sampled {kind} trace with shape {shape}")
    return ChannelTrace(
        forward_gains=gains,
        feedback_noise_var=float(trace_config.sigma2),
        n_max=n,
    )


def apply_forward(x, h, rng, noise_scale=1.0):
    """
    Pass a transmit signal through one fading block.

    Args:
        x: Transmit signal. Shape (L,) for scalar h, (Mt, L) for vector or matrix h
        h: Scalar gain, length-Mt vector, or Mr x Mt matrix
        rng: numpy Generator used for the forward noise
        noise_scale: Test hook scaling the noise standard deviation (1 in all simulations)

    Returns:
        Received signal y = h x + z
    """
    x = np.asarray(x)
    h = np.asarray(h)

    if h.ndim == 0:
        clean = h * x
    elif h.ndim == 1:
        if x.ndim == 0 or x.shape[0] != h.shape[0]:
            raise DimensionError(
                f"vector channel of length {h.shape[0]} needs x with leading axis "
                f"{h.shape[0]}, got shape {x.shape}"
            )
        clean = np.tensordot(h, x, axes=(0, 0))
    elif h.ndim == 2:
        if x.ndim == 0 or x.shape[0] != h.shape[1]:
            raise DimensionError(
                f"channel matrix {h.shape} cannot act on x of shape {x.shape}"
            )
        clean = np.tensordot(h, x, axes=(1, 0))
    else:
        raise DimensionError(f"unsupported channel shape {h.shape}")

    clean = np.asarray(clean, dtype=complex)
    if noise_scale == 0:
        return clean
    return clean + noise_scale * complex_normal(rng, clean.shape, FORWARD_NOISE_VAR)


def apply_feedback(y, sigma2, rng):
    """Return r = y + n with n ~ CN(0, sigma2); sigma2 = 0 returns y untouched"""
    if not np.isfinite(sigma2) or sigma2 < 0:
        raise ConfigurationError(f"must be >= 0, got {sigma2}", field="sigma2")
    y = np.asarray(y)
    if sigma2 == 0:
        return y
    return y + complex_normal(rng, y.shape, sigma2)


def received_component_std(rho):
    """Per-component standard deviation of a unit-variance faded signal of power rho plus noise"""
    return np.sqrt((1.0 + rho) / 2.0)


def default_quant_range(rho):
    return 4.0 * received_component_std(rho)


def quantizer_step(bits_per_phase, quant_range):
    return 2.0 * quant_range / (2**bits_per_phase)


def quantization_noise_var(bits_per_phase, quant_range):
    """Complex granular noise variance of the uniform quantizer (two components)"""
    step = quantizer_step(bits_per_phase, quant_range)
    return step**2 / 6.0


def _midrise(v, step, quant_range):
    top = quant_range - step / 2.0
    return np.clip(step * (np.floor(v / step) + 0.5), -top, top)


def quantize_coi(y, bits_per_phase, quant_range):
    """
    Uniform midrise quantization of the in-phase and quadrature parts.

    Args:
        y: Complex received signal
        bits_per_phase: Bits per real component (>= 1)
        quant_range: Saturation point; levels span [-range, +range]

    Returns:
        Quantized complex signal
    """
    if int(bits_per_phase) != bits_per_phase or bits_per_phase < 1:
        raise ConfigurationError(
            f"must be an integer >= 1, got {bits_per_phase}", field="quant_bits"
        )
    if not np.isfinite(quant_range) or quant_range <= 0:
        raise ConfigurationError(f"must be > 0, got {quant_range}", field="quant_range")

    step = quantizer_step(int(bits_per_phase), quant_range)
    y = np.asarray(y)
    return _midrise(y.real, step, quant_range) + 1j * _midrise(y.imag, step, quant_range)
