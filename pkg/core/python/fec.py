"""
Systematic rate-1/3 turbo code with CRC-16 error detection.

Two identical (13, 15) octal recursive systematic convolutional encoders of
memory 3, the second fed through a seeded pseudorandom interleaver. Both
trellises are terminated. Codeword layout:

    [ info (K) | parity1 (K) | parity2 (K) | tail (12) ]

with the tail ordered x1 z1 x1 z1 x1 z1 x2 z2 x2 z2 x2 z2 as in UMTS.
LLRs follow log p(bit = 0) / p(bit = 1) throughout.
"""

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numba import njit

from core import config
from core.python.errors import ConfigurationError, DimensionError

logger = logging.getLogger(__name__)

MEMORY = 3
N_STATES = 1 << MEMORY
TAIL_BITS = 4 * MEMORY
CRC_POLY = 0x1021
CRC_INIT = 0xFFFF
CRC_BITS = 16
NEG_INF = -1e30
LLR_CLIP = 100.0

# Incremental-redundancy puncturing table over 4 redundancy versions, as
# (segment, tail slice) pairs. Segments index the codeword layout above.
IR_TABLE = {
    0: ("info", (0, 4)),
    1: ("parity1", (4, 8)),
    2: ("parity2", (8, 12)),
    3: ("info", (0, 4)),
}


def _build_trellis():
    """Next-state and parity tables for feedback 13 and feedforward 15 (octal)"""
    next_state = np.zeros((N_STATES, 2), dtype=np.int64)
    parity = np.zeros((N_STATES, 2), dtype=np.int64)
    for s in range(N_STATES):
        s1, s2, s3 = (s >> 2) & 1, (s >> 1) & 1, s & 1
        for u in (0, 1):
            a = u ^ s2 ^ s3
            parity[s, u] = a ^ s1 ^ s3
            next_state[s, u] = (a << 2) | (s1 << 1) | s2
    return next_state, parity


NEXT_STATE, PARITY = _build_trellis()


@njit(cache=True)
def _rsc_encode(bits, next_state, parity):
    n = bits.shape[0]
    par = np.empty(n, dtype=np.int64)
    tail = np.empty(2 * MEMORY, dtype=np.int64)
    s = 0
    for t in range(n):
        u = bits[t]
        par[t] = parity[s, u]
        s = next_state[s, u]
    for t in range(MEMORY):
        # input that drives the feedback sum to zero
        u = ((s >> 1) & 1) ^ (s & 1)
        tail[2 * t] = u
        tail[2 * t + 1] = parity[s, u]
        s = next_state[s, u]
    return par, tail


@njit(cache=True)
def _max_star(a, b, max_log):
    if max_log:
        return max(a, b)
    if a < b:
        a, b = b, a
    if b <= NEG_INF:
        return a
    return a + np.log1p(np.exp(b - a))


@njit(cache=True)
def _bcjr(sys_llr, par_llr, apriori, next_state, parity, max_log):
    """A-posteriori LLRs of the input bits of one terminated RSC trellis"""
    n = sys_llr.shape[0]
    gam = np.empty((n, N_STATES, 2))
    for t in range(n):
        lu = 0.5 * (sys_llr[t] + apriori[t])
        lp = 0.5 * par_llr[t]
        for s in range(N_STATES):
            for u in range(2):
                gam[t, s, u] = lu * (1 - 2 * u) + lp * (1 - 2 * parity[s, u])

    alpha = np.full((n + 1, N_STATES), NEG_INF)
    alpha[0, 0] = 0.0
    for t in range(n):
        for s in range(N_STATES):
            if alpha[t, s] <= NEG_INF:
                continue
            for u in range(2):
                ns = next_state[s, u]
                alpha[t + 1, ns] = _max_star(alpha[t + 1, ns], alpha[t, s] + gam[t, s, u], max_log)
        top = alpha[t + 1].max()
        for s in range(N_STATES):
            if alpha[t + 1, s] > NEG_INF:
                alpha[t + 1, s] -= top

    beta = np.full((n + 1, N_STATES), NEG_INF)
    beta[n, 0] = 0.0
    for t in range(n - 1, -1, -1):
        for s in range(N_STATES):
            acc = NEG_INF
            for u in range(2):
                ns = next_state[s, u]
                if beta[t + 1, ns] > NEG_INF:
                    acc = _max_star(acc, beta[t + 1, ns] + gam[t, s, u], max_log)
            beta[t, s] = acc
        top = beta[t].max()
        for s in range(N_STATES):
            if beta[t, s] > NEG_INF:
                beta[t, s] -= top

    out = np.empty(n)
    for t in range(n):
        num0 = NEG_INF
        num1 = NEG_INF
        for s in range(N_STATES):
            if alpha[t, s] <= NEG_INF:
                continue
            for u in range(2):
                ns = next_state[s, u]
                if beta[t + 1, ns] <= NEG_INF:
                    continue
                m = alpha[t, s] + gam[t, s, u] + beta[t + 1, ns]
                if u == 0:
                    num0 = _max_star(num0, m, max_log)
                else:
                    num1 = _max_star(num1, m, max_log)
        out[t] = num0 - num1
    return out


@njit(cache=True)
def _crc16(bits):
    crc = CRC_INIT
    for i in range(bits.shape[0]):
        top = ((crc >> 15) & 1) ^ bits[i]
        crc = (crc << 1) & 0xFFFF
        if top:
            crc ^= CRC_POLY
    return crc


def crc_attach(info_bits):
    """Append the CRC-16/CCITT of info_bits, MSB first"""
    bits = np.asarray(info_bits, dtype=np.int64)
    crc = _crc16(bits)
    tail = (crc >> np.arange(CRC_BITS - 1, -1, -1)) & 1
    return np.concatenate([bits, tail]).astype(np.uint8)


def crc_ok(decoded_bits):
    """True iff the CRC remainder over data and appended CRC is zero"""
    return _crc16(np.asarray(decoded_bits, dtype=np.int64)) == 0


@dataclass(frozen=True)
class CodecConfig:
    """Turbo codec parameters; l_info counts the CRC bits"""

    l_info: int = config.L_INFO
    iterations: int = config.DECODER_ITERATIONS
    interleaver_seed: int = config.INTERLEAVER_SEED
    crc_bits: int = CRC_BITS
    max_log: bool = False

    def __post_init__(self):
        if self.l_info <= self.crc_bits:
            raise ConfigurationError(
                f"must exceed the {self.crc_bits} CRC bits, got {self.l_info}", field="l_info"
            )
        if self.iterations < 1:
            raise ConfigurationError(f"must be >= 1, got {self.iterations}", field="iterations")
        if self.crc_bits != CRC_BITS:
            raise ConfigurationError(f"only CRC-16 is supported, got {self.crc_bits}", field="crc_bits")

    @cached_property
    def interleaver(self):
        return np.random.default_rng(self.interleaver_seed).permutation(self.l_info)

    @property
    def payload_bits(self):
        return self.l_info - self.crc_bits

    @property
    def coded_length(self):
        return 3 * self.l_info + TAIL_BITS

    @property
    def rate(self):
        return self.l_info / self.coded_length


@dataclass(frozen=True)
class DecodeResult:
    bits: np.ndarray
    llrs: np.ndarray
    iterations: int


class TurboCodec:
    """Encoder and iterative log-MAP decoder for one CodecConfig"""

    def __init__(self, codec_config=None):
        self.config = codec_config or CodecConfig()
        perm = self.config.interleaver
        if not np.array_equal(np.sort(perm), np.arange(self.config.l_info)):
            raise ConfigurationError("interleaver is not a permutation", field="interleaver")
        self.perm = perm
        self.inverse = np.argsort(perm)

    @property
    def k(self):
        return self.config.l_info

    def encode(self, info_bits):
        """
        Encode l_info bits (CRC already attached).

        Returns:
            uint8 codeword of length 3 l_info + 12
        """
        bits = np.asarray(info_bits, dtype=np.int64)
        if bits.shape != (self.k,):
            raise DimensionError(f"expected {self.k} info bits, got shape {bits.shape}")
        p1, t1 = _rsc_encode(bits, NEXT_STATE, PARITY)
        p2, t2 = _rsc_encode(bits[self.perm], NEXT_STATE, PARITY)
        return np.concatenate([bits, p1, p2, t1, t2]).astype(np.uint8)

    def decode(self, coded_llrs, iterations=None, stop=None):
        """
        Iterative decoding with extrinsic exchange between the two constituents.

        Args:
            coded_llrs: Channel LLRs of the full codeword (zeros where nothing was received)
            iterations: Override of the configured iteration count
            stop: Optional predicate on hard decisions; decoding ends early when it holds

        Returns:
            DecodeResult with hard decisions and a-posteriori info-bit LLRs
        """
        llrs = np.asarray(coded_llrs, dtype=float)
        if llrs.shape != (self.config.coded_length,):
            raise DimensionError(
                f"expected {self.config.coded_length} LLRs, got shape {llrs.shape}"
            )
        llrs = np.clip(llrs, -LLR_CLIP * 10, LLR_CLIP * 10)
        k = self.k
        ls = llrs[:k]
        tail = llrs[3 * k :]
        sys1 = np.concatenate([ls, tail[0:6:2]])
        par1 = np.concatenate([llrs[k : 2 * k], tail[1:6:2]])
        sys2 = np.concatenate([ls[self.perm], tail[6:12:2]])
        par2 = np.concatenate([llrs[2 * k : 3 * k], tail[7:12:2]])

        pad = np.zeros(MEMORY)
        la1 = np.zeros(k)
        posterior = ls.copy()
        max_log = self.config.max_log
        rounds = iterations or self.config.iterations

        done = 0
        for done in range(1, rounds + 1):
            post1 = _bcjr(sys1, par1, np.concatenate([la1, pad]), NEXT_STATE, PARITY, max_log)[:k]
            le1 = np.clip(post1 - la1 - ls, -LLR_CLIP, LLR_CLIP)
            la2 = le1[self.perm]
            post2 = _bcjr(sys2, par2, np.concatenate([la2, pad]), NEXT_STATE, PARITY, max_log)[:k]
            le2 = np.clip(post2 - la2 - ls[self.perm], -LLR_CLIP, LLR_CLIP)
            la1 = le2[self.inverse]
            posterior = post2[self.inverse]
            if stop is not None and stop((posterior < 0).astype(np.uint8)):
                break

        bits = (posterior < 0).astype(np.uint8)
        return DecodeResult(bits=bits, llrs=posterior, iterations=done)


def ir_positions(codec_config, rv):
    """Codeword indices carried by redundancy version rv"""
    if rv not in IR_TABLE:
        raise ConfigurationError(f"redundancy version must be 0..3, got {rv}", field="rv")
    k = codec_config.l_info
    segment, (t0, t1) = IR_TABLE[rv]
    start = {"info": 0, "parity1": k, "parity2": 2 * k}[segment]
    return np.concatenate([np.arange(start, start + k), 3 * k + np.arange(t0, t1)])


def puncture_ir(coded_bits, codec_config, rv):
    return np.asarray(coded_bits)[ir_positions(codec_config, rv)]


def depuncture_ir(llrs, codec_config, rv, into=None):
    """Accumulate received RV LLRs into a full-codeword buffer"""
    out = np.zeros(codec_config.coded_length) if into is None else into
    np.add.at(out, ir_positions(codec_config, rv), llrs)
    return out
