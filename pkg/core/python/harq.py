"""
Type-III hybrid-ARQ with channel-output-feedback retransmissions.

The first transmission of every session is a turbo codeword with CRC. On NACK
the source sends, depending on the mode:

    CHASE        the identical packet again (MRC at the destination)
    FPF          every symbol coded by the linear feedback code
    FPF_QUANT    FPF with the fed-back output quantized per phase
    PPF          only the least reliable symbols, feedback coded; the rest stay silent
    PPF_PC       the least reliable symbols feedback coded, the rest repeated
    IR_BASELINE  punctured incremental redundancy of the mother code

Combining happens at symbol level; the destination demaps the combined estimate
and runs a fresh turbo decode after every round.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from core import config
from core.python import lfc
from core.python.channel import (
    TraceConfig,
    apply_feedback,
    apply_forward,
    default_quant_range,
    quantization_noise_var,
    quantize_coi,
    sample_trace,
)
from core.python.errors import ConfigurationError, DegenerateChannelError, EmptyResultError
from core.python.fec import (
    CodecConfig,
    TurboCodec,
    crc_attach,
    crc_ok,
    depuncture_ir,
    ir_positions,
    puncture_ir,
)
from core.python.modem import TOKENS, constellation_from_token, llr_demap, map_bits
from core.python.multiantenna import (
    build_rvq_codebook,
    load_codebook,
    miso_map,
    mimo_map,
    select_beamformer,
    siso_map,
)

logger = logging.getLogger(__name__)

LLR_QUANTILES = (0.0, 0.01, 0.1, 0.5)
CI_Z = 1.959963984540054


class Mode(str, Enum):
    CHASE = "CHASE"
    FPF = "FPF"
    PPF = "PPF"
    PPF_PC = "PPF_PC"
    FPF_QUANT = "FPF_QUANT"
    IR_BASELINE = "IR_BASELINE"


FEEDBACK_MODES = (Mode.FPF, Mode.FPF_QUANT, Mode.PPF, Mode.PPF_PC)
PARTIAL_MODES = (Mode.PPF, Mode.PPF_PC)


class AntennaConfig(BaseModel):
    """Antenna arrangement and, for MISO, how the beamformer is chosen"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["siso", "miso", "mimo"] = "siso"
    mt: int = Field(1, ge=1)
    mr: int = Field(1, ge=1)
    beamforming: Literal["perfect", "rvq", "grassmannian", "none"] = "perfect"
    codebook_bits: int = Field(2, ge=1, le=16)
    codebook_seed: int = 0
    codebook_file: Optional[str] = None

    @model_validator(mode="after")
    def _check_dims(self):
        if self.kind == "siso" and (self.mt, self.mr) != (1, 1):
            raise ValueError("siso requires mt = mr = 1")
        if self.kind == "miso" and (self.mr != 1 or self.mt < 2):
            raise ValueError("miso requires mr = 1 and mt >= 2")
        if self.kind == "mimo" and max(self.mt, self.mr) < 2:
            raise ValueError("mimo requires at least two antennas on one side")
        return self

    @property
    def streams(self):
        return min(self.mt, self.mr) if self.kind == "mimo" else 1

    @property
    def label(self):
        return f"{self.mr}x{self.mt}"


class HarqConfig(BaseModel):
    """
    One protocol configuration. rho is linear power per channel use.

    t_sym is the PPF symbol budget; t_fraction expresses it as a share of the
    packet's symbols instead.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: Mode
    label: Optional[str] = None
    n_max: int = Field(config.N_MAX, ge=1)
    rho: float = Field(1.0, gt=0)
    gamma: Optional[float] = Field(None, ge=0, le=1)
    sigma2: float = Field(0.0, ge=0)
    t_sym: Optional[int] = Field(None, ge=0)
    t_fraction: Optional[float] = Field(None, ge=0, le=1)
    quant_bits: Optional[int] = Field(None, ge=1, le=16)
    quant_range: Optional[float] = Field(None, gt=0)
    antenna: AntennaConfig = AntennaConfig()
    constellation: Literal["qpsk", "16qam", "64qam"] = "qpsk"
    l_info: int = Field(config.L_INFO, gt=16)
    iterations: int = Field(config.DECODER_ITERATIONS, ge=1)
    interleaver_seed: int = config.INTERLEAVER_SEED
    max_log: bool = False
    genie: bool = False
    reselect_each_round: bool = False
    forward_noise_scale: float = Field(1.0, ge=0)

    @model_validator(mode="after")
    def _check_mode_fields(self):
        partial = self.mode in PARTIAL_MODES
        budget = (self.t_sym is not None) + (self.t_fraction is not None)
        if partial and budget != 1:
            raise ValueError(f"{self.mode.value} needs exactly one of t_sym or t_fraction")
        if not partial and budget:
            raise ValueError("t_sym / t_fraction only apply to PPF and PPF_PC")
        if (self.mode is Mode.FPF_QUANT) != (self.quant_bits is not None):
            raise ValueError("quant_bits is required for FPF_QUANT and only valid there")
        if self.reselect_each_round and self.mode is not Mode.PPF_PC:
            raise ValueError("reselect_each_round is only supported for PPF_PC")
        if self.t_sym is not None and self.t_sym > self.n_symbols:
            raise ValueError(f"t_sym={self.t_sym} exceeds the {self.n_symbols} packet symbols")
        return self

    @property
    def display_label(self):
        return self.label or self.mode.value

    @property
    def codec_config(self):
        return CodecConfig(
            l_info=self.l_info,
            iterations=self.iterations,
            interleaver_seed=self.interleaver_seed,
            max_log=self.max_log,
        )

    @property
    def bits_per_symbol(self):
        return int(np.log2(TOKENS[self.constellation]))

    @property
    def padded_length(self):
        """Coded bits padded to whole symbols on every stream"""
        unit = self.bits_per_symbol * self.antenna.streams
        coded = 3 * self.l_info + 12
        return -(-coded // unit) * unit

    @property
    def n_symbols(self):
        return self.padded_length // self.bits_per_symbol

    @property
    def symbol_budget(self):
        if self.t_sym is not None:
            return self.t_sym
        if self.t_fraction is not None:
            return int(round(self.t_fraction * self.n_symbols))
        return None

    @property
    def effective_sigma2(self):
        """Feedback noise seen by the code, including quantization noise"""
        if self.mode is Mode.FPF_QUANT:
            return self.sigma2 + quantization_noise_var(self.quant_bits, self.resolved_quant_range)
        return self.sigma2

    @property
    def resolved_quant_range(self):
        return self.quant_range or float(default_quant_range(self.rho))

    @property
    def resolved_gamma(self):
        if self.mode is Mode.CHASE:
            return 0.0
        if self.gamma is not None:
            return self.gamma
        return lfc.optimize_gamma(self.rho, self.effective_sigma2, self.n_max)

    def trace_config(self):
        return TraceConfig(
            n_max=self.n_max, sigma2=self.sigma2, mt=self.antenna.mt, mr=self.antenna.mr
        )


@dataclass
class RoundRecord:
    round: int
    snr_post: float
    crc: bool
    llr_min_abs_quantiles: tuple
    feedback_symbols: int = 0
    decoder_iterations: int = 0

    def to_dict(self, mode):
        return {
            "round": self.round,
            "mode": mode,
            "snr_post": self.snr_post,
            "crc": self.crc,
            "llr_min_abs_quantiles": list(self.llr_min_abs_quantiles),
            "feedback_symbols": self.feedback_symbols,
        }


@dataclass
class SessionResult:
    success: bool
    transmissions_used: int
    per_round: list = field(default_factory=list)

    @property
    def round_snr(self):
        return [r.snr_post for r in self.per_round]


@lru_cache(maxsize=32)
def _codebook(kind, mt, bits, seed, path):
    if kind == "rvq":
        return build_rvq_codebook(mt, bits, seed)
    return load_codebook(path)


def antenna_codebook(antenna):
    """RVQ or Grassmannian codebook of a MISO antenna config"""
    if antenna.beamforming not in ("rvq", "grassmannian"):
        raise ConfigurationError(f"{antenna.beamforming} beamforming has no codebook", field="beamforming")
    path = Path(antenna.codebook_file or f"grassmannian_mt{antenna.mt}_b{antenna.codebook_bits}.txt")
    if not path.is_absolute():
        path = config.CODEBOOK_DIR / path
    return _codebook(antenna.beamforming, antenna.mt, antenna.codebook_bits, antenna.codebook_seed, str(path))


def _beamformer(antenna, h):
    if antenna.beamforming == "perfect":
        norm = np.linalg.norm(h)
        return np.conj(h) / norm if norm > 0 else np.eye(antenna.mt, dtype=complex)[0]
    if antenna.beamforming == "none":
        return np.eye(antenna.mt, dtype=complex)[0]
    return select_beamformer(h, antenna_codebook(antenna))[1]


def spatial_map(antenna, h, rho):
    """Reduce one block's channel to M effective scalar links"""
    if antenna.kind == "siso":
        return siso_map(h)
    if antenna.kind == "miso":
        return miso_map(h, _beamformer(antenna, h))
    return mimo_map(h, rho)


def ppf_select(info_llrs, t_sym, bits_per_symbol):
    """
    Symbols holding the least reliable information bits.

    Bits are ranked by (|llr|, index); the bit budget T is the longest prefix
    whose symbols fit in t_sym. Bit i of the codeword lives in symbol i // b.

    Returns:
        Sorted symbol indices
    """
    llrs = np.asarray(info_llrs, dtype=float)
    if t_sym <= 0 or llrs.size == 0:
        return np.zeros(0, dtype=int)
    index = np.arange(llrs.size)
    order = np.lexsort((index, np.abs(llrs)))
    symbols = order // bits_per_symbol
    _, first = np.unique(symbols, return_index=True)
    chosen = symbols[np.sort(first)[:t_sym]]
    return np.sort(chosen)


def _llr_quantiles(llrs):
    return tuple(float(v) for v in np.quantile(np.abs(llrs), LLR_QUANTILES))


class HarqSession:
    """
    Mutable protocol state of one packet.

    Symbol j of the packet travels on stream j % M at column j // M. Per
    position the session keeps a gamma schedule (entry r applies when forming
    transmission r + 2) and the last round in which the position is observed.
    """

    def __init__(self, harq_config, info_bits, rng, trace=None, codec=None):
        cfg = harq_config
        if cfg.mode is Mode.IR_BASELINE:
            raise ConfigurationError("IR_BASELINE sessions run through run_session", field="mode")
        self.cfg = cfg
        self.codec = codec or TurboCodec(cfg.codec_config)
        self._channel_rng, self._forward_rng, self._feedback_rng = rng.spawn(3)

        self.word = crc_attach(info_bits)
        self.coded = self.codec.encode(self.word)
        self.const = constellation_from_token(cfg.constellation, cfg.rho)

        self.m = cfg.antenna.streams
        padded = np.zeros(cfg.padded_length, dtype=np.uint8)
        padded[: self.coded.size] = self.coded
        symbols = map_bits(padded, self.const)
        self.columns = symbols.size // self.m
        self.theta = symbols.reshape(self.columns, self.m).T.copy()
        self.x = self.theta.copy()

        self.trace = trace if trace is not None else sample_trace(cfg.trace_config(), self._channel_rng)
        self.gamma = cfg.resolved_gamma
        self.sigma2 = cfg.effective_sigma2

        n = cfg.n_max
        start = 0.0 if cfg.mode in (Mode.CHASE,) + PARTIAL_MODES else self.gamma
        self.sched = np.full((self.m, self.columns, n), start)
        self.last = np.full((self.m, self.columns), n, dtype=int)
        self.silent = np.zeros((self.m, self.columns), dtype=bool)
        self.selected = np.zeros((self.m, self.columns), dtype=bool)

        self.ys = np.zeros((n, self.m, self.columns), dtype=complex)
        self.gains = np.zeros((n, self.m), dtype=complex)
        self.maps = []
        self.k = 0
        self._output = None

    # -- forward link ---------------------------------------------------------

    def transmitted(self):
        """Signal actually sent this round (silent PPF positions carry nothing)"""
        return np.where(self.silent, 0.0, self.x)

    def transmit(self):
        """Send the current packet over block k + 1"""
        self.k += 1
        h = self.trace.gain(self.k)
        smap = spatial_map(self.cfg.antenna, h, self.cfg.rho)
        y = apply_forward(smap.transmit(self.transmitted()), h, self._forward_rng, self.cfg.forward_noise_scale)
        self._output = y
        self.maps.append(smap)
        self.ys[self.k - 1] = smap.receive(y)
        self.gains[self.k - 1] = smap.gains

    # -- destination ----------------------------------------------------------

    def _groups(self, stream):
        key = np.concatenate([self.sched[stream], self.last[stream][:, None]], axis=1)
        rows, inverse = np.unique(key, axis=0, return_inverse=True)
        return rows, inverse.reshape(-1)

    def estimate(self):
        """
        Combine all observations so far.

        Returns:
            (theta_u, err_var) flattened to packet symbol order
        """
        n = self.cfg.n_max
        theta_u = np.zeros((self.m, self.columns), dtype=complex)
        err = np.full((self.m, self.columns), np.inf)
        for i in range(self.m):
            rows, inverse = self._groups(i)
            for g, row in enumerate(rows):
                cols = np.flatnonzero(inverse == g)
                kk = int(min(self.k, row[n]))
                code = lfc.build_code(self.gains[:kk, i], self.cfg.rho, row[:kk], self.sigma2)
                state = lfc.combine(self.ys[:kk, i, cols], code)
                try:
                    est, var = lfc.unbiased_estimate(state)
                except DegenerateChannelError:
                    logger.debug(f"stream {i}: no usable gain after {kk} rounds")
                    continue
                theta_u[i, cols] = est
                err[i, cols] = var
        return theta_u.T.reshape(-1), err.T.reshape(-1)

    def receive(self):
        """Combine, demap, decode and check the CRC"""
        theta_u, err = self.estimate()
        demap = llr_demap(theta_u, err, self.const, max_log=self.cfg.max_log, symbols=False)
        llrs = demap.bit_llrs[: self.codec.config.coded_length]
        decoded = self.codec.decode(llrs, stop=None if self.cfg.genie else crc_ok)
        if self.cfg.genie:
            success = bool(np.array_equal(decoded.bits, self.word))
        else:
            success = bool(crc_ok(decoded.bits))

        with np.errstate(divide="ignore"):
            snr = np.where(np.isfinite(err), self.cfg.rho / err, 0.0)
        record = RoundRecord(
            round=self.k,
            snr_post=float(np.mean(snr)),
            crc=success,
            llr_min_abs_quantiles=_llr_quantiles(decoded.llrs),
            decoder_iterations=decoded.iterations,
        )
        return record, decoded

    # -- source ---------------------------------------------------------------

    def feedback(self):
        """Channel output of the latest round as seen by the source"""
        r = apply_feedback(self._output, self.cfg.sigma2, self._feedback_rng)
        if self.cfg.mode is Mode.FPF_QUANT:
            r = quantize_coi(r, self.cfg.quant_bits, self.cfg.resolved_quant_range)
        return r

    def _lfc_retransmit(self, r):
        k = self.k
        smap = self.maps[k - 1]
        gains = self.gains[k - 1][:, None]
        residual = lfc.feedback_residual(smap.receive(r), gains, self.x)
        self.x = lfc.encode_step(self.x, gains, residual, self.cfg.rho, self.sched[..., k - 1], self.sigma2)
        return self.x

    def chase_retransmit(self):
        return self.x

    def fpf_retransmit(self, r):
        return self._lfc_retransmit(r)

    def ppf_pc_retransmit(self, r):
        return self._lfc_retransmit(r)

    def ppf_retransmit(self, r):
        x = self._lfc_retransmit(r)
        self.silent = ~self.selected
        return x

    def select(self, info_llrs):
        """Grow the feedback set from the current reliabilities"""
        budget = self.cfg.symbol_budget
        if budget >= self.cfg.n_symbols:
            chosen = np.arange(self.cfg.n_symbols)
        else:
            chosen = ppf_select(info_llrs, budget, self.cfg.bits_per_symbol)
        mask = np.zeros(self.m * self.columns, dtype=bool)
        mask[chosen] = True
        mask = mask.reshape(self.columns, self.m).T
        fresh = mask & ~self.selected
        self.sched[fresh, self.k - 1 :] = self.gamma
        self.selected |= mask
        if self.cfg.mode is Mode.PPF:
            self.last[~self.selected] = 1
        return chosen

    def feedback_load(self):
        if self.cfg.mode is Mode.CHASE:
            return 0
        return int(np.count_nonzero(self.sched[..., self.k - 1] > 0))

    def retransmit(self, decoded):
        """Prepare transmission k + 1 after a NACK in round k"""
        mode = self.cfg.mode
        if mode is Mode.CHASE:
            return self.chase_retransmit()
        if mode in PARTIAL_MODES and (self.k == 1 or self.cfg.reselect_each_round):
            self.select(decoded.llrs)
        r = self.feedback()
        if mode is Mode.PPF:
            return self.ppf_retransmit(r)
        if mode is Mode.PPF_PC:
            return self.ppf_pc_retransmit(r)
        return self.fpf_retransmit(r)


def _run_ir_session(cfg, info_bits, rng, trace, codec, trace_sink):
    codec = codec or TurboCodec(cfg.codec_config)
    channel_rng, forward_rng = rng.spawn(3)[:2]
    codec_cfg = codec.config
    word = crc_attach(info_bits)
    coded = codec.encode(word)
    trace = trace if trace is not None else sample_trace(cfg.trace_config(), channel_rng)

    m = cfg.antenna.streams
    unit = cfg.bits_per_symbol * m
    rv_bits = ir_positions(codec_cfg, 0).size
    rv_padded = -(-rv_bits // unit) * unit
    # equal energy per transmission as a full packet
    rho_ir = cfg.rho * cfg.padded_length / rv_padded
    const = constellation_from_token(cfg.constellation, rho_ir)

    buffer = np.zeros(codec_cfg.coded_length)
    rounds = []
    for k in range(1, cfg.n_max + 1):
        rv = (k - 1) % 4
        bits = np.zeros(rv_padded, dtype=np.uint8)
        bits[:rv_bits] = puncture_ir(coded, codec_cfg, rv)
        symbols = map_bits(bits, const)
        x = symbols.reshape(-1, m).T

        h = trace.gain(k)
        smap = spatial_map(cfg.antenna, h, rho_ir)
        y = smap.receive(apply_forward(smap.transmit(x), h, forward_rng, cfg.forward_noise_scale))

        theta_u = np.zeros_like(x)
        err = np.full(x.shape, np.inf)
        for i in range(m):
            code = lfc.build_code(smap.gains[i : i + 1], rho_ir, 0.0, 0.0)
            try:
                theta_u[i], err[i] = lfc.unbiased_estimate(lfc.combine_noisy(y[i : i + 1], code))
            except DegenerateChannelError:
                logger.debug(f"IR round {k} stream {i}: zero gain")
        theta_u = theta_u.T.reshape(-1)
        err = err.T.reshape(-1)
        llrs = llr_demap(theta_u, err, const, max_log=cfg.max_log, symbols=False).bit_llrs
        depuncture_ir(llrs[:rv_bits], codec_cfg, rv, into=buffer)

        decoded = codec.decode(buffer, stop=None if cfg.genie else crc_ok)
        success = bool(np.array_equal(decoded.bits, word)) if cfg.genie else bool(crc_ok(decoded.bits))
        with np.errstate(divide="ignore"):
            snr = np.where(np.isfinite(err), rho_ir / err, 0.0)
        record = RoundRecord(
            round=k,
            snr_post=float(np.mean(snr)),
            crc=success,
            llr_min_abs_quantiles=_llr_quantiles(decoded.llrs),
            decoder_iterations=decoded.iterations,
        )
        rounds.append(record)
        if trace_sink is not None:
            trace_sink(record.to_dict(cfg.display_label))
        if success:
            return SessionResult(True, k, rounds)
    return SessionResult(False, cfg.n_max, rounds)


def run_session(harq_config, info_bits, rng, trace=None, codec=None, trace_sink=None):
    """
    Run one packet through the ARQ loop.

    Args:
        harq_config: HarqConfig
        info_bits: Payload bits (l_info - 16); the CRC is appended here
        rng: numpy Generator owned by the session; child streams are spawned for
            the channel, forward noise and feedback noise
        trace: Optional fixed ChannelTrace (test hook)
        codec: Optional shared TurboCodec
        trace_sink: Optional callable receiving one dict per round

    Returns:
        SessionResult
    """
    if harq_config.mode is Mode.IR_BASELINE:
        return _run_ir_session(harq_config, info_bits, rng, trace, codec, trace_sink)

    session = HarqSession(harq_config, info_bits, rng, trace=trace, codec=codec)
    rounds = []
    for k in range(1, harq_config.n_max + 1):
        session.transmit()
        record, decoded = session.receive()
        rounds.append(record)
        if not record.crc and k < harq_config.n_max:
            session.retransmit(decoded)
            record.feedback_symbols = session.feedback_load()
        if trace_sink is not None:
            trace_sink(record.to_dict(harq_config.display_label))
        if record.crc:
            return SessionResult(True, k, rounds)
    logger.debug(f"{harq_config.display_label}: session failed after {harq_config.n_max} rounds")
    return SessionResult(False, harq_config.n_max, rounds)


@dataclass(frozen=True)
class ThroughputEstimate:
    tau: float
    half_width: float
    fer: float
    sessions: int


def throughput(results):
    """
    Successes per transmission with a 95% delta-method half-width.

    Failed sessions consume n_max transmissions and deliver nothing.
    """
    results = list(results)
    if not results:
        raise EmptyResultError("throughput of an empty result set")
    s = np.array([r.success for r in results], dtype=float)
    b = np.array([r.transmissions_used for r in results], dtype=float)
    tau = float(s.sum() / b.sum())
    n = len(results)
    half = 0.0
    if n > 1:
        d = s - tau * b
        half = float(CI_Z * np.sqrt(d.var(ddof=1) / n) / b.mean())
    return ThroughputEstimate(tau=tau, half_width=half, fer=float(1.0 - s.mean()), sessions=n)
