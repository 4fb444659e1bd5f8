"""
Experiment pipeline: spec -> Monte Carlo -> result table
"""

import logging
import time

import numpy as np
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn

from core.python import lfc
from core.python.channel import complex_normal
from core.python.engine import group_outcomes, make_tasks, run_tasks
from core.python.harq import antenna_codebook, throughput
from core.python.logger import console
from core.python.modem import symbol_error_probability
from core.python.multiantenna import miso_capacity
from core.python.results_io import THROUGHPUT_COLUMNS, ExperimentResult, with_updates, write_trace

logger = logging.getLogger(__name__)

SNR_COLUMNS = ("curve", "rho_db", "sigma2", "n", "gamma", "snr", "snr_db")
GAMMA_COLUMNS = ("channel", "rho_db", "sigma2", "n", "gamma", "snr", "snr_db")
ERROR_COLUMNS = ("scheme", "rho_db", "sigma2", "n", "rate", "m_points", "ser")

# stream ids for the formula experiments, disjoint from HARQ session keys
KIND_STREAMS = {"snr": 101, "gamma_curve": 102, "error_probability": 103}


def _db(x):
    with np.errstate(divide="ignore"):
        return float(10.0 * np.log10(x))


def _formula_rng(spec, rho_index):
    return np.random.default_rng(np.random.SeedSequence([spec.master_seed, KIND_STREAMS[spec.kind], rho_index]))


def _progress():
    return Progress(
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        console=console,
        transient=True,
    )


def _mean_round_snr(outcomes):
    """Mean post-combining SNR per round over the sessions reaching that round"""
    depth = max(len(o.round_snr) for o in outcomes)
    means = []
    for r in range(depth):
        values = [o.round_snr[r] for o in outcomes if len(o.round_snr) > r]
        means.append(float(np.mean(values)))
    return means


def run_throughput(spec, workers=None, trace_path=None, show_progress=True):
    """HARQ throughput for every (mode, rho) grid point"""
    templates = spec.grid()
    points = [
        (m, r, with_updates(template, rho=rho))
        for m, template in enumerate(templates)
        for r, rho in enumerate(spec.rho_linear)
    ]
    tasks = make_tasks(
        points,
        spec.packets_per_point,
        spec.chunk_size,
        spec.master_seed,
        paired=spec.paired_traces,
        collect_trace=trace_path is not None,
    )
    workers = workers or spec.workers
    logger.info(
        f"{len(points)} grid points x {spec.packets_per_point} packets on {workers} worker(s)"
    )

    with _progress() as progress:
        bar = progress.add_task("sessions", total=len(points) * spec.packets_per_point, visible=show_progress)
        chunks = run_tasks(tasks, workers=workers, advance=lambda n: progress.advance(bar, n))

    grouped = group_outcomes(chunks)
    rows = []
    round_snr = []
    for m, r, cfg in points:
        outcomes = grouped[(m, r)]
        estimate = throughput(outcomes)
        rows.append(
            {
                "mode": cfg.display_label,
                "rho_db": spec.sweep_db[r],
                "constellation": cfg.constellation,
                "antennas": cfg.antenna.label,
                "tau": estimate.tau,
                "tau_ci95": estimate.half_width,
                "fer": estimate.fer,
                "packets": estimate.sessions,
                "seed": spec.master_seed,
            }
        )
        round_snr.append(
            {"mode": cfg.display_label, "rho_db": spec.sweep_db[r], "snr_post": _mean_round_snr(outcomes)}
        )
        logger.info(
            f"{cfg.display_label:>10} {cfg.constellation:>6} rho={spec.sweep_db[r]:6.2f} dB: "
            f"tau={estimate.tau:.4f} +- {estimate.half_width:.4f}, FER={estimate.fer:.4f}"
        )

    if trace_path is not None:
        write_trace(trace_path, [record for chunk in chunks for record in chunk.trace])

    return ExperimentResult(spec=spec, columns=THROUGHPUT_COLUMNS, rows=rows, extras={"round_snr": round_snr})


def run_snr(spec):
    """Average post-processed SNR versus N: LFC at gamma_0, LFC at a fixed gamma, MRC"""
    rows = []
    n_top = max(spec.n_values)
    for r, (db, rho) in enumerate(zip(spec.sweep_db, spec.rho_linear)):
        rng = _formula_rng(spec, r)
        if spec.fading:
            gains = complex_normal(rng, (spec.traces, n_top))
        else:
            gains = np.ones((1, n_top), dtype=complex)
        for sigma2 in spec.sigma2_values:
            for n in spec.n_values:
                g = gains[:, :n]
                curves = [
                    ("lfc_opt", lfc.optimize_gamma(rho, sigma2, n)),
                    ("lfc_fixed", spec.fixed_gamma),
                    ("mrc", 0.0),
                ]
                for name, gamma in curves:
                    snr = float(lfc.post_snr_batch(g, rho, gamma, sigma2).mean())
                    rows.append(
                        {"curve": name, "rho_db": db, "sigma2": sigma2, "n": n,
                         "gamma": gamma, "snr": snr, "snr_db": _db(snr)}
                    )
                if sigma2 == 0:
                    snr = float(lfc.perfect_snr(g, rho).mean())
                    rows.append(
                        {"curve": "perfect", "rho_db": db, "sigma2": 0.0, "n": n,
                         "gamma": 1.0, "snr": snr, "snr_db": _db(snr)}
                    )
        logger.info(f"rho={db:.2f} dB: {len(spec.sigma2_values)} x {len(spec.n_values)} SNR points")
    return ExperimentResult(spec=spec, columns=SNR_COLUMNS, rows=rows)


def run_gamma_curve(spec):
    """Average post-processed SNR as a function of gamma, AWGN and fading"""
    gammas = np.asarray(spec.gamma_values if spec.gamma_values else np.linspace(0.0, 1.0, 51))
    rows = []
    optimum = []
    n_top = max(spec.n_values)
    for r, (db, rho) in enumerate(zip(spec.sweep_db, spec.rho_linear)):
        rng = _formula_rng(spec, r)
        fading = complex_normal(rng, (spec.traces, n_top))
        for sigma2 in spec.sigma2_values:
            for n in spec.n_values:
                channels = {"awgn": np.ones((1, n), dtype=complex), "fading": fading[:, :n]}
                for channel, traces in channels.items():
                    curve = lfc.average_snr_curve(rho, sigma2, gammas, traces)
                    for gamma, snr in zip(gammas, curve):
                        rows.append(
                            {"channel": channel, "rho_db": db, "sigma2": sigma2, "n": n,
                             "gamma": float(gamma), "snr": float(snr), "snr_db": _db(snr)}
                        )
                optimum.append(
                    {"rho_db": db, "sigma2": sigma2, "n": n, "gamma0": lfc.optimize_gamma(rho, sigma2, n)}
                )
    return ExperimentResult(spec=spec, columns=GAMMA_COLUMNS, rows=rows, extras={"gamma0": optimum})


def _scheme_name(antenna):
    if antenna.beamforming in ("rvq", "grassmannian"):
        return f"{antenna.beamforming}_b{antenna.codebook_bits}"
    return antenna.beamforming


def _beamformed_gains(antenna, H):
    """Effective gain |h^T w| per block for traces H of shape (T, N, Mt)"""
    if antenna.beamforming == "perfect":
        return np.linalg.norm(H, axis=-1)
    if antenna.beamforming == "none":
        return np.abs(H[..., 0])
    book = antenna_codebook(antenna)
    return np.max(np.abs(H @ book.vectors.T), axis=-1)


def run_error_probability(spec):
    """
    Uncoded symbol error probability of MISO LFC versus N at a rate that is a
    fixed fraction of the perfect-CSI MISO capacity; |Theta| = 2^(N R) may be
    fractional.
    """
    rows = []
    n_top = max(spec.n_values)
    for r, (db, rho) in enumerate(zip(spec.sweep_db, spec.rho_linear)):
        rng = _formula_rng(spec, r)
        for antenna in spec.antennas:
            capacity = miso_capacity(antenna.mt, rho, spec.traces, rng)
            rate = spec.rate_fraction * capacity
            H = complex_normal(rng, (spec.traces, n_top, antenna.mt))
            gains = _beamformed_gains(antenna, H)
            for sigma2 in spec.sigma2_values:
                for n in spec.n_values:
                    gamma = 1.0 if sigma2 == 0 else lfc.optimize_gamma(rho, sigma2, n)
                    snr = lfc.post_snr_batch(gains[:, :n], rho, gamma, sigma2)
                    with np.errstate(divide="ignore"):
                        err_var = np.where(snr > 0, rho / snr, np.inf)
                    m_points = 2.0 ** (n * rate)
                    ser = float(np.mean(symbol_error_probability(err_var, m_points, rho)))
                    rows.append(
                        {"scheme": _scheme_name(antenna), "rho_db": db, "sigma2": sigma2, "n": n,
                         "rate": rate, "m_points": m_points, "ser": ser}
                    )
            logger.info(f"{_scheme_name(antenna)} rho={db:.2f} dB: C_MISO={capacity:.3f} bits, R={rate:.3f}")
    return ExperimentResult(spec=spec, columns=ERROR_COLUMNS, rows=rows)


def run_experiment(spec, workers=None, trace_path=None, show_progress=True):
    """
    Run one experiment of any kind.

    Args:
        spec: ExperimentSpec
        workers: Overrides spec.workers for throughput runs
        trace_path: Optional JSON-lines session trace (throughput only)
        show_progress: Show a rich progress bar

    Returns:
        ExperimentResult
    """
    logger.info(f"Running {spec.kind} experiment {spec.name!r}")
    start = time.perf_counter()
    if spec.kind == "throughput":
        result = run_throughput(spec, workers=workers, trace_path=trace_path, show_progress=show_progress)
    elif spec.kind == "snr":
        result = run_snr(spec)
    elif spec.kind == "gamma_curve":
        result = run_gamma_curve(spec)
    else:
        result = run_error_probability(spec)
    result.wall_time = time.perf_counter() - start
    logger.info(f"{len(result.rows)} rows in {result.wall_time:.1f} s")
    return result
