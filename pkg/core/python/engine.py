"""
Seeded parallel Monte Carlo scheduler for HARQ sessions.

Work is split into chunks of consecutive packets of one grid point. Every
packet owns a SeedSequence derived from (master seed, mode, rho index, packet
index), so results do not depend on chunking or the number of workers.
"""

import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from core.python.fec import TurboCodec
from core.python.harq import HarqConfig, run_session

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChunkTask:
    """Packets [start, stop) of grid point (mode_index, rho_index)"""

    mode_index: int
    rho_index: int
    harq_config: HarqConfig
    start: int
    stop: int
    master_seed: int
    paired: bool = True
    collect_trace: bool = False

    @property
    def key(self):
        return (self.mode_index, self.rho_index, self.start)

    @property
    def size(self):
        return self.stop - self.start


@dataclass(frozen=True)
class SessionOutcome:
    packet: int
    success: bool
    transmissions_used: int
    round_snr: tuple


@dataclass
class ChunkResult:
    task: ChunkTask
    outcomes: list
    trace: list


def session_seed(master_seed, mode_index, rho_index, packet_index, paired=True):
    """
    Per-session seed. With paired traces the mode is left out so every mode
    sees the same channel, noise and payload at a given (rho, packet).
    """
    if paired:
        return np.random.SeedSequence([master_seed, rho_index, packet_index])
    return np.random.SeedSequence([master_seed, mode_index + 1, rho_index, packet_index])


@lru_cache(maxsize=8)
def _codec(codec_config):
    # one codec (and interleaver) per process and configuration
    return TurboCodec(codec_config)


def run_chunk(task):
    """Run every session of one chunk; executes inside worker processes"""
    cfg = task.harq_config
    codec = _codec(cfg.codec_config)
    outcomes = []
    trace = []
    for packet in range(task.start, task.stop):
        seed = session_seed(task.master_seed, task.mode_index, task.rho_index, packet, task.paired)
        rng = np.random.default_rng(seed)
        info_bits = rng.integers(0, 2, size=codec.config.payload_bits, dtype=np.uint8)

        records = []
        sink = records.append if task.collect_trace else None
        result = run_session(cfg, info_bits, rng, codec=codec, trace_sink=sink)
        outcomes.append(
            SessionOutcome(
                packet=packet,
                success=result.success,
                transmissions_used=result.transmissions_used,
                round_snr=tuple(result.round_snr),
            )
        )
        for record in records:
            record.update(rho=cfg.rho, packet=packet)
        trace.extend(records)
    return ChunkResult(task=task, outcomes=outcomes, trace=trace)


def make_tasks(points, packets, chunk_size, master_seed, paired=True, collect_trace=False):
    """
    Chunk tasks for a grid.

    Args:
        points: Iterable of (mode_index, rho_index, HarqConfig)
        packets: Sessions per grid point
        chunk_size: Sessions per task
    """
    tasks = []
    for mode_index, rho_index, harq_config in points:
        for start in range(0, packets, chunk_size):
            tasks.append(
                ChunkTask(
                    mode_index=mode_index,
                    rho_index=rho_index,
                    harq_config=harq_config,
                    start=start,
                    stop=min(start + chunk_size, packets),
                    master_seed=master_seed,
                    paired=paired,
                    collect_trace=collect_trace,
                )
            )
    return tasks


def run_tasks(tasks, workers=1, advance=None):
    """
    Execute chunk tasks, in-process for one worker or on a process pool.

    Args:
        tasks: ChunkTask list
        workers: Number of processes
        advance: Optional callback receiving the packet count of every finished chunk

    Returns:
        ChunkResult list sorted by (mode, rho, first packet)
    """
    results = []
    if workers <= 1:
        for task in tasks:
            results.append(run_chunk(task))
            if advance is not None:
                advance(task.size)
    else:
        logger.debug(f"Dispatching {len(tasks)} chunks to {workers} workers")
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_chunk, task) for task in tasks]
            for future in as_completed(futures):
                chunk = future.result()
                results.append(chunk)
                if advance is not None:
                    advance(chunk.task.size)
    results.sort(key=lambda chunk: chunk.task.key)
    return results


def group_outcomes(chunks):
    """Outcomes per (mode_index, rho_index), in packet order"""
    grouped = {}
    for chunk in chunks:
        key = (chunk.task.mode_index, chunk.task.rho_index)
        grouped.setdefault(key, []).extend(chunk.outcomes)
    return grouped
