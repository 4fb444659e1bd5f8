"""
Experiment specs in, result tables out.

Recipes are YAML files validated into pydantic models; results are CSV (or
JSON) tables with a JSON provenance sidecar.
"""

import csv
import json
import logging
import platform
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

import core
from core import config
from core.python.errors import ConfigurationError, EmptyResultError, ResultsIOError
from core.python.fec import CRC_INIT, CRC_POLY, IR_TABLE
from core.python.harq import AntennaConfig, HarqConfig

logger = logging.getLogger(__name__)

THROUGHPUT_COLUMNS = ("mode", "rho_db", "constellation", "antennas", "tau", "tau_ci95", "fer", "packets", "seed")
VERSIONED_PACKAGES = ("numpy", "scipy", "numba", "pydantic", "PyYAML", "typer", "rich")
FORMATS = ("csv", "json")


class ExperimentSpec(BaseModel):
    """
    One reproducible experiment.

    kind selects the driver: throughput sweeps HARQ modes over rho; snr,
    gamma_curve and error_probability evaluate post-processed SNR formulas
    over random traces.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = "experiment"
    kind: Literal["throughput", "snr", "gamma_curve", "error_probability"] = "throughput"
    sweep_db: list[float] = Field(min_length=1)
    modes: list[HarqConfig] = []
    constellations: Optional[list[Literal["qpsk", "16qam", "64qam"]]] = None
    packets_per_point: int = Field(config.PACKETS_PER_POINT, ge=1)
    master_seed: int = Field(config.MASTER_SEED, ge=0)
    workers: int = Field(config.WORKERS, ge=1)
    paired_traces: bool = True
    chunk_size: int = Field(50, ge=1)
    output: Optional[str] = None

    # formula experiments
    n_values: list[int] = Field(default_factory=lambda: list(range(1, 9)), min_length=1)
    sigma2_values: list[float] = Field(default_factory=lambda: [0.0], min_length=1)
    gamma_values: Optional[list[float]] = None
    fixed_gamma: float = Field(config.DEFAULT_GAMMA, ge=0, le=1)
    traces: int = Field(10_000, ge=1)
    fading: bool = True
    rate_fraction: float = Field(0.5, gt=0)
    antennas: list[AntennaConfig] = []

    @field_validator("constellations")
    @classmethod
    def _check_grid(cls, constellations, info):
        for mode in info.data.get("modes", []):
            for token in constellations or []:
                try:
                    with_updates(mode, constellation=token)
                except ConfigurationError as exc:
                    raise ValueError(f"{token} does not fit {mode.display_label}: {exc}") from exc
        return constellations

    @model_validator(mode="after")
    def _check_kind(self):
        if self.kind == "throughput" and not self.modes:
            raise ValueError("throughput experiments need at least one mode")
        if self.kind == "error_probability":
            if not self.antennas:
                raise ValueError("error_probability experiments need at least one antenna config")
            if any(a.kind != "miso" for a in self.antennas):
                raise ValueError("error_probability antennas must be miso")
        if any(n < 1 for n in self.n_values):
            raise ValueError("n_values must be >= 1")
        if any(s < 0 for s in self.sigma2_values):
            raise ValueError("sigma2_values must be >= 0")
        return self

    @property
    def rho_linear(self):
        return [10.0 ** (db / 10.0) for db in self.sweep_db]

    def grid(self):
        """Mode templates after expanding the constellation grid"""
        if not self.constellations:
            return list(self.modes)
        return [
            with_updates(mode, constellation=c) for mode in self.modes for c in self.constellations
        ]


def with_updates(harq_config, **updates):
    """Copy a HarqConfig and re-run validation on the result"""
    try:
        return HarqConfig.model_validate({**harq_config.model_dump(), **updates})
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigurationError(first["msg"], field=".".join(str(p) for p in first["loc"]) or None) from exc


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    columns: tuple
    rows: list
    wall_time: float = 0.0
    extras: dict = field(default_factory=dict)

    def column(self, name):
        return [row[name] for row in self.rows]


def _field_path(error):
    return ".".join(str(p) for p in error["loc"]) or "spec"


def parse_spec(data, source="spec"):
    """Validate a recipe mapping into an ExperimentSpec"""
    if not isinstance(data, dict):
        raise ConfigurationError(f"{source} must be a mapping, got {type(data).__name__}")
    try:
        return ExperimentSpec.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigurationError(first["msg"], field=_field_path(first)) from exc


def load_spec(path, overrides=None):
    """
    Read a YAML recipe.

    Args:
        path: Recipe file
        overrides: Optional mapping applied on top of the file (CLI flags)

    Returns:
        ExperimentSpec
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ResultsIOError(f"cannot read spec: {exc.strerror or exc}", path=path) from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: invalid YAML: {exc}") from exc
    if overrides:
        data = {**(data or {}), **{k: v for k, v in overrides.items() if v is not None}}
    spec = parse_spec(data, source=str(path))
    logger.debug(f"Loaded {spec.kind} spec {spec.name!r} from {path}")
    return spec


def package_versions():
    versions = {"core": core.__version__, "python": platform.python_version()}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = None
    return versions


def provenance(result):
    """Everything needed to rerun the table"""
    spec = result.spec
    seeds = sorted({m.interleaver_seed for m in spec.modes}) or [config.INTERLEAVER_SEED]
    return {
        "spec": spec.model_dump(mode="json"),
        "codec": {
            "interleaver_seeds": seeds,
            "crc": {"poly": hex(CRC_POLY), "init": hex(CRC_INIT)},
            "ir_table": {str(rv): [seg, list(tail)] for rv, (seg, tail) in IR_TABLE.items()},
        },
        "versions": package_versions(),
        "wall_time_s": result.wall_time,
        "extras": result.extras,
    }


def _plain(value):
    if isinstance(value, np.generic):
        return value.item()
    return value


def write_results(result, path, fmt="csv"):
    """
    Write a result table and its provenance.

    CSV output gets a .json sidecar next to it; JSON output is a single file
    holding both.

    Returns:
        List of written paths
    """
    if fmt not in FORMATS:
        raise ConfigurationError(f"unknown format {fmt!r}, expected one of {FORMATS}", field="format")
    if not result.rows:
        raise EmptyResultError("refusing to write an empty result table")

    path = Path(path)
    rows = [{c: _plain(row[c]) for c in result.columns} for row in result.rows]
    meta = provenance(result)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "json":
            with open(path, "w", encoding="utf-8") as f:
                json.dump({**meta, "columns": list(result.columns), "rows": rows}, f, indent=2)
            written = [path]
        else:
            with open(path, "w", newline="", encoding="utf-8") as f:
                writer = csv.DictWriter(f, fieldnames=list(result.columns))
                writer.writeheader()
                writer.writerows(rows)
            sidecar = path.with_suffix(".json")
            with open(sidecar, "w", encoding="utf-8") as f:
                json.dump(meta, f, indent=2)
            written = [path, sidecar]
    except OSError as exc:
        raise ResultsIOError(f"cannot write results: {exc.strerror or exc}", path=path) from exc

    for p in written:
        logger.info(f"Saved {p}")
    return written


def _parse_cell(text):
    try:
        number = float(text)
    except ValueError:
        return text
    if number.is_integer() and text.lstrip("-").isdigit():
        return int(text)
    return number


def read_results(path):
    """Rows of a written CSV table with numeric cells parsed"""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as f:
            return [{k: _parse_cell(v) for k, v in row.items()} for row in csv.DictReader(f)]
    except OSError as exc:
        raise ResultsIOError(f"cannot read results: {exc.strerror or exc}", path=path) from exc


def write_trace(path, records):
    """Session trace dump, one JSON object per line"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for record in records:
                f.write(json.dumps({k: _plain(v) for k, v in record.items()}) + "\n")
    except OSError as exc:
        raise ResultsIOError(f"cannot write trace: {exc.strerror or exc}", path=path) from exc
    logger.info(f"Saved trace {path}")
    return path
