"""
Run directories, ensemble files and the run manifest.

CSV bodies are written with a fixed float format and no index so that two
runs with the same configuration and seed produce byte-identical files.
Wall times only ever go to the JSON records.
"""

import hashlib
import json
import logging
import struct
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Union

import numpy as np
import pandas as pd

from neurofield import __version__
from neurofield.services.errors import ConfigurationError
from neurofield.services.paths import Ensemble, TimeGrid

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"
ENSEMBLE_FLOAT_FORMAT = "%.17g"
NFE_MAGIC = b"NFEN"
NFE_VERSION = 1
NFE_HEADER = struct.Struct("<4sIIIIId")

PathLike = Union[str, Path]


def write_frame(frame: pd.DataFrame, path: PathLike, float_format: str = FLOAT_FORMAT) -> Path:
    path = Path(path)
    frame.to_csv(path, index=False, float_format=float_format)
    return path


def write_json(data: Dict[str, Any], path: PathLike) -> Path:
    path = Path(path)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def file_sha256(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def ensemble_frame(ensemble: Ensemble) -> pd.DataFrame:
    """Long format: one row per (member, grid time)."""
    n, n_total = ensemble.paths.shape
    data: Dict[str, np.ndarray] = {"neuron_id": np.repeat(np.arange(n), n_total)}
    for axis in range(ensemble.dim):
        data[f"r_{axis + 1}"] = np.repeat(ensemble.positions[:, axis], n_total)
    data["t"] = np.tile(ensemble.grid.times, n)
    data["x"] = ensemble.paths.ravel()
    return pd.DataFrame(data)


def write_ensemble_csv(ensemble: Ensemble, path: PathLike) -> Path:
    """Paths and positions keep 17 significant digits so reading back is exact."""
    return write_frame(ensemble_frame(ensemble), path, ENSEMBLE_FLOAT_FORMAT)


def read_ensemble_csv(path: PathLike) -> Ensemble:
    """
    Read an ensemble written by :func:`write_ensemble_csv`.

    The grid is recovered from the distinct ``t`` values.

    Raises:
        ConfigurationError: If the file is missing or not an ensemble table
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"ensemble file not found: {path}")
    frame = pd.read_csv(path, float_precision="round_trip")
    r_columns = sorted((c for c in frame.columns if c.startswith("r_")), key=lambda c: int(c[2:]))
    missing = {"neuron_id", "t", "x"} - set(frame.columns)
    if missing or not r_columns:
        raise ConfigurationError(f"{path} is not an ensemble table (missing {sorted(missing) or 'r_*'})")

    frame = frame.sort_values(["neuron_id", "t"], kind="stable")
    times = np.unique(frame["t"].to_numpy())
    ids = np.unique(frame["neuron_id"].to_numpy())
    if len(frame) != len(ids) * len(times) or len(times) < 2:
        raise ConfigurationError(f"{path}: every neuron needs a value at every grid time")
    dt = float(f"{np.mean(np.diff(times)):.10g}")
    n_hist = int(np.sum(times < -0.5 * dt))
    grid = TimeGrid(dt=dt, n_hist=n_hist, n_main=len(times) - n_hist - 1)

    paths = frame["x"].to_numpy().reshape(len(ids), len(times))
    positions = frame.groupby("neuron_id", sort=True)[r_columns].first().to_numpy()
    return Ensemble(positions=positions, paths=paths, grid=grid)


def write_ensemble_binary(ensemble: Ensemble, path: PathLike) -> Path:
    """
    Compact little-endian layout: header (magic, version, n_members, dim,
    n_hist, n_main, dt) then float64 positions and float64 paths, row-major.
    """
    path = Path(path)
    grid = ensemble.grid
    header = NFE_HEADER.pack(
        NFE_MAGIC, NFE_VERSION, len(ensemble), ensemble.dim, grid.n_hist, grid.n_main, grid.dt
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(ensemble.positions, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(ensemble.paths, dtype="<f8").tobytes())
    return path


def read_ensemble_binary(path: PathLike) -> Ensemble:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"ensemble file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < NFE_HEADER.size:
        raise ConfigurationError(f"{path}: truncated header")
    magic, version, n, dim, n_hist, n_main, dt = NFE_HEADER.unpack_from(raw)
    if magic != NFE_MAGIC or version != NFE_VERSION:
        raise ConfigurationError(f"{path}: not a version {NFE_VERSION} ensemble file")
    grid = TimeGrid(dt=dt, n_hist=n_hist, n_main=n_main)
    body = np.frombuffer(raw, dtype="<f8", offset=NFE_HEADER.size)
    if body.size != n * (dim + grid.n_total):
        raise ConfigurationError(f"{path}: body holds {body.size} values, header implies {n * (dim + grid.n_total)}")
    positions = body[: n * dim].reshape(n, dim)
    paths = body[n * dim :].reshape(n, grid.n_total)
    return Ensemble(positions=positions.astype(float), paths=paths.astype(float), grid=grid)


def read_ensemble(path: PathLike) -> Ensemble:
    """Dispatch on the suffix: ``.nfe`` is binary, anything else CSV."""
    if Path(path).suffix == ".nfe":
        return read_ensemble_binary(path)
    return read_ensemble_csv(path)


@dataclass
class RunManifest:
    """Provenance of one run; written last so its presence marks a complete run."""
    run_id: str
    command: str
    config: Dict[str, Any]
    config_hash: str
    seed: int
    version: str
    stages: Dict[str, float] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def load(cls, path: PathLike) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))

    def verify(self, directory: PathLike) -> List[str]:
        """Names of listed outputs that are missing or fail their checksum."""
        directory = Path(directory)
        bad = []
        for name, digest in self.outputs.items():
            target = directory / name
            if not target.is_file() or file_sha256(target) != digest:
                bad.append(name)
        return bad


def make_run_id(config_hash: str, now: Optional[datetime] = None) -> str:
    now = now or datetime.now(timezone.utc)
    return f"{now:%Y%m%dT%H%M%SZ}-{config_hash[:8]}"


class RunRecorder:
    """
    Collects the outputs and stage timings of one command.

    Usage:
        recorder = RunRecorder(out_dir, "simulate", config, config_hash, seed)
        with recorder.stage("simulate"):
            ...
        recorder.frame("ensemble.csv", frame)
        recorder.finish(metadata)
    """

    def __init__(self, out_dir: PathLike, command: str, config: Dict[str, Any], config_hash: str, seed: int):
        self.out_dir = Path(out_dir)
        self.command = command
        self.config = config
        self.config_hash = config_hash
        self.seed = seed
        self.stages: Dict[str, float] = {}
        self.files: List[str] = []
        self._started = time.perf_counter()

    def prepare(self) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        started = time.perf_counter()
        try:
            yield
        finally:
            self.stages[name] = self.stages.get(name, 0.0) + time.perf_counter() - started

    def _track(self, path: Path) -> Path:
        if path.name not in self.files:
            self.files.append(path.name)
        logger.info(f"Wrote {path}")
        return path

    def frame(self, name: str, frame: pd.DataFrame) -> Path:
        return self._track(write_frame(frame, self.out_dir / name))

    def ensemble(self, name: str, ensemble: Ensemble) -> Path:
        if name.endswith(".nfe"):
            return self._track(write_ensemble_binary(ensemble, self.out_dir / name))
        return self._track(write_ensemble_csv(ensemble, self.out_dir / name))

    def finish(self, metadata: Optional[Dict[str, Any]] = None) -> RunManifest:
        """Write metadata.json, then manifest.json with checksums of everything."""
        record = {
            "command": self.command,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "wall_seconds": time.perf_counter() - self._started,
            "version": __version__,
        }
        record.update(metadata or {})
        self._track(write_json(record, self.out_dir / "metadata.json"))

        manifest = RunManifest(
            run_id=make_run_id(self.config_hash),
            command=self.command,
            config=self.config,
            config_hash=self.config_hash,
            seed=self.seed,
            version=__version__,
            stages=dict(self.stages),
            outputs={name: file_sha256(self.out_dir / name) for name in self.files},
        )
        write_json(manifest.to_dict(), self.out_dir / "manifest.json")
        logger.info(f"Run {manifest.run_id} complete: {len(self.files)} files in {self.out_dir}")
        return manifest
