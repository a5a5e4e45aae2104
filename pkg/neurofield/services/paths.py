"""
Time grid and path containers shared by the simulators and the statistics.

Paths live on the uniform grid over [-tau_bar, T]; index ``n_hist`` is time 0.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from neurofield.services.errors import ConfigurationError
from neurofield.services.model import ModelParams

GRID_EPS = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid with ``n_hist`` history steps and ``n_main`` steps on (0, T]."""
    dt: float
    n_hist: int
    n_main: int

    @classmethod
    def build(cls, dt: float, tau_bar: float, horizon_T: float) -> "TimeGrid":
        if dt <= 0:
            raise ValueError(f"dt must be > 0, got {dt}")
        n_hist = max(0, math.ceil(tau_bar / dt - GRID_EPS))
        n_main = max(1, math.ceil(horizon_T / dt - GRID_EPS))
        return cls(dt=float(dt), n_hist=n_hist, n_main=n_main)

    @classmethod
    def from_params(cls, params: ModelParams, dt: Optional[float] = None) -> "TimeGrid":
        return cls.build(params.dt if dt is None else dt, params.tau_bar, params.horizon_T)

    @property
    def n_total(self) -> int:
        return self.n_hist + self.n_main + 1

    @property
    def origin(self) -> int:
        """Array index of time 0."""
        return self.n_hist

    @property
    def times(self) -> np.ndarray:
        return (np.arange(self.n_total) - self.n_hist) * self.dt

    @property
    def main_times(self) -> np.ndarray:
        """Times of indices 0..n_main relative to time 0."""
        return np.arange(self.n_main + 1) * self.dt

    def time_index(self, t: float) -> int:
        """
        Main-grid index (0..n_main) of a time in [0, T].

        Raises:
            ValueError: If ``t`` is not a grid time
        """
        k = int(round(t / self.dt))
        if not 0 <= k <= self.n_main or abs(k * self.dt - t) > GRID_EPS * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the grid (dt={self.dt})")
        return k

    def to_dict(self) -> dict:
        return {"dt": self.dt, "n_hist": self.n_hist, "n_main": self.n_main}


@dataclass
class PathSample:
    """One trajectory on the grid together with its location."""
    r: np.ndarray
    values: np.ndarray


@dataclass
class CouplingMatrix:
    """Sampled synaptic efficacies J_ij."""
    entries: np.ndarray

    @property
    def n(self) -> int:
        return self.entries.shape[0]


@dataclass
class Ensemble:
    """
    Uniformly weighted collection of paths with locations.

    Represents an empirical measure on paths x locations, either a finite
    network or a mean-field iterate.
    """

    positions: np.ndarray
    paths: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.paths = np.atleast_2d(np.asarray(self.paths, dtype=float))
        if len(self.positions) != len(self.paths):
            raise ValueError(f"{len(self.positions)} positions but {len(self.paths)} paths")
        if self.paths.shape[1] != self.grid.n_total:
            raise ValueError(f"paths have {self.paths.shape[1]} columns, grid needs {self.grid.n_total}")

    def __len__(self) -> int:
        return len(self.paths)

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def members(self) -> List[PathSample]:
        return [PathSample(r=r, values=x) for r, x in zip(self.positions, self.paths)]

    @classmethod
    def from_members(cls, members: Sequence[PathSample], grid: TimeGrid) -> "Ensemble":
        if not members:
            raise ValueError("empty ensemble")
        return cls(
            positions=np.stack([m.r for m in members]),
            paths=np.stack([m.values for m in members]),
            grid=grid,
        )

    def subset(self, indices) -> "Ensemble":
        indices = np.asarray(indices, dtype=int)
        return Ensemble(self.positions[indices], self.paths[indices], self.grid)

    def shifted(self, epsilon: float) -> "Ensemble":
        """Every path moved by ``epsilon`` (a sup-norm perturbation of size |epsilon|)."""
        return Ensemble(self.positions.copy(), self.paths + epsilon, self.grid)


def delay_indices(params: ModelParams, r: np.ndarray, r2: np.ndarray, dt: float) -> np.ndarray:
    """Delays tau(r_i, r2_j) rounded to the nearest grid step."""
    return np.rint(params.tau(r, r2) / dt).astype(int)


def delayed_columns(grid: TimeGrid, cols: np.ndarray) -> np.ndarray:
    """Buffer columns of delayed reads; every read must land inside the stored history."""
    cols = np.asarray(cols)
    if cols.size and (cols.min() < 0 or cols.max() >= grid.n_total):
        raise ConfigurationError(
            f"delayed read at column {int(cols.min())} falls outside a buffer with {grid.n_hist} history steps"
        )
    return cols


def delayed_sigmoid(
    params: ModelParams, ensemble: Ensemble, node: np.ndarray, time_indices: np.ndarray
) -> np.ndarray:
    """
    S(x^j at t - tau(node, r_j)) for every member j and main-grid time index.

    Returns:
        Array of shape (len(ensemble), len(time_indices))
    """
    grid = ensemble.grid
    delays = delay_indices(params, np.atleast_2d(node), ensemble.positions, grid.dt)[0]
    cols = grid.origin + np.asarray(time_indices)[None, :] - delays[:, None]
    rows = np.arange(len(ensemble))[:, None]
    return params.S(ensemble.paths[rows, delayed_columns(grid, cols)])
