"""
Mean-field map and Picard fixed-point solver.

The map sends an ensemble mu to the law of (x, r) where r ~ pi, G(r) is a
Gaussian path with the unscaled mean M_mu(., r) and covariance Sigma_mu(., ., r),
and x solves dx = f(r, t, x) dt + G_t(r) dt + lambda(r) dB_t from the initial
history. One G path is drawn per particle and frozen over the trajectory.

Every application of the map inside one solve reuses the same locations,
histories, Brownian increments and standard normals behind G; only the law
of G changes between iterates.
"""

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from neurofield.services.gaussian import jitter_cholesky
from neurofield.services.measure import (
    DistanceMethod,
    FieldStats,
    field_stats,
    interaction_means,
    wasserstein2,
)
from neurofield.services.model import ModelParams
from neurofield.services.network import build_initial, integrate, sample_positions, simulate_uncoupled
from neurofield.services.paths import Ensemble, TimeGrid
from neurofield.services.streams import Mapper, SeedLike, SeedTree, as_seed_tree, serial_map

logger = logging.getLogger(__name__)


@dataclass
class IterateRecord:
    """One Picard step: distance to the previous iterate and its ratio to the step before."""
    iteration: int
    w2: float
    ratio: float
    seconds: float


@dataclass
class MeanFieldSolution:
    """Final iterate, its statistics and the iteration history."""
    ensemble: Ensemble
    stats: FieldStats
    iterates: List[IterateRecord]
    converged: bool
    map_seed: SeedTree
    m_nodes: int = 8

    @property
    def last_w2(self) -> float:
        return self.iterates[-1].w2 if self.iterates else math.nan


def node_lattice(params: ModelParams, m_nodes: int) -> np.ndarray:
    """Cell-centred location nodes, m_nodes per axis."""
    return params.domain.lattice(m_nodes, cell_centred=True)


def draw_effective_interactions(
    params: ModelParams,
    prev: Ensemble,
    positions: np.ndarray,
    grid: TimeGrid,
    m_nodes: int,
    seed: SeedLike,
    mapper: Optional[Mapper] = None,
) -> np.ndarray:
    """
    One Gaussian interaction path per particle.

    Each particle gets the exact mean M_prev(., r_p) and the covariance
    factor of its nearest location node.

    Returns:
        Array of shape (len(positions), n_main + 1), column k at time k dt
    """
    if len(prev) == 0:
        raise ValueError("empty ensemble")
    if prev.grid != grid:
        raise ValueError("previous iterate lives on a different grid")
    positions = np.atleast_2d(positions)
    time_indices = np.arange(grid.n_main + 1)
    run = mapper or serial_map

    nodes = node_lattice(params, m_nodes)
    stats = field_stats(prev, params, nodes, None, mapper)
    factors = run(jitter_cholesky, list(stats.Sigma))
    nearest = np.argmin(
        ((positions[:, None, :] - nodes[None, :, :]) ** 2).sum(axis=2), axis=1
    )

    mean = interaction_means(params, prev, positions, time_indices)
    normals = as_seed_tree(seed).row_normals("interaction", len(positions), len(time_indices), mapper)
    G = np.empty_like(mean)
    for node in np.unique(nearest):
        rows = nearest == node
        G[rows] = mean[rows] + normals[rows] @ factors[node].T
    return G


@dataclass
class _Drivers:
    """Common random inputs shared by every map application in one solve."""
    positions: np.ndarray
    histories: np.ndarray
    noise: np.ndarray


def _drivers(params: ModelParams, n_particles: int, grid: TimeGrid, tree: SeedTree, mapper) -> _Drivers:
    positions = sample_positions(params, n_particles, tree.child("positions"))
    histories = build_initial(params.initial, positions, grid, tree.child("initial"), mapper=mapper)
    noise = tree.child("network").indexed_normals("noise", range(n_particles), grid.n_main, mapper)
    return _Drivers(positions=positions, histories=histories, noise=noise)


def meanfield_map(
    params: ModelParams,
    prev: Ensemble,
    n_particles: int,
    grid: TimeGrid,
    m_nodes: int,
    seed: SeedLike,
    mapper: Optional[Mapper] = None,
) -> Ensemble:
    """
    Apply the mean-field map once.

    Raises:
        ValueError: If ``prev`` is empty or on another grid
        CholeskyFailure: If a node covariance cannot be factored
    """
    tree = as_seed_tree(seed)
    drivers = _drivers(params, n_particles, grid, tree, mapper)
    return _apply_map(params, prev, drivers, grid, m_nodes, tree, mapper)


def _apply_map(params, prev, drivers: _Drivers, grid, m_nodes, tree: SeedTree, mapper) -> Ensemble:
    G = draw_effective_interactions(params, prev, drivers.positions, grid, m_nodes, tree.child("G"), mapper)
    return integrate(
        params, drivers.positions, drivers.histories, grid, drivers.noise,
        interaction=lambda X, column, step: G[:, step],
    )


def picard_solve(
    params: ModelParams,
    grid: TimeGrid,
    n_particles: int = 4096,
    m_nodes: int = 8,
    tol: float = 0.05,
    max_iter: int = 10,
    seed: SeedLike = 0,
    subsample: int = 256,
    mapper: Optional[Mapper] = None,
    on_iterate: Optional[Callable[[IterateRecord], None]] = None,
) -> MeanFieldSolution:
    """
    Iterate the mean-field map from the uncoupled law until successive
    iterates are within ``tol`` in the estimated Vaserstein distance.

    Running out of iterations is not an error: the solution comes back with
    ``converged=False`` and the full history.
    """
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    tree = as_seed_tree(seed)
    map_seed = tree.child("map")
    compare_seed = tree.child("compare")
    subsample = min(subsample, n_particles)
    K_tau = params.constants.K_tau

    drivers = _drivers(params, n_particles, grid, map_seed, mapper)
    current = simulate_uncoupled(
        params, drivers.positions, drivers.histories, grid, map_seed.child("network"), mapper
    )
    iterates: List[IterateRecord] = []
    converged = False
    previous_w2 = math.nan

    for n in range(1, max_iter + 1):
        started = time.perf_counter()
        nxt = _apply_map(params, current, drivers, grid, m_nodes, map_seed, mapper)
        w2 = wasserstein2(
            nxt, current, K_tau, subsample, DistanceMethod.exact_assignment, compare_seed, mapper
        ).value
        ratio = w2 / previous_w2 if previous_w2 > 0 else math.nan
        record = IterateRecord(iteration=n, w2=w2, ratio=ratio, seconds=time.perf_counter() - started)
        iterates.append(record)
        logger.info(f"Picard iteration {n}: w2={w2:.5g} ratio={ratio:.3g} ({record.seconds:.2f}s)")
        if on_iterate is not None:
            on_iterate(record)
        current = nxt
        previous_w2 = w2
        if w2 <= tol:
            converged = True
            break

    if not converged:
        logger.warning(f"Picard iteration stopped after {max_iter} steps at w2={previous_w2:.5g} > tol={tol:g}")
    stats = field_stats(current, params, node_lattice(params, m_nodes), None, mapper)
    return MeanFieldSolution(
        ensemble=current,
        stats=stats,
        iterates=iterates,
        converged=converged,
        map_seed=map_seed,
        m_nodes=m_nodes,
    )


@dataclass
class ResidualRow:
    """Change of one probed statistic under one more application of the map."""
    t: float
    node: int
    statistic: str
    delta: float
    se: float

    @property
    def z(self) -> float:
        return abs(self.delta) / self.se if self.se > 0 else (0.0 if self.delta == 0 else math.inf)


def fixed_point_residual(
    params: ModelParams,
    solution: MeanFieldSolution,
    probe_times: Sequence[float],
    probe_nodes: np.ndarray,
    seed: Optional[SeedLike] = None,
    mapper: Optional[Mapper] = None,
) -> List[ResidualRow]:
    """
    Apply the map once more and report the change of m and K at each probe.

    The extra application draws fresh random inputs from a child of the
    solve's map seed unless a seed is given; passing ``solution.map_seed``
    reuses the solve's inputs and measures only the last Picard step. Each
    change comes with the combined standard error of the two independent
    ensemble averages.
    """
    ensemble = solution.ensemble
    grid = ensemble.grid
    map_seed = solution.map_seed.child("residual") if seed is None else as_seed_tree(seed)
    extra = meanfield_map(params, ensemble, len(ensemble), grid, solution.m_nodes, map_seed, mapper)

    before = field_stats(ensemble, params, probe_nodes, probe_times, mapper)
    after = field_stats(extra, params, probe_nodes, probe_times, mapper)
    m0, K0 = before.scaled()
    m1, K1 = after.scaled()
    m0_se, K0_se = before.scaled_se()
    m1_se, K1_se = after.scaled_se()

    rows: List[ResidualRow] = []
    for node in range(len(before.r_nodes)):
        for k, t in enumerate(before.times):
            rows.append(ResidualRow(
                t=float(t), node=node, statistic="m",
                delta=float(m1[node, k] - m0[node, k]),
                se=float(math.hypot(m0_se[node, k], m1_se[node, k])),
            ))
            rows.append(ResidualRow(
                t=float(t), node=node, statistic="K",
                delta=float(K1[node, k, k] - K0[node, k, k]),
                se=float(math.hypot(K0_se[node, k, k], K1_se[node, k, k])),
            ))
    worst = max((row.z for row in rows), default=0.0)
    logger.info(f"Fixed-point residual: max |delta| / se = {worst:.3g} over {len(rows)} probes")
    return rows
