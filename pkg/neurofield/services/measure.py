"""
Statistics of measures on path space.

Mean and covariance functionals of an ensemble at location nodes, the
delay-aware path metric d_T, and an assignment-based estimator of the induced
quadratic Vaserstein distance.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from neurofield.services.gaussian import CovMatrix, cholesky_sample, tilted_covariance_matrix
from neurofield.services.model import ModelParams
from neurofield.services.paths import Ensemble, PathSample, TimeGrid, delayed_columns, delayed_sigmoid
from neurofield.services.streams import Mapper, SeedLike, as_seed_tree, serial_map

logger = logging.getLogger(__name__)

WINDOW_EPS = 1e-9
COST_ROW_BLOCK = 32
MEAN_POINT_BLOCK = 512


class DistanceMethod(str, Enum):
    """Couplings used by the Vaserstein estimator"""
    exact_assignment = "exact_assignment"
    index_coupling = "index_coupling"


@dataclass
class FieldStats:
    """
    Unscaled mean M(t, r) and covariance Sigma(s, t, r) at location nodes.

    Arrays are indexed (node, time) and (node, time, time). ``M_se`` and
    ``Sigma_se`` are Monte Carlo standard errors of the ensemble averages.
    """

    r_nodes: np.ndarray
    time_indices: np.ndarray
    times: np.ndarray
    M: np.ndarray
    Sigma: np.ndarray
    M_se: np.ndarray
    Sigma_se: np.ndarray
    lam: np.ndarray

    def scaled(self) -> Tuple[np.ndarray, np.ndarray]:
        """(m, K) = (M / lambda, Sigma / lambda^2) at every node."""
        m = self.M / self.lam[:, None]
        K = self.Sigma / (self.lam**2)[:, None, None]
        return m, K

    def scaled_se(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.M_se / self.lam[:, None], self.Sigma_se / (self.lam**2)[:, None, None]

    @property
    def variance(self) -> np.ndarray:
        """Sigma(t, t, r), shape (node, time)."""
        return np.diagonal(self.Sigma, axis1=1, axis2=2)

    def within_bounds(self, params: ModelParams, rtol: float = 1e-12) -> bool:
        """|M| <= |J|_inf and 0 <= Sigma(t, t) <= |sigma|_inf^2."""
        c = params.constants
        var = self.variance
        return bool(
            np.max(np.abs(self.M), initial=0.0) <= c.J_sup * (1 + rtol) + 1e-15
            and np.min(var, initial=0.0) >= -1e-15
            and np.max(var, initial=0.0) <= c.sigma_sup**2 * (1 + rtol) + 1e-15
        )


@dataclass
class DistanceReport:
    """Estimated Vaserstein distance with its provenance."""
    value: float
    method: DistanceMethod
    sample_sizes: Tuple[int, int]


def _node_stats(
    params: ModelParams, ensemble: Ensemble, node: np.ndarray, time_indices: np.ndarray
) -> Tuple[np.ndarray, ...]:
    n = len(ensemble)
    rates = delayed_sigmoid(params, ensemble, node, time_indices)
    J = params.J_kernel(np.atleast_2d(node), ensemble.positions)[0]
    sigma2 = params.sigma_kernel(np.atleast_2d(node), ensemble.positions)[0] ** 2

    weighted = J[:, None] * rates
    M = weighted.mean(axis=0)
    Sigma = (rates * sigma2[:, None]).T @ rates / n
    Sigma = 0.5 * (Sigma + Sigma.T)

    if n > 1:
        M_se = weighted.std(axis=0, ddof=1) / math.sqrt(n)
        sq = rates**2
        second = (sq * (sigma2**2)[:, None]).T @ sq / n
        var = np.maximum(second - Sigma**2, 0.0) * n / (n - 1)
        Sigma_se = np.sqrt(var / n)
    else:
        M_se = np.zeros_like(M)
        Sigma_se = np.zeros_like(Sigma)
    return M, Sigma, M_se, Sigma_se


def field_stats(
    ensemble: Ensemble,
    params: ModelParams,
    r_nodes: np.ndarray,
    times: Optional[Sequence[float]] = None,
    mapper: Optional[Mapper] = None,
) -> FieldStats:
    """
    Empirical mean and covariance of the interaction at location nodes.

    M(t, r) = mean_j J(r, r_j) S(x^j at t - tau(r, r_j)) and
    Sigma(s, t, r) = mean_j sigma(r, r_j)^2 S(x^j at s - tau) S(x^j at t - tau),
    delays rounded to the grid.

    Args:
        ensemble: Non-empty ensemble
        params: Model
        r_nodes: Query locations, shape (n_nodes, d)
        times: Grid times in [0, T]; defaults to every main-grid time

    Raises:
        ValueError: If the ensemble is empty or a time is off the grid
    """
    if len(ensemble) == 0:
        raise ValueError("empty ensemble")
    grid = ensemble.grid
    if times is None:
        time_indices = np.arange(grid.n_main + 1)
    else:
        time_indices = np.array([grid.time_index(t) for t in times], dtype=int)
    r_nodes = np.atleast_2d(np.asarray(r_nodes, dtype=float))

    results = (mapper or serial_map)(lambda node: _node_stats(params, ensemble, node, time_indices), list(r_nodes))
    M, Sigma, M_se, Sigma_se = (np.stack(part) for part in zip(*results))
    return FieldStats(
        r_nodes=r_nodes,
        time_indices=time_indices,
        times=time_indices * grid.dt,
        M=M,
        Sigma=Sigma,
        M_se=M_se,
        Sigma_se=Sigma_se,
        lam=params.diffusion(r_nodes),
    )


def interaction_means(
    params: ModelParams, ensemble: Ensemble, points: np.ndarray, time_indices: np.ndarray
) -> np.ndarray:
    """
    M(t, r_p) for many points at once, one matrix product per delay value.

    Returns:
        Array of shape (len(points), len(time_indices))
    """
    grid = ensemble.grid
    points = np.atleast_2d(points)
    time_indices = np.asarray(time_indices)
    out = np.zeros((len(points), len(time_indices)))
    for start in range(0, len(points), MEAN_POINT_BLOCK):
        block = points[start : start + MEAN_POINT_BLOCK]
        delays = np.rint(params.tau(block, ensemble.positions) / grid.dt).astype(int)
        J = params.J_kernel(block, ensemble.positions)
        for d in np.unique(delays):
            cols = delayed_columns(grid, grid.origin + time_indices - d)
            rates = params.S(ensemble.paths[:, cols])
            out[start : start + MEAN_POINT_BLOCK] += np.where(delays == d, J, 0.0) @ rates
    return out / len(ensemble)


def shift_window(K_tau: float, separation: float, grid: TimeGrid) -> int:
    """Admissible index shift for two locations, rounded outward and capped at n_hist."""
    w = math.ceil(K_tau * separation / grid.dt - WINDOW_EPS) if separation > 0 else 0
    return min(max(w, 0), grid.n_hist)


def _shift_ranges(s: int, grid: TimeGrid, end: int) -> Tuple[int, int]:
    """Index range of p (first path) for shift s, with q = p + s, both in [0, end]."""
    lo_a = max(-grid.n_hist, -grid.n_hist - s)
    hi_a = min(0, -s)
    return grid.origin + lo_a, end + hi_a


def path_distance(
    a: PathSample, b: PathSample, K_tau: float, grid: TimeGrid, horizon_index: Optional[int] = None
) -> float:
    """
    Delay-aware distance between two located paths.

    d = sqrt(|r - r'|^2 + sup |x_{t+u} - y_{t+v}|^2) over grid times t in [0, T]
    and u, v in [-tau_bar, 0] with |u - v| <= K_tau |r - r'|. With
    ``horizon_index`` the sup is restricted to t <= horizon_index * dt.

    Raises:
        ValueError: If either path does not match the grid
    """
    x = np.asarray(a.values, dtype=float)
    y = np.asarray(b.values, dtype=float)
    if len(x) != grid.n_total or len(y) != grid.n_total:
        raise ValueError(f"path length does not match the grid ({grid.n_total} points)")
    last = grid.n_main if horizon_index is None else horizon_index
    if not 0 <= last <= grid.n_main:
        raise ValueError(f"horizon_index {horizon_index} outside [0, {grid.n_main}]")
    end = grid.origin + last

    return math.sqrt(_squared_distance(x, y, a.r, b.r, K_tau, grid, end))


def _squared_distance(x, y, ra, rb, K_tau: float, grid: TimeGrid, end: int) -> float:
    separation = float(cdist(np.atleast_2d(ra), np.atleast_2d(rb))[0, 0])
    window = shift_window(K_tau, separation, grid)
    sup = 0.0
    for s in range(-window, window + 1):
        p0, p1 = _shift_ranges(s, grid, end)
        if p1 < p0:
            continue
        sup = max(sup, float(np.max(np.abs(x[p0 : p1 + 1] - y[p0 + s : p1 + s + 1]))))
    return separation**2 + sup**2


def cost_matrix(
    A: Ensemble, B: Ensemble, K_tau: float, mapper: Optional[Mapper] = None
) -> np.ndarray:
    """Squared distances d_T(a_i, b_j)^2 for all pairs."""
    grid = A.grid
    end = grid.origin + grid.n_main
    separation = cdist(A.positions, B.positions)
    windows = np.vectorize(lambda d: shift_window(K_tau, d, grid), otypes=[int])(separation)
    max_window = int(windows.max(initial=0))

    def rows_block(start: int) -> np.ndarray:
        X = A.paths[start : start + COST_ROW_BLOCK]
        W = windows[start : start + COST_ROW_BLOCK]
        sup = np.zeros((len(X), len(B)))
        for w in range(max_window + 1):
            for s in ((w, -w) if w else (0,)):
                p0, p1 = _shift_ranges(s, grid, end)
                if p1 < p0:
                    continue
                gap = np.abs(X[:, None, p0 : p1 + 1] - B.paths[None, :, p0 + s : p1 + s + 1]).max(axis=2)
                sup = np.where(W >= w, np.maximum(sup, gap), sup)
        return sup

    starts = list(range(0, len(A), COST_ROW_BLOCK))
    sup = np.vstack((mapper or serial_map)(rows_block, starts))
    return separation**2 + sup**2


def wasserstein2(
    A: Ensemble,
    B: Ensemble,
    K_tau: float,
    subsample: int,
    method: DistanceMethod = DistanceMethod.exact_assignment,
    seed: SeedLike = 0,
    mapper: Optional[Mapper] = None,
) -> DistanceReport:
    """
    Empirical quadratic Vaserstein distance between two ensembles.

    Draws ``subsample`` atoms without replacement from each side (the same
    index set when the sizes agree), then either solves the assignment
    problem on the squared-distance costs or pairs atoms by index.

    Raises:
        ValueError: If subsample is 0 or exceeds an ensemble size, or grids differ
    """
    method = DistanceMethod(method)
    if subsample < 1:
        raise ValueError("subsample must be >= 1")
    if subsample > min(len(A), len(B)):
        raise ValueError(f"subsample {subsample} exceeds ensemble sizes ({len(A)}, {len(B)})")
    if A.grid != B.grid:
        raise ValueError("ensembles live on different grids")

    rng = as_seed_tree(seed).generator("w2-subsample")
    idx_a = rng.permutation(len(A))[:subsample]
    idx_b = idx_a if len(B) == len(A) else rng.permutation(len(B))[:subsample]
    a, b = A.subset(idx_a), B.subset(idx_b)

    if method is DistanceMethod.index_coupling:
        end = A.grid.origin + A.grid.n_main
        costs = np.array(
            [_squared_distance(x, y, ra, rb, K_tau, A.grid, end)
             for ra, x, rb, y in zip(a.positions, a.paths, b.positions, b.paths)]
        )
        value = math.sqrt(float(np.mean(costs)))
    else:
        cost = cost_matrix(a, b, K_tau, mapper)
        rows, cols = linear_sum_assignment(cost)
        value = math.sqrt(float(np.mean(cost[rows, cols])))
    return DistanceReport(value=value, method=method, sample_sizes=(subsample, subsample))


@dataclass
class RegularityPoint:
    """Statistic changes under one sup-norm perturbation of size epsilon."""
    epsilon: float
    w2: float
    d_mean: float
    d_cov: float
    d_tilted: float
    ratios: dict = field(default_factory=dict)


def regularity_profile(
    ensemble: Ensemble,
    params: ModelParams,
    epsilons: Sequence[float] = (0.4, 0.2, 0.1, 0.05),
    r_nodes: Optional[np.ndarray] = None,
    times: Optional[Sequence[float]] = None,
    subsample: int = 256,
    seed: SeedLike = 0,
    tilted_samples: int = 4000,
    mapper: Optional[Mapper] = None,
) -> List[RegularityPoint]:
    """
    Lipschitz behaviour of m, K and the tilted covariance in the Vaserstein distance.

    For each epsilon every path is shifted by epsilon; the changes in the
    scaled statistics at the probe times are compared to the estimated
    distance. Tilted variances at the horizon come from centered Gaussian
    draws on the full grid, using the same normals for both ensembles so only
    the covariance change shows.
    """
    tree = as_seed_tree(seed)
    grid = ensemble.grid
    if r_nodes is None:
        r_nodes = params.domain.lattice(3)
    if times is None:
        probe = np.arange(grid.n_main + 1)
    else:
        probe = np.array([grid.time_index(t) for t in times], dtype=int)
    subsample = min(subsample, len(ensemble))

    def scaled_stats(target: Ensemble) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        m, K = field_stats(target, params, r_nodes, None, mapper).scaled()
        tilted = _tilted_at_horizon(K, grid.dt, tilted_samples, tree.child("tilted"))
        return m[:, probe], K[:, probe][:, :, probe], tilted

    m0, K0, tilt0 = scaled_stats(ensemble)
    points = []
    for eps in epsilons:
        shifted = ensemble.shifted(eps)
        m, K, tilt = scaled_stats(shifted)
        w2 = wasserstein2(
            ensemble, shifted, params.constants.K_tau, subsample,
            DistanceMethod.exact_assignment, tree.child("compare"), mapper,
        ).value
        point = RegularityPoint(
            epsilon=float(eps),
            w2=w2,
            d_mean=float(np.max(np.abs(m - m0))),
            d_cov=float(np.max(np.abs(K - K0))),
            d_tilted=float(np.max(np.abs(tilt - tilt0))),
        )
        if w2 > 0:
            point.ratios = {
                "mean": point.d_mean / w2,
                "cov": point.d_cov / w2,
                "tilted": point.d_tilted / w2,
            }
        logger.info(f"Regularity eps={eps:g}: w2={w2:.4g} dm={point.d_mean:.3g} dK={point.d_cov:.3g}")
        points.append(point)
    return points


def _tilted_at_horizon(K: np.ndarray, dt: float, samples: int, seed: SeedLike) -> np.ndarray:
    """K_tilde^T(T, T) per node from centered draws with covariance K."""
    tree = as_seed_tree(seed)
    out = np.empty(len(K))
    for i, cov in enumerate(K):
        draws = cholesky_sample(CovMatrix(entries=cov, mean=np.zeros(len(cov))), samples, tree.child(i))
        t = draws.n - 1
        out[i] = tilted_covariance_matrix(draws, t, dt)[t, t]
    return out
