"""
Finite-N network simulator.

Samples locations and the random coupling matrix, builds spatially regular
initial histories, and integrates the delayed network SDE

    x_{k+1} = x_k + dt [f(r_i, t_k, x_k) + sum_j J_ij S(x^j_{t_k - tau_ij})]
              + lambda(r_i) sqrt(dt) Z_k

by Euler-Maruyama. Every neuron owns its noise and history streams, so runs
are reproducible bit for bit whatever the worker count.
"""

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy import sparse

from neurofield.models.schemas import DelayMode
from neurofield.services.errors import BlowUpError, ConfigurationError, NumericalFailure
from neurofield.services.gaussian import CovMatrix, cholesky_sample
from neurofield.services.measure import field_stats
from neurofield.services.model import InitialLaw, ModelParams
from neurofield.services.paths import CouplingMatrix, Ensemble, TimeGrid, delay_indices, delayed_columns
from neurofield.services.streams import Mapper, SeedLike, as_seed_tree, serial_map

logger = logging.getLogger(__name__)

BLOWUP_LIMIT = 1e8
GIRSANOV_MAX_N = 4
GIRSANOV_CHUNK = 4096

Interaction = Callable[[np.ndarray, int, int], np.ndarray]


def sample_positions(params: ModelParams, N: int, seed: SeedLike) -> np.ndarray:
    """
    Draw N i.i.d. locations from the domain density.

    Raises:
        ValueError: If N < 1
    """
    if N < 1:
        raise ValueError(f"empty network: N must be >= 1, got {N}")
    rng = as_seed_tree(seed).generator("positions")
    return params.domain.density.sample(rng, N)


def sample_couplings(params: ModelParams, positions: np.ndarray, seed: SeedLike) -> CouplingMatrix:
    """Draw J_ij ~ N(J(r_i, r_j)/N, sigma(r_i, r_j)^2/N), diagonal included."""
    positions = np.atleast_2d(positions)
    N = len(positions)
    if N == 0:
        raise ValueError("positions must be non-empty")
    mean = params.J_kernel(positions, positions) / N
    std = params.sigma_kernel(positions, positions) / math.sqrt(N)
    if not np.any(std):
        return CouplingMatrix(entries=mean)
    xi = as_seed_tree(seed).generator("couplings").standard_normal((N, N))
    return CouplingMatrix(entries=mean + std * xi)


def build_initial(
    initial: InitialLaw,
    positions: np.ndarray,
    grid: TimeGrid,
    seed: SeedLike,
    stream_ids: Optional[Sequence[int]] = None,
    mapper: Optional[Mapper] = None,
) -> np.ndarray:
    """
    Initial histories x0_s(r_i) = psi(r_i) + s0 eta^i_s on [-tau_bar, 0].

    Each eta^i is an independent Brownian path with eta^i_{-tau_bar} = 0.

    Returns:
        Array of shape (N, n_hist + 1)
    """
    positions = np.atleast_2d(positions)
    ids = range(len(positions)) if stream_ids is None else stream_ids
    increments = as_seed_tree(seed).indexed_normals("initial", ids, grid.n_hist, mapper)
    eta = np.zeros((len(positions), grid.n_hist + 1))
    np.cumsum(increments * math.sqrt(grid.dt), axis=1, out=eta[:, 1:])
    return shared_history(initial, positions, eta)


def shared_history(initial: InitialLaw, points: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """
    Evaluate the initial construction at several locations.

    ``eta`` is either one path (shared by all points) or one path per point.
    """
    eta = np.atleast_2d(eta)
    return initial.profile(np.atleast_2d(points))[:, None] + initial.noise_scale * eta


class DelayedInteraction:
    """
    Network interaction sum_j J_ij S(x^j at t - tau_ij).

    With nearest-index delays, couplings are grouped by delay and each group
    is one (sparse) matrix-vector product per step; a single delay uses a
    dense product. Linear mode interpolates every delayed state.
    """

    def __init__(self, params: ModelParams, couplings: np.ndarray, positions: np.ndarray, grid: TimeGrid):
        self.S = params.S
        self.mode = params.delay_mode
        steps = params.tau(positions, positions) / grid.dt
        nearest = np.rint(steps).astype(int)
        if nearest.size and (nearest.max() > grid.n_hist or np.floor(steps).max() > grid.n_hist):
            raise ConfigurationError(
                f"delay of {steps.max():.3f} steps exceeds the history buffer of {grid.n_hist} steps"
            )
        self.row_bound = np.abs(couplings).sum(axis=1)

        if self.mode == DelayMode.linear.value:
            self.couplings = couplings
            self.lo = np.floor(steps).astype(int)
            self.frac = steps - self.lo
            self.cols = np.broadcast_to(np.arange(len(positions))[None, :], couplings.shape)
            return

        delays = np.unique(nearest)
        self.groups: List = []
        if len(delays) == 1:
            self.groups.append((int(delays[0]), couplings))
        else:
            for d in delays:
                self.groups.append((int(d), sparse.csr_matrix(np.where(nearest == d, couplings, 0.0))))

    def __call__(self, X: np.ndarray, column: int, step: int) -> np.ndarray:
        if self.mode == DelayMode.linear.value:
            a = X[self.cols, column - self.lo]
            b = X[self.cols, np.maximum(column - self.lo - 1, 0)]
            rates = self.S((1.0 - self.frac) * a + self.frac * b)
            return np.sum(self.couplings * rates, axis=1)

        total = np.zeros(X.shape[0])
        for d, matrix in self.groups:
            total = total + matrix @ self.S(X[:, column - d])
        return total


def integrate(
    params: ModelParams,
    positions: np.ndarray,
    histories: np.ndarray,
    grid: TimeGrid,
    noise: np.ndarray,
    interaction: Optional[Interaction] = None,
    check_bounds: bool = False,
) -> Ensemble:
    """
    Euler-Maruyama core with explicit standard-normal increments.

    Args:
        params: Model
        positions: Locations, shape (N, d)
        histories: Initial segments, shape (N, n_hist + 1)
        grid: Time grid (its dt is used, not the configured one)
        noise: Standard normals, shape (N, n_main)
        interaction: Callable (state buffer, current column, step) -> (N,) drift term
        check_bounds: Assert |interaction_i| <= sum_j |J_ij| at every step

    Raises:
        BlowUpError: If a state becomes non-finite or exceeds 1e8 in magnitude
    """
    positions = np.atleast_2d(positions)
    N = len(positions)
    if histories.shape != (N, grid.n_hist + 1):
        raise ValueError(f"histories shape {histories.shape} != {(N, grid.n_hist + 1)}")
    if noise.shape != (N, grid.n_main):
        raise ValueError(f"noise shape {noise.shape} != {(N, grid.n_main)}")

    X = np.empty((N, grid.n_total))
    X[:, : grid.n_hist + 1] = histories
    diffusion = params.diffusion(positions) * math.sqrt(grid.dt)
    bound = getattr(interaction, "row_bound", None) if check_bounds else None

    for k in range(grid.n_main):
        column = grid.origin + k
        x = X[:, column]
        drift = params.f(positions, k * grid.dt, x)
        if interaction is not None:
            coupling = interaction(X, column, k)
            if bound is not None and np.any(np.abs(coupling) > bound * (1.0 + 1e-12) + 1e-300):
                raise NumericalFailure(f"interaction exceeds sum_j |J_ij| at step {k}")
            drift = drift + coupling
        nxt = x + grid.dt * drift + diffusion * noise[:, k]
        bad = ~np.isfinite(nxt) | (np.abs(nxt) > BLOWUP_LIMIT)
        if bad.any():
            i = int(np.argmax(bad))
            raise BlowUpError(step=k + 1, neuron=i, value=float(nxt[i]))
        X[:, column + 1] = nxt
    return Ensemble(positions=positions.copy(), paths=X, grid=grid)


def simulate_network(
    params: ModelParams,
    positions: np.ndarray,
    couplings,
    initial_histories: np.ndarray,
    grid: TimeGrid,
    seed: SeedLike,
    stream_ids: Optional[Sequence[int]] = None,
    mapper: Optional[Mapper] = None,
    check_bounds: bool = False,
) -> Ensemble:
    """
    Simulate the finite network.

    Neuron ``i`` draws its Brownian increments from stream ``stream_ids[i]``
    (default ``i``), so relabelling neurons together with their streams
    relabels the output paths.
    """
    positions = np.atleast_2d(positions)
    entries = np.asarray(getattr(couplings, "entries", couplings), dtype=float)
    N = len(positions)
    if entries.shape != (N, N) or len(initial_histories) != N:
        raise ValueError(f"inconsistent network size: {N} positions, couplings {entries.shape}")

    started = time.perf_counter()
    ids = range(N) if stream_ids is None else stream_ids
    noise = as_seed_tree(seed).indexed_normals("noise", ids, grid.n_main, mapper)
    interaction = DelayedInteraction(params, entries, positions, grid) if np.any(entries) else None
    ensemble = integrate(params, positions, initial_histories, grid, noise, interaction, check_bounds)
    logger.info(f"Simulated N={N} over {grid.n_main} steps in {time.perf_counter() - started:.2f}s")
    return ensemble


def simulate_uncoupled(
    params: ModelParams,
    positions: np.ndarray,
    histories: np.ndarray,
    grid: TimeGrid,
    seed: SeedLike,
    mapper: Optional[Mapper] = None,
) -> Ensemble:
    """Sample the uncoupled law: the network dynamics with interactions removed."""
    positions = np.atleast_2d(positions)
    noise = as_seed_tree(seed).indexed_normals("noise", range(len(positions)), grid.n_main, mapper)
    return integrate(params, positions, histories, grid, noise)


def location_coupling(
    params: ModelParams,
    r: Sequence[float],
    others: np.ndarray,
    grid: TimeGrid,
    n_paths: int,
    seed: SeedLike,
) -> np.ndarray:
    """
    E sup_t |X^r_t - X^{r'}_t| for uncoupled neurons at r and at each r'.

    All locations share the Brownian motion and the history path, so the gap
    comes from the location dependence alone.

    Returns:
        Array with one expected sup-distance per row of ``others``
    """
    points = np.vstack([np.atleast_2d(np.asarray(r, dtype=float)), np.atleast_2d(others)])
    L = len(points)
    tree = as_seed_tree(seed)
    increments = tree.row_normals("eta", n_paths, grid.n_hist)
    eta = np.zeros((n_paths, grid.n_hist + 1))
    np.cumsum(increments * math.sqrt(grid.dt), axis=1, out=eta[:, 1:])
    noise = tree.row_normals("noise", n_paths, grid.n_main)

    positions = np.tile(points, (n_paths, 1))
    histories = shared_history(params.initial, positions, np.repeat(eta, L, axis=0))
    ensemble = integrate(params, positions, histories, grid, np.repeat(noise, L, axis=0))
    X = ensemble.paths.reshape(n_paths, L, grid.n_total)
    gaps = np.max(np.abs(X[:, 1:, :] - X[:, :1, :]), axis=2)
    return gaps.mean(axis=0)


@dataclass
class GirsanovReport:
    """Both sides of the coupling-averaged Girsanov identity."""
    lhs: float
    rhs: float
    lhs_factorized: float
    relative_error: float
    n_J: int
    n_G: int


def _brownian_increments(params: ModelParams, ensemble: Ensemble) -> np.ndarray:
    """Reconstruct dW_k = (x_{k+1} - x_k - dt f(r, t_k, x_k)) / lambda from uncoupled paths."""
    grid = ensemble.grid
    X = ensemble.paths
    lam = params.diffusion(ensemble.positions)
    dW = np.empty((len(ensemble), grid.n_main))
    for k in range(grid.n_main):
        c = grid.origin + k
        drift = params.f(ensemble.positions, k * grid.dt, X[:, c])
        dW[:, k] = (X[:, c + 1] - X[:, c] - grid.dt * drift) / lam
    return dW


def girsanov_average_check(
    params: ModelParams,
    positions: np.ndarray,
    frozen_paths: Ensemble,
    n_J: int,
    n_G: int,
    seed: SeedLike,
    mapper: Optional[Mapper] = None,
) -> GirsanovReport:
    """
    Compare the coupling-averaged Girsanov density with its Gaussian product form.

    The left side averages exp(sum_i int G^i dW_i - 1/2 int (G^i)^2 dt) over
    n_J coupling draws, with G^i_t = (1/lambda) sum_j J_ij S(x^j_{t - tau_ij}).
    The right side is the product over neurons of the average of the same
    functional over n_G Gaussian paths with the scaled mean and covariance of
    the empirical measure of ``frozen_paths``.

    Raises:
        ValueError: If N exceeds 4 (the estimator variance explodes)
    """
    positions = np.atleast_2d(positions)
    N = len(positions)
    if N > GIRSANOV_MAX_N:
        raise ValueError(f"N={N} too large for the averaging check (max {GIRSANOV_MAX_N}); variance explodes")
    grid = frozen_paths.grid
    tree = as_seed_tree(seed)
    dt = grid.dt
    steps = np.arange(grid.n_main)

    dW = _brownian_increments(params, frozen_paths)
    lam = params.diffusion(positions)

    # rates[i, j, k] = S(x^j at t_k - tau(r_i, r_j))
    delays = delay_indices(params, positions, positions, dt)
    cols = grid.origin + steps[None, None, :] - delays[:, :, None]
    rows = np.arange(N)[None, :, None]
    rates = params.S(frozen_paths.paths[rows, delayed_columns(grid, cols)])

    mean = params.J_kernel(positions, positions) / N
    std = params.sigma_kernel(positions, positions) / math.sqrt(N)

    def exponent_chunk(start: int) -> np.ndarray:
        size = min(GIRSANOV_CHUNK, n_J - start)
        xi = tree.generator("couplings", start // GIRSANOV_CHUNK).standard_normal((size, N, N))
        J = mean[None] + std[None] * xi
        G = np.einsum("cij,ijk->cik", J, rates) / lam[None, :, None]
        return np.sum(G * dW[None], axis=2) - 0.5 * dt * np.sum(G * G, axis=2)

    exponents = np.vstack((mapper or serial_map)(exponent_chunk, list(range(0, n_J, GIRSANOV_CHUNK))))
    lhs = float(np.mean(np.exp(exponents.sum(axis=1))))
    lhs_factorized = float(np.prod(np.mean(np.exp(exponents), axis=0)))

    stats = field_stats(frozen_paths, params, positions, grid.main_times[: grid.n_main])
    m, K = stats.scaled()
    rhs = 1.0
    for i in range(N):
        draws = cholesky_sample(CovMatrix(entries=K[i], mean=m[i]), n_G, tree.child("gaussian-paths", i), mapper)
        G = draws.paths
        x_mu = G @ dW[i] - 0.5 * dt * np.sum(G * G, axis=1)
        rhs *= float(np.mean(np.exp(x_mu)))

    error = abs(lhs - rhs) / rhs
    logger.info(f"Girsanov averaging: lhs={lhs:.6g} rhs={rhs:.6g} relative error={error:.3g}")
    return GirsanovReport(lhs=lhs, rhs=rhs, lhs_factorized=lhs_factorized, relative_error=error, n_J=n_J, n_G=n_G)


def network_run(
    params: ModelParams,
    N: int,
    grid: TimeGrid,
    seed: SeedLike,
    mapper: Optional[Mapper] = None,
) -> Ensemble:
    """Sample a full network realization (locations, couplings, histories, noise) from one seed node."""
    tree = as_seed_tree(seed)
    positions = sample_positions(params, N, tree.child("positions"))
    couplings = sample_couplings(params, positions, tree.child("couplings"))
    histories = build_initial(params.initial, positions, grid, tree.child("initial"), mapper=mapper)
    return simulate_network(params, positions, couplings, histories, grid, tree.child("network"), mapper=mapper)
