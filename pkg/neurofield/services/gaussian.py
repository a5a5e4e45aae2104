"""
Gaussian-process machinery on the time grid.

Covariance sampling with jittered Cholesky factors, the self-normalized
reweighting Lambda_t, the tilted covariance, and closed-form Gaussian moments
used as oracles. Time integrals are left-endpoint Riemann sums, matching the
Euler-Maruyama convention of the simulators.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from neurofield.services.errors import CholeskyFailure
from neurofield.services.streams import Mapper, SeedLike, as_seed_tree

logger = logging.getLogger(__name__)

SYMMETRY_RTOL = 1e-12
JITTER_LEVELS = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8)


@dataclass
class CovMatrix:
    """Mean and covariance of a process sampled on n grid times."""
    entries: np.ndarray
    mean: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        self.mean = np.asarray(self.mean, dtype=float)
        n = len(self.mean)
        if self.entries.shape != (n, n):
            raise ValueError(f"covariance shape {self.entries.shape} does not match mean length {n}")
        scale = max(1.0, float(np.max(np.abs(self.entries)))) if n else 1.0
        if n and np.max(np.abs(self.entries - self.entries.T)) > SYMMETRY_RTOL * scale:
            raise ValueError("covariance matrix is not symmetric")

    @property
    def n(self) -> int:
        return len(self.mean)


@dataclass
class GaussianDraws:
    """Realizations of a process on the grid, one row per sample."""
    paths: np.ndarray

    @property
    def m_samples(self) -> int:
        return self.paths.shape[0]

    @property
    def n(self) -> int:
        return self.paths.shape[1]


def jitter_cholesky(entries: np.ndarray) -> np.ndarray:
    """
    Lower Cholesky factor of a near-PSD matrix.

    Adds eps * max(diag) * I with eps stepping through ``JITTER_LEVELS``. The
    zero matrix factors to zeros.

    Raises:
        CholeskyFailure: If the largest jitter still fails
    """
    entries = np.asarray(entries, dtype=float)
    n = entries.shape[0]
    if n == 0 or not np.any(entries):
        return np.zeros_like(entries)
    scale = float(np.max(np.diag(entries)))
    if scale <= 0.0:
        raise CholeskyFailure(0.0, "non-positive diagonal")

    eye = np.eye(n)
    for eps in JITTER_LEVELS:
        try:
            factor = linalg.cholesky(entries + eps * scale * eye, lower=True, check_finite=True)
        except linalg.LinAlgError:
            continue
        if eps > 0.0:
            logger.warning(f"Cholesky needed jitter {eps:g} x max(diag) on a {n}x{n} covariance")
        return factor
    logger.error(f"Cholesky failed on a {n}x{n} covariance after jitter {JITTER_LEVELS[-1]:g}")
    raise CholeskyFailure(JITTER_LEVELS[-1])


def cholesky_sample(
    cov: CovMatrix, m_samples: int, seed: SeedLike, mapper: Optional[Mapper] = None
) -> GaussianDraws:
    """
    Draw independent realizations of N(mean, entries).

    Normals come from fixed-size blocks of the seed's ``"gaussian"`` stream,
    so the result is bit-reproducible for a given (seed, m_samples) whatever
    the worker count.
    """
    factor = jitter_cholesky(cov.entries)
    normals = as_seed_tree(seed).block_normals("gaussian", m_samples, cov.n, mapper)
    return GaussianDraws(paths=cov.mean + normals @ factor.T)


def _energy_table(paths: np.ndarray, dt: float) -> np.ndarray:
    """E[:, k] = 1/2 * sum_{l < k} G_l^2 dt, shape (m, n)."""
    sq = 0.5 * dt * paths**2
    table = np.zeros_like(sq)
    np.cumsum(sq[:, :-1], axis=1, out=table[:, 1:])
    return table


def normalized_weights(energy: np.ndarray) -> np.ndarray:
    """exp(-E) divided by its sample mean, computed in log space."""
    m = energy.shape[0]
    log_w = -energy - (logsumexp(-energy, axis=0) - math.log(m))
    return np.exp(log_w)


def lambda_weight(draws: GaussianDraws, t_index: int, dt: float) -> np.ndarray:
    """
    Self-normalized weights Lambda_t(G) for every draw.

    Raises:
        ValueError: If the draws are empty or t_index is off the grid
    """
    if draws.m_samples == 0:
        raise ValueError("empty draws")
    if not 0 <= t_index < draws.n:
        raise ValueError(f"t_index {t_index} outside [0, {draws.n})")
    energy = _energy_table(draws.paths[:, : t_index + 1], dt)[:, t_index]
    return normalized_weights(energy)


def tilted_covariance(draws: GaussianDraws, t_index: int, s_index: int, u_index: int, dt: float) -> float:
    """Sample mean of G_s G_u Lambda_t(G)."""
    if not (0 <= s_index <= t_index and 0 <= u_index <= t_index):
        raise ValueError(f"index out of order: need s={s_index}, u={u_index} <= t={t_index}")
    weights = lambda_weight(draws, t_index, dt)
    return float(np.mean(draws.paths[:, s_index] * draws.paths[:, u_index] * weights))


def tilted_covariance_matrix(draws: GaussianDraws, t_index: int, dt: float) -> np.ndarray:
    """Full K_tilde^t(s, u) for s, u <= t."""
    weights = lambda_weight(draws, t_index, dt)
    head = draws.paths[:, : t_index + 1]
    return (head * weights[:, None]).T @ head / draws.m_samples


def exp_quadratic_moment(m: float, v: float) -> float:
    """
    E exp(X^2 / 2) for X ~ N(m, v).

    Raises:
        ValueError: If v < 0 or v >= 1 (the moment diverges)
    """
    if v < 0:
        raise ValueError(f"variance must be >= 0, got {v}")
    if v >= 1:
        raise ValueError(f"moment diverges for v >= 1, got v={v}")
    return (1.0 - v) ** -0.5 * math.exp(m * m / (2.0 * (1.0 - v)))


def ktilde_identity_truth(v: float, T: float) -> float:
    return (1.0 + v * T) ** -0.5


def check_ktilde_identity(
    v: float, T: float, m_samples: int = 100_000, n_steps: int = 100, seed: SeedLike = 0
) -> float:
    """
    Relative gap between both sides of the tilted-variance identity.

    For the constant-in-time process G_t = Z, Z ~ N(0, v), compares the Monte
    Carlo mean of exp(-1/2 int_0^T G^2) with exp(-1/2 int_0^T K_tilde^t(t, t) dt),
    normalized by the closed form (1 + v T)^(-1/2).
    """
    if v < 0:
        raise ValueError(f"variance must be >= 0, got {v}")
    if T <= 0:
        raise ValueError(f"horizon must be > 0, got {T}")
    dt = T / n_steps
    z = math.sqrt(v) * as_seed_tree(seed).block_normals("ktilde", m_samples, 1)[:, 0]
    sq = z * z

    lhs = float(np.mean(np.exp(-0.5 * sq * T)))
    integral = 0.0
    for k in range(n_steps):
        weights = normalized_weights((0.5 * sq * k * dt)[:, None])[:, 0]
        integral += dt * float(np.mean(sq * weights))
    rhs = math.exp(-0.5 * integral)
    return abs(lhs - rhs) / ktilde_identity_truth(v, T)


def gaussian_moment_zscore(m: float, v: float, m_samples: int, seed: SeedLike) -> float:
    """
    |MC - closed form| / standard error for E exp(X^2/2), X ~ N(m, v).

    When v = 0 every draw equals the closed form up to rounding, so the
    relative gap is returned instead of a z-score.
    """
    truth = exp_quadratic_moment(m, v)
    x = m + math.sqrt(v) * as_seed_tree(seed).block_normals("moment", m_samples, 1)[:, 0]
    y = np.exp(0.5 * x * x)
    gap = abs(float(np.mean(y)) - truth)
    if v == 0.0:
        return gap / truth
    return gap / float(np.std(y, ddof=1) / math.sqrt(m_samples))


def probe_indices(n: int, count: int = 5) -> Sequence[int]:
    """Evenly spread grid indices in [0, n)."""
    return sorted(set(np.linspace(0, n - 1, count).round().astype(int).tolist()))
