"""
Experiment drivers for the finite-size behaviour of the network.

Convergence of the empirical statistics to the mean-field fixed point,
vanishing pair correlations (propagation of chaos), the exact Gaussian and
Girsanov identities, and the Lipschitz regularity of the statistics. Every
driver returns a :class:`SweepReport` whose rows go straight to CSV.
"""

import itertools
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import kendalltau

from neurofield.services.errors import NumericalFailure
from neurofield.services.gaussian import (
    CovMatrix,
    check_ktilde_identity,
    cholesky_sample,
    gaussian_moment_zscore,
    lambda_weight,
    probe_indices,
    tilted_covariance_matrix,
)
from neurofield.services.measure import DistanceMethod, field_stats, regularity_profile, wasserstein2
from neurofield.services.meanfield import MeanFieldSolution
from neurofield.services.model import ModelParams
from neurofield.services.network import (
    build_initial,
    girsanov_average_check,
    network_run,
    sample_positions,
    simulate_uncoupled,
)
from neurofield.services.paths import Ensemble, TimeGrid
from neurofield.services.streams import Mapper, SeedLike, as_seed_tree, serial_map

logger = logging.getLogger(__name__)

AGGREGATE = -1

IDENTITY_TOLERANCES = {
    "ktilde": {(1.0, 1.0): 0.02, (4.0, 2.0): 0.05},
    "moment_z": 5.0,
    "girsanov": 0.05,
    "lambda_normalization": 1e-12,
    "bound_ratio": 1.0,
}

GIRSANOV_REFERENCE = {
    "coupling.mean.J0": 0.0,
    "coupling.std.sigma0": 0.5,
    "dynamics.horizon_T": 0.5,
}


@dataclass
class SweepRow:
    N: int
    replicate: int
    statistic: str
    value: float
    se: float = math.nan
    tolerance: Optional[float] = None
    passed: Optional[bool] = None


@dataclass
class SweepReport:
    """Rows of one experiment plus the provenance needed to rerun it."""
    kind: str
    rows: List[SweepRow]
    config_hash: str = ""
    seeds: Dict[str, int] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        columns = ["N", "replicate", "statistic", "value", "se", "tolerance", "passed"]
        return pd.DataFrame([asdict(row) for row in self.rows], columns=columns)

    def select(self, statistic: str, aggregate: bool = False) -> List[SweepRow]:
        return [
            row for row in self.rows
            if row.statistic == statistic and (row.replicate == AGGREGATE) == aggregate
        ]

    @property
    def all_passed(self) -> bool:
        return all(row.passed is not False for row in self.rows)


@dataclass
class TrendResult:
    """One-sided rank test of a statistic decreasing in N."""
    statistic: str
    N_values: List[int]
    medians: List[float]
    tau: float
    p_value: float
    decreasing: bool


def _check_sizes(N_list: Sequence[int]) -> None:
    if not N_list:
        raise ValueError("N_list cannot be empty")
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError("N_list must be strictly increasing")


def _probe_indices(grid: TimeGrid, probe_times: Optional[Sequence[float]]) -> np.ndarray:
    if probe_times is None:
        return np.array(probe_indices(grid.n_main + 1, 5)[1:], dtype=int)
    return np.array([grid.time_index(t) for t in probe_times], dtype=int)


def convergence_sweep(
    params: ModelParams,
    N_list: Sequence[int],
    replicates: int,
    meanfield: MeanFieldSolution,
    probe_times: Optional[Sequence[float]],
    probe_nodes: np.ndarray,
    seed: SeedLike,
    subsample: int = 256,
    mapper: Optional[Mapper] = None,
) -> SweepReport:
    """
    Distance between finite networks and the mean-field fixed point.

    Per (N, replicate) records ``stat_distance``, the max over probes of
    |m_N - m_Q| + |K_N - K_Q|, and ``w2``, the estimated Vaserstein distance
    between the network and the fixed-point ensemble.
    """
    if not meanfield.converged:
        raise ValueError("mean-field solution has not converged")
    _check_sizes(N_list)
    tree = as_seed_tree(seed)
    Q = meanfield.ensemble
    grid = Q.grid
    times = _probe_indices(grid, probe_times) * grid.dt
    m_Q, K_Q = field_stats(Q, params, probe_nodes, times).scaled()
    var_Q = np.diagonal(K_Q, axis1=1, axis2=2)
    K_tau = params.constants.K_tau

    def one(job) -> List[SweepRow]:
        N, rep = job
        node = tree.child("convergence", N, rep)
        try:
            network = network_run(params, N, grid, node)
            m, K = field_stats(network, params, probe_nodes, times).scaled()
            gap = np.abs(m - m_Q) + np.abs(np.diagonal(K, axis1=1, axis2=2) - var_Q)
            n = min(subsample, N, len(Q))
            w2 = wasserstein2(network, Q, K_tau, n, DistanceMethod.exact_assignment, node.child("compare")).value
            return [SweepRow(N, rep, "stat_distance", float(gap.max())), SweepRow(N, rep, "w2", w2)]
        except NumericalFailure as e:
            logger.warning(f"Convergence replicate N={N} rep={rep} failed: {e}")
            return [SweepRow(N, rep, "stat_distance", math.nan, passed=False),
                    SweepRow(N, rep, "w2", math.nan, passed=False)]

    jobs = [(N, rep) for N in N_list for rep in range(replicates)]
    rows = list(itertools.chain.from_iterable((mapper or serial_map)(one, jobs)))
    logger.info(f"Convergence sweep finished: {len(jobs)} networks")
    return SweepReport(kind="convergence", rows=rows, seeds={"master": tree.master})


def chaos_sweep(
    params: ModelParams,
    N_list: Sequence[int],
    replicates: int,
    pair_count: int,
    probe_times: Optional[Sequence[float]],
    seed: SeedLike,
    mapper: Optional[Mapper] = None,
) -> SweepReport:
    """
    Pair correlations of firing rates across independent network realizations.

    For each N, rho(N) is the mean over sampled pairs and probe times of
    |Corr(S(x^{k1}_t), S(x^{k2}_t))|, the correlation taken over replicates
    with every random source redrawn. Rows: per-replicate ``mean_rate`` and
    aggregate (replicate = -1) ``rho`` and ``rho_floor``, the expected
    |Corr| of independent samples.
    """
    _check_sizes(N_list)
    if N_list[0] < 2:
        raise ValueError("chaos sweep needs at least 2 neurons")
    if pair_count < 1:
        raise ValueError("pair_count must be >= 1")
    if replicates < 3:
        raise ValueError("chaos sweep needs at least 3 replicates")
    tree = as_seed_tree(seed)
    grid = TimeGrid.from_params(params)
    probes = grid.origin + _probe_indices(grid, probe_times)
    rows: List[SweepRow] = []

    for N in N_list:
        all_pairs = N * (N - 1) // 2
        count = pair_count
        if pair_count > all_pairs:
            logger.warning(f"pair_count {pair_count} exceeds {all_pairs} pairs for N={N}; capped")
            count = all_pairs
        rng = tree.generator("pairs", N)
        chosen = rng.choice(all_pairs, size=count, replace=False)
        first, second = np.triu_indices(N, k=1)
        pairs = np.stack([first[chosen], second[chosen]], axis=1)

        def one(rep: int, N=N) -> np.ndarray:
            network = network_run(params, N, grid, tree.child("chaos", N, rep))
            return params.S(network.paths[:, probes])

        rates = np.stack((mapper or serial_map)(one, list(range(replicates))))
        for rep in range(replicates):
            rows.append(SweepRow(N, rep, "mean_rate", float(rates[rep, :, -1].mean())))

        a = rates[:, pairs[:, 0], :]
        b = rates[:, pairs[:, 1], :]
        a = a - a.mean(axis=0)
        b = b - b.mean(axis=0)
        denom = np.sqrt((a * a).sum(axis=0) * (b * b).sum(axis=0))
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = np.abs((a * b).sum(axis=0) / denom)
        corr = corr[np.isfinite(corr)]
        rho = float(corr.mean()) if corr.size else math.nan
        se = float(corr.std(ddof=1) / math.sqrt(corr.size)) if corr.size > 1 else math.nan
        floor = math.sqrt(2.0 / (math.pi * (replicates - 1)))
        rows.append(SweepRow(N, AGGREGATE, "rho", rho, se))
        rows.append(SweepRow(N, AGGREGATE, "rho_floor", floor))
        logger.info(f"Chaos N={N}: rho={rho:.4f} (floor {floor:.4f}, {count} pairs)")
    return SweepReport(kind="chaos", rows=rows, seeds={"master": tree.master})


def regularity_sweep(
    params: ModelParams,
    ensemble: Ensemble,
    epsilons: Sequence[float],
    r_nodes: Optional[np.ndarray],
    probe_times: Optional[Sequence[float]],
    subsample: int,
    seed: SeedLike,
    mapper: Optional[Mapper] = None,
) -> SweepReport:
    """Statistic changes per perturbation size, as report rows."""
    tree = as_seed_tree(seed)
    points = regularity_profile(
        ensemble, params, epsilons, r_nodes, probe_times, subsample, tree.child("regularity"), mapper=mapper
    )
    N = len(ensemble)
    rows: List[SweepRow] = []
    for point in points:
        tag = f"@{point.epsilon:g}"
        rows.extend([
            SweepRow(N, 0, f"w2{tag}", point.w2),
            SweepRow(N, 0, f"d_mean{tag}", point.d_mean),
            SweepRow(N, 0, f"d_cov{tag}", point.d_cov),
            SweepRow(N, 0, f"d_tilted{tag}", point.d_tilted),
        ])
        for name, ratio in point.ratios.items():
            rows.append(SweepRow(N, 0, f"ratio_{name}{tag}", ratio))
    return SweepReport(kind="regularity", rows=rows, seeds={"master": tree.master})


@dataclass
class IdentitySizes:
    """Monte Carlo sizes used by the identity suite."""
    ktilde: int = 100_000
    moment: int = 1_000_000
    girsanov_J: int = 100_000
    girsanov_G: int = 100_000
    lambda_draws: int = 10_000
    lambda_particles: int = 512


def _row(statistic: str, value: float, tolerance: float) -> SweepRow:
    passed = bool(np.isfinite(value) and value <= tolerance)
    return SweepRow(0, 0, statistic, float(value), tolerance=tolerance, passed=passed)


def identity_suite(
    params: ModelParams,
    seed: SeedLike,
    sizes: Optional[IdentitySizes] = None,
    mapper: Optional[Mapper] = None,
) -> SweepReport:
    """
    Check the exact identities with their per-identity tolerances.

    Rows hold a relative error (tilted-variance identity, Girsanov averaging,
    Lambda normalization), a z-score (Gaussian quadratic moments) or a ratio
    to the theoretical bound (Lambda and tilted covariance bounds).
    """
    sizes = sizes or IdentitySizes()
    tree = as_seed_tree(seed)
    rows: List[SweepRow] = []

    for (v, T), tol in IDENTITY_TOLERANCES["ktilde"].items():
        error = check_ktilde_identity(v, T, sizes.ktilde, 100, tree.child("ktilde", int(v), int(T)))
        rows.append(_row(f"ktilde_v{v:g}_T{T:g}", error, tol))

    for i, (m, v) in enumerate(itertools.product((0.0, 0.5, 1.0), (0.0, 0.25, 0.5))):
        z = gaussian_moment_zscore(m, v, sizes.moment, tree.child("moment", i))
        rows.append(_row(f"exp_moment_m{m:g}_v{v:g}", z, IDENTITY_TOLERANCES["moment_z"]))

    reference = params.derive(GIRSANOV_REFERENCE)
    ref_grid = TimeGrid.from_params(reference)
    g_tree = tree.child("girsanov")
    positions = sample_positions(reference, 2, g_tree.child("positions"))
    histories = build_initial(reference.initial, positions, ref_grid, g_tree.child("initial"))
    frozen = simulate_uncoupled(reference, positions, histories, ref_grid, g_tree.child("network"))
    report = girsanov_average_check(
        reference, positions, frozen, sizes.girsanov_J, sizes.girsanov_G, g_tree.child("check"), mapper
    )
    rows.append(_row("girsanov_average", report.relative_error, IDENTITY_TOLERANCES["girsanov"]))

    rows.extend(_lambda_rows(params, sizes, tree.child("lambda"), mapper))
    failed = [row.statistic for row in rows if not row.passed]
    if failed:
        logger.warning(f"Identity suite: {len(failed)} failing row(s): {failed}")
    else:
        logger.info(f"Identity suite: all {len(rows)} rows pass")
    return SweepReport(kind="identities", rows=rows, seeds={"master": tree.master})


def _lambda_rows(params: ModelParams, sizes: IdentitySizes, tree, mapper) -> List[SweepRow]:
    """Normalization and bounds of Lambda_t and the tilted covariance under the model covariance."""
    grid = TimeGrid.from_params(params)
    positions = sample_positions(params, sizes.lambda_particles, tree.child("positions"))
    histories = build_initial(params.initial, positions, grid, tree.child("initial"), mapper=mapper)
    ensemble = simulate_uncoupled(params, positions, histories, grid, tree.child("network"), mapper)
    centre = 0.5 * (params.domain.lower + params.domain.upper)
    _, K = field_stats(ensemble, params, centre[None, :]).scaled()
    draws = cholesky_sample(CovMatrix(entries=K[0], mean=np.zeros(len(K[0]))), sizes.lambda_draws, tree.child("draws"))

    c = params.constants
    rate = c.sigma_sup**2 / params.lambda_star**2
    normalization = 0.0
    weight_ratio = 0.0
    tilted_ratio = 0.0
    for t in probe_indices(draws.n, 5):
        weights = lambda_weight(draws, t, grid.dt)
        normalization = max(normalization, abs(float(weights.mean()) - 1.0))
        growth = math.exp(rate * t * grid.dt / 2.0)
        weight_ratio = max(weight_ratio, float(weights.max()) / growth)
        tilted = np.max(np.abs(tilted_covariance_matrix(draws, t, grid.dt)))
        bound = rate * growth
        tilted_ratio = max(tilted_ratio, tilted / bound if bound > 0 else (0.0 if tilted == 0 else math.inf))

    return [
        _row("lambda_normalization", normalization, IDENTITY_TOLERANCES["lambda_normalization"]),
        _row("lambda_bound", weight_ratio, IDENTITY_TOLERANCES["bound_ratio"]),
        _row("ktilde_bound", tilted_ratio, IDENTITY_TOLERANCES["bound_ratio"]),
    ]


def trend_test(report: SweepReport, statistic: str, alpha: float = 0.05) -> TrendResult:
    """
    Test whether a statistic decreases in N.

    Uses per-replicate rows when present, otherwise the aggregate rows, and
    a one-sided Kendall tau test against "no decrease".
    """
    rows = [r for r in report.select(statistic) if np.isfinite(r.value)]
    if not rows:
        rows = [r for r in report.select(statistic, aggregate=True) if np.isfinite(r.value)]
    if not rows:
        raise ValueError(f"no finite rows for statistic '{statistic}'")
    N_values = sorted({r.N for r in rows})
    medians = [float(np.median([r.value for r in rows if r.N == N])) for N in N_values]
    result = kendalltau([r.N for r in rows], [r.value for r in rows], alternative="less")
    tau = float(result.statistic)
    p_value = float(result.pvalue)
    return TrendResult(
        statistic=statistic,
        N_values=N_values,
        medians=medians,
        tau=tau,
        p_value=p_value,
        decreasing=bool(p_value < alpha),
    )
