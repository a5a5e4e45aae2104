"""
Subcommand pipelines.

Each command receives the parsed arguments and a prepared :class:`Context`
(validated configuration, model, grid, worker pool) and writes its outputs
through a :class:`RunRecorder`. Nothing is written before the configuration
and every input file has been validated.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from neurofield.models.schemas import NeurofieldConfig
from neurofield.services.diagnostics import (
    chaos_sweep,
    convergence_sweep,
    identity_suite,
    regularity_sweep,
    trend_test,
)
from neurofield.services.errors import ConfigurationError, NumericalFailure
from neurofield.services.gaussian import probe_indices
from neurofield.services.meanfield import fixed_point_residual, picard_solve
from neurofield.services.measure import DistanceMethod, FieldStats, field_stats, wasserstein2
from neurofield.services.model import ModelParams, full_ldp_horizon
from neurofield.services.network import network_run
from neurofield.services.paths import Ensemble, TimeGrid
from neurofield.services.storage import RunRecorder, read_ensemble
from neurofield.services.streams import SeedTree, WorkerPool

logger = logging.getLogger(__name__)


@dataclass
class Context:
    config: NeurofieldConfig
    config_hash: str
    params: ModelParams
    grid: TimeGrid
    seed: int
    pool: WorkerPool

    @property
    def run(self):
        return self.config.run

    @property
    def tree(self) -> SeedTree:
        return SeedTree(self.seed)

    def probe_times(self) -> List[float]:
        """Configured probe times, else quarters of the horizon snapped to the grid."""
        if self.run.probe_times is not None:
            return list(self.run.probe_times)
        indices = probe_indices(self.grid.n_main + 1, 5)[1:]
        return [float(self.grid.main_times[k]) for k in indices]

    def probe_nodes(self) -> np.ndarray:
        return self.params.domain.lattice(self.run.probe_nodes)

    def base_metadata(self) -> Dict[str, Any]:
        horizon = full_ldp_horizon(self.params)
        return {
            "grid": self.grid.to_dict(),
            "tau_bar": self.params.tau_bar,
            "lambda_star": self.params.lambda_star,
            "full_ldp_horizon": None if math.isinf(horizon) else horizon,
        }


def stats_frame(stats: FieldStats, label: Optional[str] = None) -> pd.DataFrame:
    """Long table of scaled mean and variance per (node, time)."""
    m, K = stats.scaled()
    m_se, K_se = stats.scaled_se()
    variance = np.diagonal(K, axis1=1, axis2=2)
    variance_se = np.diagonal(K_se, axis1=1, axis2=2)
    n_nodes, n_times = m.shape
    data: Dict[str, Any] = {}
    if label is not None:
        data["ensemble"] = np.full(n_nodes * n_times, label)
    data["t"] = np.tile(stats.times, n_nodes)
    data["r_node"] = np.repeat(np.arange(n_nodes), n_times)
    for axis in range(stats.r_nodes.shape[1]):
        data[f"r_{axis + 1}"] = np.repeat(stats.r_nodes[:, axis], n_times)
    data["m"] = m.ravel()
    data["K_diag"] = variance.ravel()
    data["m_se"] = m_se.ravel()
    data["K_diag_se"] = variance_se.ravel()
    return pd.DataFrame(data)


def cmd_simulate(args, ctx: Context, recorder: RunRecorder) -> int:
    N = args.neurons or ctx.run.n_neurons
    with recorder.stage("simulate"):
        ensemble = network_run(ctx.params, N, ctx.grid, ctx.tree.child("simulate"), ctx.pool.map)
    recorder.ensemble("ensemble.csv", ensemble)
    if args.binary:
        recorder.ensemble("ensemble.nfe", ensemble)
    recorder.finish({**ctx.base_metadata(), "n_neurons": N})
    return 0


def cmd_meanfield(args, ctx: Context, recorder: RunRecorder) -> int:
    run = ctx.run
    with recorder.stage("picard"):
        solution = picard_solve(
            ctx.params, ctx.grid,
            n_particles=run.n_particles, m_nodes=run.m_nodes, tol=run.tol, max_iter=run.max_iter,
            seed=ctx.tree.child("meanfield"), subsample=run.subsample, mapper=ctx.pool.map,
        )
    iterates = pd.DataFrame(
        [{"iter": r.iteration, "w2": r.w2, "ratio": r.ratio} for r in solution.iterates],
        columns=["iter", "w2", "ratio"],
    )
    recorder.frame("iterates.csv", iterates)
    recorder.frame("stats.csv", stats_frame(solution.stats))

    metadata = {
        **ctx.base_metadata(),
        "converged": solution.converged,
        "iterations": len(solution.iterates),
        "iterate_seconds": [r.seconds for r in solution.iterates],
    }
    if solution.converged:
        with recorder.stage("residual"):
            rows = fixed_point_residual(
                ctx.params, solution, ctx.probe_times(), ctx.probe_nodes(), mapper=ctx.pool.map
            )
        residual = pd.DataFrame(
            [{"t": r.t, "r_node": r.node, "statistic": r.statistic, "delta": r.delta, "se": r.se, "z": r.z}
             for r in rows]
        )
        recorder.frame("residual.csv", residual)
        metadata["max_residual_z"] = float(residual["z"].max()) if len(residual) else 0.0

    step = max(1, args.downsample)
    kept = solution.ensemble.subset(np.arange(0, len(solution.ensemble), step))
    recorder.ensemble("ensemble.csv", kept)
    recorder.finish(metadata)
    return 0


def load_compare_inputs(args, ctx: Context) -> List[Ensemble]:
    """Read both ensembles; failures are configuration errors."""
    ensembles = [read_ensemble(args.ensemble_a), read_ensemble(args.ensemble_b)]
    if ensembles[0].grid != ensembles[1].grid:
        raise ConfigurationError(
            f"ensembles live on different grids: {ensembles[0].grid} vs {ensembles[1].grid}"
        )
    if ensembles[0].dim != ctx.params.domain.dim or ensembles[1].dim != ctx.params.domain.dim:
        raise ConfigurationError(f"ensemble locations do not match domain dimension {ctx.params.domain.dim}")
    grid = ensembles[0].grid
    if not math.isclose(grid.dt, ctx.grid.dt, rel_tol=1e-9):
        raise ConfigurationError(f"ensemble step dt={grid.dt:g} does not match the configured dt={ctx.grid.dt:g}")
    if grid.n_hist < ctx.grid.n_hist:
        raise ConfigurationError(
            f"ensemble history has {grid.n_hist} steps but the configured delays need {ctx.grid.n_hist}"
        )
    return ensembles


def cmd_compare(args, ctx: Context, recorder: RunRecorder, ensembles: List[Ensemble]) -> int:
    a, b = ensembles
    nodes = ctx.probe_nodes()
    with recorder.stage("statistics"):
        frames = [
            stats_frame(field_stats(e, ctx.params, nodes, None, ctx.pool.map), label)
            for e, label in zip((a, b), ("a", "b"))
        ]
    recorder.frame("stats.csv", pd.concat(frames, ignore_index=True))

    subsample = min(ctx.run.subsample, len(a), len(b))
    rows = []
    with recorder.stage("distances"):
        for method in DistanceMethod:
            report = wasserstein2(
                a, b, ctx.params.constants.K_tau, subsample, method, ctx.tree.child("compare"), ctx.pool.map
            )
            rows.append({"method": method.value, "value": report.value, "subsample": subsample})
    recorder.frame("distances.csv", pd.DataFrame(rows, columns=["method", "value", "subsample"]))
    recorder.finish({**ctx.base_metadata(), "sizes": [len(a), len(b)]})
    return 0


def cmd_sweep(args, ctx: Context, recorder: RunRecorder) -> int:
    run = ctx.run
    tree = ctx.tree.child("sweep")
    metadata = {**ctx.base_metadata(), "kind": args.kind}

    if args.kind == "convergence":
        with recorder.stage("picard"):
            solution = picard_solve(
                ctx.params, ctx.grid,
                n_particles=run.n_particles, m_nodes=run.m_nodes, tol=run.tol, max_iter=run.max_iter,
                seed=ctx.tree.child("meanfield"), subsample=run.subsample, mapper=ctx.pool.map,
            )
        if not solution.converged:
            raise NumericalFailure(
                f"mean-field solve did not converge (w2={solution.last_w2:.4g} > tol={run.tol:g})"
            )
        with recorder.stage("sweep"):
            report = convergence_sweep(
                ctx.params, run.N_list, run.replicates, solution, ctx.probe_times(), ctx.probe_nodes(),
                tree, run.subsample, ctx.pool.map,
            )
        trend = trend_test(report, "stat_distance")
    elif args.kind == "chaos":
        with recorder.stage("sweep"):
            report = chaos_sweep(
                ctx.params, run.chaos_N_list, run.chaos_replicates, run.pair_count, ctx.probe_times(),
                tree, ctx.pool.map,
            )
        trend = trend_test(report, "rho")
    else:
        with recorder.stage("simulate"):
            ensemble = network_run(ctx.params, run.n_neurons, ctx.grid, ctx.tree.child("simulate"), ctx.pool.map)
        with recorder.stage("sweep"):
            report = regularity_sweep(
                ctx.params, ensemble, run.epsilons, ctx.probe_nodes(), ctx.probe_times(),
                run.subsample, tree, ctx.pool.map,
            )
        trend = None

    report.config_hash = ctx.config_hash
    recorder.frame(f"sweep_{args.kind}.csv", report.to_frame())
    if trend is not None:
        metadata["trend"] = {
            "statistic": trend.statistic,
            "N": trend.N_values,
            "medians": trend.medians,
            "kendall_tau": trend.tau,
            "p_value": trend.p_value,
            "decreasing": trend.decreasing,
        }
    recorder.finish(metadata)
    return 0


def cmd_check(args, ctx: Context, recorder: RunRecorder) -> int:
    with recorder.stage("identities"):
        report = identity_suite(ctx.params, ctx.tree.child("check"), mapper=ctx.pool.map)
    report.config_hash = ctx.config_hash
    recorder.frame("identities.csv", report.to_frame())
    failed = [row.statistic for row in report.rows if not row.passed]
    recorder.finish({**ctx.base_metadata(), "failed": failed})
    if failed:
        logger.error(f"{len(failed)} identity check(s) outside tolerance: {', '.join(failed)}")
        return 3
    return 0
