#!/usr/bin/env python3
"""
neurofield Demo Script

This script walks through the library on a deliberately small problem:
1. Configuration loading and model construction
2. Finite network simulation
3. Mean-field Picard solve and its residual
4. Path-space distances between the two
5. A reduced identity check

Run it from the repository root to see every component work together.
The full-size experiments live behind ``python -m neurofield``.
"""

import sys
from pathlib import Path

from neurofield.services.config import load_config
from neurofield.services.diagnostics import IdentitySizes, identity_suite
from neurofield.services.meanfield import fixed_point_residual, picard_solve
from neurofield.services.measure import DistanceMethod, field_stats, wasserstein2
from neurofield.services.model import build_model, full_ldp_horizon
from neurofield.services.network import network_run
from neurofield.services.paths import TimeGrid
from neurofield.services.streams import SeedTree

DEMO_OVERRIDES = [
    "dynamics.horizon_T=0.3",
    "grid.dt=0.01",
    "run.n_particles=256",
    "run.m_nodes=4",
    "run.subsample=64",
]


def print_header(title):
    """Print a formatted header for demo sections."""
    print(f"\n{'='*60}")
    print(f"  {title}")
    print(f"{'='*60}")


def print_step(step_num, description):
    """Print a formatted step description."""
    print(f"\n[Step {step_num}] {description}")
    print("-" * 40)


def demo_model():
    print_header("DEMO: Configuration and Model")
    print_step(1, "Loading configs/default.yaml with demo overrides")
    config = load_config(Path("configs/default.yaml"), DEMO_OVERRIDES)
    params = build_model(config)
    grid = TimeGrid.from_params(params)
    print(f"✅ tau_bar = {params.tau_bar:.3f}, lambda* = {params.lambda_star:.3f}")
    print(f"✅ grid: {grid.n_hist} history steps, {grid.n_main} main steps of {grid.dt}")
    horizon = full_ldp_horizon(params)
    print(f"📏 exponential tightness horizon: {horizon:.3f}")
    return config, params, grid


def demo_network(params, grid, tree):
    print_header("DEMO: Finite Network")
    print_step(2, "Simulating N = 200 neurons")
    ensemble = network_run(params, 200, grid, tree.child("simulate"))
    stats = field_stats(ensemble, params, params.domain.lattice(3))
    m, K = stats.scaled()
    print(f"✅ simulated paths: {ensemble.paths.shape}")
    for node, r in enumerate(stats.r_nodes):
        print(f"  r = {r[0]:.3f}: m(T) = {m[node, -1]:+.4f}, K(T,T) = {K[node, -1, -1]:.4f}")
    return ensemble


def demo_meanfield(config, params, grid, tree):
    print_header("DEMO: Mean-Field Fixed Point")
    print_step(3, "Picard iteration from the uncoupled law")
    run = config.run
    solution = picard_solve(
        params, grid, n_particles=run.n_particles, m_nodes=run.m_nodes, tol=run.tol,
        max_iter=run.max_iter, seed=tree.child("meanfield"), subsample=run.subsample,
    )
    for record in solution.iterates:
        print(f"  iteration {record.iteration}: w2 = {record.w2:.5f} ratio = {record.ratio:.3f}")
    icon = "✅" if solution.converged else "⚠️"
    print(f"{icon} converged: {solution.converged}")

    if solution.converged:
        rows = fixed_point_residual(params, solution, [float(grid.main_times[-1])], params.domain.lattice(2))
        worst = max(row.z for row in rows)
        print(f"📏 fixed-point residual: max |delta| / se = {worst:.2f}")
    return solution


def demo_distances(params, network, solution, tree):
    print_header("DEMO: Path-Space Distances")
    print_step(4, "Estimating the distance between network and mean field")
    n = min(64, len(network), len(solution.ensemble))
    for method in DistanceMethod:
        report = wasserstein2(network, solution.ensemble, params.constants.K_tau, n, method, tree.child("compare"))
        print(f"  {method.value:>17}: {report.value:.5f}")


def demo_identities(params, tree):
    print_header("DEMO: Exact Identities (reduced sizes)")
    print_step(5, "Checking Gaussian and Girsanov identities")
    sizes = IdentitySizes(ktilde=20_000, moment=50_000, girsanov_J=2_000, girsanov_G=2_000, lambda_draws=2_000)
    report = identity_suite(params, tree.child("check"), sizes)
    for row in report.rows:
        icon = "✅" if row.passed else "🔴"
        print(f"  {icon} {row.statistic}: {row.value:.4g} (tolerance {row.tolerance:g})")
    return report.all_passed


def main():
    """Run the complete demo."""
    config, params, grid = demo_model()
    tree = SeedTree(config.run.seed)
    network = demo_network(params, grid, tree)
    solution = demo_meanfield(config, params, grid, tree)
    demo_distances(params, network, solution, tree)
    passed = demo_identities(params, tree)

    print_header("DEMO COMPLETE")
    print("Next: python -m neurofield --help")
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
