import math

import numpy as np
import pytest

from neurofield.services.diagnostics import (
    AGGREGATE,
    IdentitySizes,
    SweepReport,
    SweepRow,
    chaos_sweep,
    convergence_sweep,
    identity_suite,
    regularity_sweep,
    trend_test,
)
from neurofield.services.errors import BlowUpError
from neurofield.services.meanfield import picard_solve
from neurofield.services.network import network_run
from neurofield.services.paths import TimeGrid


def synthetic_report(values_by_N):
    rows = [
        SweepRow(N, rep, "stat_distance", value)
        for N, values in values_by_N.items()
        for rep, value in enumerate(values)
    ]
    return SweepReport(kind="convergence", rows=rows)


@pytest.fixture
def decoupled_solution(decoupled_params):
    grid = TimeGrid.from_params(decoupled_params)
    return picard_solve(decoupled_params, grid, n_particles=32, m_nodes=2, tol=1e-9, seed=0, subsample=16)


class TestSweepReport:
    """Test report rows and their frame"""

    def test_frame_columns(self):
        """Test the CSV column order"""
        report = SweepReport(kind="x", rows=[SweepRow(10, 0, "w2", 0.5)])
        frame = report.to_frame()
        assert list(frame.columns) == ["N", "replicate", "statistic", "value", "se", "tolerance", "passed"]
        assert frame.loc[0, "value"] == 0.5

    def test_select_and_passed(self):
        """Test selection splits aggregate rows and passed ignores unchecked rows"""
        report = SweepReport(kind="x", rows=[
            SweepRow(10, 0, "rho", 0.3),
            SweepRow(10, AGGREGATE, "rho", 0.2, passed=True),
        ])
        assert len(report.select("rho")) == 1
        assert report.select("rho", aggregate=True)[0].value == 0.2
        assert report.all_passed
        report.rows.append(SweepRow(0, 0, "ktilde", 1.0, passed=False))
        assert not report.all_passed


class TestTrendTest:
    """Test the decreasing-in-N rank test"""

    def test_decreasing(self):
        """Test a clearly decreasing statistic is detected"""
        report = synthetic_report({
            10: [1.0, 1.1, 0.9], 20: [0.7, 0.75, 0.68], 40: [0.5, 0.52, 0.47], 80: [0.35, 0.33, 0.36],
        })
        result = trend_test(report, "stat_distance")
        assert result.decreasing
        assert result.N_values == [10, 20, 40, 80]
        assert result.medians[0] == 1.0
        assert result.tau < 0

    def test_increasing(self):
        """Test an increasing statistic is not called decreasing"""
        report = synthetic_report({10: [0.1, 0.2], 20: [0.3, 0.4], 40: [0.5, 0.6]})
        assert not trend_test(report, "stat_distance").decreasing

    def test_aggregate_fallback(self):
        """Test aggregate rows are used when no replicate rows exist"""
        rows = [SweepRow(N, AGGREGATE, "rho", 1.0 / N) for N in (10, 20, 40, 80, 160, 320)]
        result = trend_test(SweepReport(kind="chaos", rows=rows), "rho")
        assert result.N_values == [10, 20, 40, 80, 160, 320]
        assert result.decreasing

    def test_no_rows(self):
        """Test an unknown statistic is rejected"""
        with pytest.raises(ValueError, match="no finite rows"):
            trend_test(synthetic_report({10: [1.0]}), "w2")


class TestConvergenceSweep:
    """Test the network to mean-field convergence sweep"""

    def test_rows(self, decoupled_params, decoupled_solution):
        """Test one distance pair per network"""
        report = convergence_sweep(
            decoupled_params, [8, 16], 2, decoupled_solution, [0.5, 1.0], np.array([[0.5]]), seed=1, subsample=8
        )
        assert report.kind == "convergence"
        assert len(report.rows) == 2 * 2 * 2
        assert {r.statistic for r in report.rows} == {"stat_distance", "w2"}
        assert all(np.isfinite(r.value) and r.value >= 0 for r in report.rows)

    def test_unconverged(self, reference_params):
        """Test an unconverged solution is refused"""
        grid = TimeGrid.from_params(reference_params)
        solution = picard_solve(reference_params, grid, n_particles=16, m_nodes=2, tol=1e-12, max_iter=1, subsample=8)
        with pytest.raises(ValueError, match="not converged"):
            convergence_sweep(reference_params, [8], 1, solution, None, np.array([[0.5]]), seed=0)

    def test_sizes_increasing(self, decoupled_params, decoupled_solution):
        """Test N_list must be strictly increasing"""
        with pytest.raises(ValueError, match="strictly increasing"):
            convergence_sweep(decoupled_params, [16, 8], 1, decoupled_solution, None, np.array([[0.5]]), seed=0)

    def test_failed_replicate(self, mocker, decoupled_params, decoupled_solution):
        """Test a numerical failure becomes a failed NaN row"""
        mocker.patch(
            "neurofield.services.diagnostics.network_run",
            side_effect=BlowUpError(step=3, neuron=0, value=math.inf),
        )
        report = convergence_sweep(
            decoupled_params, [8], 1, decoupled_solution, None, np.array([[0.5]]), seed=0, subsample=8
        )
        assert len(report.rows) == 2
        assert all(math.isnan(r.value) and r.passed is False for r in report.rows)
        assert not report.all_passed


class TestChaosSweep:
    """Test the pair-correlation sweep"""

    def test_rows(self, reference_params):
        """Test per-replicate rates and aggregate correlations with capped pairs"""
        report = chaos_sweep(reference_params, [4, 8], 3, 100, None, seed=2)
        for N in (4, 8):
            assert len([r for r in report.rows if r.N == N and r.statistic == "mean_rate"]) == 3
            (rho,) = [r for r in report.select("rho", aggregate=True) if r.N == N]
            assert 0.0 <= rho.value <= 1.0
            (floor,) = [r for r in report.select("rho_floor", aggregate=True) if r.N == N]
            assert floor.value == pytest.approx(math.sqrt(1.0 / math.pi))

    def test_reproducible(self, reference_params):
        """Test equal seeds give identical rows"""
        a = chaos_sweep(reference_params, [4], 3, 2, [0.1, 0.2], seed=5)
        b = chaos_sweep(reference_params, [4], 3, 2, [0.1, 0.2], seed=5)
        assert [r.value for r in a.rows] == [r.value for r in b.rows]

    def test_invalid(self, reference_params):
        """Test sizes, pair counts and replicate counts are validated"""
        with pytest.raises(ValueError, match="at least 2 neurons"):
            chaos_sweep(reference_params, [1, 4], 3, 1, None, seed=0)
        with pytest.raises(ValueError, match="pair_count"):
            chaos_sweep(reference_params, [4], 3, 0, None, seed=0)
        with pytest.raises(ValueError, match="3 replicates"):
            chaos_sweep(reference_params, [4], 2, 1, None, seed=0)


class TestRegularitySweep:
    """Test the regularity rows"""

    def test_rows(self, reference_params):
        """Test every perturbation size gets distances and ratios"""
        grid = TimeGrid.from_params(reference_params)
        ensemble = network_run(reference_params, 30, grid, seed=4)
        report = regularity_sweep(
            reference_params, ensemble, [0.1], reference_params.domain.lattice(2), None, 16, seed=0
        )
        names = {r.statistic for r in report.rows}
        assert {"w2@0.1", "d_mean@0.1", "d_cov@0.1", "d_tilted@0.1", "ratio_mean@0.1"} <= names
        (w2,) = report.select("w2@0.1")
        assert w2.value == pytest.approx(0.1, abs=1e-12)
        assert all(r.N == 30 for r in report.rows)


class TestIdentitySuite:
    """Test the identity checks at reduced sizes"""

    def test_rows(self, reference_params):
        """Test every identity contributes its rows with tolerances"""
        sizes = IdentitySizes(
            ktilde=2000, moment=2000, girsanov_J=200, girsanov_G=200, lambda_draws=500, lambda_particles=64
        )
        report = identity_suite(reference_params, seed=3, sizes=sizes)
        names = [r.statistic for r in report.rows]
        assert len(names) == 2 + 9 + 1 + 3
        assert "ktilde_v1_T1" in names and "ktilde_v4_T2" in names
        assert "exp_moment_m0.5_v0.25" in names
        assert "girsanov_average" in names
        assert all(r.tolerance is not None and r.passed is not None for r in report.rows)
        (normalization,) = report.select("lambda_normalization")
        assert normalization.passed
