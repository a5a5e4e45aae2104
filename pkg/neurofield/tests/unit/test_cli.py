import json
from pathlib import Path

import pandas as pd
import pytest

from neurofield.cli import EXIT_CONFIG, EXIT_NUMERICAL, build_parser, main
from neurofield.services.diagnostics import SweepReport, SweepRow
from neurofield.services.storage import RunManifest


@pytest.fixture
def small_config(temp_dir):
    """Short horizon and tiny solver settings"""
    path = temp_dir / "small.yaml"
    path.write_text(
        """
dynamics:
  horizon_T: 0.1
grid:
  dt: 0.01
run:
  seed: 3
  n_neurons: 10
  n_particles: 16
  m_nodes: 2
  max_iter: 2
  subsample: 8
  probe_nodes: 2
  chaos_N_list: [3, 4]
  chaos_replicates: 3
  pair_count: 2
"""
    )
    return path


def run_cli(*argv):
    return main([str(a) for a in argv])


DEFAULT_CONFIG = Path(__file__).resolve().parents[3] / "configs" / "default.yaml"

THREADED_COMMANDS = {
    "simulate": ["simulate"],
    "meanfield": ["meanfield"],
    "convergence": [
        "sweep", "--kind", "convergence",
        "--set", "run.N_list=[3,4]", "--set", "run.replicates=2", "--set", "run.tol=10.0",
    ],
    "chaos": ["sweep", "--kind", "chaos"],
    "regularity": ["sweep", "--kind", "regularity"],
}


def csv_bytes(out):
    return {path.name: path.read_bytes() for path in sorted(out.glob("*.csv"))}


class TestParser:
    """Test argument parsing"""

    def test_subcommands(self):
        """Test common options are available on every subcommand"""
        parser = build_parser()
        args = parser.parse_args(["simulate", "--seed", "4", "--set", "noise.lambda0=2", "--set", "run.threads=2"])
        assert args.command == "simulate"
        assert args.seed == 4
        assert args.overrides == ["noise.lambda0=2", "run.threads=2"]

    def test_sweep_kind_required(self):
        """Test sweep needs a known kind"""
        with pytest.raises(SystemExit):
            build_parser().parse_args(["sweep", "--kind", "other"])


class TestExitCodes:
    """Test failures map to exit codes before anything is written"""

    def test_zero_diffusion(self, temp_dir, small_config):
        """Test lambda0 = 0 exits with 2 and writes nothing"""
        out = temp_dir / "out"
        code = run_cli("simulate", "--config", small_config, "--set", "noise.lambda0=0", "--out", out)
        assert code == EXIT_CONFIG
        assert not out.exists()

    def test_missing_config(self, temp_dir):
        """Test a missing configuration file exits with 2"""
        assert run_cli("simulate", "--config", temp_dir / "absent.yaml", "--out", temp_dir / "out") == EXIT_CONFIG

    def test_invalid_threads(self, temp_dir, small_config):
        """Test a non-positive thread count exits with 2"""
        out = temp_dir / "out"
        assert run_cli("simulate", "--config", small_config, "--threads", "0", "--out", out) == EXIT_CONFIG
        assert not out.exists()

    def test_missing_compare_input(self, temp_dir, small_config):
        """Test a missing ensemble file exits with 2 and writes nothing"""
        out = temp_dir / "out"
        code = run_cli(
            "compare", "--config", small_config, "--out", out,
            "--ensemble-a", temp_dir / "a.csv", "--ensemble-b", temp_dir / "b.csv",
        )
        assert code == EXIT_CONFIG
        assert not out.exists()


class TestSimulate:
    """Test the simulate command"""

    def test_deterministic(self, temp_dir, small_config):
        """Test equal seeds give byte-identical ensembles"""
        assert run_cli("simulate", "--config", small_config, "--out", temp_dir / "a", "--neurons", "5") == 0
        assert run_cli("simulate", "--config", small_config, "--out", temp_dir / "b", "--neurons", "5") == 0
        assert (temp_dir / "a" / "ensemble.csv").read_bytes() == (temp_dir / "b" / "ensemble.csv").read_bytes()

    def test_seed_changes_output(self, temp_dir, small_config):
        """Test --seed overrides the configured seed"""
        run_cli("simulate", "--config", small_config, "--out", temp_dir / "a", "--neurons", "5")
        run_cli("simulate", "--config", small_config, "--out", temp_dir / "b", "--neurons", "5", "--seed", "99")
        assert (temp_dir / "a" / "ensemble.csv").read_bytes() != (temp_dir / "b" / "ensemble.csv").read_bytes()
        metadata = json.loads((temp_dir / "b" / "metadata.json").read_text())
        assert metadata["seed"] == 99

    def test_manifest(self, temp_dir, small_config):
        """Test the manifest lists every output and verifies"""
        out = temp_dir / "sim"
        assert run_cli("simulate", "--config", small_config, "--out", out, "--binary") == 0
        manifest = RunManifest.load(out / "manifest.json")
        assert {"ensemble.csv", "ensemble.nfe", "metadata.json"} <= set(manifest.outputs)
        assert manifest.verify(out) == []
        assert manifest.config["run"]["n_neurons"] == 10
        metadata = json.loads((out / "metadata.json").read_text())
        assert metadata["n_neurons"] == 10
        assert metadata["grid"]["n_main"] == 10


class TestCompare:
    """Test comparing stored ensembles"""

    def test_compare_csv_and_binary(self, temp_dir, small_config):
        """Test a network against itself has zero distance under both methods"""
        sim = temp_dir / "sim"
        assert run_cli("simulate", "--config", small_config, "--out", sim, "--binary") == 0
        out = temp_dir / "cmp"
        code = run_cli(
            "compare", "--config", small_config, "--out", out,
            "--ensemble-a", sim / "ensemble.nfe", "--ensemble-b", sim / "ensemble.nfe",
        )
        assert code == 0
        distances = pd.read_csv(out / "distances.csv")
        assert set(distances["method"]) == {"exact_assignment", "index_coupling"}
        assert (distances["value"] == 0.0).all()
        stats = pd.read_csv(out / "stats.csv")
        assert set(stats["ensemble"]) == {"a", "b"}

    def test_csv_matches_binary(self, temp_dir, small_config):
        """Test the stored CSV compares exactly like the binary ensemble"""
        sim = temp_dir / "sim"
        assert run_cli("simulate", "--config", small_config, "--out", sim, "--binary") == 0
        for name in ("ensemble.csv", "ensemble.nfe"):
            code = run_cli(
                "compare", "--config", small_config, "--out", temp_dir / name,
                "--ensemble-a", sim / name, "--ensemble-b", sim / "ensemble.nfe",
            )
            assert code == 0
        from_csv = (temp_dir / "ensemble.csv" / "stats.csv").read_bytes()
        assert from_csv == (temp_dir / "ensemble.nfe" / "stats.csv").read_bytes()

    def test_history_too_short(self, temp_dir, small_config):
        """Test ensembles without the configured delay history exit with 2"""
        sim = temp_dir / "sim"
        code = run_cli(
            "simulate", "--config", small_config, "--out", sim,
            "--set", "coupling.delay.tau0=0", "--set", "coupling.delay.c_tau=0",
        )
        assert code == 0
        out = temp_dir / "cmp"
        code = run_cli(
            "compare", "--config", small_config, "--out", out,
            "--ensemble-a", sim / "ensemble.csv", "--ensemble-b", sim / "ensemble.csv",
        )
        assert code == EXIT_CONFIG
        assert not out.exists()

    def test_step_mismatch(self, temp_dir, small_config):
        """Test ensembles on another time step exit with 2"""
        sim = temp_dir / "sim"
        assert run_cli("simulate", "--config", small_config, "--out", sim, "--set", "grid.dt=0.02") == 0
        out = temp_dir / "cmp"
        code = run_cli(
            "compare", "--config", small_config, "--out", out,
            "--ensemble-a", sim / "ensemble.csv", "--ensemble-b", sim / "ensemble.csv",
        )
        assert code == EXIT_CONFIG
        assert not out.exists()


class TestMeanfield:
    """Test the meanfield command"""

    def test_outputs(self, temp_dir, small_config):
        """Test the iteration history and statistics are written"""
        out = temp_dir / "mf"
        assert run_cli("meanfield", "--config", small_config, "--out", out, "--downsample", "2") == 0
        iterates = pd.read_csv(out / "iterates.csv")
        assert list(iterates.columns) == ["iter", "w2", "ratio"]
        assert 1 <= len(iterates) <= 2
        ensemble = pd.read_csv(out / "ensemble.csv")
        assert ensemble["neuron_id"].nunique() == 8
        assert (out / "stats.csv").is_file()

    def test_invalid_downsample(self, temp_dir, small_config):
        """Test --downsample must be positive"""
        assert run_cli("meanfield", "--config", small_config, "--out", temp_dir / "mf", "--downsample", "0") == EXIT_CONFIG


class TestSweep:
    """Test the sweep command"""

    def test_chaos(self, temp_dir, small_config):
        """Test the chaos sweep writes its rows and trend"""
        out = temp_dir / "sweep"
        assert run_cli("sweep", "--kind", "chaos", "--config", small_config, "--out", out) == 0
        frame = pd.read_csv(out / "sweep_chaos.csv")
        assert {"mean_rate", "rho", "rho_floor"} <= set(frame["statistic"])
        metadata = json.loads((out / "metadata.json").read_text())
        assert metadata["trend"]["statistic"] == "rho"

    def test_unconverged_meanfield(self, temp_dir, small_config):
        """Test the convergence sweep refuses an unconverged fixed point"""
        code = run_cli(
            "sweep", "--kind", "convergence", "--config", small_config, "--out", temp_dir / "sweep",
            "--set", "run.tol=1.0e-12", "--set", "run.max_iter=1",
        )
        assert code == EXIT_NUMERICAL


class TestCheck:
    """Test the identity check command"""

    def test_failed_identity_exit_code(self, mocker, temp_dir, small_config):
        """Test a row outside tolerance exits with 3 and is still written"""
        report = SweepReport(kind="identities", rows=[SweepRow(0, 0, "ktilde_v1_T1", 0.5, tolerance=0.02, passed=False)])
        mocker.patch("neurofield.cli.commands.identity_suite", return_value=report)
        out = temp_dir / "check"
        assert run_cli("check", "--config", small_config, "--out", out) == EXIT_NUMERICAL
        frame = pd.read_csv(out / "identities.csv")
        assert frame.loc[0, "statistic"] == "ktilde_v1_T1"
        assert json.loads((out / "metadata.json").read_text())["failed"] == ["ktilde_v1_T1"]

    def test_passing_identities(self, mocker, temp_dir, small_config):
        """Test all rows within tolerance exit with 0"""
        report = SweepReport(kind="identities", rows=[SweepRow(0, 0, "girsanov_average", 0.01, tolerance=0.05, passed=True)])
        mocker.patch("neurofield.cli.commands.identity_suite", return_value=report)
        assert run_cli("check", "--config", small_config, "--out", temp_dir / "check") == 0


class TestThreads:
    """Test the worker count never changes an output table"""

    @pytest.mark.parametrize("name", sorted(THREADED_COMMANDS))
    def test_byte_identical(self, temp_dir, small_config, name):
        """Test one and three threads write the same CSV bytes"""
        outputs = []
        for threads in (1, 3):
            out = temp_dir / f"{name}-{threads}"
            assert run_cli(*THREADED_COMMANDS[name], "--config", small_config, "--out", out, "--threads", threads) == 0
            outputs.append(csv_bytes(out))
        assert outputs[0]
        assert outputs[0] == outputs[1]

    def test_compare_byte_identical(self, temp_dir, small_config):
        """Test compare writes the same CSV bytes with one and three threads"""
        sim = temp_dir / "sim"
        assert run_cli("simulate", "--config", small_config, "--out", sim) == 0
        outputs = []
        for threads in (1, 3):
            out = temp_dir / f"cmp-{threads}"
            code = run_cli(
                "compare", "--config", small_config, "--out", out, "--threads", threads,
                "--ensemble-a", sim / "ensemble.csv", "--ensemble-b", sim / "ensemble.csv",
            )
            assert code == 0
            outputs.append(csv_bytes(out))
        assert set(outputs[0]) == {"distances.csv", "stats.csv"}
        assert outputs[0] == outputs[1]


@pytest.mark.e2e
class TestReferenceRuns:
    """Full-size runs on the weak-coupling reference configuration"""

    def test_check_passes(self, temp_dir):
        """Test every identity is within tolerance, whatever the thread count"""
        outputs = []
        for threads in (1, 4):
            out = temp_dir / f"check-{threads}"
            assert run_cli("check", "--config", DEFAULT_CONFIG, "--out", out, "--threads", threads) == 0
            outputs.append(csv_bytes(out))
        assert outputs[0] == outputs[1]
        frame = pd.read_csv(temp_dir / "check-1" / "identities.csv")
        assert frame["passed"].all()
        assert len(frame[frame["statistic"].str.startswith("exp_moment")]) == 9

    def test_meanfield_converges(self, temp_dir):
        """Test Picard converges within ten iterations and the residual is within 3 standard errors"""
        out = temp_dir / "mf"
        assert run_cli("meanfield", "--config", DEFAULT_CONFIG, "--out", out, "--threads", 4) == 0
        metadata = json.loads((out / "metadata.json").read_text())
        assert metadata["converged"]
        iterates = pd.read_csv(out / "iterates.csv")
        assert len(iterates) <= 10
        assert iterates["w2"].iloc[-1] <= 0.05
        assert iterates["w2"].is_monotonic_decreasing
        residual = pd.read_csv(out / "residual.csv")
        assert residual["z"].max() < 3.0

    @pytest.mark.parametrize("kind,statistic", [("convergence", "stat_distance"), ("chaos", "rho")])
    def test_sweep_trend_decreasing(self, temp_dir, kind, statistic):
        """Test the sweep statistic decreases in N"""
        out = temp_dir / kind
        assert run_cli("sweep", "--kind", kind, "--config", DEFAULT_CONFIG, "--out", out, "--threads", 4) == 0
        trend = json.loads((out / "metadata.json").read_text())["trend"]
        assert trend["statistic"] == statistic
        assert trend["decreasing"]
