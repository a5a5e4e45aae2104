import json
from datetime import datetime, timezone

import numpy as np
import pandas as pd
import pytest

from neurofield.services.errors import ConfigurationError
from neurofield.services.paths import Ensemble, TimeGrid
from neurofield.services.storage import (
    RunManifest,
    RunRecorder,
    ensemble_frame,
    make_run_id,
    read_ensemble,
    read_ensemble_binary,
    read_ensemble_csv,
    write_ensemble_binary,
    write_ensemble_csv,
)


@pytest.fixture
def small_ensemble():
    grid = TimeGrid.build(0.1, 0.2, 0.5)
    rng = np.random.default_rng(0)
    return Ensemble(rng.random((3, 2)), rng.standard_normal((3, grid.n_total)), grid)


class TestEnsembleCsv:
    """Test the long-format ensemble table"""

    def test_frame_layout(self, small_ensemble):
        """Test one row per member and grid time"""
        frame = ensemble_frame(small_ensemble)
        assert list(frame.columns) == ["neuron_id", "r_1", "r_2", "t", "x"]
        assert len(frame) == 3 * small_ensemble.grid.n_total
        assert frame["t"].iloc[0] == pytest.approx(-0.2)

    def test_read_back(self, temp_dir, small_ensemble):
        """Test the grid and every value survive a write and read exactly"""
        path = write_ensemble_csv(small_ensemble, temp_dir / "ensemble.csv")
        again = read_ensemble_csv(path)
        assert again.grid == small_ensemble.grid
        np.testing.assert_array_equal(again.paths, small_ensemble.paths)
        np.testing.assert_array_equal(again.positions, small_ensemble.positions)

    def test_csv_matches_binary(self, temp_dir, small_ensemble):
        """Test both ensemble formats read back to the same arrays"""
        from_csv = read_ensemble(write_ensemble_csv(small_ensemble, temp_dir / "ensemble.csv"))
        from_nfe = read_ensemble(write_ensemble_binary(small_ensemble, temp_dir / "ensemble.nfe"))
        np.testing.assert_array_equal(from_csv.paths, from_nfe.paths)
        np.testing.assert_array_equal(from_csv.positions, from_nfe.positions)

    def test_byte_identical(self, temp_dir, small_ensemble):
        """Test repeated writes give the same bytes"""
        a = write_ensemble_csv(small_ensemble, temp_dir / "a.csv")
        b = write_ensemble_csv(small_ensemble, temp_dir / "b.csv")
        assert a.read_bytes() == b.read_bytes()

    def test_missing_file(self, temp_dir):
        """Test a missing file is a configuration error"""
        with pytest.raises(ConfigurationError, match="not found"):
            read_ensemble_csv(temp_dir / "absent.csv")

    def test_not_an_ensemble(self, temp_dir):
        """Test a table without the required columns is rejected"""
        path = temp_dir / "other.csv"
        pd.DataFrame({"a": [1, 2]}).to_csv(path, index=False)
        with pytest.raises(ConfigurationError, match="not an ensemble table"):
            read_ensemble_csv(path)

    def test_ragged(self, temp_dir, small_ensemble):
        """Test members with missing times are rejected"""
        path = temp_dir / "ragged.csv"
        ensemble_frame(small_ensemble).iloc[:-1].to_csv(path, index=False)
        with pytest.raises(ConfigurationError, match="every grid time"):
            read_ensemble_csv(path)


class TestEnsembleBinary:
    """Test the binary ensemble format"""

    def test_exact_round_trip(self, temp_dir, small_ensemble):
        """Test binary files preserve every bit"""
        path = write_ensemble_binary(small_ensemble, temp_dir / "ensemble.nfe")
        again = read_ensemble(path)
        assert again.grid == small_ensemble.grid
        np.testing.assert_array_equal(again.paths, small_ensemble.paths)
        np.testing.assert_array_equal(again.positions, small_ensemble.positions)

    def test_bad_magic(self, temp_dir, small_ensemble):
        """Test a foreign file is rejected"""
        path = write_ensemble_binary(small_ensemble, temp_dir / "ensemble.nfe")
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(ConfigurationError, match="not a version 1"):
            read_ensemble_binary(path)

    def test_truncated(self, temp_dir, small_ensemble):
        """Test a short body is rejected"""
        path = write_ensemble_binary(small_ensemble, temp_dir / "ensemble.nfe")
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ConfigurationError, match="header implies"):
            read_ensemble_binary(path)
        path.write_bytes(b"NF")
        with pytest.raises(ConfigurationError, match="truncated header"):
            read_ensemble_binary(path)


class TestRunRecorder:
    """Test run directories and the manifest"""

    def test_run_id(self):
        """Test the UTC timestamp and hash prefix"""
        now = datetime(2024, 1, 2, 3, 4, 5, tzinfo=timezone.utc)
        assert make_run_id("abcdef0123456789", now) == "20240102T030405Z-abcdef01"

    def test_finish_writes_manifest(self, temp_dir, small_ensemble):
        """Test outputs are listed with checksums and metadata is recorded"""
        recorder = RunRecorder(temp_dir / "run", "simulate", {"run": {"seed": 1}}, "f" * 64, 1)
        recorder.prepare()
        with recorder.stage("simulate"):
            recorder.ensemble("ensemble.csv", small_ensemble)
        recorder.frame("stats.csv", pd.DataFrame({"t": [0.0], "m": [0.5]}))
        manifest = recorder.finish({"extra": 2})

        assert set(manifest.outputs) == {"ensemble.csv", "stats.csv", "metadata.json"}
        assert "simulate" in manifest.stages
        metadata = json.loads((temp_dir / "run" / "metadata.json").read_text())
        assert metadata["extra"] == 2 and metadata["seed"] == 1
        loaded = RunManifest.load(temp_dir / "run" / "manifest.json")
        assert loaded.config_hash == "f" * 64
        assert loaded.verify(temp_dir / "run") == []

    def test_verify_detects_changes(self, temp_dir):
        """Test an edited or deleted output fails verification"""
        recorder = RunRecorder(temp_dir, "check", {}, "0" * 64, 0)
        recorder.prepare()
        recorder.frame("a.csv", pd.DataFrame({"v": [1.0]}))
        recorder.frame("b.csv", pd.DataFrame({"v": [2.0]}))
        manifest = recorder.finish()
        (temp_dir / "a.csv").write_text("v\n3\n")
        (temp_dir / "b.csv").unlink()
        assert sorted(manifest.verify(temp_dir)) == ["a.csv", "b.csv"]
