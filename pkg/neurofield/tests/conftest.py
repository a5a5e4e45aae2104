import shutil
import tempfile
from pathlib import Path

import pytest

from neurofield.services.model import build_model


@pytest.fixture
def temp_dir():
    """Create a temporary directory for test files"""
    temp_dir = tempfile.mkdtemp()
    yield Path(temp_dir)
    shutil.rmtree(temp_dir)


@pytest.fixture
def reference_document():
    """Weak-coupling reference document with a short horizon for fast tests"""
    return {
        "dynamics": {"horizon_T": 0.2},
        "coupling": {
            "mean": {"J0": 0.5, "length": 0.5},
            "std": {"sigma0": 0.5, "length": 0.5},
            "delay": {"tau0": 0.02, "c_tau": 0.05},
        },
        "grid": {"dt": 0.01},
    }


@pytest.fixture
def decoupled_document():
    """No interactions, OU dynamics from a zero history"""
    return {
        "dynamics": {"horizon_T": 1.0, "intrinsic": {"a": 1.0}},
        "coupling": {
            "mean": {"J0": 0.0},
            "std": {"sigma0": 0.0},
            "delay": {"tau0": 0.0, "c_tau": 0.0},
        },
        "noise": {"lambda0": 1.0},
        "initial": {"profile": {"slope": [0.0]}, "noise_scale": 0.0},
        "grid": {"dt": 0.01},
    }


@pytest.fixture
def reference_params(reference_document):
    return build_model(reference_document)


@pytest.fixture
def decoupled_params(decoupled_document):
    return build_model(decoupled_document)


@pytest.fixture
def sample_config_yaml():
    """Sample YAML configuration for loader tests"""
    return """
domain:
  dim: 1
  bounds: [[0.0, 1.0]]
coupling:
  mean:
    J0: 0.25
  delay:
    tau0: 0.01
    c_tau: 0.0
noise:
  lambda0: 2.0
run:
  seed: 11
"""
