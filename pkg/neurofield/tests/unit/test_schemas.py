import pytest
from pydantic import ValidationError

from neurofield.models.schemas import (
    DelayMode,
    DelaySchema,
    DensityKind,
    DomainSchema,
    NeurofieldConfig,
    NoiseSchema,
    RunSchema,
    validate_config,
)


class TestEnums:
    """Test the schema enums"""

    def test_density_kinds(self):
        """Test all built-in densities parse"""
        for kind in ["uniform", "beta22"]:
            assert DensityKind(kind) == kind

    def test_invalid_delay_mode(self):
        """Test an unknown delay mode raises error"""
        with pytest.raises(ValueError):
            DelayMode("cubic")


class TestDomainSchema:
    """Test domain validation"""

    def test_defaults(self):
        """Test the default domain is the unit interval"""
        domain = DomainSchema()
        assert domain.dim == 1
        assert domain.bounds == [[0.0, 1.0]]
        assert domain.density == "uniform"

    def test_degenerate_interval(self):
        """Test an empty interval is rejected"""
        with pytest.raises(ValidationError, match="degenerate"):
            DomainSchema(bounds=[[1.0, 1.0]])

    def test_bounds_must_match_dim(self):
        """Test the number of intervals must equal dim"""
        with pytest.raises(ValidationError, match="dim=2"):
            DomainSchema(dim=2, bounds=[[0.0, 1.0]])

    def test_two_dimensional(self):
        """Test a square domain validates"""
        domain = DomainSchema(dim=2, bounds=[[0.0, 1.0], [-1.0, 1.0]])
        assert domain.dim == 2


class TestAssumptionMessages:
    """Test validators name the violated assumption"""

    def test_zero_diffusion(self):
        """Test lambda0 = 0 reports assumption (5)"""
        with pytest.raises(ValidationError, match=r"assumption \(5\)"):
            NoiseSchema(lambda0=0.0)

    def test_negative_delay(self):
        """Test a negative delay reports assumption (4)"""
        with pytest.raises(ValidationError, match=r"assumption \(4\)"):
            DelaySchema(tau0=-0.1)

    def test_negative_leak(self):
        """Test a non-positive leak rate reports assumption (1)"""
        with pytest.raises(ValidationError, match=r"assumption \(1\)"):
            validate_config({"dynamics": {"intrinsic": {"a": 0.0}}})

    def test_negative_sigma(self):
        """Test a negative coupling std reports assumption (3)"""
        with pytest.raises(ValidationError, match=r"assumption \(3\)"):
            validate_config({"coupling": {"std": {"sigma0": -1.0}}})

    def test_lower_bound_above_lambda0(self):
        """Test a declared lower bound above lambda0 is rejected"""
        with pytest.raises(ValidationError, match=r"assumption \(5\)"):
            validate_config({"noise": {"lambda0": 1.0, "lambda_lower": 2.0}})


class TestRunSchema:
    """Test run settings validation"""

    def test_defaults(self):
        """Test solver defaults"""
        run = RunSchema()
        assert run.n_particles == 4096
        assert run.m_nodes == 8
        assert run.tol == 0.05
        assert run.max_iter == 10
        assert run.subsample == 256

    def test_sizes_must_increase(self):
        """Test sweep sizes must be strictly increasing"""
        with pytest.raises(ValidationError, match="strictly increasing"):
            RunSchema(N_list=[100, 50])

    def test_seed_range(self):
        """Test the seed must be an unsigned 64-bit integer"""
        with pytest.raises(ValidationError):
            RunSchema(seed=-1)
        with pytest.raises(ValidationError):
            RunSchema(seed=2**64)
        assert RunSchema(seed=2**64 - 1).seed == 2**64 - 1


class TestNeurofieldConfig:
    """Test the complete document"""

    def test_empty_document(self):
        """Test an empty document gives the reference model"""
        config = validate_config({})
        assert config.coupling.mean.J0 == 0.5
        assert config.coupling.std.sigma0 == 0.5
        assert config.noise.lambda0 == 1.0
        assert config.initial.profile.slope == [0.5]

    def test_none_document(self):
        """Test None is treated as an empty document"""
        assert isinstance(validate_config(None), NeurofieldConfig)

    def test_unknown_key(self):
        """Test unknown keys fail validation"""
        with pytest.raises(ValidationError):
            validate_config({"coupling": {"mean": {"J1": 1.0}}})

    def test_vector_length_against_dim(self):
        """Test vectors must have the domain dimension"""
        with pytest.raises(ValidationError, match="initial.profile.slope"):
            validate_config({"initial": {"profile": {"slope": [0.5, 0.5]}}})

    def test_probe_time_outside_horizon(self):
        """Test probe times must lie in [0, T]"""
        with pytest.raises(ValidationError, match="outside"):
            validate_config({"run": {"probe_times": [2.0]}})

    def test_round_trip_dump(self):
        """Test a dumped document validates to an equal config"""
        config = validate_config({"grid": {"delay_mode": "linear"}})
        again = validate_config(config.model_dump(mode="json"))
        assert again == config
        assert again.grid.delay_mode == "linear"
