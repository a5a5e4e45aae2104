"""
Pydantic schemas for model configuration documents.

A configuration document has the sections ``domain``, ``dynamics``,
``coupling``, ``noise``, ``initial``, ``grid`` and ``run``. Every section has
defaults, and together they describe the weak-coupling reference model, so an
empty document is valid. Validators raise ``ValueError`` with a message naming
the violated modelling assumption, which pydantic reports as a
``ValidationError``.
"""

from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class DensityKind(str, Enum):
    """Built-in spatial densities on the box domain"""
    uniform = "uniform"
    beta22 = "beta22"


class DelayMode(str, Enum):
    """How delayed states are read from the history buffer"""
    nearest = "nearest"
    linear = "linear"


class DomainSchema(BaseModel):
    """Compact box domain D and the law of the neuron locations"""
    dim: int = Field(default=1, ge=1, description="Spatial dimension d")
    bounds: List[List[float]] = Field(
        default_factory=lambda: [[0.0, 1.0]],
        description="Per-axis closed interval [lower, upper]",
    )
    density: DensityKind = Field(default=DensityKind.uniform, description="Location density on D")

    model_config = ConfigDict(extra="forbid", use_enum_values=True)

    @field_validator("bounds")
    @classmethod
    def validate_bounds(cls, v):
        """Every axis must be a non-degenerate interval"""
        for axis, interval in enumerate(v):
            if len(interval) != 2:
                raise ValueError(f"bounds[{axis}] must have exactly two entries")
            lower, upper = interval
            if not lower < upper:
                raise ValueError(f"bounds[{axis}] is degenerate: lower must be < upper")
        return v

    @model_validator(mode="after")
    def validate_dim(self):
        """The number of intervals must match the dimension"""
        if len(self.bounds) != self.dim:
            raise ValueError(f"domain has dim={self.dim} but {len(self.bounds)} bounds")
        return self


class IntrinsicSchema(BaseModel):
    """Intrinsic dynamics f(r, t, x) = -a x + I0 cos(2 pi (omega t + <k, r>))"""
    family: str = Field(default="leaky_stimulus", description="Intrinsic dynamics family id")
    a: float = Field(default=1.0, description="Leak rate")
    I0: float = Field(default=0.0, description="Stimulus amplitude")
    omega: float = Field(default=0.0, description="Stimulus temporal frequency")
    k: Optional[List[float]] = Field(default=None, description="Stimulus wave vector (defaults to zero)")

    model_config = ConfigDict(extra="forbid")

    @field_validator("a")
    @classmethod
    def validate_leak(cls, v):
        """Leak rate must be positive"""
        if v <= 0:
            raise ValueError("assumption (1): intrinsic leak rate a must be > 0")
        return v


class SigmoidSchema(BaseModel):
    """Firing-rate sigmoid S"""
    family: str = Field(default="logistic", description="Sigmoid family id")
    gain: float = Field(default=1.0, description="Sigmoid gain g")

    model_config = ConfigDict(extra="forbid")

    @field_validator("gain")
    @classmethod
    def validate_gain(cls, v):
        """Gain must be positive"""
        if v <= 0:
            raise ValueError("assumption (2): sigmoid gain g must be > 0")
        return v


class DynamicsSchema(BaseModel):
    """Single-neuron dynamics and time horizon"""
    horizon_T: float = Field(default=1.0, description="Time horizon T")
    intrinsic: IntrinsicSchema = Field(default_factory=IntrinsicSchema, description="Intrinsic dynamics")
    sigmoid: SigmoidSchema = Field(default_factory=SigmoidSchema, description="Firing-rate sigmoid")

    model_config = ConfigDict(extra="forbid")

    @field_validator("horizon_T")
    @classmethod
    def validate_horizon(cls, v):
        """Horizon must be positive"""
        if v <= 0:
            raise ValueError("horizon_T must be > 0")
        return v


class MeanKernelSchema(BaseModel):
    """Mean coupling kernel J(r, r')"""
    family: str = Field(default="exponential", description="Kernel family id")
    J0: float = Field(default=0.5, description="Kernel amplitude")
    length: float = Field(default=0.5, description="Decay length for the exponential family")

    model_config = ConfigDict(extra="forbid")

    @field_validator("length")
    @classmethod
    def validate_length(cls, v):
        """Length scale must be positive"""
        if v <= 0:
            raise ValueError("assumption (3): kernel length must be > 0")
        return v


class StdKernelSchema(BaseModel):
    """Coupling standard deviation kernel sigma(r, r')"""
    family: str = Field(default="exponential", description="Kernel family id")
    sigma0: float = Field(default=0.5, description="Kernel amplitude")
    length: float = Field(default=0.5, description="Decay length for the exponential family")

    model_config = ConfigDict(extra="forbid")

    @field_validator("sigma0")
    @classmethod
    def validate_amplitude(cls, v):
        """Standard deviation must be nonnegative"""
        if v < 0:
            raise ValueError("assumption (3): coupling standard deviation sigma0 must be >= 0")
        return v

    @field_validator("length")
    @classmethod
    def validate_length(cls, v):
        """Length scale must be positive"""
        if v <= 0:
            raise ValueError("assumption (3): kernel length must be > 0")
        return v


class DelaySchema(BaseModel):
    """Affine delay tau(r, r') = tau0 + c_tau |r - r'|"""
    tau0: float = Field(default=0.02, description="Constant delay")
    c_tau: float = Field(default=0.05, description="Inverse conduction speed")

    model_config = ConfigDict(extra="forbid")

    @field_validator("tau0", "c_tau")
    @classmethod
    def validate_nonnegative(cls, v):
        """Delay coefficients must be nonnegative"""
        if v < 0:
            raise ValueError("assumption (4): delay coefficients tau0 and c_tau must be >= 0")
        return v


class CouplingSchema(BaseModel):
    """Random synaptic couplings and delays"""
    mean: MeanKernelSchema = Field(default_factory=MeanKernelSchema, description="Mean kernel J")
    std: StdKernelSchema = Field(default_factory=StdKernelSchema, description="Standard deviation kernel sigma")
    delay: DelaySchema = Field(default_factory=DelaySchema, description="Delay kernel tau")

    model_config = ConfigDict(extra="forbid")


class NoiseSchema(BaseModel):
    """Diffusion coefficient lambda(r) = lambda0"""
    lambda0: float = Field(default=1.0, description="Diffusion coefficient")
    lambda_lower: Optional[float] = Field(
        default=None, description="Declared lower bound lambda* (defaults to lambda0)"
    )

    model_config = ConfigDict(extra="forbid")

    @field_validator("lambda0", "lambda_lower")
    @classmethod
    def validate_positive(cls, v):
        """Diffusion must be bounded away from zero"""
        if v is not None and v <= 0:
            raise ValueError(
                "assumption (5): diffusion lower bound violated, lambda lower bound must be > 0"
            )
        return v


class ProfileSchema(BaseModel):
    """Mean initial profile psi(r)"""
    family: str = Field(default="affine", description="Profile family id (affine or cosine)")
    offset: float = Field(default=0.0, description="Constant offset c")
    slope: Optional[List[float]] = Field(default=None, description="Affine slope vector w")
    amplitude: float = Field(default=0.0, description="Cosine amplitude A")
    wavevector: Optional[List[float]] = Field(default=None, description="Cosine wave vector k")

    model_config = ConfigDict(extra="forbid")


class InitialSchema(BaseModel):
    """Initial law: x0_s(r) = psi(r) + s0 eta_s"""
    profile: ProfileSchema = Field(
        default_factory=lambda: ProfileSchema(slope=[0.5]), description="Mean initial profile"
    )
    noise_scale: float = Field(default=0.1, description="Amplitude s0 of the random history path")
    lipschitz_C0: Optional[float] = Field(
        default=None, description="Declared regularity constant C0 (defaults to K_psi^2)"
    )

    model_config = ConfigDict(extra="forbid")

    @field_validator("noise_scale")
    @classmethod
    def validate_noise_scale(cls, v):
        """History noise amplitude must be nonnegative"""
        if v < 0:
            raise ValueError("initial noise_scale must be >= 0")
        return v

    @field_validator("lipschitz_C0")
    @classmethod
    def validate_c0(cls, v):
        """Regularity constant must be nonnegative"""
        if v is not None and v < 0:
            raise ValueError("initial lipschitz_C0 must be >= 0")
        return v


class GridSchema(BaseModel):
    """Uniform time discretization"""
    dt: float = Field(default=0.01, description="Time step")
    delay_mode: DelayMode = Field(default=DelayMode.nearest, description="Delayed-state lookup")

    model_config = ConfigDict(extra="forbid", use_enum_values=True)

    @field_validator("dt")
    @classmethod
    def validate_dt(cls, v):
        """Time step must be positive"""
        if v <= 0:
            raise ValueError("grid dt must be > 0")
        return v


class RunSchema(BaseModel):
    """Sizes, seeds and solver settings for the experiment drivers"""
    seed: int = Field(default=0, ge=0, lt=2**64, description="Master seed (unsigned 64-bit)")
    threads: int = Field(default=1, ge=1, description="Worker threads")
    n_neurons: int = Field(default=200, ge=1, description="Network size for simulate/regularity")
    n_particles: int = Field(default=4096, ge=1, description="Particles per mean-field iterate")
    m_nodes: int = Field(default=8, ge=1, description="Location nodes per axis")
    tol: float = Field(default=0.05, gt=0, description="Picard stopping tolerance on w2")
    max_iter: int = Field(default=10, ge=1, description="Maximum Picard iterations")
    subsample: int = Field(default=256, ge=1, description="Atoms per side in the w2 estimator")
    probe_times: Optional[List[float]] = Field(
        default=None, description="Probe times in [0, T] (defaults to quarters of T)"
    )
    probe_nodes: int = Field(default=3, ge=1, description="Probe location nodes per axis")
    N_list: List[int] = Field(default_factory=lambda: [50, 100, 200, 400], description="Convergence sweep sizes")
    replicates: int = Field(default=20, ge=1, description="Convergence sweep replicates")
    chaos_N_list: List[int] = Field(default_factory=lambda: [25, 50, 100, 200], description="Chaos sweep sizes")
    chaos_replicates: int = Field(default=200, ge=2, description="Chaos sweep replicates")
    pair_count: int = Field(default=50, ge=1, description="Neuron pairs per size in the chaos sweep")
    epsilons: List[float] = Field(
        default_factory=lambda: [0.4, 0.2, 0.1, 0.05], description="Perturbation sizes for regularity"
    )

    model_config = ConfigDict(extra="forbid")

    @field_validator("N_list", "chaos_N_list")
    @classmethod
    def validate_sizes(cls, v):
        """Sweep sizes must be positive and strictly increasing"""
        if not v:
            raise ValueError("sweep size list cannot be empty")
        if any(n < 1 for n in v):
            raise ValueError("sweep sizes must be >= 1")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("sweep sizes must be strictly increasing")
        return v


class NeurofieldConfig(BaseModel):
    """
    Complete configuration document.

    Cross-section checks (vector lengths against the dimension, probe times
    against the horizon) run after the sections validate individually.
    """

    domain: DomainSchema = Field(default_factory=DomainSchema, description="Spatial domain")
    dynamics: DynamicsSchema = Field(default_factory=DynamicsSchema, description="Single-neuron dynamics")
    coupling: CouplingSchema = Field(default_factory=CouplingSchema, description="Synaptic couplings")
    noise: NoiseSchema = Field(default_factory=NoiseSchema, description="Diffusion")
    initial: InitialSchema = Field(default_factory=InitialSchema, description="Initial law")
    grid: GridSchema = Field(default_factory=GridSchema, description="Time grid")
    run: RunSchema = Field(default_factory=RunSchema, description="Experiment settings")

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def validate_cross_sections(self):
        """Check vector lengths and probe times against the other sections"""
        dim = self.domain.dim
        vectors = {
            "dynamics.intrinsic.k": self.dynamics.intrinsic.k,
            "initial.profile.slope": self.initial.profile.slope,
            "initial.profile.wavevector": self.initial.profile.wavevector,
        }
        for name, vector in vectors.items():
            if vector is not None and len(vector) != dim:
                raise ValueError(f"{name} has length {len(vector)}, expected dim={dim}")

        lower = self.noise.lambda_lower
        if lower is not None and lower > self.noise.lambda0:
            raise ValueError(
                "assumption (5): diffusion lower bound violated, lambda0 is below lambda_lower"
            )

        if self.run.probe_times is not None:
            horizon = self.dynamics.horizon_T
            for t in self.run.probe_times:
                if t < 0 or t > horizon:
                    raise ValueError(f"probe time {t} outside [0, {horizon}]")
        return self


def validate_config(data: Dict[str, Any]) -> NeurofieldConfig:
    """
    Validate a configuration document.

    Args:
        data: Parsed document (``None`` is treated as an empty document)

    Returns:
        NeurofieldConfig: Validated configuration

    Raises:
        ValidationError: If validation fails
    """
    return NeurofieldConfig(**(data or {}))


__all__ = [
    "DensityKind",
    "DelayMode",
    "DomainSchema",
    "IntrinsicSchema",
    "SigmoidSchema",
    "DynamicsSchema",
    "MeanKernelSchema",
    "StdKernelSchema",
    "DelaySchema",
    "CouplingSchema",
    "NoiseSchema",
    "ProfileSchema",
    "InitialSchema",
    "GridSchema",
    "RunSchema",
    "NeurofieldConfig",
    "validate_config",
]
