"""
Parametric model: intrinsic dynamics, sigmoid, coupling kernels, delays,
diffusion, spatial domain and initial law.

Each function family is a small class registered in a :class:`FamilyRegistry`
under a family id; :func:`build_model` looks the ids up, derives the
Lipschitz constants and sup-norms from the coefficients, and checks the
regularity assumptions on sampled grids before returning an immutable
:class:`ModelParams`.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Mapping, Optional, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import expit

from neurofield.models.schemas import NeurofieldConfig
from neurofield.services.config import apply_overrides, validate_document
from neurofield.services.errors import AssumptionViolation, ConfigurationError

logger = logging.getLogger(__name__)

SIGMOID_CHECK_POINTS = 2001
SIGMOID_SYMMETRY_TOL = 1e-12


# Function families

class IntrinsicDynamics(ABC):
    """Intrinsic drift f(r, t, x), vectorized over neurons."""

    @abstractmethod
    def __call__(self, r: np.ndarray, t: float, x: np.ndarray) -> np.ndarray:
        """Evaluate f at locations ``r`` (n, d), time ``t`` and states ``x`` (n,)."""

    @property
    @abstractmethod
    def lipschitz(self) -> float:
        """Joint Lipschitz constant K_f in (r, t, x)."""


class LeakyStimulus(IntrinsicDynamics):
    """f(r, t, x) = -a x + I0 cos(2 pi (omega t + <k, r>))."""

    def __init__(self, a: float, I0: float, omega: float, k: np.ndarray):
        self.a = a
        self.I0 = I0
        self.omega = omega
        self.k = np.asarray(k, dtype=float)

    def __call__(self, r, t, x):
        drift = -self.a * x
        if self.I0 != 0.0:
            phase = 2.0 * np.pi * (self.omega * t + r @ self.k)
            drift = drift + self.I0 * np.cos(phase)
        return drift

    @property
    def lipschitz(self) -> float:
        stim = 2.0 * np.pi * abs(self.I0)
        return float(math.sqrt(self.a**2 + (stim * self.omega) ** 2 + (stim * np.linalg.norm(self.k)) ** 2))


class Sigmoid(ABC):
    """Non-decreasing map into [0, 1]."""

    symmetric: bool = False

    @abstractmethod
    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the sigmoid elementwise."""

    @property
    @abstractmethod
    def lipschitz(self) -> float:
        """Lipschitz constant K_S."""


class Logistic(Sigmoid):
    """S(x) = 1 / (1 + exp(-g x))."""

    symmetric = True

    def __init__(self, gain: float):
        self.gain = gain

    def __call__(self, x):
        return expit(self.gain * np.asarray(x, dtype=float))

    @property
    def lipschitz(self) -> float:
        return self.gain / 4.0


class PairKernel(ABC):
    """Kernel of a pair of locations, evaluated on all pairs of two point sets."""

    @abstractmethod
    def __call__(self, r: np.ndarray, r2: np.ndarray) -> np.ndarray:
        """Return the (n, m) matrix of kernel values for ``r`` (n, d) and ``r2`` (m, d)."""

    @property
    @abstractmethod
    def sup_norm(self) -> float:
        """Declared sup-norm over D x D."""

    @property
    @abstractmethod
    def lipschitz(self) -> float:
        """Lipschitz constant in the second location."""


class ExponentialKernel(PairKernel):
    """amplitude * exp(-|r - r'| / length)."""

    def __init__(self, amplitude: float, length: float):
        self.amplitude = amplitude
        self.length = length

    def __call__(self, r, r2):
        return self.amplitude * np.exp(-cdist(r, r2) / self.length)

    @property
    def sup_norm(self) -> float:
        return abs(self.amplitude)

    @property
    def lipschitz(self) -> float:
        return abs(self.amplitude) / self.length


class ConstantKernel(PairKernel):
    """amplitude everywhere."""

    def __init__(self, amplitude: float):
        self.amplitude = amplitude

    def __call__(self, r, r2):
        return np.full((len(r), len(r2)), self.amplitude, dtype=float)

    @property
    def sup_norm(self) -> float:
        return abs(self.amplitude)

    @property
    def lipschitz(self) -> float:
        return 0.0


class InitialProfile(ABC):
    """Mean initial profile psi: D -> R."""

    @abstractmethod
    def __call__(self, r: np.ndarray) -> np.ndarray:
        """Evaluate psi at locations ``r`` (n, d)."""

    @property
    @abstractmethod
    def lipschitz(self) -> float:
        """Lipschitz constant K_psi."""


class AffineProfile(InitialProfile):
    """psi(r) = c + <w, r>."""

    def __init__(self, offset: float, slope: np.ndarray):
        self.offset = offset
        self.slope = np.asarray(slope, dtype=float)

    def __call__(self, r):
        return self.offset + r @ self.slope

    @property
    def lipschitz(self) -> float:
        return float(np.linalg.norm(self.slope))


class CosineProfile(InitialProfile):
    """psi(r) = c + A cos(2 pi <k, r>)."""

    def __init__(self, offset: float, amplitude: float, wavevector: np.ndarray):
        self.offset = offset
        self.amplitude = amplitude
        self.wavevector = np.asarray(wavevector, dtype=float)

    def __call__(self, r):
        return self.offset + self.amplitude * np.cos(2.0 * np.pi * (r @ self.wavevector))

    @property
    def lipschitz(self) -> float:
        return float(2.0 * np.pi * abs(self.amplitude) * np.linalg.norm(self.wavevector))


class SpatialDensity(ABC):
    """Probability density pi on the box domain."""

    def __init__(self, lower: np.ndarray, upper: np.ndarray):
        self.lower = lower
        self.upper = upper

    @abstractmethod
    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` i.i.d. locations, shape (n, d)."""


class UniformDensity(SpatialDensity):
    def sample(self, rng, n):
        return self.lower + (self.upper - self.lower) * rng.random((n, len(self.lower)))


class Beta22Density(SpatialDensity):
    """Product of Beta(2, 2) laws rescaled to each axis."""

    def sample(self, rng, n):
        return self.lower + (self.upper - self.lower) * rng.beta(2.0, 2.0, size=(n, len(self.lower)))


class FamilyRegistry:
    """Registry of built-in function families, keyed by (kind, family id)."""

    def __init__(self):
        self._factories: Dict[Tuple[str, str], Callable[..., Any]] = {}

    def register(self, kind: str, name: str, factory: Callable[..., Any]) -> None:
        """
        Register a family factory.

        Args:
            kind: Function role, e.g. ``"intrinsic"`` or ``"mean_kernel"``
            name: Family id used in configuration documents
            factory: Callable building the family from its schema section
        """
        self._factories[(kind, name)] = factory
        logger.debug(f"Registered {kind} family: {name}")

    def get(self, kind: str, name: str) -> Optional[Callable[..., Any]]:
        """Return the factory for a family, or None if unknown."""
        return self._factories.get((kind, name))

    def list_families(self, kind: str) -> Dict[str, str]:
        """Map family ids of one kind to their factory names."""
        return {
            name: getattr(factory, "__name__", repr(factory))
            for (k, name), factory in sorted(self._factories.items())
            if k == kind
        }

    def create(self, kind: str, name: str, *args: Any) -> Any:
        """
        Build a family instance.

        Raises:
            ConfigurationError: If the family id is unknown
        """
        factory = self.get(kind, name)
        if factory is None:
            known = ", ".join(self.list_families(kind)) or "none"
            raise ConfigurationError(f"unknown {kind} family '{name}' (known: {known})")
        return factory(*args)


families = FamilyRegistry()


def _zeros_if_none(vector, dim: int) -> np.ndarray:
    return np.zeros(dim) if vector is None else np.asarray(vector, dtype=float)


families.register(
    "intrinsic", "leaky_stimulus",
    lambda s, dim: LeakyStimulus(s.a, s.I0, s.omega, _zeros_if_none(s.k, dim)),
)
families.register("sigmoid", "logistic", lambda s, dim: Logistic(s.gain))
families.register("mean_kernel", "exponential", lambda s, dim: ExponentialKernel(s.J0, s.length))
families.register("mean_kernel", "constant", lambda s, dim: ConstantKernel(s.J0))
families.register("std_kernel", "exponential", lambda s, dim: ExponentialKernel(s.sigma0, s.length))
families.register("std_kernel", "constant", lambda s, dim: ConstantKernel(s.sigma0))
families.register(
    "profile", "affine",
    lambda s, dim: AffineProfile(s.offset, _zeros_if_none(s.slope, dim)),
)
families.register(
    "profile", "cosine",
    lambda s, dim: CosineProfile(s.offset, s.amplitude, _zeros_if_none(s.wavevector, dim)),
)
families.register("density", "uniform", UniformDensity)
families.register("density", "beta22", Beta22Density)


# Model data

@dataclass(frozen=True)
class SpatialDomain:
    """Box D with a location density."""
    lower: np.ndarray
    upper: np.ndarray
    density: SpatialDensity

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def contains(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        """Boolean mask of points inside D (up to ``tol``)."""
        points = np.atleast_2d(points)
        return np.all((points >= self.lower - tol) & (points <= self.upper + tol), axis=1)

    def lattice(self, per_axis: int, cell_centred: bool = True) -> np.ndarray:
        """
        Regular lattice of points in D.

        Args:
            per_axis: Points per axis
            cell_centred: Use cell centres; otherwise include the box corners

        Returns:
            Array of shape (per_axis ** d, d)
        """
        axes = []
        for lo, hi in zip(self.lower, self.upper):
            if cell_centred:
                axes.append(lo + (np.arange(per_axis) + 0.5) * (hi - lo) / per_axis)
            else:
                axes.append(np.linspace(lo, hi, per_axis))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True)
class LipschitzConstants:
    """Declared Lipschitz constants and sup-norms of the model functions."""
    K_f: float
    K_S: float
    K_J: float
    K_sigma: float
    K_tau: float
    K_lambda: float
    J_sup: float
    sigma_sup: float


@dataclass(frozen=True)
class InitialLaw:
    """x0_s(r) = psi(r) + s0 eta_s with eta a Brownian path started at -tau_bar."""
    profile: InitialProfile
    noise_scale: float
    lipschitz_C0: float


@dataclass(frozen=True)
class ModelParams:
    """
    Validated, immutable model.

    Safe to share read-only across worker threads. The validated configuration
    document is kept so derived models can be rebuilt with overrides.
    """

    config: NeurofieldConfig
    domain: SpatialDomain
    f: IntrinsicDynamics
    S: Sigmoid
    J_kernel: PairKernel
    sigma_kernel: PairKernel
    tau0: float
    c_tau: float
    lambda0: float
    lambda_star: float
    horizon_T: float
    initial: InitialLaw
    constants: LipschitzConstants
    tau_bar: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "tau_bar", self.tau0 + self.c_tau * self.domain.diameter)

    @property
    def dt(self) -> float:
        return self.config.grid.dt

    @property
    def delay_mode(self) -> str:
        return self.config.grid.delay_mode

    def tau(self, r: np.ndarray, r2: np.ndarray) -> np.ndarray:
        """Delay matrix tau(r_i, r2_j), shape (n, m)."""
        return self.tau0 + self.c_tau * cdist(r, r2)

    def diffusion(self, r: np.ndarray) -> np.ndarray:
        """lambda(r) for locations ``r`` (n, d)."""
        return np.full(len(r), self.lambda0, dtype=float)

    def derive(self, overrides: Mapping[str, Any]) -> "ModelParams":
        """Rebuild the model from the stored document with dotted-key overrides."""
        data = apply_overrides(self.config.model_dump(mode="json"), overrides)
        return build_model(validate_document(data, "<derived>"))


def build_model(config: Union[NeurofieldConfig, Mapping[str, Any]]) -> ModelParams:
    """
    Build and validate a model from a configuration.

    Args:
        config: Validated configuration or a raw document

    Returns:
        ModelParams: Model with derived tau_bar, lambda* and Lipschitz constants

    Raises:
        ConfigurationError: Unknown family id or schema failure
        AssumptionViolation: A sampled regularity check fails
    """
    if not isinstance(config, NeurofieldConfig):
        config = validate_document(dict(config), "<document>")

    dim = config.domain.dim
    bounds = np.asarray(config.domain.bounds, dtype=float)
    lower, upper = bounds[:, 0], bounds[:, 1]
    density = families.create("density", config.domain.density, lower, upper)
    domain = SpatialDomain(lower=lower, upper=upper, density=density)

    dyn = config.dynamics
    coupling = config.coupling
    f = families.create("intrinsic", dyn.intrinsic.family, dyn.intrinsic, dim)
    S = families.create("sigmoid", dyn.sigmoid.family, dyn.sigmoid, dim)
    J_kernel = families.create("mean_kernel", coupling.mean.family, coupling.mean, dim)
    sigma_kernel = families.create("std_kernel", coupling.std.family, coupling.std, dim)
    profile = families.create("profile", config.initial.profile.family, config.initial.profile, dim)

    K_psi = profile.lipschitz
    C0 = config.initial.lipschitz_C0
    if C0 is None:
        C0 = K_psi**2
    elif K_psi**2 > C0 * (1.0 + 1e-12):
        raise AssumptionViolation(
            "(initial regularity)",
            f"profile Lipschitz constant squared {K_psi**2:g} exceeds declared C0 {C0:g}",
        )

    lambda0 = config.noise.lambda0
    lambda_star = config.noise.lambda_lower if config.noise.lambda_lower is not None else lambda0

    constants = LipschitzConstants(
        K_f=f.lipschitz,
        K_S=S.lipschitz,
        K_J=J_kernel.lipschitz,
        K_sigma=sigma_kernel.lipschitz,
        K_tau=coupling.delay.c_tau,
        K_lambda=0.0,
        J_sup=J_kernel.sup_norm,
        sigma_sup=sigma_kernel.sup_norm,
    )

    params = ModelParams(
        config=config,
        domain=domain,
        f=f,
        S=S,
        J_kernel=J_kernel,
        sigma_kernel=sigma_kernel,
        tau0=coupling.delay.tau0,
        c_tau=coupling.delay.c_tau,
        lambda0=lambda0,
        lambda_star=lambda_star,
        horizon_T=dyn.horizon_T,
        initial=InitialLaw(profile=profile, noise_scale=config.initial.noise_scale, lipschitz_C0=C0),
        constants=constants,
    )
    _check_sampled_assumptions(params)
    logger.info(
        f"Built model: d={dim}, T={params.horizon_T:g}, tau_bar={params.tau_bar:g}, "
        f"|J|={constants.J_sup:g}, |sigma|={constants.sigma_sup:g}, lambda*={lambda_star:g}"
    )
    return params


def _check_sampled_assumptions(params: ModelParams) -> None:
    """Check the regularity assumptions on sampled grids."""
    span = 50.0 / max(params.S.lipschitz, 1e-12)
    x = np.linspace(-span, span, SIGMOID_CHECK_POINTS)
    s = params.S(x)
    if np.any(s < 0.0) or np.any(s > 1.0):
        raise AssumptionViolation("(2)", "sigmoid leaves [0, 1] on the check grid")
    if np.any(np.diff(s) < 0.0):
        raise AssumptionViolation("(2)", "sigmoid is not non-decreasing on the check grid")
    if params.S.symmetric and np.max(np.abs(s + params.S(-x) - 1.0)) > SIGMOID_SYMMETRY_TOL:
        raise AssumptionViolation("(2)", "sigmoid violates S(x) + S(-x) = 1")

    per_axis = max(2, int(round(64 ** (1.0 / params.domain.dim))))
    points = params.domain.lattice(per_axis, cell_centred=False)

    lam = params.diffusion(points)
    if np.any(lam < params.lambda_star):
        raise AssumptionViolation(
            "(5)", "diffusion lower bound violated, lambda(r) falls below lambda lower bound"
        )

    tau = params.tau(points, points)
    if np.any(tau < 0.0) or np.any(tau > params.tau_bar * (1.0 + 1e-12) + 1e-15):
        raise AssumptionViolation("(4)", "delay leaves [0, tau_bar] on sampled pairs")

    c = params.constants
    J = params.J_kernel(points, points)
    sigma = params.sigma_kernel(points, points)
    if np.max(np.abs(J)) > c.J_sup * (1.0 + 1e-12):
        raise AssumptionViolation("(3)", "declared sup-norm of J is exceeded on sampled pairs")
    if np.any(sigma < 0.0) or np.max(sigma) > c.sigma_sup * (1.0 + 1e-12):
        raise AssumptionViolation("(3)", "sigma leaves [0, sup-norm] on sampled pairs")


def eval_kernels(params: ModelParams, r, r2) -> Tuple[float, float, float]:
    """
    Evaluate J, sigma and tau at one pair of locations.

    Raises:
        ValueError: If either point lies outside D
    """
    a = np.atleast_2d(np.asarray(r, dtype=float))
    b = np.atleast_2d(np.asarray(r2, dtype=float))
    if a.shape != (1, params.domain.dim) or b.shape != (1, params.domain.dim):
        raise ValueError(f"points must have dimension {params.domain.dim}")
    if not (params.domain.contains(a)[0] and params.domain.contains(b)[0]):
        raise ValueError("point outside domain D")
    J_val = float(params.J_kernel(a, b)[0, 0])
    sigma_val = float(params.sigma_kernel(a, b)[0, 0])
    tau_val = float(min(params.tau(a, b)[0, 0], params.tau_bar))
    return J_val, sigma_val, tau_val


def full_ldp_horizon(params: ModelParams) -> float:
    """
    Horizon below which the large-deviations upper bound holds for all closed sets.

    Equals lambda*^2 / (2 |sigma|^2 |S|^2) with |S| = 1; infinite without disorder.
    """
    sigma_sup = params.constants.sigma_sup
    if sigma_sup == 0.0:
        return math.inf
    return params.lambda_star**2 / (2.0 * sigma_sup**2)
