from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any

import numpy as np

from .errors import InvalidParameterError


HARDY_EDGE = -0.25
MIN_NODES = 4


class Flavor(str, Enum):
    GENERAL = "general"
    RADIAL = "radial"


class Stencil(str, Enum):
    PLAIN = "plain"
    FITTED = "fitted"


class FormMode(str, Enum):
    DIRECT = "direct"
    SHIFTED = "shifted"


class Verdict(str, Enum):
    CROSSED_ZERO = "crossed_zero"
    DIVERGED = "diverged"
    DECAYED = "decayed"


class OutcomeKind(str, Enum):
    RAN_TO_HORIZON = "ran_to_horizon"
    BLOWUP_DETECTED = "blowup_detected"
    SCATTERING_DETECTED = "scattering_detected"


class Prediction(str, Enum):
    SCATTER = "scatter"
    BLOWUP = "blowup"
    NOT_APPLICABLE = "not_applicable_above_energy_threshold"
    INCONSISTENT_AT_K = "inconsistent_at_K"


class Observation(str, Enum):
    SCATTERED = "scattered"
    BLEW_UP = "blew_up"
    UNDECIDED = "undecided"


@dataclass(frozen=True)
class PotentialParam:
    """Coupling of the inverse-square potential and its near-origin exponent."""

    a: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.a) or self.a <= HARDY_EDGE:
            raise InvalidParameterError(
                f"coupling a={self.a!r} must satisfy a > -1/4 for a positive operator"
            )

    @property
    def sigma(self) -> float:
        return 0.5 - math.sqrt(0.25 + self.a)

    def to_dict(self) -> dict[str, Any]:
        return {"a": self.a, "sigma": self.sigma}


@dataclass(frozen=True)
class RadialGrid:
    """Uniform radial mesh r_j = j*h, j = 1..n, with r_max = n*h.

    The reduced field w = r*u vanishes at r = 0 and at node n (Dirichlet), so
    the evolution unknowns are the interior nodes 1..n-1.
    """

    r_max: float
    n: int

    def __post_init__(self) -> None:
        if not math.isfinite(self.r_max) or self.r_max <= 0:
            raise InvalidParameterError(f"r_max must be positive, got {self.r_max!r}")
        if self.n < MIN_NODES:
            raise InvalidParameterError(f"grid needs at least {MIN_NODES} nodes, got {self.n}")

    @property
    def h(self) -> float:
        return self.r_max / self.n

    @cached_property
    def r(self) -> np.ndarray:
        return self.h * np.arange(1, self.n + 1, dtype=float)

    @cached_property
    def weights(self) -> np.ndarray:
        weights = 4.0 * np.pi * self.r**2 * self.h
        weights[-1] *= 0.5
        return weights

    @property
    def interior(self) -> slice:
        return slice(0, self.n - 1)

    def integrate(self, density: np.ndarray) -> float:
        return float(np.dot(self.weights, density))

    def to_dict(self) -> dict[str, Any]:
        return {"r_max": self.r_max, "n": self.n, "h": self.h}


@dataclass
class RadialField:
    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.grid.n,):
            raise InvalidParameterError(
                f"field has {self.values.shape} samples, grid has {self.grid.n} nodes"
            )

    @classmethod
    def zeros(cls, grid: RadialGrid) -> RadialField:
        return cls(grid, np.zeros(grid.n, dtype=complex))

    @classmethod
    def from_reduced(cls, grid: RadialGrid, interior: np.ndarray) -> RadialField:
        values = np.zeros(grid.n, dtype=complex)
        values[grid.interior] = interior / grid.r[grid.interior]
        return cls(grid, values)

    @property
    def reduced(self) -> np.ndarray:
        """Interior samples of w = r*u, the variable the operator acts on."""
        return (self.grid.r * self.values)[self.grid.interior]

    @property
    def is_real(self) -> bool:
        return bool(np.all(self.values.imag == 0.0))

    def scaled(self, factor: complex) -> RadialField:
        return RadialField(self.grid, factor * self.values)

    def copy(self) -> RadialField:
        return RadialField(self.grid, self.values.copy())


@dataclass(frozen=True)
class Functionals:
    mass: float
    kinetic_a: float
    l4: float

    @property
    def energy_a(self) -> float:
        return 0.5 * self.kinetic_a - 0.25 * self.l4

    def to_dict(self) -> dict[str, Any]:
        return {
            "mass": self.mass,
            "kinetic_a": self.kinetic_a,
            "l4": self.l4,
            "energy_a": self.energy_a,
        }


@dataclass(frozen=True)
class Thresholds:
    c_constant: float
    energy_threshold: float
    k_threshold: float
    flavor: Flavor

    def to_dict(self) -> dict[str, Any]:
        return {
            "C": self.c_constant,
            "E_threshold": self.energy_threshold,
            "K_threshold": self.k_threshold,
            "flavor": self.flavor.value,
        }


@dataclass
class GroundStateResult:
    param: PotentialParam
    profile: RadialField
    shoot_c: float
    f: Functionals
    pohozaev_rho1: float
    pohozaev_rho2: float
    c_constant: float
    flavor: Flavor
    tol: float
    converged: bool = True
    method: str = "shooting"

    @property
    def peak(self) -> float:
        return float(np.max(self.profile.values.real))

    def to_record(self, thresholds: Thresholds | None = None) -> dict[str, Any]:
        record: dict[str, Any] = {
            "a": self.param.a,
            "flavor": self.flavor.value,
            "method": self.method,
            "C": self.c_constant,
            "rho1": self.pohozaev_rho1,
            "rho2": self.pohozaev_rho2,
            "shoot_c": self.shoot_c,
            "converged": self.converged,
            "functionals": self.f.to_dict(),
        }
        if thresholds is not None:
            record["E_threshold"] = thresholds.energy_threshold
            record["K_threshold"] = thresholds.k_threshold
        return record


@dataclass(frozen=True)
class EvolveConfig:
    dt: float
    t_final: float
    monitor_stride: int = 10
    blowup_factor: float = 100.0
    scatter_window: tuple[float, float] | None = None
    scatter_tol: float = 1e-2
    max_refinements: int = 4
    cn_theta: float = field(default=0.5, init=False)

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise InvalidParameterError(f"dt must be positive, got {self.dt!r}")
        if not self.t_final > 0:
            raise InvalidParameterError(f"t_final must be positive, got {self.t_final!r}")
        if self.monitor_stride < 1:
            raise InvalidParameterError("monitor_stride must be at least 1")
        if not self.blowup_factor > 1:
            raise InvalidParameterError("blowup_factor must exceed 1")
        if self.scatter_window is not None:
            t1, t2 = self.scatter_window
            if not 0 <= t1 < t2 <= self.t_final:
                raise InvalidParameterError(
                    f"scatter window ({t1}, {t2}) must satisfy 0 <= t1 < t2 <= t_final"
                )

    def to_dict(self) -> dict[str, Any]:
        return {
            "dt": self.dt,
            "t_final": self.t_final,
            "monitor_stride": self.monitor_stride,
            "blowup_factor": self.blowup_factor,
            "scatter_window": list(self.scatter_window) if self.scatter_window else None,
            "scatter_tol": self.scatter_tol,
            "max_refinements": self.max_refinements,
            "cn_theta": self.cn_theta,
        }


@dataclass(frozen=True)
class Sample:
    t: float
    f: Functionals
    V: float
    dV: float
    d2V: float
    modulus_deviation: float = 0.0


@dataclass(frozen=True)
class Outcome:
    kind: OutcomeKind
    t_star: float | None = None
    window: tuple[float, float] | None = None
    distance: float | None = None
    annotation: str | None = None

    @property
    def blew_up(self) -> bool:
        return self.kind is OutcomeKind.BLOWUP_DETECTED

    @property
    def scattered(self) -> bool:
        return self.kind is OutcomeKind.SCATTERING_DETECTED

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "t_star": self.t_star,
            "window": list(self.window) if self.window else None,
            "distance": self.distance,
            "annotation": self.annotation,
        }


@dataclass
class Trajectory:
    samples: list[Sample] = field(default_factory=list)
    outcome: Outcome | None = None
    final_dt: float | None = None
    refinements: int = 0
    snapshots: dict[float, RadialField] = field(default_factory=dict)

    def record(self, sample: Sample) -> None:
        if self.samples and sample.t <= self.samples[-1].t:
            raise ValueError(f"sample time {sample.t} does not advance past {self.samples[-1].t}")
        self.samples.append(sample)

    def conclude(self, outcome: Outcome) -> None:
        if self.outcome is not None:
            raise ValueError("trajectory outcome already set")
        self.outcome = outcome

    @property
    def times(self) -> np.ndarray:
        return np.array([sample.t for sample in self.samples])

    def series(self, name: str) -> np.ndarray:
        if name in {"mass", "kinetic_a", "l4", "energy_a"}:
            return np.array([getattr(sample.f, name) for sample in self.samples])
        return np.array([getattr(sample, name) for sample in self.samples])

    def max_relative_drift(self, name: str) -> float:
        values = self.series(name)
        if values.size == 0:
            return 0.0
        reference = abs(values[0]) or 1.0
        return float(np.max(np.abs(values - values[0])) / reference)


@dataclass
class Classification:
    """Prediction for a datum and, after an experiment, what the evolution did.

    ``predicted`` comes from the thresholds passed in. For a > 0 the radial
    thresholds are carried next to the a = 0 ones in ``radial_predicted`` and
    decide the experiment.
    """

    predicted: Prediction
    me_ratio: float
    mk_ratio: float
    thresholds: Thresholds
    observed: Observation | None = None
    radial_predicted: Prediction | None = None
    artifact: bool = False
    t_blowup: float | None = None
    scatter_distance: float | None = None
    trajectory: Trajectory | None = field(default=None, repr=False, compare=False)

    @property
    def flavor(self) -> Flavor:
        return self.thresholds.flavor

    @property
    def decisive(self) -> Prediction:
        return self.radial_predicted or self.predicted

    @property
    def agreement(self) -> bool | None:
        if self.observed is None:
            return None
        if self.decisive is Prediction.SCATTER:
            return self.observed is Observation.SCATTERED
        if self.decisive is Prediction.BLOWUP:
            return self.observed is Observation.BLEW_UP
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "predicted": self.predicted.value,
            "observed": self.observed.value if self.observed else None,
            "agreement": self.agreement,
            "ME_ratio": self.me_ratio,
            "MK_ratio": self.mk_ratio,
            "thresholds": self.thresholds.to_dict(),
            "radial_predicted": self.radial_predicted.value if self.radial_predicted else None,
            "artifact": self.artifact,
            "t_blowup": self.t_blowup,
            "scatter_distance": self.scatter_distance,
        }
