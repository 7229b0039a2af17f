"""Virial moments V(t; w) = ∫|u|²w and their time-derivative formulas under radial symmetry."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from .errors import InvalidParameterError, TailTruncationWarning
from .models import PotentialParam, RadialField
from .operator import functionals_of, quadratic_form


__all__ = [
    "PLATEAU",
    "TruncatedTerms",
    "VirialWeight",
    "WeightKind",
    "blowup_time_bound",
    "d2V_full_formula",
    "d2V_truncated_terms",
    "dV_formula",
    "moment",
    "radial_tail_bound",
]

# value of the truncated profile beyond s = 3; the derivative bounds cap the climb from s = 1
PLATEAU = 19.0 / 6.0
BOUNDARY_FRACTION = 1e-4


class WeightKind(str, Enum):
    FULL_SQUARE = "full_square"
    TRUNCATED = "truncated"


def _profile(s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """φ, φ' and φ'' of the radial cutoff profile.

    φ = s² up to s = 1; beyond, φ'' runs linearly from 2 to -2 on [1, 1.5],
    stays at -2 on [1.5, 2] and returns linearly to 0 at s = 3, where φ
    reaches its plateau.
    """
    s = np.asarray(s, dtype=float)
    phi = np.full_like(s, PLATEAU)
    d1 = np.zeros_like(s)
    d2 = np.zeros_like(s)

    inner = s <= 1.0
    phi[inner] = s[inner] ** 2
    d1[inner] = 2.0 * s[inner]
    d2[inner] = 2.0

    bend = (s > 1.0) & (s <= 1.5)
    t = s[bend] - 1.0
    phi[bend] = 1.0 + 2.0 * t + t**2 - 4.0 / 3.0 * t**3
    d1[bend] = 2.0 + 2.0 * t - 4.0 * t**2
    d2[bend] = 2.0 - 8.0 * t

    flat = (s > 1.5) & (s <= 2.0)
    t = s[flat] - 1.5
    phi[flat] = 25.0 / 12.0 + 2.0 * t - t**2
    d1[flat] = 2.0 - 2.0 * t
    d2[flat] = -2.0

    ease = (s > 2.0) & (s <= 3.0)
    t = 1.0 - (s[ease] - 2.0)
    phi[ease] = 17.0 / 6.0 + (1.0 - t**3) / 3.0
    d1[ease] = t**2
    d2[ease] = -2.0 * t
    return phi, d1, d2


def _profile_third(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    d3 = np.zeros_like(s)
    d3[(s > 1.0) & (s <= 1.5)] = -8.0
    d3[(s > 2.0) & (s <= 3.0)] = 2.0
    return d3


@dataclass(frozen=True)
class VirialWeight:
    kind: WeightKind = WeightKind.FULL_SQUARE
    radius: float | None = None

    def __post_init__(self) -> None:
        if WeightKind(self.kind) is WeightKind.TRUNCATED:
            if self.radius is None or not self.radius > 1.0:
                raise InvalidParameterError(f"truncated weight needs R > 1, got {self.radius!r}")

    @classmethod
    def full(cls) -> VirialWeight:
        return cls(WeightKind.FULL_SQUARE)

    @classmethod
    def truncated(cls, radius: float) -> VirialWeight:
        return cls(WeightKind.TRUNCATED, float(radius))

    @property
    def is_full(self) -> bool:
        return WeightKind(self.kind) is WeightKind.FULL_SQUARE

    def evaluate(self, r: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """w, w' and w'' at the radii r."""
        r = np.asarray(r, dtype=float)
        if self.is_full:
            return r**2, 2.0 * r, np.full_like(r, 2.0)
        R = self.radius
        phi, d1, d2 = _profile(r / R)
        return R**2 * phi, R * d1, d2

    def laplacian(self, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Δw = w'' + 2w'/r and its radial derivative."""
        r = np.asarray(r, dtype=float)
        if self.is_full:
            return np.full_like(r, 6.0), np.zeros_like(r)
        R = self.radius
        s = r / R
        _, d1, d2 = _profile(s)
        lap = d2 + 2.0 * d1 / s
        slope = (_profile_third(s) + 2.0 * d2 / s - 2.0 * d1 / s**2) / R
        return lap, slope

    def satisfies_bounds(self, r: np.ndarray, *, slack: float = 1e-12) -> bool:
        """Check w ≥ 0, |∇φ| ≤ 2|x| and both Hessian eigenvalues of φ within [-2, 2]."""
        if self.is_full:
            return True
        s = np.asarray(r, dtype=float) / self.radius
        phi, d1, d2 = _profile(s)
        return bool(
            np.all(phi >= 0.0)
            and np.all(np.abs(d1) <= 2.0 * s + slack)
            and np.all(np.abs(d2) <= 2.0 + slack)
            and np.all(np.abs(d1 / s) <= 2.0 + slack)
        )


def _factored(u: RadialField, p: PotentialParam) -> tuple[np.ndarray, np.ndarray]:
    r = u.grid.r
    v = u.values * r**p.sigma
    dv = np.gradient(v, u.grid.h, edge_order=2)
    return v, r**-p.sigma * (dv - p.sigma * v / r)


def moment(u: RadialField, weight: VirialWeight) -> float:
    g = u.grid
    w, _, _ = weight.evaluate(g.r)
    contributions = g.weights * w * np.abs(u.values) ** 2
    total = float(np.sum(contributions))
    if weight.is_full and total > 0.0:
        edge = float(np.sum(contributions[-max(2, g.n // 20) :]))
        if edge > BOUNDARY_FRACTION * total:
            warnings.warn(
                f"full virial moment draws {edge / total:.2e} of its value from the grid edge",
                TailTruncationWarning,
                stacklevel=2,
            )
    return total


def dV_formula(u: RadialField, p: PotentialParam, weight: VirialWeight) -> float:
    """∫ 2 Im(ū u_r) w' over the ball."""
    g = u.grid
    v = u.values * g.r**p.sigma
    dv = np.gradient(v, g.h, edge_order=2)
    # the -σv/r part of u_r is real against ū and drops out
    current = g.r ** (-2.0 * p.sigma) * np.imag(np.conj(v) * dv)
    _, slope, _ = weight.evaluate(g.r)
    return 2.0 * g.integrate(current * slope)


def d2V_full_formula(u: RadialField, p: PotentialParam) -> float:
    f = functionals_of(u, p)
    return 8.0 * (f.kinetic_a - 0.75 * f.l4)


class TruncatedTerms(NamedTuple):
    main: float
    exterior_correction: float
    error_band: float
    remainder: float

    @property
    def total(self) -> float:
        return self.main + self.exterior_correction + self.remainder


def d2V_truncated_terms(u: RadialField, p: PotentialParam, R: float) -> TruncatedTerms:
    g = u.grid
    if not 1.0 < R < g.r_max / 3.0:
        raise InvalidParameterError(f"truncation radius must satisfy 1 < R < r_max/3, got {R!r}")
    weight = VirialWeight.truncated(R)
    r = g.r
    outside = r > R
    _, d1, d2 = weight.evaluate(r)
    lap, lap_slope = weight.laplacian(r)

    main = d2V_full_formula(u, p)
    _, du = _factored(u, p)
    density = np.abs(u.values) ** 2
    gradient2 = np.abs(du) ** 2
    exterior = (
        4.0 * gradient2 * d2
        + 4.0 * p.a * density * d1 / r**3
        - 8.0 * (gradient2 + p.a * density / r**2)
    )
    density_slope = np.gradient(density, g.h, edge_order=2)
    rest = lap_slope * density_slope + (6.0 - lap) * density**2
    band = density / R**2 + density**2

    mask = outside.astype(float)
    return TruncatedTerms(
        main=main,
        exterior_correction=g.integrate(exterior * mask),
        error_band=g.integrate(band * (r >= R)),
        remainder=g.integrate(rest * mask),
    )


def radial_tail_bound(u: RadialField, p: PotentialParam, R: float) -> tuple[float, float]:
    """Return (∫_{r>R}|u|⁴, (2π)⁻¹R⁻²M^{3/2}‖∇u‖₂) for a radial field."""
    g = u.grid
    density = np.abs(u.values) ** 2
    tail = g.integrate(density**2 * (g.r > R))
    mass = functionals_of(u, p).mass
    gradient = quadratic_form(u, PotentialParam(0.0))
    return tail, mass**1.5 * math.sqrt(gradient) / (2.0 * math.pi * R**2)


def blowup_time_bound(V: float, dV: float, c: float) -> float:
    """Latest time at which V'' ≤ -c still leaves V positive."""
    if not c > 0:
        raise InvalidParameterError(f"concavity constant must be positive, got {c!r}")
    if V < 0:
        raise InvalidParameterError("virial moment is non-negative")
    return (dV + math.sqrt(dV**2 + 2.0 * c * V)) / c
