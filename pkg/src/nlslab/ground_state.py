"""Ground states, sharp Gagliardo-Nirenberg constants and the thresholds they fix.

Two independent solvers produce the soliton: radial shooting with bisection on
the amplitude and a normalized gradient ascent on the Gagliardo-Nirenberg
quotient. Shooting works on v = r^σ Q, which is smooth at the origin for the
Friedrichs branch Q ~ r^(-σ).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy import special
from scipy.integrate import solve_ivp
from scipy.linalg import solve_banded

from .errors import BracketError, InvalidParameterError, OptimizerStallError, UnconvergedWarning
from .evolution import rescale
from .models import (
    Flavor,
    Functionals,
    GroundStateResult,
    PotentialParam,
    RadialField,
    RadialGrid,
    Stencil,
    Thresholds,
    Verdict,
)
from .operator import assemble_operator, functionals_of


__all__ = [
    "CoercivityReport",
    "Shot",
    "coercivity_windows",
    "gradient_flow_optimizer",
    "polish_on_grid",
    "shoot",
    "solve_ground_state",
    "thresholds_from",
]


logger = logging.getLogger(__name__)

AMPLITUDE_RANGE = (1e-3, 1e3)
AMPLITUDE_SCAN_RATIO = 1.5
DIVERGENCE_FACTOR = 10.0
DECAY_FLOOR = 1e-8
TAIL_FRACTION = 1e-6
AGREEMENT = 1e-3
POHOZAEV_FLOOR = 1e-4
GN_FACTOR = 4.0 * 3.0**-1.5
NORMALIZATION_PASSES = 4

FLOW_STEP = 1e-2
FLOW_MAX_REJECTIONS = 100
FLOW_MAX_STEPS = 200_000


@dataclass(frozen=True)
class Shot:
    profile: RadialField
    verdict: Verdict
    reach: int
    diagnostic: str = ""

    @property
    def q(self) -> np.ndarray:
        return self.profile.values.real[: self.reach]


def _series_start(sigma: float, c: float, r0: float, terms: int) -> tuple[float, float]:
    # v = c[1 + r²/(2(3-2σ))] - c³ r^(2-2σ)/((2-2σ)(3-4σ)) solves the v-equation to two terms
    if terms == 1:
        return c, 0.0
    v = c * (1.0 + r0**2 / (2.0 * (3.0 - 2.0 * sigma)))
    v -= c**3 * r0 ** (2.0 - 2.0 * sigma) / ((2.0 - 2.0 * sigma) * (3.0 - 4.0 * sigma))
    dv = c * r0 / (3.0 - 2.0 * sigma) - c**3 * r0 ** (1.0 - 2.0 * sigma) / (3.0 - 4.0 * sigma)
    return v, dv


def _terminal(fn, direction: float):
    fn.terminal = True
    fn.direction = direction
    return fn


def shoot(p: PotentialParam, c: float, g: RadialGrid, *, series_terms: int = 2) -> Shot:
    """Integrate Q'' + (2/r)Q' - (a/r²)Q - Q + Q³ = 0 outward from r₀ = h."""
    if not c > 0:
        raise InvalidParameterError(f"shooting amplitude must be positive, got {c!r}")
    sigma = p.sigma
    r0 = g.h
    limit = DIVERGENCE_FACTOR * c * max(1.0, r0**-sigma)

    def rhs(r: float, y: np.ndarray) -> list[float]:
        v, dv = y
        return [dv, -(2.0 - 2.0 * sigma) * dv / r + v - r ** (-2.0 * sigma) * v**3]

    crossing = _terminal(lambda r, y: y[0], -1.0)
    blowing = _terminal(lambda r, y: r**-sigma * y[0] - limit, 1.0)
    # Q' = r^(-σ)(v' - σv/r) turning positive after the peak
    turning = _terminal(lambda r, y: y[1] - sigma * y[0] / r, 1.0)

    y0 = _series_start(sigma, c, r0, series_terms)
    solution = solve_ivp(
        rhs,
        (r0, g.r_max),
        y0,
        method="DOP853",
        t_eval=g.r,
        events=(crossing, blowing, turning),
        rtol=1e-12,
        atol=1e-14 * max(1.0, c),
    )
    reach = solution.t.size
    values = np.zeros(g.n)
    values[:reach] = solution.t ** -sigma * solution.y[0]
    profile = RadialField(g, values)

    if solution.status == -1:
        return Shot(profile, Verdict.DIVERGED, reach, f"integrator failed: {solution.message}")
    if solution.t_events[0].size:
        return Shot(profile, Verdict.CROSSED_ZERO, reach, f"zero at r={solution.t_events[0][0]:.6g}")
    if solution.t_events[1].size:
        return Shot(profile, Verdict.DIVERGED, reach, f"exceeded {limit:.3g}")
    if solution.t_events[2].size:
        return Shot(profile, Verdict.DIVERGED, reach, f"turned upward at r={solution.t_events[2][0]:.6g}")
    if reach == g.n and abs(values[-1]) < DECAY_FLOOR:
        return Shot(profile, Verdict.DECAYED, reach)
    return Shot(profile, Verdict.DIVERGED, reach, "did not decay by r_max")


def _find_bracket(p: PotentialParam, g: RadialGrid, series_terms: int) -> tuple[Shot, float, Shot, float]:
    lo, hi = AMPLITUDE_RANGE
    count = int(math.ceil(math.log(hi / lo) / math.log(AMPLITUDE_SCAN_RATIO))) + 1
    previous: tuple[Shot, float] | None = None
    for c in np.geomspace(lo, hi, count):
        shot = shoot(p, float(c), g, series_terms=series_terms)
        logger.debug("scan a=%g c=%.6g -> %s %s", p.a, c, shot.verdict.value, shot.diagnostic)
        if shot.verdict is Verdict.DECAYED:
            return shot, float(c), shot, float(c)
        if previous is not None and previous[0].verdict is not shot.verdict:
            return previous[0], previous[1], shot, float(c)
        previous = (shot, float(c))
    raise BracketError(
        f"no shooting bracket for a={p.a} in c in [{lo:g}, {hi:g}] on r_max={g.r_max}, n={g.n}"
    )


def _reliable_reach(low: Shot, high: Shot) -> int:
    """Number of leading nodes on which both bracket profiles agree."""
    reach = min(low.reach, high.reach)
    q_low, q_high = low.q[:reach], high.q[:reach]
    scale = np.minimum(np.abs(q_low), np.abs(q_high))
    apart = np.abs(q_low - q_high) > AGREEMENT * scale
    if np.any(apart):
        return int(np.argmax(apart))
    return reach


def _tail_resolved(q: np.ndarray, reach: int) -> bool:
    peak = float(np.max(q[:reach])) if reach else 0.0
    return reach > 0 and peak > 0 and bool(np.any(q[:reach] < TAIL_FRACTION * peak))


def _patch_tail(p: PotentialParam, q: np.ndarray, reach: int, g: RadialGrid) -> np.ndarray:
    """Continue Q past the last reliable node with the decaying linear solution."""
    peak_index = int(np.argmax(q[:reach]))
    peak = q[peak_index]
    above = np.nonzero(q[peak_index:reach] >= TAIL_FRACTION * peak)[0]
    patch = peak_index + int(above[-1]) if above.size else peak_index
    nu = math.sqrt(0.25 + p.a)
    r = g.r
    profile = q.copy()
    tail = r[patch:]
    ratio = special.kve(nu, tail) / special.kve(nu, r[patch])
    profile[patch:] = q[patch] * ratio * np.exp(-(tail - r[patch])) * np.sqrt(r[patch] / tail)
    logger.info("tail patched at r=%.4g (Q=%.3e)", r[patch], q[patch])
    return profile


def _pohozaev(f: Functionals) -> tuple[float, float]:
    return abs(f.mass - f.kinetic_a / 3.0) / f.mass, abs(f.mass - f.l4 / 4.0) / f.mass


def _finish(
    p: PotentialParam,
    profile: RadialField,
    shoot_c: float,
    flavor: Flavor,
    tol: float,
    method: str,
) -> GroundStateResult:
    f = functionals_of(profile, p)
    rho1, rho2 = _pohozaev(f)
    converged = max(rho1, rho2) <= max(10.0 * tol, POHOZAEV_FLOOR)
    if not converged:
        warnings.warn(
            f"ground state for a={p.a} ({method}) has Pohozaev residuals "
            f"rho1={rho1:.2e}, rho2={rho2:.2e}",
            UnconvergedWarning,
            stacklevel=3,
        )
    return GroundStateResult(
        param=p,
        profile=profile,
        shoot_c=shoot_c,
        f=f,
        pohozaev_rho1=rho1,
        pohozaev_rho2=rho2,
        c_constant=GN_FACTOR / f.mass,
        flavor=flavor,
        tol=tol,
        converged=converged,
        method=method,
    )


def _check_request(p: PotentialParam, tol: float, flavor: Flavor) -> None:
    if not 0 < tol <= 1e-3:
        raise InvalidParameterError(f"tol must lie in (0, 1e-3], got {tol!r}")
    if flavor is Flavor.GENERAL and p.a > 0:
        raise InvalidParameterError(
            "for a > 0 the unrestricted optimizer is not attained; use the radial flavor "
            "or the a = 0 constant"
        )


def solve_ground_state(
    p: PotentialParam,
    g: RadialGrid,
    tol: float,
    flavor: Flavor = Flavor.GENERAL,
    *,
    series_terms: int = 2,
) -> GroundStateResult:
    flavor = Flavor(flavor)
    _check_request(p, tol, flavor)
    low, c_low, high, c_high = _find_bracket(p, g, series_terms)
    logger.info("bracket for a=%g: c in [%.6g, %.6g]", p.a, c_low, c_high)

    iterations = 0
    while c_low != c_high:
        middle = 0.5 * (c_low + c_high)
        if middle in (c_low, c_high):
            break
        shot = shoot(p, middle, g, series_terms=series_terms)
        iterations += 1
        if shot.verdict is Verdict.DECAYED:
            low = high = shot
            c_low = c_high = middle
            break
        if shot.verdict is low.verdict:
            low, c_low = shot, middle
        else:
            high, c_high = shot, middle
        if (c_high - c_low) / c_high <= tol:
            reach = _reliable_reach(low, high)
            if _tail_resolved(low.q, reach):
                break

    reach = _reliable_reach(low, high)
    if not _tail_resolved(low.q, reach):
        logger.warning("a=%g: shooting profile never reached the tail floor; patching early", p.a)
    logger.info("bisection for a=%g finished after %d shots, c*=%.15g", p.a, iterations, c_low)
    values = _patch_tail(p, low.profile.values.real, reach, g)
    c_star = 0.5 * (c_low + c_high)
    return _finish(p, RadialField(g, values), c_star, flavor, tol, "shooting")


def _flow_functionals(w: np.ndarray, aw: np.ndarray, r: np.ndarray, h: float) -> tuple[float, float, float]:
    scale = 4.0 * np.pi * h
    return scale * np.dot(w, w), scale * np.dot(w, aw), scale * np.dot(w**2, (w / r) ** 2)


def gradient_flow_optimizer(
    p: PotentialParam,
    g: RadialGrid,
    tol: float,
    flavor: Flavor | None = None,
    *,
    on_step=None,
) -> GroundStateResult:
    """Maximize the Gagliardo-Nirenberg quotient by a normalized semi-implicit ascent.

    Each step solves (I + 3τA/K) w⁺ = w + τ(4w³/(r²L4) - w/M), the ascent
    direction of log J with the stiff part taken implicitly, then restores unit
    mass. The seed width gives unit kinetic form at a = 0; J is dilation
    invariant, so the optimizer is brought to the soliton normalization once at
    the end.
    """
    flavor = Flavor(flavor) if flavor is not None else (Flavor.RADIAL if p.a > 0 else Flavor.GENERAL)
    _check_request(p, tol, flavor)
    op = assemble_operator(p, g, Stencil.FITTED)
    r = g.r[g.interior]
    h = g.h

    w = r * np.exp(-(r**2) / 3.0)
    mass, kinetic, l4 = _flow_functionals(w, op.matvec(w), r, h)
    w /= math.sqrt(mass)
    mass, kinetic, l4 = _flow_functionals(w, op.matvec(w), r, h)
    j_value = l4 / (mass**0.5 * kinetic**1.5)

    tau = FLOW_STEP
    rejections = 0
    converged = False
    for step in range(FLOW_MAX_STEPS):
        rhs = w + tau * (4.0 * w**3 / (r**2 * l4) - w / mass)
        candidate = solve_banded((1, 1), op.banded(1.0, 3.0 * tau / kinetic), rhs)
        candidate /= math.sqrt(4.0 * np.pi * h * np.dot(candidate, candidate))
        c_mass, c_kinetic, c_l4 = _flow_functionals(candidate, op.matvec(candidate), r, h)
        c_value = c_l4 / (c_mass**0.5 * c_kinetic**1.5)
        if c_value < j_value:
            tau *= 0.5
            rejections += 1
            logger.debug("flow step %d lost ground, tau -> %.3g", step, tau)
            if rejections >= FLOW_MAX_REJECTIONS:
                raise OptimizerStallError(
                    f"gradient flow for a={p.a} failed to increase J over "
                    f"{FLOW_MAX_REJECTIONS} consecutive steps"
                )
            continue
        rejections = 0
        increment = (c_value - j_value) / j_value
        w, mass, kinetic, l4, j_value = candidate, c_mass, c_kinetic, c_l4, c_value
        if on_step is not None:
            on_step(step, j_value)
        if increment <= tol * (tau / FLOW_STEP):
            converged = True
            break
    if not converged:
        logger.warning("gradient flow for a=%g stopped at the step cap", p.a)
    logger.info("gradient flow for a=%g: J=%.10g", p.a, j_value)

    profile = RadialField.from_reduced(g, w)
    # Q(r) = μ f(νr) with ν² = 3M/K and μ² = 4M/L4 satisfies both Pohozaev identities.
    # The node sums above skip the origin term, so the factors come from functionals_of.
    for _ in range(NORMALIZATION_PASSES):
        f = functionals_of(profile, p)
        nu = math.sqrt(3.0 * f.mass / f.kinetic_a)
        mu = math.sqrt(4.0 * f.mass / f.l4)
        profile = rescale(profile, nu, p).scaled(mu / nu)
        profile = RadialField(g, np.clip(profile.values.real, 0.0, None))
        if max(abs(nu - 1.0), abs(mu - 1.0)) <= tol:
            break
    v0 = abs(4.0 * profile.values[0] * g.r[0] ** p.sigma - profile.values[1] * g.r[1] ** p.sigma) / 3.0
    return _finish(p, profile, float(v0), flavor, tol, "gradient_flow")


def thresholds_from(
    source: GroundStateResult | float, flavor: Flavor | None = None
) -> Thresholds:
    if isinstance(source, GroundStateResult):
        flavor = Flavor(flavor) if flavor is not None else source.flavor
        if flavor is Flavor.GENERAL and source.param.a > 0:
            raise InvalidParameterError(
                "general thresholds for a > 0 use the a = 0 constant; pass it explicitly"
            )
        constant = source.c_constant
    else:
        constant = float(source)
        flavor = Flavor(flavor) if flavor is not None else Flavor.GENERAL
    if not constant > 0:
        raise InvalidParameterError(f"sharp constant must be positive, got {constant!r}")
    return Thresholds(
        c_constant=constant,
        energy_threshold=8.0 / 27.0 / constant**2,
        k_threshold=4.0 / 3.0 / constant,
        flavor=flavor,
    )


@dataclass(frozen=True)
class CoercivityReport:
    """Where a datum sits relative to the cubic 3y² - 2y³ = 1 - δ and what that implies."""

    y: float
    me_ratio: float
    delta: float
    delta_prime: float
    roots: tuple[float, float]
    branch: str | None
    c: float | None = None
    epsilon: float | None = None
    energy_bounds: tuple[float, float] | None = None
    holds: bool = True
    inconsistent: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "y": self.y,
            "ME_ratio": self.me_ratio,
            "delta": self.delta,
            "delta_prime": self.delta_prime,
            "roots": list(self.roots),
            "branch": self.branch,
            "c": self.c,
            "epsilon": self.epsilon,
            "energy_bounds": list(self.energy_bounds) if self.energy_bounds else None,
            "holds": self.holds,
            "inconsistent": self.inconsistent,
        }


def _cubic_roots(delta: float) -> tuple[float, float]:
    roots = np.roots([2.0, -3.0, 0.0, 1.0 - delta])
    real = sorted(float(root.real) for root in roots if abs(root.imag) < 1e-6 and root.real > 0)
    if len(real) == 1:
        return real[0], real[0]
    below = min(real, key=lambda y: abs(y - 1.0) if y <= 1.0 + 1e-9 else math.inf)
    above = min(real, key=lambda y: abs(y - 1.0) if y >= 1.0 - 1e-9 else math.inf)
    return min(below, 1.0), max(above, 1.0)


def coercivity_windows(
    u0: Functionals, th: Thresholds, delta: float, *, tol: float = 1e-9
) -> CoercivityReport:
    me_ratio = u0.mass * u0.energy_a / th.energy_threshold
    if me_ratio > 1.0 - delta + tol:
        raise InvalidParameterError(
            f"datum has M*E/E_threshold={me_ratio:.6g}, above 1 - delta={1.0 - delta:.6g}"
        )
    y = math.sqrt(u0.mass) * math.sqrt(u0.kinetic_a) / th.k_threshold
    y_minus, y_plus = _cubic_roots(delta)

    if abs(y - 1.0) <= tol:
        return CoercivityReport(
            y=y,
            me_ratio=me_ratio,
            delta=delta,
            delta_prime=0.0,
            roots=(y_minus, y_plus),
            branch=None,
            holds=delta == 0.0,
            inconsistent=delta > 0.0,
        )

    kinetic, l4, mass, energy = u0.kinetic_a, u0.l4, u0.mass, u0.energy_a
    if y < 1.0:
        delta_prime = 1.0 - y_minus
        low, high = (1.0 / 6.0 + delta_prime / 3.0) * kinetic, 0.5 * kinetic
        holds = (
            y <= y_minus + tol
            and kinetic - 0.75 * l4 >= delta_prime * kinetic - tol * kinetic
            and low - tol * kinetic <= energy <= high + tol * kinetic
        )
        return CoercivityReport(
            y=y,
            me_ratio=me_ratio,
            delta=delta,
            delta_prime=delta_prime,
            roots=(y_minus, y_plus),
            branch="a",
            c=delta_prime,
            energy_bounds=(low, high),
            holds=holds,
        )

    delta_prime = y_plus - 1.0
    grown = (1.0 + delta_prime) ** 2
    epsilon = (grown - 1.0) / (4.0 * grown)
    c = (8.0 * (grown - 1.0) - 16.0 * epsilon * grown) / (9.0 * th.c_constant**2 * mass)
    holds = y >= y_plus - tol and (1.0 + epsilon) * kinetic - 0.75 * l4 <= -c + tol * kinetic
    return CoercivityReport(
        y=y,
        me_ratio=me_ratio,
        delta=delta,
        delta_prime=delta_prime,
        roots=(y_minus, y_plus),
        branch="b",
        c=c,
        epsilon=epsilon,
        holds=holds,
    )


def polish_on_grid(
    result: GroundStateResult,
    stencil: Stencil = Stencil.FITTED,
    *,
    max_iterations: int = 25,
    rtol: float = 1e-10,
) -> RadialField:
    """Newton-correct the soliton so that A w + w - w³/r² = 0 holds on the grid."""
    p = result.param
    g = result.profile.grid
    op = assemble_operator(p, g, stencil)
    r = g.r[g.interior]
    w = result.profile.reduced.real.copy()
    for iteration in range(max_iterations):
        residual = op.matvec(w) + w - w**3 / r**2
        size = float(np.linalg.norm(residual) / np.linalg.norm(w))
        if size <= rtol:
            logger.info("grid soliton for a=%g after %d Newton steps", p.a, iteration)
            break
        jacobian = op.banded(1.0, 1.0)
        jacobian[1] -= 3.0 * w**2 / r**2
        w = w - solve_banded((1, 1), jacobian, residual)
    else:
        warnings.warn(
            f"Newton polish for a={p.a} stopped with residual {size:.2e}",
            UnconvergedWarning,
            stacklevel=2,
        )
    return RadialField.from_reduced(g, w)
