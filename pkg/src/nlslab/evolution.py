"""Strang-split time stepping of i∂ₜu = 𝓛ₐu - |u|²u with outcome detectors."""

from __future__ import annotations

import logging
import math

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded

from .errors import DetectorInapplicableError, GridOverflowError, InvalidParameterError
from .models import (
    EvolveConfig,
    Outcome,
    OutcomeKind,
    PotentialParam,
    RadialField,
    Sample,
    Stencil,
    Trajectory,
)
from .operator import (
    RadialOperator,
    assemble_operator,
    discrete_functionals,
    functionals_of,
    operator_form,
)
from .virial import VirialWeight, d2V_full_formula, dV_formula, moment


__all__ = [
    "Propagator",
    "detect_scattering",
    "evolve",
    "h1a_norm",
    "linear_step",
    "nonlinear_phase_step",
    "rescale",
    "scattering_distance",
    "strang_step",
]


logger = logging.getLogger(__name__)

OVERFLOW_FRACTION = 1e-6


class Propagator:
    """Crank-Nicolson steps e^{-i dt A} on the reduced field, one factorization per dt."""

    def __init__(self, op: RadialOperator) -> None:
        self.op = op
        self._bands: dict[float, np.ndarray] = {}

    def _band(self, dt: float) -> np.ndarray:
        band = self._bands.get(dt)
        if band is None:
            band = self.op.banded(1.0, 0.5j * dt)
            self._bands[dt] = band
        return band

    def step_reduced(self, w: np.ndarray, dt: float) -> np.ndarray:
        if dt == 0.0:
            return w.copy()
        rhs = w - 0.5j * dt * self.op.matvec(w)
        return solve_banded((1, 1), self._band(dt), rhs, check_finite=False)

    def step(self, u: RadialField, dt: float) -> RadialField:
        return RadialField.from_reduced(u.grid, self.step_reduced(u.reduced, dt))


def linear_step(
    u: RadialField, p: PotentialParam, dt: float, stencil: Stencil = Stencil.FITTED
) -> RadialField:
    if dt == 0.0:
        return u.copy()
    return Propagator(assemble_operator(p, u.grid, stencil)).step(u, dt)


def nonlinear_phase_step(u: RadialField, dt: float) -> RadialField:
    values = u.values
    return RadialField(u.grid, values * np.exp(1j * np.abs(values) ** 2 * dt))


def _strang(propagator: Propagator, u: RadialField, dt: float) -> RadialField:
    half = nonlinear_phase_step(u, 0.5 * dt)
    return nonlinear_phase_step(propagator.step(half, dt), 0.5 * dt)


def strang_step(
    u: RadialField, p: PotentialParam, dt: float, stencil: Stencil = Stencil.FITTED
) -> RadialField:
    return _strang(Propagator(assemble_operator(p, u.grid, stencil)), u, dt)


def _h1a_reduced(w: np.ndarray, op: RadialOperator) -> float:
    return math.sqrt(4.0 * math.pi * op.grid.h * np.vdot(w, w + op.matvec(w)).real)


def h1a_norm(u: RadialField, p: PotentialParam, stencil: Stencil = Stencil.FITTED) -> float:
    """Discrete H¹ₐ norm, sqrt(4πh⟨(I + A)w, w⟩)."""
    return _h1a_reduced(u.reduced, assemble_operator(p, u.grid, stencil))


def scattering_distance(
    u_t1: RadialField,
    u_t2: RadialField,
    p: PotentialParam,
    t1: float,
    t2: float,
    dt: float,
    *,
    reference: float | None = None,
    stencil: Stencil = Stencil.FITTED,
) -> float:
    """Relative H¹ₐ distance between e^{it₁𝓛}u(t₁) and e^{it₂𝓛}u(t₂).

    The free propagator is unitary for the discrete H¹ₐ norm, so pulling u(t₂)
    back by t₂ - t₁ and comparing with u(t₁) gives the same number.
    """
    if not t1 < t2:
        raise InvalidParameterError(f"scattering detector needs t1 < t2, got ({t1}, {t2})")
    op = assemble_operator(p, u_t1.grid, stencil)
    propagator = Propagator(op)
    steps = max(1, int(round((t2 - t1) / dt)))
    back = -(t2 - t1) / steps
    w = u_t2.reduced
    for _ in range(steps):
        w = propagator.step_reduced(w, back)
    if reference is None:
        reference = _h1a_reduced(u_t1.reduced, op)
    if reference == 0.0:
        return 0.0
    return _h1a_reduced(w - u_t1.reduced, op) / reference


def detect_scattering(
    traj: Trajectory,
    u_t1: RadialField,
    u_t2: RadialField,
    p: PotentialParam,
    cfg: EvolveConfig,
    *,
    reference: float | None = None,
) -> bool:
    if cfg.scatter_window is None:
        raise InvalidParameterError("scattering detector needs a scatter_window")
    t1, t2 = cfg.scatter_window
    if traj.outcome is not None and traj.outcome.blew_up:
        raise DetectorInapplicableError(
            f"solution blew up at t={traj.outcome.t_star}, before the scatter window ({t1}, {t2})"
        )
    distance = scattering_distance(u_t1, u_t2, p, t1, t2, cfg.dt, reference=reference)
    logger.info("scattering distance on (%g, %g): %.3e", t1, t2, distance)
    return distance < cfg.scatter_tol


def rescale(u: RadialField, lam: float, p: PotentialParam | None = None) -> RadialField:
    """Spatial part of the scaling symmetry, λ·u(λr), resampled onto the same grid.

    With p given the interpolation runs on r^σ u, which is smooth at the origin.
    """
    if not lam > 0:
        raise InvalidParameterError(f"scale factor must be positive, got {lam!r}")
    if lam == 1.0:
        return u.copy()
    g = u.grid
    sigma = p.sigma if p is not None else 0.0
    r = g.r
    magnitude = np.abs(u.values)
    peak = float(np.max(magnitude)) if magnitude.size else 0.0
    if lam < 1.0 and peak > 0.0:
        lost = magnitude[r > lam * g.r_max]
        if lost.size and float(np.max(lost)) > OVERFLOW_FRACTION * peak:
            raise GridOverflowError(
                f"rescaling by {lam:g} pushes {float(np.max(lost)) / peak:.2e} of the peak past r_max"
            )

    v = u.values * r**sigma
    origin = (4.0 * v[0] - v[1]) / 3.0
    nodes = np.concatenate(([0.0], r))
    samples = lam * r
    inside = samples <= g.r_max
    resampled = np.zeros(g.n, dtype=complex)
    for part, start, unit in ((v.real, origin.real, 1.0), (v.imag, origin.imag, 1j)):
        if not np.any(part):
            continue
        spline = CubicSpline(nodes, np.concatenate(([start], part)), bc_type=((1, 0.0), "not-a-knot"))
        resampled[inside] += unit * spline(samples[inside])
    values = lam * samples ** -sigma * resampled
    return RadialField(g, values)


def _sample(
    u: RadialField,
    p: PotentialParam,
    t: float,
    weight: VirialWeight,
    datum_modulus: np.ndarray,
    stencil: Stencil,
) -> Sample:
    deviation = np.abs(u.values) - datum_modulus
    scale = u.grid.integrate(datum_modulus**2)
    return Sample(
        t=t,
        f=discrete_functionals(u, p, stencil),
        V=moment(u, weight),
        dV=dV_formula(u, p, weight),
        d2V=d2V_full_formula(u, p),
        modulus_deviation=math.sqrt(u.grid.integrate(deviation**2) / scale) if scale else 0.0,
    )


def evolve(
    u0: RadialField,
    p: PotentialParam,
    cfg: EvolveConfig,
    *,
    stencil: Stencil = Stencil.FITTED,
    weight: VirialWeight | None = None,
    nonlinear: bool = True,
) -> Trajectory:
    """Run to cfg.t_final or until a detector fires.

    States at the scatter-window times are kept in ``Trajectory.snapshots``.
    On a kinetic trip the run rolls back to the last monitor point and halves dt;
    after cfg.max_refinements halvings the trip is declared a blowup at the last
    stable monitor time.
    """
    f0 = functionals_of(u0, p)
    if not all(math.isfinite(x) for x in (f0.mass, f0.kinetic_a, f0.l4)):
        raise InvalidParameterError("initial datum has non-finite functionals")
    weight = weight or VirialWeight.full()
    op = assemble_operator(p, u0.grid, stencil)
    propagator = Propagator(op)
    kinetic0 = operator_form(u0, p, stencil)
    trip = cfg.blowup_factor**2 * max(kinetic0, np.finfo(float).tiny)
    datum_modulus = np.abs(u0.values)

    traj = Trajectory()
    traj.record(_sample(u0, p, 0.0, weight, datum_modulus, stencil))
    marks = sorted(set(cfg.scatter_window or ()))
    captured: dict[float, RadialField] = {}
    if marks and marks[0] == 0.0:
        captured[0.0] = u0.copy()

    def advance(u: RadialField, dt: float) -> RadialField:
        if nonlinear:
            return _strang(propagator, u, dt)
        return propagator.step(u, dt)

    dt = cfg.dt
    u, t = u0.copy(), 0.0
    checkpoint = (u.copy(), t, dict(captured))
    steps = 0
    while t < cfg.t_final:
        target = min([cfg.t_final] + [mark for mark in marks if mark > t])
        step_dt = min(dt, target - t)
        # land exactly on the mark instead of leaving a sliver of a step
        if target - (t + step_dt) < 1e-9 * dt:
            step_dt = target - t
            t_next = target
        else:
            t_next = t + step_dt
        u = advance(u, step_dt)
        t = t_next
        steps += 1
        if t in marks and t not in captured:
            captured[t] = u.copy()

        at_monitor = steps % cfg.monitor_stride == 0 or t >= cfg.t_final
        if not at_monitor:
            continue
        if not np.all(np.isfinite(u.values)):
            traj.final_dt = dt
            traj.snapshots = captured
            traj.conclude(
                Outcome(OutcomeKind.BLOWUP_DETECTED, t_star=t, annotation="numeric overflow in field")
            )
            logger.info("overflow at t=%.6g, declared blowup", t)
            return traj
        kinetic = operator_form(u, p, stencil)
        if kinetic > trip:
            if traj.refinements < cfg.max_refinements:
                traj.refinements += 1
                dt *= 0.5
                u, t, captured = checkpoint[0].copy(), checkpoint[1], dict(checkpoint[2])
                logger.info("kinetic trip at t=%.6g, dt -> %.3g (refinement %d)", t, dt, traj.refinements)
                continue
            traj.final_dt = dt
            traj.snapshots = captured
            traj.conclude(
                Outcome(
                    OutcomeKind.BLOWUP_DETECTED,
                    t_star=checkpoint[1],
                    annotation=f"kinetic exceeded {cfg.blowup_factor:g}² of its initial value",
                )
            )
            logger.info("blowup detected, last stable time %.6g", checkpoint[1])
            return traj
        traj.record(_sample(u, p, t, weight, datum_modulus, stencil))
        checkpoint = (u.copy(), t, dict(captured))

    traj.final_dt = dt
    traj.snapshots = captured
    if cfg.scatter_window is not None:
        t1, t2 = cfg.scatter_window
        distance = scattering_distance(
            captured[t1], captured[t2], p, t1, t2, dt, reference=h1a_norm(u0, p, stencil), stencil=stencil
        )
        logger.info("scattering distance on (%g, %g): %.3e", t1, t2, distance)
        kind = OutcomeKind.SCATTERING_DETECTED if distance < cfg.scatter_tol else OutcomeKind.RAN_TO_HORIZON
        traj.conclude(Outcome(kind, window=(t1, t2), distance=distance))
    else:
        traj.conclude(Outcome(OutcomeKind.RAN_TO_HORIZON))
    return traj
