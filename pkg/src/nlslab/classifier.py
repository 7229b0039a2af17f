"""Threshold classification of data, verification runs and phase-diagram sweeps."""

from __future__ import annotations

import asyncio
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Any, Sequence

import numpy as np

from .archive import RunArchive
from .data_source import DataSource, SourceKind
from .errors import InvalidParameterError, LabError
from .evolution import evolve
from .ground_state import polish_on_grid, solve_ground_state, thresholds_from
from .models import (
    Classification,
    EvolveConfig,
    Flavor,
    GroundStateResult,
    Observation,
    PotentialParam,
    Prediction,
    RadialField,
    RadialGrid,
    Stencil,
    Thresholds,
    Trajectory,
)
from .operator import functionals_of
from .serialization import read_field_csv


__all__ = [
    "CellThresholds",
    "SweepRow",
    "check_trapping",
    "classify",
    "gaussian_datum",
    "resolve_datum",
    "run_cell",
    "run_experiment",
    "soliton_datum",
    "sweep",
    "thresholds_for",
]


logger = logging.getLogger(__name__)


def _predict(me_ratio: float, mk_ratio: float, threshold_tol: float) -> Prediction:
    if me_ratio >= 1.0 - threshold_tol:
        return Prediction.NOT_APPLICABLE
    if abs(mk_ratio - 1.0) <= threshold_tol:
        return Prediction.INCONSISTENT_AT_K
    return Prediction.SCATTER if mk_ratio < 1.0 else Prediction.BLOWUP


def _ratios(u0: RadialField, p: PotentialParam, th: Thresholds) -> tuple[float, float]:
    f = functionals_of(u0, p)
    me_ratio = f.mass * f.energy_a / th.energy_threshold
    mk_ratio = math.sqrt(f.mass) * math.sqrt(f.kinetic_a) / th.k_threshold
    return me_ratio, mk_ratio


def classify(
    u0: RadialField,
    p: PotentialParam,
    th: Thresholds,
    *,
    threshold_tol: float = 1e-3,
    radial_th: Thresholds | None = None,
) -> Classification:
    """Place u0 against the mass-energy and mass-kinetic thresholds.

    A datum within ``threshold_tol`` of M·E = 𝓔 is not covered by the dichotomy;
    one below it but within the band around √M·√K = 𝓚 cannot exist and is
    reported as inconsistent. With ``radial_th`` the datum is classified twice;
    a general blowup against a radial scatter is a discretization artifact.
    """
    if not threshold_tol >= 0:
        raise InvalidParameterError(f"threshold_tol must be non-negative, got {threshold_tol!r}")
    me_ratio, mk_ratio = _ratios(u0, p, th)
    result = Classification(
        predicted=_predict(me_ratio, mk_ratio, threshold_tol),
        me_ratio=me_ratio,
        mk_ratio=mk_ratio,
        thresholds=th,
    )
    if radial_th is not None:
        radial_me, radial_mk = _ratios(u0, p, radial_th)
        result.radial_predicted = _predict(radial_me, radial_mk, threshold_tol)
        result.artifact = (
            result.predicted is Prediction.BLOWUP and result.radial_predicted is Prediction.SCATTER
        )
        if result.artifact:
            logger.warning(
                "a=%g: datum sits between the a=0 and radial kinetic thresholds", p.a
            )
    return result


def _observation(traj: Trajectory) -> Observation:
    outcome = traj.outcome
    if outcome is None:
        return Observation.UNDECIDED
    if outcome.blew_up:
        return Observation.BLEW_UP
    if outcome.scattered:
        return Observation.SCATTERED
    return Observation.UNDECIDED


def run_experiment(
    u0: RadialField,
    p: PotentialParam,
    th: Thresholds,
    cfg: EvolveConfig,
    *,
    threshold_tol: float = 1e-3,
    radial_th: Thresholds | None = None,
    stencil: Stencil = Stencil.FITTED,
    force: bool = False,
) -> Classification:
    """Classify u0 and evolve it to see whether the prediction holds.

    Threshold and inconsistent data are not evolved unless ``force`` is set; they
    come back undecided. Runs without a scatter window are checked on the second half
    of the horizon.
    """
    result = classify(u0, p, th, threshold_tol=threshold_tol, radial_th=radial_th)
    if result.decisive not in (Prediction.SCATTER, Prediction.BLOWUP) and not force:
        result.observed = Observation.UNDECIDED
        return result
    if cfg.scatter_window is None:
        cfg = replace(cfg, scatter_window=(0.5 * cfg.t_final, cfg.t_final))
    traj = evolve(u0, p, cfg, stencil=stencil)
    result.trajectory = traj
    result.observed = _observation(traj)
    if traj.outcome is not None:
        if traj.outcome.blew_up:
            result.t_blowup = traj.outcome.t_star
        result.scatter_distance = traj.outcome.distance
    logger.info(
        "a=%g: predicted %s, observed %s", p.a, result.decisive.value, result.observed.value
    )
    return result


def check_trapping(
    traj: Trajectory, th: Thresholds, predicted: Prediction, *, slack: float = 0.01
) -> tuple[float, bool]:
    """Extreme of √M·√K/𝓚 along a run and whether it stayed on the predicted side."""
    if not traj.samples:
        raise InvalidParameterError("trajectory has no samples")
    ratios = np.sqrt(traj.series("mass") * traj.series("kinetic_a")) / th.k_threshold
    if predicted is Prediction.SCATTER:
        extreme = float(np.max(ratios))
        return extreme, extreme < 1.0 + slack
    if predicted is Prediction.BLOWUP:
        extreme = float(np.min(ratios))
        return extreme, extreme > 1.0 - slack
    raise InvalidParameterError(f"no trapping region for prediction {predicted.value}")


def soliton_datum(result: GroundStateResult, lam: float, *, polish: bool = True) -> RadialField:
    """λ·Q on the grid of the ground state; the Newton-polished profile by default."""
    if not lam > 0:
        raise InvalidParameterError(f"soliton scale must be positive, got {lam!r}")
    base = polish_on_grid(result) if polish else result.profile
    return base.scaled(lam)


def gaussian_datum(g: RadialGrid, amplitude: float, width: float) -> RadialField:
    if not width > 0:
        raise InvalidParameterError(f"gaussian width must be positive, got {width!r}")
    return RadialField(g, amplitude * np.exp(-((g.r / width) ** 2)))


@dataclass(frozen=True)
class CellThresholds:
    """Thresholds used for one coupling and the ground state that fixes them."""

    general: Thresholds
    radial: Thresholds | None
    ground_state: GroundStateResult

    @property
    def decisive(self) -> Thresholds:
        return self.radial or self.general


def thresholds_for(p: PotentialParam, g: RadialGrid, tol: float) -> CellThresholds:
    """For a ≤ 0 the ground state fixes both flavors; for a > 0 the general
    thresholds use the a = 0 constant and the radial ones the radial optimizer."""
    if p.a <= 0:
        gs = solve_ground_state(p, g, tol, Flavor.GENERAL)
        return CellThresholds(general=thresholds_from(gs), radial=None, ground_state=gs)
    gs = solve_ground_state(p, g, tol, Flavor.RADIAL)
    free = solve_ground_state(PotentialParam(0.0), g, tol, Flavor.GENERAL)
    return CellThresholds(
        general=thresholds_from(free.c_constant, Flavor.GENERAL),
        radial=thresholds_from(gs),
        ground_state=gs,
    )


def resolve_datum(
    source: DataSource, p: PotentialParam, g: RadialGrid, tol: float
) -> tuple[RadialField, CellThresholds | None]:
    """Materialize a ``--data`` source; soliton data also return their thresholds."""
    if source.kind is SourceKind.FILE:
        return read_field_csv(source.path), None
    if source.kind is SourceKind.GAUSSIAN:
        return gaussian_datum(g, source.amplitude, source.width), None
    cell = thresholds_for(p, g, tol)
    return soliton_datum(cell.ground_state, source.lam), cell


@dataclass
class SweepRow:
    a: float
    lam: float
    me_ratio: float | None = None
    mk_ratio: float | None = None
    predicted: Prediction | None = None
    observed: Observation | None = None
    t_blowup: float | None = None
    scatter_distance: float | None = None
    agreement: bool | None = None
    artifact: bool = False
    error: str | None = None

    @classmethod
    def from_classification(cls, a: float, lam: float, result: Classification) -> SweepRow:
        return cls(
            a=a,
            lam=lam,
            me_ratio=result.me_ratio,
            mk_ratio=result.mk_ratio,
            predicted=result.decisive,
            observed=result.observed,
            t_blowup=result.t_blowup,
            scatter_distance=result.scatter_distance,
            agreement=result.agreement,
            artifact=result.artifact,
        )

    @property
    def settled(self) -> bool:
        return self.error is None and self.agreement is True

    def to_row(self) -> dict[str, Any]:
        return {
            "a": self.a,
            "lambda": self.lam,
            "ME_ratio": self.me_ratio,
            "MK_ratio": self.mk_ratio,
            "predicted": self.predicted.value if self.predicted else None,
            "observed": self.observed.value if self.observed else None,
            "t_blowup": self.t_blowup,
            "scatter_distance": self.scatter_distance,
            "agreement": self.agreement,
            "error": self.error,
        }


def run_cell(
    a: float,
    lam: float,
    base: RadialField,
    cell: CellThresholds,
    cfg: EvolveConfig,
    threshold_tol: float,
) -> SweepRow:
    """One (a, λ) cell; any failure ends up in the row instead of stopping the sweep."""
    p = PotentialParam(a)
    try:
        result = run_experiment(
            base.scaled(lam),
            p,
            cell.general,
            cfg,
            threshold_tol=threshold_tol,
            radial_th=cell.radial,
        )
    except LabError as exc:
        logger.warning("cell a=%g lambda=%g failed: %s", a, lam, exc)
        return SweepRow(a=a, lam=lam, error=str(exc))
    except Exception as exc:
        logger.exception("cell a=%g lambda=%g failed", a, lam)
        return SweepRow(a=a, lam=lam, error=f"{type(exc).__name__}: {exc}")
    logger.info("cell a=%g lambda=%g: %s", a, lam, result.observed.value)
    return SweepRow.from_classification(a, lam, result)


async def sweep(
    couplings: Sequence[float],
    scales: Sequence[float],
    g: RadialGrid,
    cfg: EvolveConfig,
    *,
    tol: float = 1e-6,
    threshold_tol: float = 1e-3,
    jobs: int = 1,
    archive: RunArchive | None = None,
    config_key: str | None = None,
) -> list[SweepRow]:
    """Classify and evolve λ·Q_a for every pair; rows come back in input order.

    Ground states are solved once per coupling in this process; the cells run
    in a process pool when ``jobs`` > 1.
    """
    if jobs < 1:
        raise InvalidParameterError(f"jobs must be at least 1, got {jobs}")
    if not scales or not couplings:
        return []

    prepared: dict[float, tuple[RadialField, CellThresholds] | str] = {}
    for a in couplings:
        if a in prepared:
            continue
        try:
            cell = thresholds_for(PotentialParam(a), g, tol)
            prepared[a] = (polish_on_grid(cell.ground_state), cell)
        except LabError as exc:
            logger.warning("ground state for a=%g failed: %s", a, exc)
            prepared[a] = str(exc)
            continue
        except Exception as exc:
            logger.exception("ground state for a=%g failed", a)
            prepared[a] = f"{type(exc).__name__}: {exc}"
            continue
        if archive is not None:
            gs = cell.ground_state
            await archive.store_ground_state(
                a, gs.flavor.value, f"{g.r_max:g}x{g.n}", gs.to_record(cell.decisive)
            )

    loop = asyncio.get_running_loop()
    executor = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        pending = []
        for a in couplings:
            for lam in scales:
                entry = prepared[a]
                if isinstance(entry, str):
                    pending.append(_finished(SweepRow(a=a, lam=lam, error=entry)))
                    continue
                base, cell = entry
                if executor is None:
                    pending.append(_finished(run_cell(a, lam, base, cell, cfg, threshold_tol)))
                else:
                    pending.append(
                        loop.run_in_executor(executor, run_cell, a, lam, base, cell, cfg, threshold_tol)
                    )
        rows = list(await asyncio.gather(*pending))
    finally:
        if executor is not None:
            executor.shutdown()

    if archive is not None and config_key is not None:
        for row in rows:
            await archive.store_cell(row.a, row.lam, config_key, row.to_row())
    return rows


async def _finished(row: SweepRow) -> SweepRow:
    return row
