from __future__ import annotations

import logging
import math

import numpy as np
import pytest

import nlslab.classifier as classifier
from conftest import gaussian
from nlslab.archive import RunArchive
from nlslab.classifier import (
    CellThresholds,
    SweepRow,
    check_trapping,
    classify,
    gaussian_datum,
    run_experiment,
    soliton_datum,
    sweep,
    thresholds_for,
)
from nlslab.errors import BracketError, InvalidParameterError
from nlslab.evolution import evolve, rescale
from nlslab.ground_state import coercivity_windows, thresholds_from
from nlslab.models import (
    Classification,
    EvolveConfig,
    Flavor,
    GroundStateResult,
    Observation,
    PotentialParam,
    Prediction,
    RadialField,
    RadialGrid,
    Thresholds,
)
from nlslab.operator import functionals_of


GRID = RadialGrid(r_max=20.0, n=1000)
FREE = PotentialParam(0.0)
# sharp constant at a = 0, to the digits the ground-state solver reproduces
FREE_CONSTANT = 0.0406


def thresholds_at(u: RadialField, me_ratio: float, mk_ratio: float, flavor: Flavor = Flavor.GENERAL) -> Thresholds:
    """Thresholds that put u at the requested ratios."""
    f = functionals_of(u, FREE)
    return Thresholds(
        c_constant=1.0,
        energy_threshold=f.mass * f.energy_a / me_ratio,
        k_threshold=math.sqrt(f.mass * f.kinetic_a) / mk_ratio,
        flavor=flavor,
    )


class TestClassify:
    u = gaussian(GRID)

    def test_above_energy_threshold(self) -> None:
        result = classify(self.u, FREE, thresholds_at(self.u, 1.0, 0.5))
        assert result.predicted is Prediction.NOT_APPLICABLE
        assert result.me_ratio == pytest.approx(1.0)

    def test_scatter(self) -> None:
        result = classify(self.u, FREE, thresholds_at(self.u, 0.5, 0.5))
        assert result.predicted is Prediction.SCATTER
        assert result.mk_ratio == pytest.approx(0.5)

    def test_blowup(self) -> None:
        assert classify(self.u, FREE, thresholds_at(self.u, 0.5, 2.0)).predicted is Prediction.BLOWUP

    def test_on_kinetic_threshold_is_inconsistent(self) -> None:
        result = classify(self.u, FREE, thresholds_at(self.u, 0.5, 1.0005))
        assert result.predicted is Prediction.INCONSISTENT_AT_K

    def test_tolerance_widens_the_band(self) -> None:
        th = thresholds_at(self.u, 0.995, 0.5)
        assert classify(self.u, FREE, th).predicted is Prediction.SCATTER
        assert classify(self.u, FREE, th, threshold_tol=1e-2).predicted is Prediction.NOT_APPLICABLE

    def test_negative_tolerance(self) -> None:
        with pytest.raises(InvalidParameterError):
            classify(self.u, FREE, thresholds_at(self.u, 0.5, 0.5), threshold_tol=-1.0)

    def test_radial_thresholds_decide(
        self, caplog: pytest.LogCaptureFixture, monkeypatch: pytest.MonkeyPatch
    ) -> None:
        monkeypatch.setattr(logging.getLogger("nlslab"), "propagate", True)
        general = thresholds_at(self.u, 0.5, 1.2)
        radial = thresholds_at(self.u, 0.5, 0.8, Flavor.RADIAL)
        with caplog.at_level(logging.WARNING, logger="nlslab"):
            result = classify(self.u, FREE, general, radial_th=radial)
        assert result.predicted is Prediction.BLOWUP
        assert result.radial_predicted is Prediction.SCATTER
        assert result.decisive is Prediction.SCATTER
        assert result.artifact
        assert "between" in caplog.text

    def test_agreeing_flavors_are_no_artifact(self) -> None:
        general = thresholds_at(self.u, 0.5, 0.5)
        radial = thresholds_at(self.u, 0.5, 0.6, Flavor.RADIAL)
        assert not classify(self.u, FREE, general, radial_th=radial).artifact

    def test_ratios_are_scale_invariant(self) -> None:
        grid = RadialGrid(r_max=20.0, n=2000)
        u = gaussian(grid, amplitude=2.0)
        th = thresholds_from(FREE_CONSTANT)
        before = classify(u, FREE, th)
        after = classify(rescale(u, 1.5), FREE, th)
        assert after.me_ratio == pytest.approx(before.me_ratio, rel=1e-4)
        assert after.mk_ratio == pytest.approx(before.mk_ratio, rel=1e-4)


class TestAgreement:
    th = thresholds_from(FREE_CONSTANT)

    @pytest.mark.parametrize(
        ("predicted", "observed", "expected"),
        [
            (Prediction.SCATTER, Observation.SCATTERED, True),
            (Prediction.SCATTER, Observation.UNDECIDED, False),
            (Prediction.BLOWUP, Observation.BLEW_UP, True),
            (Prediction.BLOWUP, Observation.SCATTERED, False),
            (Prediction.NOT_APPLICABLE, Observation.BLEW_UP, None),
        ],
    )
    def test_agreement(self, predicted: Prediction, observed: Observation, expected: bool | None) -> None:
        result = Classification(predicted, 0.5, 0.5, self.th, observed=observed)
        assert result.agreement is expected

    def test_no_run_no_agreement(self) -> None:
        assert Classification(Prediction.SCATTER, 0.5, 0.5, self.th).agreement is None


class TestTrapping:
    @pytest.fixture(scope="class")
    def trajectory(self):
        return evolve(gaussian(GRID, amplitude=0.5), FREE, EvolveConfig(dt=0.01, t_final=0.5))

    def test_scattering_side(self, trajectory) -> None:
        extreme, trapped = check_trapping(trajectory, thresholds_from(FREE_CONSTANT), Prediction.SCATTER)
        assert extreme < 1.0
        assert trapped

    def test_wrong_side_is_reported(self, trajectory) -> None:
        extreme, trapped = check_trapping(trajectory, thresholds_from(FREE_CONSTANT), Prediction.BLOWUP)
        assert extreme < 1.0
        assert not trapped

    def test_needs_a_dichotomy_prediction(self, trajectory) -> None:
        with pytest.raises(InvalidParameterError):
            check_trapping(trajectory, thresholds_from(FREE_CONSTANT), Prediction.NOT_APPLICABLE)


class TestExperiment:
    th = thresholds_from(FREE_CONSTANT)

    def test_threshold_data_are_not_evolved(self) -> None:
        u = gaussian(GRID)
        result = run_experiment(u, FREE, thresholds_at(u, 1.0, 0.5), EvolveConfig(dt=0.01, t_final=1.0))
        assert result.observed is Observation.UNDECIDED
        assert result.trajectory is None
        assert result.agreement is None

    def test_forced_run_evolves_anyway(self) -> None:
        u = gaussian(GRID, amplitude=0.1)
        result = run_experiment(
            u, FREE, thresholds_at(u, 1.0, 0.5), EvolveConfig(dt=0.01, t_final=0.2), force=True
        )
        assert result.trajectory is not None

    def test_blowup_is_confirmed(self) -> None:
        u0 = gaussian(RadialGrid(r_max=10.0, n=1000), amplitude=6.0)
        result = run_experiment(u0, FREE, self.th, EvolveConfig(dt=1e-3, t_final=1.0, blowup_factor=4.0))
        assert result.predicted is Prediction.BLOWUP
        assert result.observed is Observation.BLEW_UP
        assert result.agreement is True
        assert result.t_blowup is not None and result.t_blowup < 1.0

    def test_small_datum_scatters(self) -> None:
        result = run_experiment(gaussian(GRID, amplitude=0.1), FREE, self.th, EvolveConfig(dt=5e-3, t_final=4.0))
        assert result.predicted is Prediction.SCATTER
        assert result.observed is Observation.SCATTERED
        assert result.agreement is True
        assert result.trajectory.outcome.window == (2.0, 4.0)
        assert result.scatter_distance < 1e-2


class TestData:
    def test_gaussian_datum(self) -> None:
        u = gaussian_datum(GRID, 2.0, 1.5)
        assert np.allclose(u.values, 2.0 * np.exp(-((GRID.r / 1.5) ** 2)))

    def test_gaussian_width(self) -> None:
        with pytest.raises(InvalidParameterError):
            gaussian_datum(GRID, 1.0, 0.0)

    def test_soliton_scale(self) -> None:
        with pytest.raises(InvalidParameterError):
            soliton_datum(fake_ground_state(), 0.0)

    def test_unpolished_soliton_is_the_scaled_profile(self) -> None:
        gs = fake_ground_state()
        u = soliton_datum(gs, 0.5, polish=False)
        assert np.allclose(u.values, 0.5 * gs.profile.values)


class TestSweepRow:
    def test_row_keys(self) -> None:
        row = SweepRow(a=0.0, lam=0.5, predicted=Prediction.SCATTER, observed=Observation.SCATTERED, agreement=True)
        assert list(row.to_row()) == [
            "a",
            "lambda",
            "ME_ratio",
            "MK_ratio",
            "predicted",
            "observed",
            "t_blowup",
            "scatter_distance",
            "agreement",
            "error",
        ]
        assert row.to_row()["predicted"] == "scatter"
        assert row.settled

    def test_error_rows_are_unsettled(self) -> None:
        assert not SweepRow(a=0.0, lam=0.5, agreement=True, error="boom").settled


def fake_ground_state() -> GroundStateResult:
    profile = gaussian(GRID, amplitude=4.0)
    return GroundStateResult(
        param=FREE,
        profile=profile,
        shoot_c=4.0,
        f=functionals_of(profile, FREE),
        pohozaev_rho1=0.0,
        pohozaev_rho2=0.0,
        c_constant=FREE_CONSTANT,
        flavor=Flavor.GENERAL,
        tol=1e-6,
    )


@pytest.fixture
def stubbed_cells(monkeypatch: pytest.MonkeyPatch) -> list[tuple[float, float]]:
    """Replace the ground-state solve and the cell runner with cheap fakes."""
    calls: list[tuple[float, float]] = []

    def fake_thresholds(p: PotentialParam, g: RadialGrid, tol: float) -> CellThresholds:
        if p.a < 0:
            raise BracketError(f"no bracket for a={p.a}")
        return CellThresholds(general=thresholds_from(FREE_CONSTANT), radial=None, ground_state=fake_ground_state())

    def fake_cell(a, lam, base, cell, cfg, threshold_tol) -> SweepRow:
        calls.append((a, lam))
        return SweepRow(a=a, lam=lam, me_ratio=lam, agreement=True)

    monkeypatch.setattr(classifier, "thresholds_for", fake_thresholds)
    monkeypatch.setattr(classifier, "polish_on_grid", lambda gs: gs.profile)
    monkeypatch.setattr(classifier, "run_cell", fake_cell)
    return calls


class TestSweep:
    cfg = EvolveConfig(dt=0.01, t_final=1.0)

    async def test_empty_inputs(self) -> None:
        assert await sweep([], [0.5], GRID, self.cfg) == []
        assert await sweep([0.0], [], GRID, self.cfg) == []

    async def test_jobs_must_be_positive(self) -> None:
        with pytest.raises(InvalidParameterError):
            await sweep([0.0], [0.5], GRID, self.cfg, jobs=0)

    async def test_rows_keep_input_order(self, stubbed_cells) -> None:
        rows = await sweep([0.0, -0.2, 0.0], [1.5, 0.5], GRID, self.cfg)
        assert [(row.a, row.lam) for row in rows] == [
            (0.0, 1.5),
            (0.0, 0.5),
            (-0.2, 1.5),
            (-0.2, 0.5),
            (0.0, 1.5),
            (0.0, 0.5),
        ]
        assert stubbed_cells == [(0.0, 1.5), (0.0, 0.5), (0.0, 1.5), (0.0, 0.5)]
        failed = [row for row in rows if row.error]
        assert len(failed) == 2
        assert all("no bracket" in row.error for row in failed)
        assert not any(row.settled for row in failed)

    async def test_rows_are_archived(self, stubbed_cells, tmp_path) -> None:
        archive = await RunArchive.create(tmp_path / "runs.db")
        try:
            await sweep([0.0], [0.5, 1.5], GRID, self.cfg, archive=archive, config_key="abc")
            cells = await archive.cells("abc")
            stored = await archive.ground_state(0.0, "general", "20x1000")
        finally:
            await archive.close()
        assert [(cell.a, cell.lam) for cell in cells] == [(0.0, 0.5), (0.0, 1.5)]
        assert cells[0].row["ME_ratio"] == 0.5
        assert stored is not None
        assert stored.record["C"] == FREE_CONSTANT


class TestCellFailures:
    cfg = EvolveConfig(dt=0.01, t_final=0.1)

    def cell(self) -> CellThresholds:
        return CellThresholds(general=thresholds_from(FREE_CONSTANT), radial=None, ground_state=fake_ground_state())

    def test_numerical_error_is_recorded(self, monkeypatch: pytest.MonkeyPatch) -> None:
        def broken(*args, **kwargs):
            raise np.linalg.LinAlgError("singular matrix")

        monkeypatch.setattr(classifier, "run_experiment", broken)
        cell = self.cell()
        row = classifier.run_cell(0.0, 0.5, cell.ground_state.profile, cell, self.cfg, 1e-3)
        assert row.error == "LinAlgError: singular matrix"
        assert row.predicted is None
        assert not row.settled

    async def test_failing_cell_does_not_stop_the_sweep(self, monkeypatch: pytest.MonkeyPatch) -> None:
        def flaky(u0, p, th, cfg, **kwargs) -> Classification:
            # the fake profile peaks at 4, so only the lambda = 1.5 cell exceeds it
            if np.max(np.abs(u0.values)) > 4.5:
                raise FloatingPointError("overflow encountered in multiply")
            return Classification(Prediction.SCATTER, 0.5, 0.5, th, observed=Observation.SCATTERED)

        monkeypatch.setattr(classifier, "thresholds_for", lambda p, g, tol: self.cell())
        monkeypatch.setattr(classifier, "polish_on_grid", lambda gs: gs.profile)
        monkeypatch.setattr(classifier, "run_experiment", flaky)
        rows = await sweep([0.0], [0.5, 1.5], GRID, self.cfg)
        assert rows[0].settled
        assert rows[1].error == "FloatingPointError: overflow encountered in multiply"

    async def test_ground_state_crash_fills_its_rows(self, monkeypatch: pytest.MonkeyPatch) -> None:
        def crash(p, g, tol):
            raise ZeroDivisionError("float division by zero")

        monkeypatch.setattr(classifier, "thresholds_for", crash)
        rows = await sweep([0.0], [0.5, 1.5], GRID, self.cfg)
        assert [row.error for row in rows] == ["ZeroDivisionError: float division by zero"] * 2


@pytest.mark.slow
async def test_soliton_sweep_flips_at_the_ground_state() -> None:
    grid = RadialGrid(r_max=60.0, n=12000)
    cfg = EvolveConfig(dt=1e-3, t_final=50.0, scatter_window=(30.0, 50.0))
    couplings, scales = [-0.2, -0.1, 0.0], [0.8, 0.9, 1.1, 1.2]
    rows = await sweep(couplings, scales, grid, cfg, jobs=4)
    assert [(row.a, row.lam) for row in rows] == [(a, lam) for a in couplings for lam in scales]
    for row in rows:
        assert row.error is None
        expected = Prediction.SCATTER if row.lam < 1 else Prediction.BLOWUP
        assert row.predicted is expected
        assert row.settled
    for a in couplings:
        observed = {row.lam: row.observed for row in rows if row.a == a}
        assert observed[0.9] is Observation.SCATTERED
        assert observed[1.1] is Observation.BLEW_UP


@pytest.mark.slow
class TestAcceptance:
    p = PotentialParam(-0.1)
    grid = RadialGrid(r_max=30.0, n=6000)

    @pytest.fixture(scope="class")
    def cell(self):
        return thresholds_for(self.p, self.grid, 1e-6)

    def test_virial_identity_error_is_second_order_in_dt(self, cell) -> None:
        u0 = soliton_datum(cell.ground_state, 0.9)
        mismatches = []
        for dt in (4e-3, 2e-3):
            traj = evolve(u0, self.p, EvolveConfig(dt=dt, t_final=0.4, monitor_stride=1))
            V, d2V = traj.series("V"), traj.series("d2V")
            centered = (V[2:] - 2.0 * V[1:-1] + V[:-2]) / dt**2
            mismatches.append(float(np.max(np.abs(centered - d2V[1:-1]))))
        assert mismatches[1] < 1e-2 * float(np.max(np.abs(d2V)))
        assert 2.8 < mismatches[0] / mismatches[1] < 5.5

    def test_soliton_has_no_virial_acceleration(self, cell) -> None:
        f = cell.ground_state.f
        assert abs(8.0 * (f.kinetic_a - 0.75 * f.l4)) < 1e-3 * 8.0 * f.kinetic_a

    def test_above_the_ground_state_blows_up_with_concave_moment(self, cell) -> None:
        u0 = soliton_datum(cell.ground_state, 1.1)
        f0 = functionals_of(u0, self.p)
        me_ratio = f0.mass * f0.energy_a / cell.decisive.energy_threshold
        report = coercivity_windows(f0, cell.decisive, 1.0 - me_ratio)
        assert report.branch == "b"
        assert report.c > 0
        result = run_experiment(u0, self.p, cell.general, EvolveConfig(dt=1e-3, t_final=10.0))
        assert result.predicted is Prediction.BLOWUP
        assert result.observed is Observation.BLEW_UP
        assert result.t_blowup < 10.0
        assert float(np.max(result.trajectory.series("d2V"))) <= -report.c

    def test_below_the_ground_state_scatters_and_stays_trapped(self) -> None:
        grid = RadialGrid(r_max=60.0, n=12000)
        cell = thresholds_for(self.p, grid, 1e-6)
        cfg = EvolveConfig(dt=1e-3, t_final=50.0, scatter_window=(30.0, 50.0))
        result = run_experiment(soliton_datum(cell.ground_state, 0.9), self.p, cell.general, cfg)
        assert result.observed is Observation.SCATTERED
        assert result.trajectory.times[-1] == pytest.approx(50.0)
        assert result.scatter_distance < 1e-2
        _, trapped = check_trapping(result.trajectory, cell.decisive, Prediction.SCATTER)
        assert trapped
