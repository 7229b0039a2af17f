from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import gaussian
from nlslab.errors import CoarseGridWarning, InvalidParameterError, TailTruncationWarning
from nlslab.models import FormMode, PotentialParam, RadialField, RadialGrid, Stencil
from nlslab.operator import (
    assemble_operator,
    build_grid,
    functionals_of,
    gn_quotient,
    hardy_equivalence,
    operator_form,
    quadratic_form,
    sigma_of,
)


GAUSSIAN_KINETIC = 16.0 * math.pi * 3.0 * math.sqrt(math.pi) / (8.0 * 2.0**2.5)
GAUSSIAN_MASS = math.pi**1.5 / 2.0**1.5
GAUSSIAN_L4 = math.pi**1.5 / 8.0


class TestPotentialParam:
    @pytest.mark.parametrize("a", [-0.2, -0.1, 0.0, 0.5, 1.0, 2.0])
    def test_sigma_solves_indicial_equation(self, a: float) -> None:
        sigma = sigma_of(a)
        assert sigma**2 - sigma == pytest.approx(a, abs=1e-14)
        assert sigma < 0.5

    def test_sigma_values(self) -> None:
        assert sigma_of(0.0) == 0.0
        assert sigma_of(2.0) == pytest.approx(-1.0)
        assert sigma_of(-0.2) == pytest.approx(0.5 - math.sqrt(0.05))

    @pytest.mark.parametrize("a", [-0.25, -0.3, float("nan")])
    def test_rejects_couplings_at_or_below_hardy_edge(self, a: float) -> None:
        with pytest.raises(InvalidParameterError, match="a > -1/4"):
            PotentialParam(a)


class TestGrid:
    def test_nodes(self) -> None:
        grid = build_grid(1.0, 16)
        assert grid.h == pytest.approx(1.0 / 16)
        assert grid.r[0] == pytest.approx(grid.h)
        assert grid.r[-1] == pytest.approx(1.0)

    def test_small_grid_is_accepted_with_warning(self) -> None:
        with pytest.warns(CoarseGridWarning):
            grid = build_grid(1.0, 4)
        assert np.allclose(grid.r, [0.25, 0.5, 0.75, 1.0])

    def test_too_few_nodes(self) -> None:
        with pytest.raises(InvalidParameterError):
            build_grid(1.0, 3)

    def test_non_positive_radius(self) -> None:
        with pytest.raises(InvalidParameterError):
            RadialGrid(r_max=0.0, n=100)

    def test_field_shape_must_match_grid(self) -> None:
        with pytest.raises(InvalidParameterError):
            RadialField(RadialGrid(1.0, 8), np.zeros(7))


class TestAssembly:
    def test_symmetric_and_sized(self) -> None:
        grid = RadialGrid(10.0, 200)
        op = assemble_operator(PotentialParam(-0.1), grid)
        dense = op.to_dense()
        assert dense.shape == (199, 199)
        assert np.array_equal(dense, dense.T)

    def test_plain_and_fitted_agree_at_zero_and_two(self) -> None:
        grid = RadialGrid(10.0, 100)
        for a in (0.0, 2.0):
            p = PotentialParam(a)
            plain = assemble_operator(p, grid, Stencil.PLAIN)
            fitted = assemble_operator(p, grid, Stencil.FITTED)
            assert np.allclose(plain.diagonal, fitted.diagonal, rtol=1e-12)

    @pytest.mark.parametrize("a", [-0.2, -0.1, 0.5, 1.0])
    def test_fitted_rows_annihilate_the_friedrichs_mode(self, a: float) -> None:
        p = PotentialParam(a)
        grid = RadialGrid(5.0, 200)
        op = assemble_operator(p, grid, Stencil.FITTED)
        w = grid.r[grid.interior] ** (1.0 - p.sigma)
        residual = op.matvec(w)
        scale = np.max(np.abs(op.diagonal * w))
        assert np.max(np.abs(residual[:-1])) < 1e-10 * scale

    @pytest.mark.parametrize("a", [-0.2, 0.0, 1.0])
    def test_positive(self, a: float) -> None:
        op = assemble_operator(PotentialParam(a), RadialGrid(10.0, 150))
        assert np.min(np.linalg.eigvalsh(op.to_dense())) > 0.0

    def test_cached_per_key(self) -> None:
        grid = RadialGrid(10.0, 120)
        p = PotentialParam(-0.1)
        assert assemble_operator(p, grid) is assemble_operator(p, grid)


class TestFunctionals:
    grid = RadialGrid(10.0, 2000)

    def test_gaussian_at_zero_coupling(self) -> None:
        f = functionals_of(gaussian(self.grid), PotentialParam(0.0))
        assert f.mass == pytest.approx(GAUSSIAN_MASS, rel=1e-6)
        assert f.l4 == pytest.approx(GAUSSIAN_L4, rel=1e-6)
        assert f.kinetic_a == pytest.approx(GAUSSIAN_KINETIC, rel=1e-4)
        assert f.energy_a == pytest.approx(0.5 * f.kinetic_a - 0.25 * f.l4)

    def test_forms_agree_at_zero_coupling(self) -> None:
        u = gaussian(self.grid)
        p = PotentialParam(0.0)
        direct = quadratic_form(u, p, FormMode.DIRECT)
        shifted = quadratic_form(u, p, FormMode.SHIFTED)
        assert direct == pytest.approx(shifted, rel=1e-12)

    def test_operator_form_tracks_quadrature(self) -> None:
        u = gaussian(self.grid)
        p = PotentialParam(0.0)
        assert operator_form(u, p) == pytest.approx(quadratic_form(u, p), rel=1e-3)

    def test_attractive_coupling_lowers_kinetic(self) -> None:
        u = gaussian(self.grid)
        assert quadratic_form(u, PotentialParam(-0.1)) < quadratic_form(u, PotentialParam(0.0))
        assert quadratic_form(u, PotentialParam(0.5)) > quadratic_form(u, PotentialParam(0.0))

    def test_tail_warning(self) -> None:
        grid = RadialGrid(2.0, 200)
        with pytest.warns(TailTruncationWarning):
            quadratic_form(gaussian(grid, width=3.0), PotentialParam(0.0))

    def test_gn_quotient_is_scale_and_amplitude_invariant(self) -> None:
        p = PotentialParam(0.0)
        base = gn_quotient(gaussian(self.grid), p)
        assert gn_quotient(gaussian(self.grid, amplitude=3.0), p) == pytest.approx(base, rel=1e-10)
        assert gn_quotient(gaussian(self.grid, width=1.5), p) == pytest.approx(base, rel=1e-4)

    def test_gn_quotient_rejects_zero(self) -> None:
        with pytest.raises(InvalidParameterError):
            gn_quotient(RadialField.zeros(self.grid), PotentialParam(0.0))


@pytest.mark.parametrize(("a", "expected"), [(-0.2, (0.2, 1.0)), (0.0, (1.0, 1.0)), (0.5, (1.0, 3.0))])
def test_hardy_equivalence(a: float, expected: tuple[float, float]) -> None:
    assert hardy_equivalence(a) == pytest.approx(expected)
