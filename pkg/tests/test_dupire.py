from __future__ import annotations

import numpy as np
import pytest

from rsvol.backward import price_surface
from rsvol.dupire import (ForwardProblem, curvature_field, dupire_prices, solve_aux_density, solve_dupire,
                          solve_linearized)
from rsvol.errors import ShapeMismatch
from rsvol.grid import SpaceGrid, TimeGrid, sobolev_norm
from rsvol.inverse import gaussian_bump
from rsvol.model import ObservationSpec, flat_model

OBS = ObservationSpec(0, 0.5)


@pytest.fixture(scope="module")
def w_two(two_regime):
    return solve_dupire(ForwardProblem(two_regime, OBS))


@pytest.fixture(scope="module")
def v_two(two_regime):
    return solve_aux_density(two_regime, OBS)


def test_initial_kink_value(w_two, grid):
    assert np.all(w_two.values[:, grid.zero_index, 0] == 0.0)


def test_scalar_matches_backward():
    m = flat_model([0.25], rates=0.04, dividends=0.01)
    strikes = np.linspace(0.5, 2.0, 31)
    w = solve_dupire(ForwardProblem(m, ObservationSpec(0, 1.0)))
    ref = price_surface(m, strikes, 1.0).prices[0, 0]
    assert np.max(np.abs(dupire_prices(w, strikes, 1.0)[0] - ref)) <= 5e-3


def test_other_component_turns_positive(w_two, grid):
    sel = grid.mask((-1, 1))
    assert np.all(w_two.at(0.1)[1, sel] > 0)


def test_dupire_backward_refinement(two_regime):
    strikes = np.exp(np.linspace(np.log(0.5), np.log(2.0), 25))
    gaps = []
    for g, steps in ((SpaceGrid(-4, 4, 201), 100), (SpaceGrid(-4, 4, 401), 200)):
        ref = price_surface(two_regime, strikes, 0.5, grid=g, tgrid=TimeGrid(0.5, steps)).prices
        gap = 0.0
        for j in range(2):
            w = solve_dupire(ForwardProblem(two_regime, ObservationSpec(j, 0.5), g, TimeGrid(0.5, steps)))
            gap = max(gap, np.max(np.abs(dupire_prices(w, strikes, 0.5) - ref[:, j, :])))
        gaps.append(gap)
    assert gaps[1] <= gaps[0] / 3


class TestAuxDensity:
    def test_mass_conserved(self):
        m = flat_model([0.2])
        v = solve_aux_density(m, ObservationSpec(0, 1.0))
        for tau in (0.25, 0.5, 1.0):
            assert np.trapezoid(v.at(tau)[0], v.y) == pytest.approx(1.0, abs=2e-3)

    def test_gaussian_envelope(self):
        m = flat_model([0.2])
        v = solve_aux_density(m, ObservationSpec(0, 0.5))
        sel = np.abs(v.y) <= 0.4
        slope, _ = np.polyfit(v.y[sel] ** 2, np.log(v.at(0.5)[0, sel]), 1)
        assert slope < 0

    def test_positive_on_compacta(self, v_two, grid):
        assert np.min(v_two.at(0.5)[:, grid.mask((-1, 1))]) > 0

    def test_matches_price_curvature(self, w_two, v_two, grid):
        c = curvature_field(w_two)
        sel = grid.mask((-1, 1))
        lvl = w_two.tau >= 0.1 - 1e-12
        gap = np.abs(c.values[:, sel][:, :, lvl] - v_two.values[:, sel][:, :, lvl])
        assert gap.max() <= 5e-3


class TestLinearized:
    def test_zero_source(self, two_regime, v_two, grid):
        w = solve_linearized(two_regime, np.zeros((2, grid.m)), v_two)
        assert np.all(w.values == 0.0)

    def test_difference_identity(self, two_regime, w_two, v_two, grid):
        a2 = two_regime.diffusion(grid.y)
        g = 0.1 * a2 * np.exp(-grid.y**2 / 0.1)
        m1 = two_regime.with_diffusion(grid.y, a2 + g)
        w1 = solve_dupire(ForwardProblem(m1, OBS))
        lin = solve_linearized(m1, g, v_two)
        gap = np.max(np.abs((w1.at(0.5) - w_two.at(0.5)) - lin.at(0.5)))
        assert gap <= 1e-3
        assert np.max(np.abs(lin.at(0.5))) > 10 * gap

    def test_far_field_source_is_invisible(self, two_regime, v_two, grid):
        g = np.zeros((2, grid.m))
        g[0, grid.mask((2.5, 3.5))] = 0.002
        w = solve_linearized(two_regime, g, v_two)
        gnorm = np.sqrt(np.trapezoid(g**2, grid.y, axis=-1).sum())
        assert sobolev_norm(w.at(0.5), grid.y, (-0.5, 0.5), 0) < 1e-4 * gnorm

    def test_linearity(self, two_regime, v_two, grid):
        g1 = gaussian_bump(grid, 2, 0, 0.002, -0.2, 0.1).values
        g2 = gaussian_bump(grid, 2, 1, 0.003, 0.3, 0.1).values
        batch = solve_linearized(two_regime, np.stack([g1, g2, g1 + g2, 2.5 * g1]), v_two, keep="last")
        assert np.allclose(batch[..., 2], batch[..., 0] + batch[..., 1], atol=1e-12, rtol=0)
        assert np.allclose(batch[..., 3], 2.5 * batch[..., 0], atol=1e-12, rtol=0)

    def test_shape_mismatch(self, two_regime, v_two):
        with pytest.raises(ShapeMismatch):
            solve_linearized(two_regime, np.zeros((2, 10)), v_two)
