from __future__ import annotations

import numpy as np
import pytest

from rsvol.backward import (PayoffSpec, black_scholes_call, price_surface, regime_bond_prices,
                            solve_backward)
from rsvol.errors import DimensionMismatch, ValidationError
from rsvol.grid import SpaceGrid, TimeGrid
from rsvol.model import flat_model

BS_ATM = 0.1045058


def atm_price(grid: SpaceGrid, steps: int) -> float:
    m = flat_model([0.2], rates=0.05)
    f = solve_backward(m, PayoffSpec(1.0, [1.0], 1.0), grid, TimeGrid(1.0, steps))
    return float(f.values[0, grid.zero_index, -1])


def test_black_scholes_oracle():
    assert black_scholes_call(1, 1, 0.05, 0, 0.2, 1) == pytest.approx(BS_ATM, abs=1e-7)


def test_atm_call():
    assert atm_price(SpaceGrid(), 400) == pytest.approx(BS_ATM, abs=1e-3)


def test_grid_convergence():
    exact = black_scholes_call(1, 1, 0.05, 0, 0.2, 1)
    e1 = abs(atm_price(SpaceGrid(-4, 4, 201), 100) - exact)
    e2 = abs(atm_price(SpaceGrid(-4, 4, 401), 200) - exact)
    assert e2 <= e1 / 3


def test_zero_strike_martingale(two_regime):
    f = solve_backward(two_regime, PayoffSpec(0.0, [1.0, 1.0], 1.0))
    assert np.allclose(f.values[:, 200, -1], 1.0, atol=2e-3)


def test_decoupled_regime_call_vanishes(decoupled):
    f = solve_backward(decoupled, PayoffSpec.regime_call(1.0, 0, 2, 1.0))
    assert np.max(np.abs(f.values[1])) <= 1e-10


def test_payoff_dimension_checked(two_regime):
    with pytest.raises(DimensionMismatch):
        solve_backward(two_regime, PayoffSpec(1.0, [1.0], 1.0))
    with pytest.raises(ValidationError):
        PayoffSpec(1.0, [1.0], 0.0)


@pytest.fixture(scope="module")
def strikes():
    return np.linspace(0.5, 2.0, 31)


def test_scalar_surface_decreasing_convex(strikes):
    s = price_surface(flat_model([0.2], rates=0.05), strikes, 1.0)
    c = s.prices[0, 0]
    assert np.all(np.diff(c) < 0)
    assert np.all(np.diff(c, 2) > 0)


def test_decoupled_surface_matches_scalar(decoupled, strikes):
    s = price_surface(decoupled, strikes, 1.0)
    assert np.max(np.abs(s.prices[0, 1])) <= 1e-10 and np.max(np.abs(s.prices[1, 0])) <= 1e-10
    for j in range(2):
        scalar = flat_model([[0.2, 0.3][j]], rates=decoupled.rates[j], dividends=decoupled.dividends[j])
        ref = price_surface(scalar, strikes, 1.0).prices[0, 0]
        assert np.max(np.abs(s.prices[j, j] - ref)) <= 1e-10


def test_irreducible_surface_positive_bounded_monotone(two_regime, strikes):
    s = price_surface(two_regime, strikes, 1.0)
    assert np.all(s.prices > 0)
    assert np.all(s.prices <= 1.0)
    assert np.all(np.diff(s.prices, axis=-1) <= 1e-8)
    assert s.observed(0).shape == (2, strikes.size)


def test_strikes_outside_grid(two_regime):
    with pytest.raises(ValidationError):
        price_surface(two_regime, [1e-3, 1.0], 1.0)


def test_regime_bonds(two_regime):
    d = regime_bond_prices(two_regime, 1.0)
    assert np.allclose(d.sum(axis=0), np.exp(-0.03), atol=1e-6)
    p = 0.5 * (1 + np.exp(-2.0))
    assert d[0, 0] == pytest.approx(np.exp(-0.03) * p, abs=1e-6)
