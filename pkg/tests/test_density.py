from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.stats import norm

from rsvol.backward import PriceSurface, black_scholes_call, price_surface
from rsvol.density import density_mass_check, density_masses, extract_density, reprice
from rsvol.errors import TooFewStrikes, ValidationError
from rsvol.model import ObservationSpec, flat_model

from conftest import SYM


def log_strikes(lo: float, hi: float, h: float = 0.02) -> np.ndarray:
    return np.exp(np.arange(lo, hi + 0.5 * h, h))


def lognormal_density(k, sigma, r, t):
    d2 = (-np.log(k) + (r - 0.5 * sigma**2) * t) / (sigma * math.sqrt(t))
    return math.exp(-r * t) * norm.pdf(d2) / (k * sigma * math.sqrt(t))


@pytest.fixture(scope="module")
def flat_density():
    m = flat_model([0.2])
    return extract_density(price_surface(m, log_strikes(-0.6, 0.6), 1.0))


@pytest.fixture(scope="module")
def wide_decoupled_density(decoupled):
    return extract_density(price_surface(decoupled, log_strikes(-3.5, 3.5, 0.04), 1.0))


@pytest.fixture(scope="module")
def irreducible_density():
    m = flat_model([0.15, 0.35], b=SYM)
    return m, extract_density(price_surface(m, log_strikes(-3.5, 3.5, 0.04), 1.0))


def test_lognormal(flat_density):
    k = flat_density.strikes
    sel = (k >= 0.6) & (k <= 1.6)
    err = np.abs(flat_density.values[0, 0, sel] - lognormal_density(k[sel], 0.2, 0.0, 1.0))
    assert err.max() <= 5e-3


def test_affine_prices_give_zero_density():
    k = np.linspace(0.1, 0.5, 21)
    prices = (1.0 - k)[None, None, :]
    d = extract_density(PriceSurface(k, prices, 1.0))
    assert np.max(np.abs(d.values)) <= 1e-6


def test_deep_in_the_money_density_vanishes():
    m = flat_model([0.2])
    d = extract_density(price_surface(m, log_strikes(-3.0, -2.0), 1.0))
    assert np.max(np.abs(d.values)) <= 1e-6


def test_decoupled_off_diagonal_zero(wide_decoupled_density):
    v = wide_decoupled_density.values
    assert np.max(np.abs(v[0, 1])) <= 1e-8 and np.max(np.abs(v[1, 0])) <= 1e-8


def test_discounted_mass():
    m = flat_model([0.2], rates=0.05)
    d = extract_density(price_surface(m, log_strikes(-3.5, 3.5), 1.0))
    rep = density_mass_check(d, m, ObservationSpec(0, 1.0))
    assert rep.masses[0] == pytest.approx(math.exp(-0.05), abs=2e-3)
    assert rep.max_gap <= 2e-3


def test_decoupled_mass(wide_decoupled_density):
    for j in range(2):
        masses = density_masses(wide_decoupled_density, j)
        assert abs(masses[1 - j]) <= 1e-6


def test_total_probability(irreducible_density):
    m, d = irreducible_density
    for j in range(2):
        assert density_masses(d, j).sum() == pytest.approx(1.0, abs=2e-3)
        rep = density_mass_check(d, m, ObservationSpec(j, 1.0))
        assert rep.max_gap <= 2e-3


def test_nonnegative(irreducible_density):
    _, d = irreducible_density
    assert d.values.min() >= -1e-6


def test_reprice(flat_density):
    inner = flat_density.strikes[10:-10]
    ref = np.array([black_scholes_call(1.0, k, 0.0, 0.0, 0.2, 1.0) for k in inner])
    full = extract_density(price_surface(flat_model([0.2]), log_strikes(-3.5, 3.5), 1.0))
    got = reprice(full, 0, inner)[0]
    assert np.max(np.abs(got - ref)) <= 5e-3


def test_linear_spacing_matches_lognormal():
    m = flat_model([0.2])
    k = np.arange(0.5, 2.0 + 1e-9, 0.02)
    d = extract_density(price_surface(m, k, 1.0))
    sel = (d.strikes >= 0.6) & (d.strikes <= 1.6)
    assert np.max(np.abs(d.values[0, 0, sel] - lognormal_density(d.strikes[sel], 0.2, 0, 1))) <= 5e-3


def test_too_few_strikes():
    k = np.array([0.9, 1.0, 1.1, 1.2])
    with pytest.raises(TooFewStrikes):
        extract_density(PriceSurface(k, np.zeros((1, 1, 4)), 1.0))


def test_uneven_strikes_exact_on_quadratic():
    k = np.array([0.9, 1.0, 1.05, 1.2, 1.3, 1.7])
    prices = (0.5 * k**2 - k + 2.0)[None, None, :]
    d = extract_density(PriceSurface(k, prices, 1.0))
    assert np.allclose(d.values, 1.0, atol=1e-12)


def test_unsorted_strikes_rejected():
    k = np.array([0.9, 1.0, 1.2, 1.05, 1.3, 1.7])
    with pytest.raises(ValidationError):
        extract_density(PriceSurface(k, np.zeros((1, 1, k.size)), 1.0))
