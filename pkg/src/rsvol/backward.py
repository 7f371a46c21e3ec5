"""Backward Black-Scholes system for generalised call prices.

In x = log S and tau = T - t the row-vector system reads, componentwise,

    v_j,tau = a_j v_j,xx + (r_j - q_j - a_j) v_j,x + sum_i b_ij v_i - r_j v_j,

which in column form is v_tau = A v_xx + (R - Q - A) v_x + (B^T - R) v.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DimensionMismatch, ValidationError
from .grid import SolutionField, SpaceGrid, TimeGrid
from .model import ObservationSpec, RegimeModel
from .scheme import ParabolicSystem, SchemeConfig, evolve, to_field

DEFAULT_STEPS_PER_YEAR = 400


@dataclass(frozen=True)
class PayoffSpec:
    """Pays max(S_T - K, 0) * pi[X_T] at maturity."""

    strike: float
    pi: NDArray[np.float64]
    maturity: float

    def __post_init__(self) -> None:
        pi = np.atleast_1d(np.asarray(self.pi, dtype=float))
        if not np.all(np.isfinite(pi)) or not np.isfinite(self.strike) or self.strike < 0:
            raise ValidationError("payoff needs finite pi and strike >= 0")
        if not self.maturity > 0:
            raise ValidationError(f"maturity must be > 0, got {self.maturity}")
        object.__setattr__(self, "pi", pi)

    @classmethod
    def regime_call(cls, strike: float, i: int, n: int, maturity: float) -> "PayoffSpec":
        pi = np.zeros(n)
        pi[i] = 1.0
        return cls(strike, pi, maturity)


@dataclass(frozen=True)
class PriceSurface:
    """prices[i, j, k] = C_ij(K_k): start state j, pays in terminal state i."""

    strikes: NDArray[np.float64]
    prices: NDArray[np.float64]
    maturity: float = field(default=float("nan"))

    def observed(self, j_star: int) -> NDArray[np.float64]:
        """C*(K, eps_i) for i = 0..n-1, shape (n, #strikes)."""
        return self.prices[:, j_star, :]


def backward_system(model: RegimeModel, grid: SpaceGrid) -> ParabolicSystem:
    a = model.diffusion(grid.y)
    drift = (model.rates - model.dividends)[:, None] - a
    coupling = model.b.T - np.diag(model.rates)
    return ParabolicSystem.advection_diffusion(a, drift, coupling, grid, "linear")


def default_time_grid(maturity: float, steps_per_year: int = DEFAULT_STEPS_PER_YEAR) -> TimeGrid:
    return TimeGrid(maturity, max(8, int(round(steps_per_year * maturity))))


def cell_averaged_call(grid: SpaceGrid, strikes: NDArray) -> NDArray[np.float64]:
    """Mean of max(e^x - K, 0) over each cell [y - dy/2, y + dy/2], shape (m, nK).

    Averaging removes the dependence of the discretisation error on where the
    kink falls between nodes, so prices are smooth functions of the strike.
    """
    h = grid.dy
    lo = grid.y[:, None] - 0.5 * h
    hi = grid.y[:, None] + 0.5 * h
    k = np.asarray(strikes, dtype=float)[None, :]
    with np.errstate(divide="ignore"):
        logk = np.log(k)
    a = np.clip(logk, lo, hi)
    out = (np.exp(hi) - np.exp(a) - k * (hi - a)) / h
    return np.maximum(out, 0.0)


def _payoff_columns(grid: SpaceGrid, strikes: NDArray, pis: NDArray) -> NDArray[np.float64]:
    """Initial states (m, n, len(pis) * len(strikes)), column index = ip * nK + k."""
    call = cell_averaged_call(grid, strikes)  # (m, nK)
    u0 = pis.T[None, :, :, None] * call[:, None, None, :]  # (m, n, npi, nK)
    return u0.reshape(grid.m, pis.shape[1], -1)


def solve_backward(model: RegimeModel, payoff: PayoffSpec, grid: SpaceGrid = SpaceGrid(),
                   tgrid: TimeGrid | None = None, cfg: SchemeConfig = SchemeConfig()) -> SolutionField:
    """Price field v(x, tau) for one payoff; v[j, k, l] = value in state j at S = e^{x_k}."""
    if payoff.pi.size != model.n:
        raise DimensionMismatch(f"payoff has {payoff.pi.size} state weights, model has {model.n} regimes")
    tgrid = tgrid or default_time_grid(payoff.maturity)
    if abs(tgrid.tau_max - payoff.maturity) > 1e-12:
        raise ValidationError("time grid horizon must equal the maturity")
    u0 = _payoff_columns(grid, np.array([payoff.strike]), payoff.pi[None, :])
    states = evolve(backward_system(model, grid), u0, tgrid, cfg)
    return to_field(states, grid, tgrid)


def batch_prices(model: RegimeModel, strikes: ArrayLike, pis: ArrayLike, maturity: float,
                 grid: SpaceGrid = SpaceGrid(), tgrid: TimeGrid | None = None,
                 cfg: SchemeConfig = SchemeConfig(), payoff_values: NDArray | None = None) -> NDArray[np.float64]:
    """Spot (S = 1) prices for every (pi, strike) pair in one batched solve.

    Returns shape (len(pis), len(strikes), n): entry [p, k, j] = value in start state j.
    ``payoff_values`` (m, n, c) overrides the call payoffs (used for digital bonds).
    """
    strikes = np.atleast_1d(np.asarray(strikes, dtype=float))
    pis = np.atleast_2d(np.asarray(pis, dtype=float))
    tgrid = tgrid or default_time_grid(maturity)
    lo, hi = np.exp(grid.y_min), np.exp(grid.y_max)
    if payoff_values is None:
        if np.any(strikes < 0) or np.any(strikes > hi):
            raise ValidationError(f"strikes must lie in [0, {hi:.4g}]")
        u0 = _payoff_columns(grid, strikes, pis)
    else:
        u0 = payoff_values
    final = evolve(backward_system(model, grid), u0, tgrid, cfg, keep="last")
    spot = final[grid.zero_index]  # (n, c)
    return spot.T.reshape(pis.shape[0], -1, model.n)


def price_surface(model: RegimeModel, strikes: ArrayLike, maturity: float,
                  obs: ObservationSpec | None = None, grid: SpaceGrid = SpaceGrid(),
                  tgrid: TimeGrid | None = None, cfg: SchemeConfig = SchemeConfig()) -> PriceSurface:
    """Full matrix C_ij(K) at spot 1 for pay-offs max(S - K, 0) eps_i."""
    strikes = np.atleast_1d(np.asarray(strikes, dtype=float))
    lo, hi = np.exp(grid.y_min), np.exp(grid.y_max)
    if np.any(strikes < lo) or np.any(strikes > hi):
        raise ValidationError(f"strikes must lie in [{lo:.4g}, {hi:.4g}]")
    if obs is not None:
        obs.check(model.n)
    raw = batch_prices(model, strikes, np.eye(model.n), maturity, grid, tgrid, cfg)
    # raw[i, k, j] -> prices[i, j, k]
    return PriceSurface(strikes, np.transpose(raw, (0, 2, 1)).copy(), maturity)


def regime_bond_prices(model: RegimeModel, maturity: float, grid: SpaceGrid = SpaceGrid(),
                       tgrid: TimeGrid | None = None, cfg: SchemeConfig = SchemeConfig()) -> NDArray[np.float64]:
    """D[i, j]: value in start state j of 1 paid if the terminal regime is i."""
    n = model.n
    u0 = np.broadcast_to(np.eye(n)[None, :, :], (grid.m, n, n)).copy()
    raw = batch_prices(model, [0.0], np.eye(n), maturity, grid, tgrid, cfg, payoff_values=u0)
    return raw[:, 0, :]


def black_scholes_call(s: float, k: float, r: float, q: float, sigma: float, t: float) -> float:
    """Closed-form European call, used as an oracle."""
    from scipy.stats import norm

    if k <= 0:
        return s * np.exp(-q * t)
    vs = sigma * np.sqrt(t)
    d1 = (np.log(s / k) + (r - q) * t) / vs + 0.5 * vs
    d2 = d1 - vs
    return float(s * np.exp(-q * t) * norm.cdf(d1) - k * np.exp(-r * t) * norm.cdf(d2))
