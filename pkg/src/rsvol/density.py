"""State-price densities from call-price surfaces by second strike differences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .backward import PriceSurface, regime_bond_prices
from .errors import TooFewStrikes, ValidationError
from .grid import SpaceGrid, TimeGrid
from .model import ObservationSpec, RegimeModel
from .scheme import SchemeConfig

MIN_STRIKES = 5


@dataclass(frozen=True)
class DensitySurface:
    """values[i, j, k] = d^2 C_ij / dK^2 at strikes[k]."""

    strikes: NDArray[np.float64]
    values: NDArray[np.float64]

    def __post_init__(self) -> None:
        if self.values.shape[-1] != self.strikes.size:
            raise ValidationError("density values and strikes disagree in length")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("density contains non-finite entries")

    def column(self, j_star: int) -> NDArray[np.float64]:
        return self.values[:, j_star, :]


def extract_density(s: PriceSurface) -> DensitySurface:
    """Central second differences in strike; the two boundary strikes are dropped.

    The three-point formula for unevenly spaced nodes is used, so any
    increasing strike ladder works and affine price segments give exactly
    zero density. On a ladder uniform in log K it is still second order.
    """
    k = np.asarray(s.strikes, dtype=float)
    if k.size < MIN_STRIKES:
        raise TooFewStrikes(f"need at least {MIN_STRIKES} strikes, got {k.size}")
    if np.any(np.diff(k) <= 0):
        raise ValidationError("strikes must be strictly increasing")
    c = s.prices
    h_lo = k[1:-1] - k[:-2]
    h_hi = k[2:] - k[1:-1]
    slope_hi = (c[..., 2:] - c[..., 1:-1]) / h_hi
    slope_lo = (c[..., 1:-1] - c[..., :-2]) / h_lo
    d = 2.0 * (slope_hi - slope_lo) / (h_hi + h_lo)
    return DensitySurface(k[1:-1].copy(), d)


@dataclass(frozen=True)
class MassReport:
    masses: NDArray[np.float64]
    bonds: NDArray[np.float64]

    @property
    def gaps(self) -> NDArray[np.float64]:
        return np.abs(self.masses - self.bonds)

    @property
    def max_gap(self) -> float:
        return float(self.gaps.max())


def density_masses(d: DensitySurface, j_star: int) -> NDArray[np.float64]:
    """Trapezoid integral over strike of d_{i, j*}, one value per terminal regime i."""
    return np.trapezoid(d.column(j_star), d.strikes, axis=-1)


def density_mass_check(d: DensitySurface, m: RegimeModel, obs: ObservationSpec,
                       grid: SpaceGrid = SpaceGrid(), tgrid: TimeGrid | None = None,
                       cfg: SchemeConfig = SchemeConfig()) -> MassReport:
    """Compare each regime mass with the value of the regime-digital bond eps_i(X_T)."""
    obs.check(m.n)
    bonds = regime_bond_prices(m, obs.tau_star, grid, tgrid, cfg)[:, obs.j_star]
    return MassReport(density_masses(d, obs.j_star), bonds)


def reprice(d: DensitySurface, j_star: int, strikes: ArrayLike) -> NDArray[np.float64]:
    """Integrate the density against (K' - K)^+ : shape (n, len(strikes))."""
    kk = d.strikes
    col = d.column(j_star)
    out = [np.trapezoid(col * np.maximum(kk - k, 0.0), kk, axis=-1) for k in np.atleast_1d(strikes)]
    return np.stack(out, axis=-1)
