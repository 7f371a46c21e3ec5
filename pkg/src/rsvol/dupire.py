"""Generalised Dupire forward system, auxiliary density and linearised solves.

Forward operator in y = log(K / S*), tau = T - t*:

    L_A w = A w_yy - (A + R - Q) w_y + (B - Q) w.

The auxiliary density v = w_yy - w_y of the base model solves

    v_tau = (d_yy - d_y)(A v) - (R - Q) v_y + (B - Q) v,   v(., 0) = delta_0 e_{j*}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import ShapeMismatch
from .grid import SolutionField, SpaceGrid, TimeGrid, first_difference, second_difference
from .model import ObservationSpec, RegimeModel
from .scheme import ParabolicSystem, SchemeConfig, evolve, to_field


@dataclass(frozen=True)
class ForwardProblem:
    model: RegimeModel
    obs: ObservationSpec
    grid: SpaceGrid = SpaceGrid()
    tgrid: TimeGrid | None = None
    cfg: SchemeConfig = SchemeConfig()

    def __post_init__(self) -> None:
        self.obs.check(self.model.n)

    @property
    def time_grid(self) -> TimeGrid:
        if self.tgrid is not None:
            return self.tgrid
        tau = self.obs.tau_star
        return TimeGrid(tau, max(8, int(round(400 * tau))))


def dupire_system(model: RegimeModel, grid: SpaceGrid) -> ParabolicSystem:
    a = model.diffusion(grid.y)
    drift = -(a + (model.rates - model.dividends)[:, None])
    coupling = model.b - np.diag(model.dividends)
    return ParabolicSystem.advection_diffusion(a, drift, coupling, grid, "linear")


def aux_system(model: RegimeModel, grid: SpaceGrid) -> ParabolicSystem:
    a = model.diffusion(grid.y)
    transport = np.broadcast_to((model.rates - model.dividends)[:, None], a.shape)
    coupling = model.b - np.diag(model.dividends)
    return ParabolicSystem.density_form(a, transport, coupling, grid, "dirichlet")


def discrete_delta(grid: SpaceGrid, n: int, state: int) -> NDArray[np.float64]:
    """Initial state (m, n, 1) with 1/dy at the y = 0 node of one component."""
    u0 = np.zeros((grid.m, n, 1))
    u0[grid.zero_index, state, 0] = 1.0 / grid.dy
    return u0


def solve_dupire(p: ForwardProblem) -> SolutionField:
    """w_A(y, tau): column j* of the call-price matrix, w(y, 0) = max(1 - e^y, 0) e_{j*}.

    The kink of the initial data sits on the y = 0 node, so its discrete
    curvature is exactly the discrete delta used for the auxiliary density.
    """
    grid, n = p.grid, p.model.n
    u0 = np.zeros((grid.m, n, 1))
    u0[:, p.obs.j_star, 0] = np.maximum(1.0 - np.exp(grid.y), 0.0)
    states = evolve(dupire_system(p.model, grid), u0, p.time_grid, p.cfg)
    return to_field(states, grid, p.time_grid)


def dupire_prices(w: SolutionField, strikes: ArrayLike, tau: float) -> NDArray[np.float64]:
    """C*(K, eps_i) read off the forward field, shape (n, #strikes)."""
    return w.sample(np.log(np.asarray(strikes, dtype=float)), tau)


def solve_aux_density(model_base: RegimeModel, obs: ObservationSpec, grid: SpaceGrid = SpaceGrid(),
                      tgrid: TimeGrid | None = None, cfg: SchemeConfig = SchemeConfig()) -> SolutionField:
    """v for the base model, started from a discrete delta in component j*."""
    obs.check(model_base.n)
    tgrid = tgrid or ForwardProblem(model_base, obs, grid).time_grid
    u0 = discrete_delta(grid, model_base.n, obs.j_star)
    states = evolve(aux_system(model_base, grid), u0, tgrid, cfg)
    return to_field(states, grid, tgrid)


def curvature_field(w: SolutionField) -> SolutionField:
    """(d_yy - d_y) w on the same grid: the source density implied by a price field."""
    dy = w.dy
    vals = np.moveaxis(w.values, 2, 1)  # (n, L, m)
    d = second_difference(vals, dy) - first_difference(vals, dy)
    return SolutionField(np.moveaxis(d, 1, 2).copy(), w.y, w.tau)


def solve_linearized(a1_model: RegimeModel, g: ArrayLike, v: SolutionField, grid: SpaceGrid = SpaceGrid(),
                     tgrid: TimeGrid | None = None, cfg: SchemeConfig = SchemeConfig(),
                     keep: str = "all") -> SolutionField | NDArray[np.float64]:
    """Solve (d_tau - L_{A1}) w = G v, w(., 0) = 0.

    ``g`` holds the diagonal of G on the grid: shape (n, m) for one perturbation
    or (c, n, m) for a batch, solved together. A batch returns the final states
    (m, n, c) when ``keep == "last"``, otherwise the (p+1, m, n, c) history.
    """
    g = np.asarray(g, dtype=float)
    single = g.ndim == 2
    gb = g[None] if single else g
    if gb.shape[1:] != (a1_model.n, grid.m) or v.values.shape[:2] != (a1_model.n, grid.m):
        raise ShapeMismatch(f"perturbation {g.shape} / density {v.values.shape} vs grid "
                            f"({a1_model.n}, {grid.m})")
    if not np.allclose(v.y, grid.y):
        raise ShapeMismatch("density field lives on a different space grid")
    tgrid = tgrid or TimeGrid(float(v.tau[-1]), v.tau.size - 1)
    if tgrid.tau_max > v.tau[-1] + 1e-12:
        raise ShapeMismatch("density field does not reach the requested horizon")
    gt = np.transpose(gb, (2, 1, 0))  # (m, n, c)

    def source(tau: float) -> NDArray[np.float64]:
        return gt * v.at(tau).T[:, :, None]

    u0 = np.zeros((grid.m, a1_model.n, gb.shape[0]))
    states = evolve(dupire_system(a1_model, grid), u0, tgrid, cfg, source=source,
                    keep="last" if keep == "last" else "all")
    if single and keep != "last":
        return to_field(states, grid, tgrid)
    return states
