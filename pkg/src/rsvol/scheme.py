"""Theta-scheme time stepping for weakly coupled parabolic systems.

A system is stored as per-component three-point stencils plus a constant
n x n zeroth-order coupling matrix, i.e. on interior node k

    (L u)_k = lower_k * u_{k-1} + diag_k * u_k + upper_k * u_{k+1} + C @ u_k

with the stencil arrays of shape (n, m). Implicit steps solve a
block-tridiagonal system (diagonal off-blocks, dense n x n diagonal blocks)
by block-Thomas recursion.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np
from numpy.typing import NDArray

from .errors import GridTooCoarse, NonfiniteSolution, ShapeMismatch
from .grid import SolutionField, SpaceGrid, TimeGrid

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

logger = logging.getLogger(__name__)

Boundary = Literal["linear", "dirichlet"]
Source = Callable[[float], NDArray[np.float64]]

# dtau / dy^2 cap for theta < 1/2
EXPLICIT_CFL_CAP = 0.5


@dataclass(frozen=True)
class SchemeConfig:
    theta: float = 0.5
    # fully implicit half-steps replacing the first rannacher_half_steps / 2 steps
    rannacher_half_steps: int = 4


@dataclass(frozen=True)
class ParabolicSystem:
    lower: NDArray[np.float64]
    diag: NDArray[np.float64]
    upper: NDArray[np.float64]
    coupling: NDArray[np.float64]
    grid: SpaceGrid
    boundary: Boundary = "linear"

    @property
    def n(self) -> int:
        return self.coupling.shape[0]

    @classmethod
    def advection_diffusion(cls, diffusion, drift, coupling, grid: SpaceGrid,
                            boundary: Boundary = "linear") -> "ParabolicSystem":
        """u_tau = diffusion * u_yy + drift * u_y + coupling @ u (non-conservative)."""
        n = np.shape(coupling)[0]
        a = np.broadcast_to(np.asarray(diffusion, float), (n, grid.m))
        c = np.broadcast_to(np.asarray(drift, float), (n, grid.m))
        h = grid.dy
        return cls(a / h**2 - c / (2 * h), -2.0 * a / h**2, a / h**2 + c / (2 * h),
                   np.asarray(coupling, float), grid, boundary)

    @classmethod
    def density_form(cls, diffusion, transport, coupling, grid: SpaceGrid,
                     boundary: Boundary = "dirichlet") -> "ParabolicSystem":
        """v_tau = (d_yy - d_y)(diffusion * v) - transport * v_y + coupling @ v.

        Conservative: differences act on the product diffusion * v, so the
        discrete mass changes only through boundary fluxes and the coupling.
        """
        n = np.shape(coupling)[0]
        a = np.broadcast_to(np.asarray(diffusion, float), (n, grid.m))
        c = np.broadcast_to(np.asarray(transport, float), (n, grid.m))
        h = grid.dy
        lower = np.zeros((n, grid.m))
        upper = np.zeros((n, grid.m))
        lower[:, 1:] = a[:, :-1] * (1.0 / h**2 + 1.0 / (2 * h))
        upper[:, :-1] = a[:, 1:] * (1.0 / h**2 - 1.0 / (2 * h))
        lower += c / (2 * h)
        upper -= c / (2 * h)
        return cls(lower, -2.0 * a / h**2, upper, np.asarray(coupling, float), grid, boundary)

    def apply(self, u: NDArray[np.float64]) -> NDArray[np.float64]:
        """(L u) on interior nodes for full-grid u of shape (m, n, c); returns (m-2, n, c)."""
        lo = self.lower.T[1:-1, :, None]
        di = self.diag.T[1:-1, :, None]
        up = self.upper.T[1:-1, :, None]
        out = lo * u[:-2] + di * u[1:-1] + up * u[2:]
        out += np.einsum("ij,kjc->kic", self.coupling, u[1:-1])
        return out

    def fill_boundary(self, u: NDArray[np.float64]) -> None:
        """Set boundary rows of a full-grid state (m, n, c) in place."""
        if self.boundary == "linear":
            u[0] = 2.0 * u[1] - u[2]
            u[-1] = 2.0 * u[-2] - u[-3]
        else:
            u[0] = 0.0
            u[-1] = 0.0

    def eliminated_bands(self) -> tuple[NDArray, NDArray, NDArray]:
        """Interior stencils (M, n) after eliminating the boundary unknowns."""
        lo = self.lower.T[1:-1].copy()
        di = self.diag.T[1:-1].copy()
        up = self.upper.T[1:-1].copy()
        if self.boundary == "linear":
            # u_0 = 2 u_1 - u_2 ; u_{m-1} = 2 u_{m-2} - u_{m-3}
            di[0] += 2.0 * lo[0]
            up[0] -= lo[0]
            di[-1] += 2.0 * up[-1]
            lo[-1] -= up[-1]
        lo[0] = 0.0
        up[-1] = 0.0
        return lo, di, up


@njit(cache=True)
def _block_factor(lo, di, up, coupling, scale):
    """Factor I - scale * L; returns inverse pivots P, forward multipliers F, back multipliers U."""
    mm, n = di.shape
    p = np.empty((mm, n, n))
    f = np.zeros((mm, n, n))
    u = np.zeros((mm, n, n))
    ident = np.eye(n)
    prev = np.zeros((n, n))
    for k in range(mm):
        blk = ident - scale * coupling
        for i in range(n):
            blk[i, i] -= scale * di[k, i]
        if k > 0:
            # F_k = diag(-scale*lo_k) P_{k-1}; D'_k = D_k - F_k diag(-scale*up_{k-1})
            for i in range(n):
                for j in range(n):
                    f[k, i, j] = -scale * lo[k, i] * prev[i, j]
            for i in range(n):
                for j in range(n):
                    blk[i, j] -= f[k, i, j] * (-scale * up[k - 1, j])
        prev = np.linalg.inv(blk)
        p[k] = prev
    for k in range(mm - 1):
        for i in range(n):
            for j in range(n):
                u[k, i, j] = p[k, i, j] * (-scale * up[k, j])
    return p, f, u


@njit(cache=True)
def _block_solve(p, f, u, rhs):
    mm, n, nc = rhs.shape
    y = rhs.copy()
    for k in range(1, mm):
        y[k] -= f[k] @ y[k - 1]
    x = np.empty_like(rhs)
    x[mm - 1] = p[mm - 1] @ y[mm - 1]
    for k in range(mm - 2, -1, -1):
        x[k] = p[k] @ y[k] - u[k] @ x[k + 1]
    return x


class ImplicitOperator:
    """Factorised I - scale * L (interior unknowns, boundary eliminated)."""

    def __init__(self, system: ParabolicSystem, scale: float):
        lo, di, up = system.eliminated_bands()
        self.p, self.f, self.u = _block_factor(
            np.ascontiguousarray(lo), np.ascontiguousarray(di), np.ascontiguousarray(up),
            np.ascontiguousarray(system.coupling), float(scale),
        )

    def solve(self, rhs: NDArray[np.float64]) -> NDArray[np.float64]:
        return _block_solve(self.p, self.f, self.u, np.ascontiguousarray(rhs))


def _steps(tgrid: TimeGrid, cfg: SchemeConfig) -> list[tuple[float, float]]:
    """(theta, dt) for each sub-step."""
    half = min(cfg.rannacher_half_steps, 2 * tgrid.p) if cfg.theta != 1.0 else 0
    half -= half % 2
    dt = tgrid.dtau
    out = [(1.0, 0.5 * dt)] * half
    out += [(cfg.theta, dt)] * (tgrid.p - half // 2)
    return out


def evolve(system: ParabolicSystem, u0: NDArray[np.float64], tgrid: TimeGrid,
           cfg: SchemeConfig = SchemeConfig(), source: Source | None = None,
           keep: Literal["all", "last"] = "all") -> NDArray[np.float64]:
    """Advance u_tau = L u + s from u0 of shape (m, n, c).

    Returns the full-grid states at every full time level, shape (p+1, m, n, c),
    or only the final state (m, n, c) when ``keep == "last"``. ``source(tau)``
    must return full-grid arrays (m, n, c) (or broadcastable).
    """
    m, n = system.grid.m, system.n
    u = np.array(u0, dtype=float)
    if u.ndim == 2:
        u = u[:, :, None]
    if u.shape[:2] != (m, n):
        raise ShapeMismatch(f"initial state shape {u.shape} vs grid {m} x {n}")
    if cfg.theta < 0.5 and tgrid.dtau / system.grid.dy**2 > EXPLICIT_CFL_CAP:
        warnings.warn(f"theta={cfg.theta} with dtau/dy^2={tgrid.dtau / system.grid.dy**2:.3g}",
                      GridTooCoarse, stacklevel=2)
    ops: dict[tuple[float, float], ImplicitOperator] = {}
    out = np.empty((tgrid.p + 1,) + u.shape) if keep == "all" else None
    if out is not None:
        out[0] = u
    tau = 0.0
    level = 0
    elapsed_half = 0
    for theta, dt in _steps(tgrid, cfg):
        key = (theta, dt)
        if key not in ops:
            ops[key] = ImplicitOperator(system, theta * dt)
        rhs = u[1:-1].copy()
        if theta < 1.0:
            rhs += (1.0 - theta) * dt * system.apply(u)
        if source is not None:
            s_new = np.broadcast_to(source(tau + dt), u.shape)[1:-1]
            rhs += theta * dt * s_new
            if theta < 1.0:
                rhs += (1.0 - theta) * dt * np.broadcast_to(source(tau), u.shape)[1:-1]
        nxt = np.empty_like(u)
        nxt[1:-1] = ops[key].solve(rhs)
        system.fill_boundary(nxt)
        u = nxt
        tau += dt
        if theta == 1.0 and dt < tgrid.dtau:
            elapsed_half += 1
            if elapsed_half % 2:
                continue
        level += 1
        tau = level * tgrid.dtau
        if not np.all(np.isfinite(u)):
            raise NonfiniteSolution(f"non-finite values at tau = {tau:.6g}")
        if out is not None:
            out[level] = u
    return out if out is not None else u


def to_field(states: NDArray[np.float64], grid: SpaceGrid, tgrid: TimeGrid, column: int = 0) -> SolutionField:
    """Wrap evolve() output (p+1, m, n, c) into a SolutionField for one column."""
    vals = np.transpose(states[:, :, :, column], (2, 1, 0)).copy()
    return SolutionField(vals, grid.y, tgrid.tau)
