"""Fundamental-solution tools: numeric columns, Gaussian lower bounds, Levy-series checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import brentq

from .dupire import aux_system, discrete_delta
from .grid import SolutionField, SpaceGrid, TimeGrid, Window
from .markov import expm_pade6
from .model import RegimeModel
from .scheme import ParabolicSystem, SchemeConfig, evolve, to_field

EPS0_GRID = (0.25, 0.5, 1.0)
DEFAULT_TAUS = (0.1, 0.25, 0.5, 0.75, 1.0)

# kernel(y, tau) -> E[i, j, k] at nodes y[k], pole at y0 = 0, s = 0
Kernel = Callable[[NDArray[np.float64], float], NDArray[np.float64]]


@dataclass(frozen=True)
class LowerBoundParams:
    delta0: float
    eps0: float
    b_star: NDArray[np.float64]

    def __post_init__(self) -> None:
        b = np.atleast_2d(np.asarray(self.b_star, dtype=float))
        off = b - np.diag(np.diag(b))
        if not (np.isfinite(self.delta0) and self.delta0 > 0 and np.isfinite(self.eps0) and self.eps0 > 0):
            raise ValueError("delta0 and eps0 must be finite and positive")
        if np.any(off < 0):
            raise ValueError("b_star off-diagonal entries must be >= 0")
        object.__setattr__(self, "b_star", b)

    @property
    def rate(self) -> float:
        """c = delta0 * sqrt(pi / eps0)."""
        return self.delta0 * math.sqrt(math.pi / self.eps0)


@dataclass
class PositivityReport:
    min_gap: float
    delta0_star: float
    eps0_star: float
    violated: bool
    per_eps0: dict[float, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"min_gap": self.min_gap, "delta0_star": self.delta0_star, "violated": self.violated}


def heat_system(grid: SpaceGrid, diffusion: float | Sequence[float] = 0.5,
                coupling: ArrayLike | None = None) -> ParabolicSystem:
    """u_tau = a u_yy + coupling @ u with density-style zero boundaries."""
    a = np.atleast_1d(np.asarray(diffusion, dtype=float))
    c = np.zeros((a.size, a.size)) if coupling is None else np.asarray(coupling, float)
    return ParabolicSystem.advection_diffusion(a[:, None], 0.0, c, grid, "dirichlet")


def numeric_fundamental_column(target: RegimeModel | ParabolicSystem, source_state: int,
                               grid: SpaceGrid = SpaceGrid(), tgrid: TimeGrid = TimeGrid(1.0, 400),
                               cfg: SchemeConfig = SchemeConfig()) -> SolutionField:
    """Column ``source_state`` of E(y, tau; 0, 0).

    A RegimeModel is mapped to its auxiliary (adjoint-form) system, the
    system whose fundamental column is the state-price density v.
    """
    system = aux_system(target, grid) if isinstance(target, RegimeModel) else target
    u0 = discrete_delta(system.grid, system.n, source_state)
    states = evolve(system, u0, tgrid, cfg)
    return to_field(states, system.grid, tgrid)


def heat_kernel(diffusion: float = 0.5) -> Kernel:
    def kern(y: NDArray[np.float64], tau: float) -> NDArray[np.float64]:
        g = np.exp(-y * y / (4 * diffusion * tau)) / math.sqrt(4 * math.pi * diffusion * tau)
        return g[None, None, :]
    return kern


def lower_bound_matrix(p: LowerBoundParams, y: float | NDArray, z: float, tau_minus_s: float) -> NDArray[np.float64]:
    """delta0 * exp(c (tau - s) B*) * exp(-eps0 (y - z)^2 / (tau - s)) / sqrt(tau - s).

    Scalar ``y`` gives an (n, n) matrix; an array gives (n, n, len(y)).
    """
    if not tau_minus_s > 0:
        raise ValueError("tau - s must be > 0")
    mat = p.delta0 * expm_pade6(p.rate * tau_minus_s * p.b_star)
    g = np.exp(-p.eps0 * (np.asarray(y, float) - z) ** 2 / tau_minus_s) / math.sqrt(tau_minus_s)
    return mat * g if np.ndim(g) == 0 else mat[:, :, None] * g


def _numeric_kernel(target, grid: SpaceGrid, tau_max: float, steps: int, cfg: SchemeConfig):
    system = aux_system(target, grid) if isinstance(target, RegimeModel) else target
    tgrid = TimeGrid(tau_max, steps)
    cols = [numeric_fundamental_column(system, j, grid, tgrid, cfg) for j in range(system.n)]

    def kern(y: NDArray[np.float64], tau: float) -> NDArray[np.float64]:
        return np.stack([c.sample(y, tau) for c in cols], axis=1)  # [i, j, k]
    return kern, system


def _gap(kvals: dict[float, NDArray], y: NDArray, p: LowerBoundParams) -> float:
    return min(float(np.min(kv - lower_bound_matrix(p, y, 0.0, tau))) for tau, kv in kvals.items())


def verify_positivity_bound(target: RegimeModel | ParabolicSystem | None,
                            params: LowerBoundParams | None = None,
                            window: Window = (-2.0, 2.0), taus: Sequence[float] = DEFAULT_TAUS,
                            grid: SpaceGrid = SpaceGrid(), kernel: Kernel | None = None,
                            b_star: ArrayLike | None = None, eps0_grid: Sequence[float] = EPS0_GRID,
                            steps_per_unit: int = 400, cfg: SchemeConfig = SchemeConfig()) -> PositivityReport:
    """Compare E(y, tau; 0, 0) with the Gaussian lower-bound matrix on a window.

    With ``params`` the gap is reported at the given constants; in every case the
    largest feasible delta0 is searched on ``eps0_grid``. ``kernel`` replaces the
    numeric fundamental solution (e.g. a closed-form heat kernel).
    """
    taus = tuple(sorted(taus))
    if kernel is None:
        kernel, system = _numeric_kernel(target, grid, taus[-1], max(8, int(steps_per_unit * taus[-1])), cfg)
        n = system.n
        default_b = system.coupling - np.diag(np.diag(system.coupling))
    else:
        n = kernel(np.zeros(1), taus[0]).shape[0]
        default_b = np.zeros((n, n))
    bs = np.asarray(b_star, float) if b_star is not None else (
        params.b_star if params is not None else default_b)
    ys = grid.y[grid.mask(window)]
    kvals = {t: kernel(ys, t) for t in taus}

    per: dict[float, float] = {}
    for eps0 in eps0_grid:
        per[eps0] = _largest_delta0(kvals, ys, eps0, bs)
    eps_star = max(per, key=per.get)
    d_star = per[eps_star]
    if params is not None:
        gap = _gap(kvals, ys, params)
    elif d_star > 0:
        gap = _gap(kvals, ys, LowerBoundParams(d_star, eps_star, bs))
    else:
        # no representable delta0: report the kernel minimum itself (bound with delta0 -> 0)
        gap = min(float(kv.min()) for kv in kvals.values())
    return PositivityReport(gap, d_star, eps_star, gap < 0, per)


def _largest_delta0(kvals, ys, eps0: float, bs, floor: float = 1e-12) -> float:
    """Largest delta0 >= ``floor`` with a nonnegative gap, or 0 if none exists.

    The gap decreases in delta0, so a golden-section bracket on log(delta0)
    followed by a root polish locates the feasibility boundary.
    """
    def f(log_d: float) -> float:
        return _gap(kvals, ys, LowerBoundParams(math.exp(log_d), eps0, bs))

    lo, hi = math.log(floor), 0.0
    if f(lo) < 0:
        return 0.0
    while f(hi) >= 0:
        lo, hi = hi, hi + math.log(2.0)
        if hi > math.log(1e6):
            return math.exp(lo)
    phi = (math.sqrt(5) - 1) / 2
    for _ in range(30):
        mid = hi - phi * (hi - lo)
        if f(mid) >= 0:
            lo = mid
        else:
            hi = mid
    root = brentq(f, lo, hi, xtol=1e-15) if f(hi) < 0 <= f(lo) else lo
    return math.exp(root) if f(root) >= 0 else math.exp(lo)


def gaussian_convolution_check(eps0: float, t1: float, t2: float, y: float = 0.0,
                               half_width: float = 12.0, nodes: int = 24001) -> tuple[float, float]:
    """(numeric p_t1 * p_t2 at y, sqrt(pi/eps0) p_{t1+t2}(y)) for p_t(z) = e^{-eps0 z^2/t}/sqrt(t)."""
    z = np.linspace(-half_width, half_width, nodes)
    p1 = np.exp(-eps0 * (y - z) ** 2 / t1) / math.sqrt(t1)
    p2 = np.exp(-eps0 * z * z / t2) / math.sqrt(t2)
    num = float(np.trapezoid(p1 * p2, z))
    exact = math.sqrt(math.pi / eps0) * math.exp(-eps0 * y * y / (t1 + t2)) / math.sqrt(t1 + t2)
    return num, exact


def levy_series_terms(diffusions: Sequence[float], b: ArrayLike, tau: float, p_max: int = 3,
                      z_half_width: float = 6.0, dz: float = 0.05, t_nodes: int = 24) -> tuple[NDArray, list[NDArray]]:
    """Quadrature of the series terms Phi_p(y, tau; 0, 0), p = 1..p_max.

    The diagonal part is the closed-form heat kernel of each component and
    ``b`` the nonnegative off-diagonal coupling. Inner time integrals use
    Gauss-Legendre nodes, space integrals the trapezoid rule. Returns the
    z-grid and a list of (n, n, len(z)) arrays.
    """
    a = np.asarray(diffusions, dtype=float)
    bm = np.asarray(b, dtype=float)
    z = np.arange(-z_half_width, z_half_width + 0.5 * dz, dz)
    wz = np.full(z.size, dz)
    wz[0] = wz[-1] = 0.5 * dz
    diff = z[:, None] - z[None, :]
    xg, wg = np.polynomial.legendre.leggauss(t_nodes)

    def ediag(t: float) -> NDArray:
        # (n, len(y), len(z)) kernels e_k(y - z, t)
        return np.exp(-diff[None] ** 2 / (4 * a[:, None, None] * t)) / np.sqrt(4 * np.pi * a[:, None, None] * t)

    def phi1_at_origin(t: float) -> NDArray:
        e0 = np.exp(-z[None] ** 2 / (4 * a[:, None] * t)) / np.sqrt(4 * np.pi * a[:, None] * t)  # (n, len(z))
        return bm[:, :, None] * e0[None, :, :]

    def phi(p: int, t: float) -> NDArray:
        if p == 1:
            return phi1_at_origin(t)
        out = np.zeros((a.size, a.size, z.size))
        nodes = 0.5 * t * (xg + 1.0)
        for tn, wn in zip(nodes, 0.5 * t * wg):
            prev = phi(p - 1, tn)  # (k, j, z)
            ker = ediag(t - tn) * wz[None, None, :]  # (k, y, z)
            conv = np.einsum("kyz,kjz->kjy", ker, prev)
            out += wn * np.einsum("ik,kjy->ijy", bm, conv)
        return out

    return z, [phi(p, tau) for p in range(1, p_max + 1)]


def levy_term_lower_bound(p: int, delta0: float, eps0: float, b_star: ArrayLike, y: NDArray, tau: float) -> NDArray:
    """delta0^p (pi/eps0)^{(p-1)/2} tau^{p-1}/(p-1)! (B*^p)_ij exp(-eps0 y^2/tau)/sqrt(tau)."""
    bp = np.linalg.matrix_power(np.asarray(b_star, float), p)
    coef = delta0**p * (math.pi / eps0) ** ((p - 1) / 2) * tau ** (p - 1) / math.factorial(p - 1)
    g = np.exp(-eps0 * y * y / tau) / math.sqrt(tau)
    return coef * bp[:, :, None] * g[None, None, :]
