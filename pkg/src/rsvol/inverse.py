"""Linearised reconstruction of the diffusion perturbation and empirical stability checks.

The unknown is G = A1 - A2 (diagonal, per regime) expanded in hat functions.
Observed price differences w(., tau*) on the window omega are compared through
weighted rows (value, D, D^2), a discrete H^2(omega) misfit, and the normal
equations are solved with a Cholesky factorisation.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .backward import price_surface
from .dupire import ForwardProblem, solve_aux_density, solve_dupire, solve_linearized
from .errors import DimensionMismatch, ShapeMismatch, SingularNormalMatrix, ValidationError
from .grid import (DomainWindows, SolutionField, SpaceGrid, TimeGrid, Window, first_difference,
                   trapezoid_weights, window_derivatives)
from .markov import is_irreducible
from .model import ObservationSpec, RegimeModel, VolCurve
from .scheme import SchemeConfig

Mode = Literal["compact", "free"]


@dataclass(frozen=True)
class Perturbation:
    """Diagonal of G = A1 - A2 on the space grid, shape (n, m)."""

    values: NDArray[np.float64]
    y: NDArray[np.float64]
    support_window: Window | None = None

    def __post_init__(self) -> None:
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        if v.shape[-1] != np.asarray(self.y).size:
            raise ShapeMismatch(f"perturbation has {v.shape[-1]} nodes, grid has {np.asarray(self.y).size}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("perturbation must be finite")
        if self.support_window is not None:
            lo, hi = self.support_window
            outside = (self.y < lo - 1e-12) | (self.y > hi + 1e-12)
            if np.any(v[:, outside] != 0.0):
                raise ValidationError(f"perturbation is not supported in {self.support_window}")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def l2(self, window: Window | None = None) -> float:
        y = self.y
        sel = np.ones(y.size, bool) if window is None else (y >= window[0] - 1e-12) & (y <= window[1] + 1e-12)
        return float(np.sqrt(np.trapezoid(self.values[:, sel] ** 2, y[sel], axis=-1).sum()))

    @classmethod
    def zero(cls, n: int, grid: SpaceGrid) -> "Perturbation":
        return cls(np.zeros((n, grid.m)), grid.y)


def gaussian_bump(grid: SpaceGrid, n: int, regime: int, amplitude: float, center: float, width: float,
                  support: Window | None = None) -> Perturbation:
    """amplitude * exp(-(y - c)^2 / (2 w^2)) in one regime, cut to ``support`` if given."""
    g = np.zeros((n, grid.m))
    g[regime] = amplitude * np.exp(-0.5 * ((grid.y - center) / width) ** 2)
    if support is not None:
        g[:, (grid.y < support[0]) | (grid.y > support[1])] = 0.0
    return Perturbation(g, grid.y, support)


def smooth_bump(y: NDArray[np.float64], n: int, regime: int, center: float, half_width: float) -> NDArray[np.float64]:
    """C^2 profile (1 - u^2)^3 on |u| < 1, u = (y - center) / half_width, unit height."""
    u = (np.asarray(y) - center) / half_width
    out = np.zeros((n, np.asarray(y).size))
    out[regime] = np.where(np.abs(u) < 1, (1 - u * u) ** 3, 0.0)
    return out


@dataclass(frozen=True)
class ReconstructionConfig:
    basis: int = 25
    alpha: float = 1e-10
    data_norm_order: int = 2
    mode: Mode = "compact"
    row_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    alpha_rule: Literal["fixed", "discrepancy"] = "fixed"
    noise_level: float = 0.0  # pointwise standard deviation of the data noise
    discrepancy_factor: float = 1.0
    relinearize: int = 0  # extra fixed-point passes with A1 = A2 + G_hat

    def __post_init__(self) -> None:
        if self.basis < 2:
            raise ValidationError("basis must have at least 2 hats per regime")
        if not self.alpha >= 0:
            raise ValidationError("alpha must be >= 0")
        if self.data_norm_order not in (0, 1, 2):
            raise ValidationError("data_norm_order must be 0, 1 or 2")
        if self.mode not in ("compact", "free"):
            raise ValidationError(f"unknown mode {self.mode!r}")
        if self.alpha_rule not in ("fixed", "discrepancy"):
            raise ValidationError(f"unknown alpha rule {self.alpha_rule!r}")
        if self.alpha_rule == "discrepancy" and not self.noise_level > 0:
            raise ValidationError("the discrepancy rule needs noise_level > 0")

    def effective_weights(self) -> tuple[float, float, float]:
        w0, w1, w2 = self.row_weights
        return (w0, w1 if self.data_norm_order >= 1 else 0.0, w2 if self.data_norm_order >= 2 else 0.0)


def hat_functions(y: NDArray[np.float64], window: Window, count: int) -> NDArray[np.float64]:
    """``count`` hats on equally spaced interior knots of ``window``; all vanish at its ends."""
    knots = np.linspace(window[0], window[1], count + 2)
    h = knots[1] - knots[0]
    return np.clip(1.0 - np.abs(y[None, :] - knots[1:-1, None]) / h, 0.0, None)


@dataclass(frozen=True)
class DataMap:
    """Linear map from a slice on omega (n, k) to weighted misfit rows."""

    index: NDArray[np.int64]
    operator: NDArray[np.float64]  # (3k, k)

    @classmethod
    def build(cls, grid: SpaceGrid, window: Window, weights: tuple[float, float, float]) -> "DataMap":
        idx = np.flatnonzero(grid.mask(window))
        k = idx.size
        eye = np.eye(k)
        d1, d2 = window_derivatives(eye, grid.dy)  # rows of eye are unit vectors, derivatives along last axis
        sq = np.sqrt(trapezoid_weights(k, grid.dy))
        blocks = [np.sqrt(wt) * sq[:, None] * op.T for wt, op in zip(weights, (eye, d1, d2))]
        return cls(idx, np.vstack(blocks))

    def apply(self, u: NDArray[np.float64]) -> NDArray[np.float64]:
        """(..., n, m) on the full grid -> (..., n * 3k) misfit vector."""
        seg = u[..., self.index]
        rows = np.einsum("rk,...k->...r", self.operator, seg)
        return rows.reshape(*rows.shape[:-2], -1)

    def noise_norm(self, sigma: float, n: int) -> float:
        """Expected norm of the image of white noise with standard deviation ``sigma``."""
        return float(sigma * math.sqrt(n) * np.linalg.norm(self.operator))


@dataclass
class Sensitivity:
    matrix: NDArray[np.float64]  # rows: data map, columns: regime-major hats
    hats: NDArray[np.float64]  # (basis, m)
    data_map: DataMap
    grid: SpaceGrid
    n: int
    final_fields: NDArray[np.float64] = field(repr=False)  # (m, n, columns)

    def expand(self, coeffs: NDArray[np.float64]) -> NDArray[np.float64]:
        """Coefficients -> G on the grid, shape (n, m)."""
        return coeffs.reshape(self.n, -1) @ self.hats

    def mass_matrix(self) -> NDArray[np.float64]:
        w = trapezoid_weights(self.grid.m, self.grid.dy)
        gram = (self.hats * w) @ self.hats.T
        return np.kron(np.eye(self.n), gram)

    def column_norms(self) -> NDArray[np.float64]:
        return np.linalg.norm(self.matrix, axis=0)


def clip_density(v: SolutionField, model: RegimeModel) -> SolutionField:
    """Zero the negative undershoots of v when the chain is irreducible (true v is >= 0)."""
    if not is_irreducible(model.generator):
        return v
    return SolutionField(np.maximum(v.values, 0.0), v.y, v.tau)


def _basis_window(windows: DomainWindows, mode: Mode) -> Window:
    return windows.omega1 if mode == "compact" else windows.omega


def assemble_sensitivity(a1_model: RegimeModel, v: SolutionField, windows: DomainWindows,
                         cfg: ReconstructionConfig = ReconstructionConfig(), grid: SpaceGrid = SpaceGrid(),
                         tgrid: TimeGrid | None = None, scheme: SchemeConfig = SchemeConfig(),
                         threads: int = 1, hats: NDArray[np.float64] | None = None) -> Sensitivity:
    """Columns = data-map images of the linearised responses to each basis hat at tau*.

    ``hats`` overrides the default hat basis (rows are profiles on the grid).
    Columns are solved in chunks; the assembly order does not depend on ``threads``.
    """
    windows.check(grid)
    n = a1_model.n
    if hats is None:
        hats = hat_functions(grid.y, _basis_window(windows, cfg.mode), cfg.basis)
    nb = hats.shape[0]
    gs = np.zeros((n * nb, n, grid.m))
    for i in range(n):
        gs[i * nb:(i + 1) * nb, i, :] = hats

    chunks = np.array_split(np.arange(gs.shape[0]), max(1, threads))
    chunks = [c for c in chunks if c.size]

    def run(c: NDArray[np.int64]) -> NDArray[np.float64]:
        return solve_linearized(a1_model, gs[c], v, grid, tgrid, scheme, keep="last")

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    final = np.concatenate(parts, axis=2)  # (m, n, c)
    dmap = DataMap.build(grid, windows.omega, cfg.effective_weights())
    mat = dmap.apply(np.transpose(final, (2, 1, 0))).T  # (rows, c)
    return Sensitivity(mat, hats, dmap, grid, n, final)


@dataclass
class Reconstruction:
    perturbation: Perturbation
    coefficients: NDArray[np.float64]
    alpha: float
    misfit: float
    target_misfit: float = float("nan")


def _solve_normal(sens: Sensitivity, rhs_vec: NDArray[np.float64], alpha: float) -> NDArray[np.float64]:
    m = sens.matrix
    normal = m.T @ m + alpha * sens.mass_matrix()
    if alpha == 0.0:
        s = np.linalg.svd(m, compute_uv=False)
        if s[-1] <= s[0] * max(m.shape) * np.finfo(float).eps:
            raise SingularNormalMatrix("alpha = 0 and the sensitivity matrix is rank deficient")
    try:
        c = cho_factor(normal, lower=True)
    except LinAlgError as exc:
        raise SingularNormalMatrix(f"normal matrix is not positive definite (alpha={alpha})") from exc
    return cho_solve(c, m.T @ rhs_vec)


def _misfit(sens: Sensitivity, coef: NDArray, d: NDArray) -> float:
    return float(np.linalg.norm(sens.matrix @ coef - d))


def discrepancy_alpha(sens: Sensitivity, d: NDArray[np.float64], target: float,
                      lo: float = 1e-16, hi: float = 1e4, iterations: int = 60) -> float:
    """Bisection on log(alpha) for misfit(alpha) = target (the misfit grows with alpha)."""
    scale = float(np.trace(sens.matrix.T @ sens.matrix) / np.trace(sens.mass_matrix()))
    a_lo, a_hi = math.log(lo * scale), math.log(hi * scale)
    if _misfit(sens, _solve_normal(sens, d, math.exp(a_lo)), d) >= target:
        return math.exp(a_lo)
    if _misfit(sens, _solve_normal(sens, d, math.exp(a_hi)), d) <= target:
        return math.exp(a_hi)
    for _ in range(iterations):
        mid = 0.5 * (a_lo + a_hi)
        if _misfit(sens, _solve_normal(sens, d, math.exp(mid)), d) < target:
            a_lo = mid
        else:
            a_hi = mid
    return math.exp(0.5 * (a_lo + a_hi))


def reconstruct(data: ArrayLike, cfg: ReconstructionConfig, sens: Sensitivity) -> Reconstruction:
    """G_hat minimising |M g - data|^2 + alpha |g|^2_{L2}; ``data`` is w(., tau*) of shape (n, m)."""
    data = np.asarray(data, dtype=float)
    if data.shape != (sens.n, sens.grid.m):
        raise ShapeMismatch(f"data shape {data.shape} != {(sens.n, sens.grid.m)}")
    if not np.all(np.isfinite(data)):
        raise ValidationError("data must be finite")
    d = sens.data_map.apply(data)
    target = float("nan")
    if cfg.alpha_rule == "discrepancy":
        target = cfg.discrepancy_factor * sens.data_map.noise_norm(cfg.noise_level, sens.n)
        alpha = discrepancy_alpha(sens, d, target)
    else:
        alpha = cfg.alpha
    coef = _solve_normal(sens, d, alpha)
    g = sens.expand(coef)
    return Reconstruction(Perturbation(g, sens.grid.y), coef, alpha, _misfit(sens, coef, d), target)


def reconstruct_nonlinear(data: ArrayLike, cfg: ReconstructionConfig, a2_model: RegimeModel,
                          obs: ObservationSpec, windows: DomainWindows, grid: SpaceGrid = SpaceGrid(),
                          tgrid: TimeGrid | None = None, scheme: SchemeConfig = SchemeConfig(),
                          threads: int = 1) -> Reconstruction:
    """Reconstruct from w_{A1} - w_{A2} with ``cfg.relinearize`` fixed-point passes.

    The difference solves the linearised system exactly when the operator uses
    A1, so each pass rebuilds the sensitivity around A2 + G_hat.
    """
    tgrid = tgrid or ForwardProblem(a2_model, obs, grid).time_grid
    v = clip_density(solve_aux_density(a2_model, obs, grid, tgrid, scheme), a2_model)
    a2 = a2_model.diffusion(grid.y)
    base = a2_model
    rec = None
    for _ in range(cfg.relinearize + 1):
        sens = assemble_sensitivity(base, v, windows, cfg, grid, tgrid, scheme, threads)
        rec = reconstruct(data, cfg, sens)
        a1 = np.maximum(a2 + rec.perturbation.values, 0.5 * a2_model.sigma_min**2 + 1e-12)
        base = a2_model.with_diffusion(grid.y, a1)
    assert rec is not None
    return rec


def forward_difference(a2_model: RegimeModel, g: Perturbation, obs: ObservationSpec,
                       grid: SpaceGrid = SpaceGrid(), tgrid: TimeGrid | None = None,
                       scheme: SchemeConfig = SchemeConfig()) -> NDArray[np.float64]:
    """w_{A2 + G} - w_{A2} at tau* on the grid, shape (n, m)."""
    a1_model = a2_model.with_diffusion(grid.y, a2_model.diffusion(grid.y) + g.values)
    w1 = solve_dupire(ForwardProblem(a1_model, obs, grid, tgrid, scheme))
    w2 = solve_dupire(ForwardProblem(a2_model, obs, grid, tgrid, scheme))
    return w1.at(obs.tau_star) - w2.at(obs.tau_star)


# ---------------------------------------------------------------------------
# stability scan


@dataclass
class StabilityRow:
    amplitude: float
    lhs: float
    rhs: float
    ratio: float
    extra: float = 0.0

    def to_json(self) -> dict:
        out = {"amplitude": self.amplitude, "lhs": self.lhs, "rhs": self.rhs, "ratio": self.ratio}
        if self.extra:
            out["extra"] = self.extra
        return out


@dataclass
class StabilityReport:
    rows: list[StabilityRow]
    mode: Mode = "compact"
    blind_tol: float = 1e-10

    @property
    def finite_ratios(self) -> NDArray[np.float64]:
        r = np.array([row.ratio for row in self.rows if row.lhs > 0 and np.isfinite(row.ratio)])
        return r

    @property
    def spread(self) -> float:
        r = self.finite_ratios
        return float(r.max() / r.min()) if r.size else float("nan")

    @property
    def violated(self) -> bool:
        """A perturbation with lhs > 0 that leaves the observed prices unchanged."""
        return any(row.lhs > 0 and row.rhs <= self.blind_tol * row.lhs for row in self.rows)

    def fitted_constant(self) -> float:
        r = self.finite_ratios
        return float(r.max()) if r.size else float("nan")

    def to_json(self) -> list[dict]:
        return [row.to_json() for row in self.rows]


def strike_h2_sq(diff: NDArray[np.float64], y: NDArray[np.float64]) -> float:
    """Squared H^2 norm in the strike variable of prices sampled at K = e^y (uniform y)."""
    dy = float(y[1] - y[0])
    k = np.exp(y)
    d1, d2 = window_derivatives(diff, dy)
    c_k = d1 / k
    c_kk = (d2 - d1) / k**2
    w = trapezoid_weights(y.size, dy) * k
    return float(np.sum(w * (diff**2 + c_k**2 + c_kk**2)))


def _sigma_window_sq(ds: NDArray, y: NDArray, sel: NDArray[np.bool_], measure: NDArray) -> float:
    if not np.any(sel):
        return 0.0
    dy = float(y[1] - y[0])
    return float(np.sum(ds[:, sel] ** 2 * measure[sel] * dy))


def stability_scan(a2_model: RegimeModel, bump_family: Callable[[NDArray[np.float64]], NDArray[np.float64]],
                   amplitudes: Sequence[float], windows: DomainWindows = DomainWindows.default(),
                   obs: ObservationSpec = ObservationSpec(0, 0.5), grid: SpaceGrid = SpaceGrid(),
                   tgrid: TimeGrid | None = None, scheme: SchemeConfig = SchemeConfig(),
                   mode: Mode = "compact", blind_tol: float = 1e-10) -> StabilityReport:
    """Rows (amplitude, |S1 - S2|^2_{L2(I)}, sum_i |C*_1 - C*_2|^2_{H2(J)}, ratio).

    ``bump_family(y)`` returns the (n, len(y)) volatility profile; sigma_1 =
    sigma_2 + amplitude * profile. Windows are given in y = log(K / S*). In free
    mode the extra terms |dS|^2_{H1(J minus I)} + |dS|^2_{L2(R+ minus I, dS/S)}
    are added to the right-hand side.
    """
    windows.check(grid)
    obs.check(a2_model.n)
    y = grid.y
    sel_j = grid.mask(windows.omega)
    yj = y[sel_j]
    strikes = obs.s_star * np.exp(yj)
    base = price_surface(a2_model, strikes, obs.tau_star, obs, grid, tgrid, scheme).observed(obs.j_star)
    sigma2 = a2_model.sigma(y)
    in_i = grid.mask(windows.omega1)
    profile = np.asarray(bump_family(y), dtype=float)
    if profile.shape != sigma2.shape:
        raise DimensionMismatch(f"bump profile shape {profile.shape} != {sigma2.shape}")
    if mode == "compact" and np.any(profile[:, ~in_i] != 0):
        raise ValidationError("compact mode needs bumps supported in omega1")
    rows = []
    for amp in amplitudes:
        ds = amp * profile
        if amp == 0.0:
            rows.append(StabilityRow(0.0, 0.0, 0.0, float("nan")))
            continue
        sigma1 = sigma2 + ds
        m1 = a2_model.with_vols([VolCurve(y, s) for s in sigma1])
        prices = price_surface(m1, strikes, obs.tau_star, obs, grid, tgrid, scheme).observed(obs.j_star)
        rhs = sum(strike_h2_sq(prices[i] - base[i], yj) for i in range(a2_model.n))
        s = np.exp(y)
        lhs = _sigma_window_sq(ds, y, in_i, s)
        extra = 0.0
        if mode == "free":
            j_minus_i = sel_j & ~in_i
            ds_s = first_difference(ds, grid.dy) / s
            extra = _sigma_window_sq(ds, y, j_minus_i, s) + _sigma_window_sq(ds_s, y, j_minus_i, s)
            extra += _sigma_window_sq(ds, y, ~in_i, np.ones_like(s))
        total = rhs + extra
        rows.append(StabilityRow(float(amp), lhs, total, lhs / total if total > 0 else float("inf"), extra))
    return StabilityReport(rows, mode, blind_tol)


# ---------------------------------------------------------------------------
# norm growth


@dataclass
class NormGrowthReport:
    tau: NDArray[np.float64]
    w_ratio: NDArray[np.float64]  # |w(., tau)| / |G|
    wy_ratio: NDArray[np.float64]  # |w_y(., tau)| / |G|

    @property
    def scaled_w_ratio(self) -> NDArray[np.float64]:
        return self.w_ratio / np.sqrt(self.tau)

    @staticmethod
    def _variation(r: NDArray[np.float64]) -> float:
        return float(r.max() / r.min()) if np.all(r > 0) else float("nan")

    @property
    def w_variation(self) -> float:
        return self._variation(self.scaled_w_ratio)

    @property
    def wy_variation(self) -> float:
        return self._variation(self.wy_ratio)

    @property
    def fitted_c(self) -> tuple[float, float]:
        return float(self.scaled_w_ratio.max()), float(self.wy_ratio.max())

    def to_json(self) -> list[dict]:
        return [{"tau": float(t), "w_ratio": float(a), "w_scaled": float(a / math.sqrt(t)), "wy_ratio": float(b)}
                for t, a, b in zip(self.tau, self.w_ratio, self.wy_ratio)]


def norm_growth_check(a1_model: RegimeModel, g: Perturbation, v: SolutionField, tau_grid: Sequence[float],
                      grid: SpaceGrid = SpaceGrid(), scheme: SchemeConfig = SchemeConfig()) -> NormGrowthReport:
    """L2(R) norms of w and w_y over ``tau_grid`` relative to |G|_{L2}."""
    taus = np.asarray(sorted(tau_grid), dtype=float)
    if np.any(taus <= 0) or taus[-1] > v.tau[-1] + 1e-12:
        raise ValidationError("tau grid must lie in (0, horizon of v]")
    gnorm = g.l2()
    if gnorm == 0.0:
        z = np.zeros(taus.size)
        return NormGrowthReport(taus, z, z.copy())
    tg = TimeGrid(float(v.tau[-1]), v.tau.size - 1)
    w = solve_linearized(a1_model, g.values, v, grid, tg, scheme)
    wt = np.stack([w.at(t) for t in taus])  # (L, n, m)
    wy = first_difference(wt, grid.dy)
    wts = trapezoid_weights(grid.m, grid.dy)
    nw = np.sqrt(np.sum(wts * wt**2, axis=(1, 2)))
    nwy = np.sqrt(np.sum(wts * wy**2, axis=(1, 2)))
    return NormGrowthReport(taus, nw / gnorm, nwy / gnorm)
