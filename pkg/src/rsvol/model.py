"""Regime-switching local volatility model definition."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.ndimage import gaussian_filter1d

from .errors import ConfigParse, DimensionMismatch, VolOutOfBounds
from .markov import GeneratorMatrix, validate_generator

DEFAULT_SMOOTHING_CELLS = 2.0


@dataclass(frozen=True)
class VolCurve:
    """Piecewise-linear sigma(y), y = log-moneyness, flat beyond the end knots."""

    knots: NDArray[np.float64]
    values: NDArray[np.float64]

    def __post_init__(self) -> None:
        k = np.atleast_1d(np.asarray(self.knots, dtype=float))
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        if k.shape != v.shape or k.ndim != 1 or k.size == 0:
            raise DimensionMismatch("vol curve needs matching 1-d knots and values")
        if np.any(np.diff(k) <= 0):
            raise DimensionMismatch("vol curve knots must be strictly increasing")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise VolOutOfBounds("vol curve values must be finite and >= 0")
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "values", v)

    @classmethod
    def flat(cls, sigma: float) -> "VolCurve":
        return cls(np.array([0.0]), np.array([float(sigma)]))

    @classmethod
    def from_pairs(cls, pairs: Sequence[Sequence[float]]) -> "VolCurve":
        arr = np.asarray(pairs, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ConfigParse("vol curve must be a list of [y, sigma] pairs")
        return cls(arr[:, 0], arr[:, 1])

    def __call__(self, y: ArrayLike) -> NDArray[np.float64]:
        return np.interp(np.asarray(y, dtype=float), self.knots, self.values)

    def max_slope(self) -> float:
        if self.knots.size < 2:
            return 0.0
        return float(np.max(np.abs(np.diff(self.values) / np.diff(self.knots))))


@dataclass(frozen=True)
class RegimeModel:
    generator: GeneratorMatrix
    rates: NDArray[np.float64]
    dividends: NDArray[np.float64]
    vols: tuple[VolCurve, ...]
    sigma_min: float = 1e-3
    sigma_max: float = 10.0
    # Gaussian pre-smoothing width in grid cells; None disables it
    smoothing_cells: float | None = None

    def __post_init__(self) -> None:
        n = self.generator.n
        r = np.atleast_1d(np.asarray(self.rates, dtype=float))
        q = np.atleast_1d(np.asarray(self.dividends, dtype=float))
        if r.shape != (n,) or q.shape != (n,) or len(self.vols) != n:
            raise DimensionMismatch(
                f"regime count {n} but {r.size} rates, {q.size} dividends, {len(self.vols)} vol curves"
            )
        if not (0 <= self.sigma_min <= self.sigma_max < np.inf):
            raise VolOutOfBounds(f"need 0 <= sigma_min <= sigma_max, got {self.sigma_min}, {self.sigma_max}")
        for j, c in enumerate(self.vols):
            lo, hi = c.values.min(), c.values.max()
            if lo < self.sigma_min or hi > self.sigma_max:
                raise VolOutOfBounds(
                    f"regime {j}: sigma range [{lo}, {hi}] outside [{self.sigma_min}, {self.sigma_max}]"
                )
        object.__setattr__(self, "rates", r)
        object.__setattr__(self, "dividends", q)
        object.__setattr__(self, "vols", tuple(self.vols))

    @property
    def n(self) -> int:
        return self.generator.n

    @property
    def b(self) -> NDArray[np.float64]:
        return self.generator.b

    def sigma(self, y: ArrayLike) -> NDArray[np.float64]:
        """Volatilities of all regimes at log-moneyness y, shape (n, *y.shape)."""
        return np.stack([c(y) for c in self.vols])

    def diffusion(self, y: NDArray[np.float64]) -> NDArray[np.float64]:
        """A(y) = sigma^2 / 2 per regime on a grid, shape (n, len(y))."""
        s = self.sigma(y)
        if self.smoothing_cells:
            s = gaussian_filter1d(s, self.smoothing_cells, axis=-1, mode="nearest")
        return 0.5 * s * s

    def with_diffusion(self, y: NDArray[np.float64], a: NDArray[np.float64]) -> "RegimeModel":
        """Model whose A equals ``a`` (shape (n, len(y))) at the nodes ``y``."""
        a = np.asarray(a, dtype=float)
        if a.shape != (self.n, y.size):
            raise DimensionMismatch(f"diffusion shape {a.shape} != {(self.n, y.size)}")
        if np.any(a <= 0):
            raise VolOutOfBounds("perturbed diffusion must stay positive")
        sig = np.sqrt(2.0 * a)
        return self.with_vols([VolCurve(y, s) for s in sig])

    def with_vols(self, vols: Sequence[VolCurve]) -> "RegimeModel":
        lo = min(self.sigma_min, *(float(c.values.min()) for c in vols))
        hi = max(self.sigma_max, *(float(c.values.max()) for c in vols))
        return RegimeModel(self.generator, self.rates, self.dividends, tuple(vols), lo, hi, self.smoothing_cells)

    def with_generator(self, b: ArrayLike) -> "RegimeModel":
        return RegimeModel(
            validate_generator(b), self.rates, self.dividends, self.vols,
            self.sigma_min, self.sigma_max, self.smoothing_cells,
        )


@dataclass(frozen=True)
class ObservationSpec:
    """Observation point: regime ``j_star`` (0-based), spot normalised to 1."""

    j_star: int
    tau_star: float
    s_star: float = field(default=1.0)

    def __post_init__(self) -> None:
        if self.tau_star <= 0:
            raise DimensionMismatch(f"tau_star must be > 0, got {self.tau_star}")
        if self.s_star != 1.0:
            raise DimensionMismatch("spot must be normalised to s_star = 1")
        if self.j_star < 0:
            raise DimensionMismatch(f"j_star must be >= 0, got {self.j_star}")

    def check(self, n: int) -> None:
        if not 0 <= self.j_star < n:
            raise DimensionMismatch(f"observed regime {self.j_star} outside 0..{n - 1}")


def build_model(config: dict[str, Any]) -> RegimeModel:
    """Build a model from the parsed JSON config (see README for the schema)."""
    try:
        n = int(config["regimes"])
        b = config.get("generator", [[0.0] * n for _ in range(n)])
        rates = config.get("rates", [0.0] * n)
        divs = config.get("dividends", [0.0] * n)
        raw_curves = config["vol_curves"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigParse(f"bad model config: {exc!r}") from exc
    gen = validate_generator(b)
    if gen.n != n:
        raise DimensionMismatch(f"'regimes' is {n} but generator is {gen.n}x{gen.n}")
    if not isinstance(raw_curves, list) or len(raw_curves) != n:
        raise DimensionMismatch(f"expected {n} vol curves")
    curves = []
    for c in raw_curves:
        if isinstance(c, (int, float)):
            curves.append(VolCurve.flat(float(c)))
        else:
            curves.append(VolCurve.from_pairs(c))
    every = np.concatenate([c.values for c in curves])
    if np.any(every <= 0):
        raise VolOutOfBounds("configured volatilities must be > 0")
    sig_min = float(config.get("sigma_min", every.min()))
    sig_max = float(config.get("sigma_max", every.max()))
    smoothing = config.get("smoothing_cells")
    if smoothing is True:
        smoothing = DEFAULT_SMOOTHING_CELLS
    elif smoothing is False:
        smoothing = None
    return RegimeModel(
        gen, np.asarray(rates, float), np.asarray(divs, float), tuple(curves),
        sig_min, sig_max, None if smoothing is None else float(smoothing),
    )


def load_model(path: str | Path) -> RegimeModel:
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigParse(f"{path}: {exc}") from exc
    return build_model(cfg)


def diffusion_coefficient(m: RegimeModel, j: int, y: ArrayLike) -> NDArray[np.float64] | float:
    """a_j(y) = sigma_j(e^y)^2 / 2 for regime ``j`` (0-based)."""
    s = m.vols[j](y)
    out = 0.5 * s * s
    return float(out) if np.ndim(out) == 0 else out


def flat_model(sigmas: Sequence[float], b: ArrayLike | None = None, rates: Sequence[float] | float = 0.0,
               dividends: Sequence[float] | float = 0.0) -> RegimeModel:
    """Convenience constructor for flat-vol models."""
    n = len(sigmas)
    b = np.zeros((n, n)) if b is None else b
    r = np.broadcast_to(np.asarray(rates, float), (n,)).copy()
    q = np.broadcast_to(np.asarray(dividends, float), (n,)).copy()
    return RegimeModel(validate_generator(b), r, q, tuple(VolCurve.flat(s) for s in sigmas),
                       min(sigmas), max(sigmas))
