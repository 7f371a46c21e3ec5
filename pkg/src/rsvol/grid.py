"""Space/time grids, finite differences and discrete Sobolev norms."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DimensionMismatch, ValidationError, WindowOutOfRange

Window = tuple[float, float]


@dataclass(frozen=True)
class SpaceGrid:
    """Uniform grid in log-moneyness with a node at y = 0."""

    y_min: float = -4.0
    y_max: float = 4.0
    m: int = 401

    def __post_init__(self) -> None:
        if not (self.y_min < 0.0 < self.y_max):
            raise ValidationError(f"need y_min < 0 < y_max, got [{self.y_min}, {self.y_max}]")
        if self.m < 3:
            raise ValidationError(f"need at least 3 nodes, got {self.m}")
        k0 = -self.y_min / self.dy
        if abs(k0 - round(k0)) > 1e-9:
            raise ValidationError("y = 0 is not a grid node; adjust y_min, y_max or m")

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / (self.m - 1)

    @property
    def y(self) -> NDArray[np.float64]:
        y = self.y_min + self.dy * np.arange(self.m)
        y[self.zero_index] = 0.0
        return y

    @property
    def zero_index(self) -> int:
        return int(round(-self.y_min / self.dy))

    def index(self, y: float) -> int:
        """Nearest node index."""
        return int(round((y - self.y_min) / self.dy))

    def mask(self, window: Window) -> NDArray[np.bool_]:
        lo, hi = window
        if lo < self.y_min - 1e-12 or hi > self.y_max + 1e-12 or lo >= hi:
            raise WindowOutOfRange(f"window {window} not inside [{self.y_min}, {self.y_max}]")
        tol = 1e-9 * self.dy
        y = self.y
        return (y >= lo - tol) & (y <= hi + tol)

    def refined(self) -> "SpaceGrid":
        return SpaceGrid(self.y_min, self.y_max, 2 * self.m - 1)


@dataclass(frozen=True)
class TimeGrid:
    tau_max: float
    p: int

    def __post_init__(self) -> None:
        if not self.tau_max > 0:
            raise ValidationError(f"tau_max must be > 0, got {self.tau_max}")
        if self.p < 1:
            raise ValidationError(f"need at least one step, got {self.p}")

    @property
    def dtau(self) -> float:
        return self.tau_max / self.p

    @property
    def tau(self) -> NDArray[np.float64]:
        return self.dtau * np.arange(self.p + 1)

    def refined(self) -> "TimeGrid":
        return TimeGrid(self.tau_max, 2 * self.p)


@dataclass(frozen=True)
class SolutionField:
    """values[i, k, l]: component i at node y[k] and time tau[l]."""

    values: NDArray[np.float64]
    y: NDArray[np.float64]
    tau: NDArray[np.float64]

    def __post_init__(self) -> None:
        v = self.values
        if v.ndim != 3 or v.shape[1] != self.y.size or v.shape[2] != self.tau.size:
            raise DimensionMismatch(f"field shape {v.shape} vs {self.y.size} nodes, {self.tau.size} times")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dy(self) -> float:
        return float(self.y[1] - self.y[0])

    def at(self, tau: float) -> NDArray[np.float64]:
        """Slice (n, m) at time ``tau``, linear in time between stored levels."""
        t = self.tau
        if tau <= t[0]:
            return self.values[:, :, 0]
        if tau >= t[-1]:
            return self.values[:, :, -1]
        l = int(np.searchsorted(t, tau) - 1)
        l = min(max(l, 0), t.size - 2)
        w = (tau - t[l]) / (t[l + 1] - t[l])
        if w < 1e-12:
            return self.values[:, :, l]
        if w > 1 - 1e-12:
            return self.values[:, :, l + 1]
        return (1 - w) * self.values[:, :, l] + w * self.values[:, :, l + 1]

    def sample(self, y: ArrayLike, tau: float) -> NDArray[np.float64]:
        """Values at arbitrary log-moneyness points, shape (n, len(y))."""
        sl = self.at(tau)
        yy = np.atleast_1d(np.asarray(y, dtype=float))
        return np.stack([np.interp(yy, self.y, row) for row in sl])

    def to_csv(self, path: str | Path, taus: Sequence[float] | None = None) -> None:
        """Rows ``y, tau, component_1..n``; all stored times unless ``taus`` given."""
        idx = range(self.tau.size) if taus is None else [int(np.argmin(np.abs(self.tau - t))) for t in taus]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y", "tau"] + [f"component_{i + 1}" for i in range(self.n)])
            for l in idx:
                for k, yk in enumerate(self.y):
                    w.writerow([fmt(yk), fmt(self.tau[l])] + [fmt(x) for x in self.values[:, k, l]])


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def second_difference(u: ArrayLike, dy: float) -> NDArray[np.float64]:
    """Central second difference along the last axis; boundary nodes copy their neighbour."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] < 3:
        raise ValidationError("second difference needs at least 3 nodes")
    out = np.empty_like(u)
    out[..., 1:-1] = (u[..., :-2] - 2.0 * u[..., 1:-1] + u[..., 2:]) / (dy * dy)
    out[..., 0] = out[..., 1]
    out[..., -1] = out[..., -2]
    return out


def first_difference(u: ArrayLike, dy: float) -> NDArray[np.float64]:
    """Central first difference along the last axis; boundary nodes copy their neighbour."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    out[..., 1:-1] = (u[..., 2:] - u[..., :-2]) / (2.0 * dy)
    out[..., 0] = out[..., 1]
    out[..., -1] = out[..., -2]
    return out


def window_derivatives(u: NDArray[np.float64], dy: float) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """First and second derivatives of samples on a window (last axis).

    Central inside, second-order one-sided stencils at the two edges.
    """
    if u.shape[-1] < 4:
        raise WindowOutOfRange("window must contain at least 4 nodes")
    d1 = np.gradient(u, dy, axis=-1, edge_order=2)
    d2 = np.empty_like(u)
    d2[..., 1:-1] = (u[..., :-2] - 2.0 * u[..., 1:-1] + u[..., 2:]) / (dy * dy)
    d2[..., 0] = (2.0 * u[..., 0] - 5.0 * u[..., 1] + 4.0 * u[..., 2] - u[..., 3]) / (dy * dy)
    d2[..., -1] = (2.0 * u[..., -1] - 5.0 * u[..., -2] + 4.0 * u[..., -3] - u[..., -4]) / (dy * dy)
    return d1, d2


def trapezoid_weights(count: int, dy: float) -> NDArray[np.float64]:
    w = np.full(count, dy)
    w[0] = w[-1] = 0.5 * dy
    return w


def sobolev_norm(u: ArrayLike, y: ArrayLike, window: Window, order: int = 0) -> float:
    """Discrete H^order norm on ``window`` of a slice (m,) or vector field (n, m).

    Vector fields follow the sum-of-squared-component-norms convention.
    """
    if order not in (0, 1, 2):
        raise ValidationError(f"order must be 0, 1 or 2, got {order}")
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if u.shape[-1] != y.size:
        raise DimensionMismatch(f"slice has {u.shape[-1]} nodes, grid has {y.size}")
    lo, hi = window
    dy = float(y[1] - y[0])
    tol = 1e-9 * dy
    if lo < y[0] - tol or hi > y[-1] + tol or lo >= hi:
        raise WindowOutOfRange(f"window {window} not inside [{y[0]}, {y[-1]}]")
    sel = (y >= lo - tol) & (y <= hi + tol)
    seg = u[..., sel]
    w = trapezoid_weights(seg.shape[-1], dy)
    total = np.sum(w * seg * seg)
    if order >= 1:
        d1, d2 = window_derivatives(seg, dy)
        total += np.sum(w * d1 * d1)
        if order == 2:
            total += np.sum(w * d2 * d2)
    return float(np.sqrt(total))


@dataclass(frozen=True)
class DomainWindows:
    """Reconstruction window omega1, observation window omega, auxiliary set omega_small."""

    omega1: Window
    omega: Window
    omega_small: tuple[Window, ...] = ()

    def __post_init__(self) -> None:
        (a1, b1), (a, b) = self.omega1, self.omega
        if not (a < a1 < b1 < b):
            raise WindowOutOfRange(f"omega1 {self.omega1} must lie strictly inside omega {self.omega}")
        for lo, hi in self.omega_small:
            if not (a <= lo < hi <= b) or not (hi <= a1 or lo >= b1):
                raise WindowOutOfRange(f"omega_small piece {(lo, hi)} must lie in omega minus omega1")
            if lo <= 0.0 <= hi:
                raise WindowOutOfRange("omega_small must avoid y = 0")

    def check(self, grid: SpaceGrid) -> None:
        a, b = self.omega
        if not (grid.y_min < a and b < grid.y_max):
            raise WindowOutOfRange(f"omega {self.omega} must lie strictly inside the space grid")

    @classmethod
    def default(cls) -> "DomainWindows":
        """I = [0.85, 1.18] and J = [0.7, 1.43] in strike, mapped to log-moneyness."""
        o1 = (float(np.log(0.85)), float(np.log(1.18)))
        o = (float(np.log(0.7)), float(np.log(1.43)))
        small = ((o[0] + 0.05, o[0] + 0.10), (o[1] - 0.10, o[1] - 0.05))
        return cls(o1, o, small)
