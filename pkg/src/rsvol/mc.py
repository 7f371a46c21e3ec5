"""Regime-switching Monte Carlo used to cross-check the PDE prices.

Regime holding times are drawn exactly (exponential with rate -b_jj) and
inserted into a fixed log-Euler grid, so the chain carries no time-step bias.
Paths are generated in fixed-size blocks; block k draws from a Philox stream
keyed by (seed, k), which makes the sample independent of the worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .backward import PayoffSpec
from .errors import DimensionMismatch, ValidationError
from .model import ObservationSpec, RegimeModel

BLOCK_SIZE = 8192


@dataclass
class PathState:
    """Mutable state of a batch of paths; ``s`` has shape (copies, paths)."""

    s: NDArray[np.float64]
    x: NDArray[np.int64]
    t: NDArray[np.float64]
    accumulated_discount: NDArray[np.float64]


@dataclass(frozen=True)
class TerminalSample:
    """Terminal values; with ``antithetic`` entries 2k and 2k+1 are partners."""

    s: NDArray[np.float64]
    x: NDArray[np.int64]
    discount: NDArray[np.float64]
    maturity: float
    antithetic: bool = False

    @property
    def size(self) -> int:
        return self.s.size


def _local_sigma(model: RegimeModel, x: NDArray[np.int64], logs: NDArray[np.float64]) -> NDArray[np.float64]:
    out = np.empty_like(logs)
    for k, curve in enumerate(model.vols):
        sel = x == k
        if np.any(sel):
            out[sel] = curve(logs[sel])
    return out


def _draw_holding(rng: np.random.Generator, exit_rate: NDArray[np.float64]) -> NDArray[np.float64]:
    e = rng.standard_exponential(exit_rate.size)
    with np.errstate(divide="ignore"):
        return np.where(exit_rate > 0, e / exit_rate, np.inf)


def _simulate_block(model: RegimeModel, obs: ObservationSpec, paths: int, n_steps: int,
                    rng: np.random.Generator, antithetic: bool) -> tuple[NDArray, NDArray, NDArray]:
    b = model.b
    exit_rate = -np.diag(b)
    # jump target given the current state j is drawn from column j of B without its diagonal
    jump_cdf = np.cumsum(np.where(np.eye(model.n, dtype=bool), 0.0, b), axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        jump_cdf = np.where(exit_rate > 0, jump_cdf / exit_rate, 1.0)
    drift = model.rates - model.dividends
    copies = 2 if antithetic else 1

    st = PathState(
        s=np.full((copies, paths), np.log(obs.s_star)),  # log price
        x=np.full(paths, obs.j_star, dtype=np.int64),
        t=np.zeros(paths),
        accumulated_discount=np.zeros(paths),
    )
    next_jump = _draw_holding(rng, exit_rate[st.x])
    sign = np.array([1.0, -1.0])[:copies, None]
    dt = obs.tau_star / n_steps

    def advance(idx: NDArray[np.int64], t_to: NDArray[np.float64]) -> None:
        h = t_to - st.t[idx]
        xs = st.x[idx]
        z = rng.standard_normal(idx.size) * sign
        logs = st.s[:, idx]
        sig = _local_sigma(model, np.broadcast_to(xs, logs.shape), logs)
        st.s[:, idx] = logs + (drift[xs] - 0.5 * sig * sig) * h + sig * np.sqrt(h) * z
        st.accumulated_discount[idx] += model.rates[xs] * h
        st.t[idx] = t_to

    for k in range(1, n_steps + 1):
        t_end = obs.tau_star if k == n_steps else k * dt
        while True:
            idx = np.flatnonzero(next_jump <= t_end)
            if idx.size == 0:
                break
            advance(idx, next_jump[idx])
            u = rng.random(idx.size)
            cdf = jump_cdf[:, st.x[idx]]  # (n, len(idx))
            st.x[idx] = np.minimum((u[None, :] > cdf).sum(axis=0), model.n - 1)
            next_jump[idx] = st.t[idx] + _draw_holding(rng, exit_rate[st.x[idx]])
        advance(np.arange(paths), np.full(paths, t_end))

    s = np.exp(st.s).T.reshape(-1)  # partners adjacent
    x = np.repeat(st.x, copies)
    disc = np.repeat(st.accumulated_discount, copies)
    return s, x, disc


def simulate_paths(model: RegimeModel, obs: ObservationSpec, n_paths: int, n_steps: int, seed: int,
                   antithetic: bool = False, threads: int = 1, block_size: int = BLOCK_SIZE) -> TerminalSample:
    """Terminal sample (S_T, X_T, int r dt) of ``n_paths`` paths started at (s*, j*).

    With ``antithetic`` the count must be even; each pair shares its regime
    path and uses opposite Brownian increments.
    """
    obs.check(model.n)
    if n_paths < 1 or n_steps < 1:
        raise ValidationError("n_paths and n_steps must be >= 1")
    if antithetic and n_paths % 2:
        raise ValidationError("antithetic sampling needs an even path count")
    base = n_paths // 2 if antithetic else n_paths
    starts = list(range(0, base, block_size))

    def run(k: int) -> tuple[NDArray, NDArray, NDArray]:
        ss = np.random.SeedSequence([seed, k])
        rng = np.random.Generator(np.random.Philox(ss))
        count = min(block_size, base - starts[k])
        return _simulate_block(model, obs, count, n_steps, rng, antithetic)

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, range(len(starts))))
    else:
        parts = [run(k) for k in range(len(starts))]
    s, x, d = (np.concatenate(p) for p in zip(*parts))
    return TerminalSample(s, x, d, obs.tau_star, antithetic)


def mc_price(sample: TerminalSample, payoff: PayoffSpec) -> tuple[float, float]:
    """Discounted mean of pi(X_T) (S_T - K)^+ and its standard error."""
    if sample.size == 0:
        raise ValidationError("empty sample")
    if abs(payoff.maturity - sample.maturity) > 1e-12:
        raise ValidationError("payoff maturity differs from the simulated horizon")
    if int(sample.x.max()) >= payoff.pi.size:
        raise DimensionMismatch("payoff weights do not cover every regime")
    vals = np.exp(-sample.discount) * payoff.pi[sample.x] * np.maximum(sample.s - payoff.strike, 0.0)
    if sample.antithetic:
        vals = vals.reshape(-1, 2).mean(axis=1)
    if vals.size == 1:
        return float(vals[0]), float("nan")
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(vals.size))
