"""Command-line front end: ``rsvol <command> [options]``.

Regime labels on the command line and in every artifact are 1-based; the
Python API is 0-based. Exit codes: 0 success, 2 usage or validation error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import report
from .backward import PayoffSpec, price_surface
from .density import extract_density
from .dupire import ForwardProblem, solve_aux_density, solve_dupire
from .errors import ConfigParse, RsvolError, ValidationError, WindowOutOfRange
from .funsol import DEFAULT_TAUS, LowerBoundParams, verify_positivity_bound
from .grid import DomainWindows, SpaceGrid, TimeGrid
from .inverse import (Perturbation, ReconstructionConfig, norm_growth_check, reconstruct_nonlinear,
                      smooth_bump, stability_scan)
from .mc import mc_price, simulate_paths
from .model import ObservationSpec, RegimeModel, load_model

COMMANDS = ("price", "dupire", "density", "density-aux", "funsol-check", "mc", "calibrate",
            "stability-scan", "norm-check")


@dataclass(frozen=True)
class RunConfig:
    command: str
    model_path: Path
    grid: SpaceGrid
    steps_per_unit: int
    out: Path
    seed: int | None
    threads: int

    def time_grid(self, horizon: float) -> TimeGrid:
        return TimeGrid(horizon, max(8, int(round(self.steps_per_unit * horizon))))


# ---------------------------------------------------------------------------
# argument helpers


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _window(text: str) -> tuple[float, float]:
    vals = _floats(text)
    if len(vals) != 2 or not vals[0] < vals[1]:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi' with lo < hi, got {text!r}")
    return vals[0], vals[1]


def _grid(text: str) -> SpaceGrid:
    parts = text.split(",")
    try:
        lo, hi, m = float(parts[0]), float(parts[1]), int(parts[2])
    except (IndexError, ValueError) as exc:
        raise argparse.ArgumentTypeError(f"expected 'y_min,y_max,nodes', got {text!r}") from exc
    return SpaceGrid(lo, hi, m)


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _state(model: RegimeModel, label: int) -> int:
    if not 1 <= label <= model.n:
        raise ValidationError(f"--state {label} outside 1..{model.n}")
    return label - 1


def _windows(args: argparse.Namespace) -> DomainWindows:
    if args.omega1 is None and args.omega is None:
        return DomainWindows.default()
    d = DomainWindows.default()
    return DomainWindows(args.omega1 or d.omega1, args.omega or d.omega)


def _bump_profile(spec: str, n: int) -> Callable[[np.ndarray], np.ndarray]:
    """'regime:center:half_width[;...]' (1-based regime, y units) -> summed C^2 bump profile."""
    pieces = []
    for item in spec.split(";"):
        try:
            reg, c, hw = item.split(":")
            pieces.append((int(reg) - 1, float(c), float(hw)))
        except ValueError as exc:
            raise ConfigParse(f"bad bump {item!r}; expected regime:center:half_width") from exc
    for reg, _, hw in pieces:
        if not 0 <= reg < n or hw <= 0:
            raise ValidationError(f"bump regime must be 1..{n} and half width > 0")

    def profile(y: np.ndarray) -> np.ndarray:
        return sum(smooth_bump(y, n, reg, c, hw) for reg, c, hw in pieces)
    return profile


def _random_bumps(count: int, seed: int, windows: DomainWindows, n: int) -> str:
    """Deterministic bump spec inside omega1 drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    lo, hi = windows.omega1
    items = []
    for _ in range(count):
        hw = rng.uniform(0.2, 0.45) * (hi - lo)
        c = rng.uniform(lo + hw, hi - hw)
        items.append(f"{int(rng.integers(1, n + 1))}:{c!r}:{hw!r}")
    return ";".join(items)


def _strike_ladder(spec: list[float], grid: SpaceGrid) -> np.ndarray:
    """'K_min,K_max' -> grid nodes e^y in range; 'K_min,K_max,count' -> geometric ladder.

    Strike steps finer than the grid spacing only resolve interpolation noise,
    so the grid-node ladder is the default.
    """
    if len(spec) not in (2, 3) or not 0 < spec[0] < spec[1]:
        raise ValidationError("--strike-range needs 0 < K_min < K_max [,count]")
    if len(spec) == 2:
        k = np.exp(grid.y[(grid.y >= np.log(spec[0]) - 1e-12) & (grid.y <= np.log(spec[1]) + 1e-12)])
    else:
        k = np.geomspace(spec[0], spec[1], int(spec[2]))
    return k


# ---------------------------------------------------------------------------
# commands


def cmd_price(cfg: RunConfig, args: argparse.Namespace) -> None:
    m = load_model(cfg.model_path)
    obs = ObservationSpec(_state(m, args.state), args.maturity) if args.state else None
    s = price_surface(m, args.strikes, args.maturity, obs, cfg.grid, cfg.time_grid(args.maturity))
    report.emit_price_surface(cfg.out, s)


def cmd_dupire(cfg: RunConfig, args: argparse.Namespace) -> None:
    m = load_model(cfg.model_path)
    obs = ObservationSpec(_state(m, args.state), args.maturity)
    w = solve_dupire(ForwardProblem(m, obs, cfg.grid, cfg.time_grid(args.maturity)))
    w.to_csv(cfg.out, taus=[args.maturity])


def cmd_density(cfg: RunConfig, args: argparse.Namespace) -> None:
    m = load_model(cfg.model_path)
    j = _state(m, args.state)
    strikes = _strike_ladder(args.strike_range, cfg.grid)
    s = price_surface(m, strikes, args.maturity, None, cfg.grid, cfg.time_grid(args.maturity))
    report.emit_density(cfg.out, extract_density(s), j)


def cmd_density_aux(cfg: RunConfig, args: argparse.Namespace) -> None:
    m = load_model(cfg.model_path)
    obs = ObservationSpec(_state(m, args.state), args.maturity)
    v = solve_aux_density(m, obs, cfg.grid, cfg.time_grid(args.maturity))
    v.to_csv(cfg.out, taus=[args.maturity])


def cmd_funsol(cfg: RunConfig, args: argparse.Namespace) -> None:
    m = load_model(cfg.model_path)
    params = None
    if args.delta0 is not None:
        b_star = m.b - np.diag(np.diag(m.b))
        params = LowerBoundParams(args.delta0, args.eps0, b_star)
    taus = [args.tau * t for t in DEFAULT_TAUS]
    rep = verify_positivity_bound(m, params, args.window, taus, cfg.grid,
                                  steps_per_unit=cfg.steps_per_unit)
    report.write_json(cfg.out, rep.to_json())


def cmd_mc(cfg: RunConfig, args: argparse.Namespace) -> None:
    m = load_model(cfg.model_path)
    obs = ObservationSpec(_state(m, args.state), args.maturity)
    seed = 0 if cfg.seed is None else cfg.seed
    sample = simulate_paths(m, obs, args.paths, args.steps, seed, args.antithetic, cfg.threads)
    rows = []
    for i in range(m.n):
        p, se = mc_price(sample, PayoffSpec.regime_call(args.strike, i, m.n, args.maturity))
        rows.append((str(i + 1), p, se))
    p, se = mc_price(sample, PayoffSpec(args.strike, np.ones(m.n), args.maturity))
    rows.append(("all", p, se))
    report.write_rows(cfg.out, ["i", "price", "se"], rows)


def _read_observed(path: Path, n: int, j_star: int, grid: SpaceGrid, window: tuple[float, float]) -> np.ndarray:
    """Observed C*(., eps_i) on the grid nodes of ``window``; zero elsewhere (unused).

    Price rows carrying a ``j`` column are filtered to the observed start regime.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except FileNotFoundError:
        raise
    except (OSError, csv.Error) as exc:
        raise ConfigParse(f"{path}: {exc}") from exc
    if not rows:
        raise ConfigParse(f"{path}: no data rows")
    cols = rows[0].keys()
    try:
        if "y" in cols:
            y = np.array([float(r["y"]) for r in rows])
            vals = np.array([[float(r[f"component_{i + 1}"]) for r in rows] for i in range(n)])
        elif {"K", "i", "price"} <= set(cols):
            by_state: dict[int, list[tuple[float, float]]] = {i: [] for i in range(n)}
            for r in rows:
                if "j" in cols and int(r["j"]) != j_star + 1:
                    continue
                by_state[int(r["i"]) - 1].append((float(r["K"]), float(r["price"])))
            ks = sorted(k for k, _ in by_state[0])
            y = np.log(np.array(ks))
            vals = np.array([[p for _, p in sorted(by_state[i])] for i in range(n)])
        else:
            raise ConfigParse(f"{path}: expected columns y,component_1.. or K,i,price")
    except (KeyError, ValueError) as exc:
        raise ConfigParse(f"{path}: {exc!r}") from exc
    order = np.argsort(y)
    y, vals = y[order], vals[:, order]
    sel = grid.mask(window)
    if y[0] > grid.y[sel][0] + 1e-9 or y[-1] < grid.y[sel][-1] - 1e-9:
        raise WindowOutOfRange(f"data cover [{y[0]:.4g}, {y[-1]:.4g}], omega needs {window}")
    out = np.zeros((n, grid.m))
    for i in range(n):
        out[i, sel] = np.interp(grid.y[sel], y, vals[i])
    return out


def cmd_calibrate(cfg: RunConfig, args: argparse.Namespace) -> None:
    m = load_model(cfg.model_path)
    obs = ObservationSpec(_state(m, args.state), args.tau)
    windows = _windows(args)
    windows.check(cfg.grid)
    tgrid = cfg.time_grid(args.tau)
    observed = _read_observed(Path(args.data), m.n, obs.j_star, cfg.grid, windows.omega)
    base = solve_dupire(ForwardProblem(m, obs, cfg.grid, tgrid)).at(args.tau)
    sel = cfg.grid.mask(windows.omega)
    data = np.zeros_like(observed)
    data[:, sel] = observed[:, sel] - base[:, sel]
    rc = ReconstructionConfig(
        basis=args.basis, alpha=args.alpha, mode=args.mode,
        row_weights=tuple(args.row_weights),
        alpha_rule="discrepancy" if args.noise is not None else "fixed",
        noise_level=args.noise or 0.0, discrepancy_factor=args.discrepancy_factor,
        relinearize=args.relinearize,
    )
    rec = reconstruct_nonlinear(data, rc, m, obs, windows, cfg.grid, tgrid, threads=cfg.threads)
    g = rec.perturbation.values
    rows = ((float(y), i + 1, float(g[i, k])) for k, y in enumerate(cfg.grid.y) if sel[k] for i in range(m.n))
    report.write_rows(cfg.out, ["y", "i", "g"], rows)


def cmd_stability(cfg: RunConfig, args: argparse.Namespace) -> None:
    m = load_model(cfg.model_path)
    windows = _windows(args)
    obs = ObservationSpec(_state(m, args.state), args.tau)
    spec = args.bumps
    if spec.startswith("random:"):
        spec = _random_bumps(int(spec.split(":", 1)[1]), 0 if cfg.seed is None else cfg.seed, windows, m.n)
    rep = stability_scan(m, _bump_profile(spec, m.n), args.amplitudes, windows, obs, cfg.grid,
                         cfg.time_grid(args.tau), mode=args.mode)
    report.emit_report(cfg.out, rep)


def cmd_norm(cfg: RunConfig, args: argparse.Namespace) -> None:
    m = load_model(cfg.model_path)
    obs = ObservationSpec(_state(m, args.state), args.tau)
    tgrid = cfg.time_grid(args.tau)
    v = solve_aux_density(m, obs, cfg.grid, tgrid)
    g = Perturbation(args.amplitude * _bump_profile(args.bump, m.n)(cfg.grid.y), cfg.grid.y)
    a1 = m.with_diffusion(cfg.grid.y, m.diffusion(cfg.grid.y) + g.values)
    taus = np.linspace(args.tau / args.points, args.tau, args.points)
    rep = norm_growth_check(a1, g, v, taus, cfg.grid)
    report.write_json(cfg.out, {
        "rows": rep.to_json(),
        "w_variation": rep.w_variation, "wy_variation": rep.wy_variation,
        "fitted_c_w": rep.fitted_c[0], "fitted_c_wy": rep.fitted_c[1],
    })


HANDLERS: dict[str, Callable[[RunConfig, argparse.Namespace], None]] = {
    "price": cmd_price, "dupire": cmd_dupire, "density": cmd_density, "density-aux": cmd_density_aux,
    "funsol-check": cmd_funsol, "mc": cmd_mc, "calibrate": cmd_calibrate,
    "stability-scan": cmd_stability, "norm-check": cmd_norm,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="artifact path (CSV or JSON)")
    common.add_argument("--grid", type=_grid, default=SpaceGrid(), help="y_min,y_max,nodes (default -4,4,401)")
    common.add_argument("--steps-per-unit", type=_positive_int, default=400, help="time steps per unit of tau")
    common.add_argument("--threads", type=_positive_int, default=None, help="worker threads (env RSVOL_THREADS)")
    common.add_argument("--seed", type=int, default=None)

    p = argparse.ArgumentParser(prog="rsvol", description="Regime-switching local volatility toolkit.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def add(name: str, help_text: str, model_flag: str = "--model") -> argparse.ArgumentParser:
        sp = sub.add_parser(name, parents=[common], help=help_text)
        sp.add_argument(model_flag, dest="model", required=True, help="model JSON")
        return sp

    sp = add("price", "generalised call prices C_ij(K) from the backward system")
    sp.add_argument("--strikes", type=_floats, required=True)
    sp.add_argument("--maturity", type=float, required=True)
    sp.add_argument("--state", type=int, default=None, help="observed regime (validated only)")

    for name, text in (("dupire", "forward Dupire field w(y, tau*)"),
                       ("density-aux", "auxiliary density v(y, tau*)")):
        sp = add(name, text)
        sp.add_argument("--tau-max", "--maturity", dest="maturity", type=float, required=True)
        sp.add_argument("--state", type=int, required=True)

    sp = add("density", "Breeden-Litzenberger density d_ij(K) for start regime --state")
    sp.add_argument("--maturity", type=float, required=True)
    sp.add_argument("--state", type=int, required=True)
    sp.add_argument("--strike-range", type=_floats, default=[0.3, 3.0],
                    help="K_min,K_max (grid-node strikes) or K_min,K_max,count (geometric)")

    sp = add("funsol-check", "Gaussian lower bound of the fundamental solution")
    sp.add_argument("--tau", type=float, default=1.0)
    sp.add_argument("--window", type=_window, default=(-2.0, 2.0))
    sp.add_argument("--delta0", type=float, default=None)
    sp.add_argument("--eps0", type=float, default=0.5)

    sp = add("mc", "Monte Carlo regime-call prices")
    sp.add_argument("--strike", type=float, required=True)
    sp.add_argument("--maturity", type=float, required=True)
    sp.add_argument("--state", type=int, required=True)
    sp.add_argument("--paths", type=_positive_int, default=100_000)
    sp.add_argument("--steps", type=_positive_int, default=250)
    sp.add_argument("--antithetic", action="store_true")

    sp = add("calibrate", "linearised reconstruction of G = A1 - A2", model_flag="--model-base")
    sp.add_argument("--data", required=True, help="CSV with y,component_1.. or K,i,price at tau*")
    sp.add_argument("--tau", type=float, default=0.5)
    sp.add_argument("--state", type=int, default=1)
    sp.add_argument("--alpha", type=float, default=1e-10)
    sp.add_argument("--noise", type=float, default=None, help="noise level; selects alpha by discrepancy")
    sp.add_argument("--discrepancy-factor", type=float, default=1.1)
    sp.add_argument("--mode", choices=("compact", "free"), default="compact")
    sp.add_argument("--basis", type=int, default=25)
    sp.add_argument("--row-weights", type=_floats, default=[1.0, 1.0, 1.0])
    sp.add_argument("--relinearize", type=int, default=0)
    sp.add_argument("--omega1", type=_window, default=None)
    sp.add_argument("--omega", type=_window, default=None)

    sp = add("stability-scan", "empirical Lipschitz ratios lhs / rhs")
    sp.add_argument("--bumps", required=True, help="'regime:center:half_width[;...]' or 'random:N'")
    sp.add_argument("--amplitudes", type=_floats, default=[0.02, 0.04, 0.08])
    sp.add_argument("--tau", type=float, default=0.5)
    sp.add_argument("--state", type=int, default=1)
    sp.add_argument("--mode", choices=("compact", "free"), default="compact")
    sp.add_argument("--omega1", type=_window, default=None)
    sp.add_argument("--omega", type=_window, default=None)

    sp = add("norm-check", "growth of |w| and |w_y| relative to |G|")
    sp.add_argument("--bump", default="1:0:0.15")
    sp.add_argument("--amplitude", type=float, default=0.002)
    sp.add_argument("--tau", type=float, default=1.0)
    sp.add_argument("--state", type=int, default=1)
    sp.add_argument("--points", type=_positive_int, default=10)
    return p


def _threads(flag: int | None) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("RSVOL_THREADS")
    if env is None:
        return 1
    try:
        val = int(env)
    except ValueError as exc:
        raise ConfigParse(f"RSVOL_THREADS must be an integer, got {env!r}") from exc
    if val < 1:
        raise ConfigParse("RSVOL_THREADS must be >= 1")
    return val


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = RunConfig(args.command, Path(args.model), args.grid, args.steps_per_unit,
                        Path(args.out), args.seed, _threads(args.threads))
        if not cfg.model_path.is_file():
            raise FileNotFoundError(f"model file not found: {cfg.model_path}")
        HANDLERS[args.command](cfg, args)
    except RsvolError as exc:
        print(f"rsvol: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"rsvol: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"rsvol: error: cannot write artifact: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
