"""CSV / JSON artifact writers. Floats carry 17 significant digits."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .backward import PriceSurface
from .density import DensitySurface
from .grid import fmt


def _clean(obj: Any) -> Any:
    """JSON-ready copy: numpy scalars to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return float(fmt(x)) if math.isfinite(x) else None
    return obj


def write_json(path: str | Path, obj: Any) -> None:
    Path(path).write_text(json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n")


def write_rows(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) if isinstance(x, (float, np.floating)) else x for x in row])


def price_surface_rows(s: PriceSurface, j_star: int | None = None):
    n = s.prices.shape[0]
    js = range(n) if j_star is None else [j_star]
    for k, strike in enumerate(s.strikes):
        for i in range(n):
            for j in js:
                yield float(strike), i + 1, j + 1, float(s.prices[i, j, k])


def emit_price_surface(path: str | Path, s: PriceSurface, j_star: int | None = None) -> None:
    """Header ``K,i,j,price``; regime labels are 1-based."""
    write_rows(path, ["K", "i", "j", "price"], price_surface_rows(s, j_star))


def emit_density(path: str | Path, d: DensitySurface, j_star: int | None = None) -> None:
    n = d.values.shape[0]
    js = range(n) if j_star is None else [j_star]
    rows = ((float(k), i + 1, j + 1, float(d.values[i, j, kk]))
            for kk, k in enumerate(d.strikes) for i in range(n) for j in js)
    write_rows(path, ["K", "i", "j", "density"], rows)


def emit_report(path: str | Path, report: Any) -> None:
    """JSON for objects exposing ``to_json``; CSV when the path ends in .csv and rows are dicts."""
    payload = report.to_json() if hasattr(report, "to_json") else report
    if str(path).endswith(".csv") and isinstance(payload, list) and payload and isinstance(payload[0], dict):
        keys = list(payload[0].keys())
        write_rows(path, keys, ([row.get(k) for k in keys] for row in payload))
    else:
        write_json(path, payload)
