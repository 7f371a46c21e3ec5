"""Generator-matrix algebra for the regime chain.

Convention: ``b[i, j]`` is the jump rate from state ``j`` to state ``i``, so
columns sum to zero and ``expm(t * b)[i, j] = P(X_t = i | X_0 = j)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.sparse.csgraph import connected_components

from .errors import ColumnSumNonzero, NegativeOffDiagonal, Overflow, ValidationError

COLUMN_SUM_TOL = 1e-12
# t * ||B||_1 beyond this is refused rather than squared into noise
MAX_SCALED_NORM = 1e6

# diagonal Pade(6, 6) numerator coefficients c_k = (12-k)! 6! / (12! k! (6-k)!)
_PADE6 = tuple(
    math.factorial(12 - k) * math.factorial(6) / (math.factorial(12) * math.factorial(k) * math.factorial(6 - k))
    for k in range(7)
)


@dataclass(frozen=True)
class GeneratorMatrix:
    b: NDArray[np.float64]

    @property
    def n(self) -> int:
        return self.b.shape[0]

    def off_diagonal(self) -> NDArray[np.float64]:
        out = self.b.copy()
        np.fill_diagonal(out, 0.0)
        return out


def validate_generator(b: ArrayLike) -> GeneratorMatrix:
    """Check sign and column-sum rules; re-project the diagonal within tolerance."""
    arr = np.array(b, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
        raise ValidationError(f"generator must be a non-empty square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("generator has non-finite entries")
    off = arr.copy()
    np.fill_diagonal(off, 0.0)
    if np.any(off < 0.0):
        i, j = np.argwhere(off < 0.0)[0]
        raise NegativeOffDiagonal(f"b[{i}][{j}] = {arr[i, j]} < 0")
    sums = arr.sum(axis=0)
    bad = np.abs(sums) > COLUMN_SUM_TOL
    if np.any(bad):
        j = int(np.argmax(bad))
        raise ColumnSumNonzero(f"column {j} sums to {sums[j]:.3e}")
    np.fill_diagonal(off, -off.sum(axis=0))
    off.setflags(write=False)
    return GeneratorMatrix(off)


def expm_pade6(a: ArrayLike) -> NDArray[np.float64]:
    """Matrix exponential by scaling and squaring with a diagonal Pade(6,6) approximant."""
    a = np.asarray(a, dtype=float)
    norm = np.linalg.norm(a, 1)
    if not np.isfinite(norm) or norm > MAX_SCALED_NORM:
        raise Overflow(f"scaled generator norm {norm:.3e} exceeds {MAX_SCALED_NORM:.0e}")
    s = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    x = a / 2.0**s
    ident = np.eye(a.shape[0])
    x2 = x @ x
    x4 = x2 @ x2
    x6 = x4 @ x2
    c = _PADE6
    u = x @ (c[1] * ident + c[3] * x2 + c[5] * x4)
    v = c[0] * ident + c[2] * x2 + c[4] * x4 + c[6] * x6
    r = np.linalg.solve(v - u, v + u)
    for _ in range(s):
        r = r @ r
    return r


def transition_matrix(g: GeneratorMatrix, t: float) -> NDArray[np.float64]:
    if not np.isfinite(t) or t < 0:
        raise ValidationError(f"time must be finite and >= 0, got {t}")
    return expm_pade6(t * g.b)


def is_irreducible(g: GeneratorMatrix) -> bool:
    """Strong connectivity of the rate graph (edge j -> i when b[i, j] > 0)."""
    if g.n == 1:
        return True
    # csgraph reads adj[p, q] as edge p -> q
    adj = (g.off_diagonal() > 0.0).T.astype(np.int8)
    ncomp, _ = connected_components(adj, directed=True, connection="strong")
    return ncomp == 1


def positivity_cross_check(g: GeneratorMatrix, t: float = 1.0, threshold: float = 1e-14) -> bool:
    """Numeric irreducibility proxy: every entry of e^{tB} above ``threshold``."""
    return bool(transition_matrix(g, t).min() > threshold)
