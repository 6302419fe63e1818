"""Self-contained dense simplex for the tiny LPs the geometry module needs.

Solves   max c.x  s.t.  A x = b,  x >= 0   by the two-phase tableau method
with Bland's rule (no cycling).  Problem sizes here are a handful of rows and
at most a few dozen columns, so numerical sophistication beyond partial
tolerance handling is unnecessary.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

_EPS = 1e-11


class LPResult(NamedTuple):
    status: str  # 'optimal' | 'infeasible' | 'unbounded'
    x: np.ndarray | None
    value: float


def _pivot(tab: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    tab[row] /= tab[row, col]
    for r in range(tab.shape[0]):
        if r != row and abs(tab[r, col]) > 0.0:
            tab[r] -= tab[r, col] * tab[row]
    basis[row] = col


def _run(tab: np.ndarray, basis: np.ndarray, ncols: int) -> str:
    """Iterate on a tableau whose last row is the (maximization) objective."""
    m = tab.shape[0] - 1
    while True:
        obj = tab[-1, :ncols]
        col = -1
        for j in range(ncols):
            if obj[j] > _EPS:  # entering variable improves a max objective
                col = j
                break
        if col < 0:
            return "optimal"
        best_ratio, row = np.inf, -1
        for r in range(m):
            a = tab[r, col]
            if a > _EPS:
                ratio = tab[r, -1] / a
                if ratio < best_ratio - _EPS or (
                    abs(ratio - best_ratio) <= _EPS and (row < 0 or basis[r] < basis[row])
                ):
                    best_ratio, row = ratio, r
        if row < 0:
            return "unbounded"
        _pivot(tab, basis, row, col)


def solve_lp(c: np.ndarray, A: np.ndarray, b: np.ndarray) -> LPResult:
    """max c.x s.t. A x = b, x >= 0."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).copy()
    c = np.asarray(c, dtype=float)
    m, n = A.shape
    A = A.copy()
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    # phase 1: drive artificial variables out
    tab = np.zeros((m + 1, n + m + 1))
    tab[:m, :n] = A
    tab[:m, n : n + m] = np.eye(m)
    tab[:m, -1] = b
    tab[-1, :n] = A.sum(axis=0)  # maximize -sum(artificials) <=> this row
    tab[-1, -1] = b.sum()
    basis = np.arange(n, n + m)
    _run(tab, basis, n + m)
    if tab[-1, -1] > 1e-8 * max(1.0, float(np.abs(b).sum())):
        return LPResult("infeasible", None, np.nan)
    # pivot any artificial still in the basis onto a structural column
    for r in range(m):
        if basis[r] >= n:
            for j in range(n):
                if abs(tab[r, j]) > _EPS:
                    _pivot(tab, basis, r, j)
                    break

    # phase 2 on the structural columns
    tab2 = np.zeros((m + 1, n + 1))
    tab2[:m, :n] = tab[:m, :n]
    tab2[:m, -1] = tab[:m, -1]
    tab2[-1, :n] = c
    for r in range(m):
        if basis[r] < n and abs(tab2[-1, basis[r]]) > 0.0:
            tab2[-1] -= tab2[-1, basis[r]] * tab2[r]
    status = _run(tab2, basis, n)
    if status != "optimal":
        return LPResult(status, None, np.inf)
    x = np.zeros(n)
    for r in range(m):
        if basis[r] < n:
            x[basis[r]] = tab2[r, -1]
    return LPResult("optimal", x, float(c @ x))
