"""Dense two-phase primal simplex with Bland's rule.

Solves   min c.x  subject to  A x = b,  x >= 0   on dense tableaus.
Bland's smallest-index rule makes the iteration deterministic and immune
to cycling; speed is a non-goal at the problem sizes used here (a few
thousand variables, a few thousand rows).  The solver also reports the
dual vector recovered from the final basis so callers can check strong
duality and complementary slackness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEASIBILITY_TOL = 1e-9
REDUCED_COST_TOL = 1e-11
PIVOT_TOL = 1e-11


class LinearProgramError(RuntimeError):
    pass


class InfeasibleError(LinearProgramError):
    pass


class IterationLimitError(LinearProgramError):
    def __init__(self, msg: str, best_value: float):
        super().__init__(msg)
        self.best_value = best_value


@dataclass
class SimplexResult:
    value: float
    x: np.ndarray
    dual: np.ndarray
    basis: np.ndarray
    iterations: int

    def complementary_slackness_residual(self, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
        """max of |c_j - y.A_j| over basic (active) variables; ~0 at optimum."""
        reduced = c - self.dual @ a
        active = self.x > FEASIBILITY_TOL
        if not np.any(active):
            return 0.0
        return float(np.max(np.abs(reduced[active] * self.x[active])))


def _pivot(tableau: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    piv = tableau[row, col]
    tableau[row] /= piv
    colvals = tableau[:, col].copy()
    colvals[row] = 0.0
    tableau -= np.outer(colvals, tableau[row])
    tableau[:, col] = 0.0
    tableau[row, col] = 1.0
    basis[row] = col


def _run_phase(
    tableau: np.ndarray,
    basis: np.ndarray,
    ncols: int,
    max_iter: int,
) -> int:
    """Bland-rule pivoting until no negative reduced cost. Returns #pivots."""
    it = 0
    while True:
        reduced = tableau[-1, :ncols]
        entering = -1
        for j in range(ncols):
            if reduced[j] < -REDUCED_COST_TOL:
                entering = j
                break
        if entering < 0:
            return it
        col = tableau[:-1, entering]
        rhs = tableau[:-1, -1]
        ratios = np.full(col.shape, np.inf)
        positive = col > PIVOT_TOL
        ratios[positive] = rhs[positive] / col[positive]
        best = np.min(ratios)
        if not np.isfinite(best):
            raise LinearProgramError("unbounded linear program")
        # Bland: among min-ratio rows, leave the one with the smallest basis index
        rows = np.where(np.isclose(ratios, best, rtol=0.0, atol=1e-12) & positive)[0]
        leaving = rows[np.argmin(basis[rows])]
        _pivot(tableau, basis, leaving, entering)
        it += 1
        if it > max_iter:
            raise IterationLimitError(
                f"simplex iteration cap {max_iter} reached", float(tableau[-1, -1])
            )


def solve_lp(
    a: np.ndarray,
    b: np.ndarray,
    c: np.ndarray,
    max_iter: int | None = None,
) -> SimplexResult:
    """Solve min c.x s.t. A x = b, x >= 0 (dense, deterministic).

    Raises
    ------
    InfeasibleError
        If phase 1 cannot drive the artificial variables to zero within
        ``FEASIBILITY_TOL``.
    IterationLimitError
        If the pivot cap is hit; carries the best bound seen.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float).copy()
    c = np.asarray(c, dtype=float)
    m, n = a.shape
    if max_iter is None:
        max_iter = 50 * (m + n) + 1000

    # row equilibration: scaling rows changes neither x nor the objective,
    # but keeps pivot magnitudes comparable across rows of mixed scale
    row_scale = np.maximum(np.abs(a).max(axis=1, initial=0.0), np.abs(b))
    row_scale[row_scale == 0] = 1.0
    a = a / row_scale[:, None]
    b = b / row_scale

    sign = np.where(b < 0, -1.0, 1.0)
    a = a * sign[:, None]
    b = b * sign

    # phase 1: minimise the sum of artificials
    tableau = np.zeros((m + 1, n + m + 1))
    tableau[:m, :n] = a
    tableau[:m, n : n + m] = np.eye(m)
    tableau[:m, -1] = b
    basis = np.arange(n, n + m)
    tableau[-1, :n] = -a.sum(axis=0)
    tableau[-1, -1] = -b.sum()
    it1 = _run_phase(tableau, basis, n + m, max_iter)
    phase1 = -float(tableau[-1, -1])
    if phase1 > FEASIBILITY_TOL * max(1.0, float(np.abs(b).max(initial=0.0))):
        raise InfeasibleError(f"infeasible: phase-1 objective {phase1:.3e}")

    # drive any artificial still in the basis out (degenerate rows)
    for row in range(m):
        if basis[row] >= n:
            piv_col = -1
            for j in range(n):
                if abs(tableau[row, j]) > PIVOT_TOL:
                    piv_col = j
                    break
            if piv_col >= 0:
                _pivot(tableau, basis, row, piv_col)
    keep_rows = [r for r in range(m) if basis[r] < n]

    # phase 2 on the original costs
    t2 = np.zeros((len(keep_rows) + 1, n + 1))
    for i, r in enumerate(keep_rows):
        t2[i, :n] = tableau[r, :n]
        t2[i, -1] = tableau[r, -1]
    basis2 = basis[keep_rows].copy()
    t2[-1, :n] = c
    # make reduced costs of basic columns zero
    for i, bj in enumerate(basis2):
        t2[-1] -= t2[-1, bj] * t2[i]
    it2 = _run_phase(t2, basis2, n, max_iter)

    x = np.zeros(n)
    x[basis2] = t2[: len(basis2), -1]
    value = float(c @ x)

    # dual from the basis: solve B^T y = c_B on the kept original rows
    rows = np.array(keep_rows, dtype=int)
    bmat = a[rows][:, basis2]
    try:
        y_kept = np.linalg.solve(bmat.T, c[basis2])
    except np.linalg.LinAlgError:
        y_kept, *_ = np.linalg.lstsq(bmat.T, c[basis2], rcond=None)
    dual = np.zeros(m)
    dual[rows] = y_kept
    dual *= sign  # undo the row sign flips
    dual /= row_scale  # undo the equilibration
    return SimplexResult(value=value, x=x, dual=dual, basis=basis2, iterations=it1 + it2)
