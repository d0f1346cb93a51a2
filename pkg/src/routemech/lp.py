"""Dense two-phase simplex for the small linear programs used by the mechanisms.

Self-contained on purpose: no external solver. Every solve is deterministic —
Bland's entering rule plus lowest-basis-index ratio ties — so identical inputs
produce identical outputs. A ``LinearProgram`` is an immutable value and the
solver keeps no shared state, so concurrent solves are safe; each solve runs
single-threaded.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - slow pure-python fallback
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


FEAS_TOL = 1e-7   # largest admissible constraint residual on an Optimal point
OPT_TOL = 1e-6    # objective slack allowed versus the true optimum
PIVOT_TOL = 1e-9  # tableau entries below this never pivot

# Equalities are solved as a <=/>= pair with this much room.  Keeping the
# room well under FEAS_TOL leaves headroom so residuals reported on Optimal
# points stay inside FEAS_TOL even after a marginal phase one.
_EQ_SLACK = 0.25 * FEAS_TOL

# Phase-one objective above this means infeasible; at or below it, leftover
# artificial mass plus _EQ_SLACK still fits inside FEAS_TOL.
_PHASE1_TOL = 0.5 * FEAS_TOL

_MAX_ITER = 200_000

LE, EQ, GE = -1, 0, 1
_SENSE_OF = {"<=": LE, "=": EQ, "==": EQ, ">=": GE, LE: LE, EQ: EQ, GE: GE}

_OPTIMAL, _INFEASIBLE, _UNBOUNDED, _ITER_LIMIT = 0, 1, 2, 3


class LpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class LpStructureError(ValueError):
    """Malformed program (bad shapes, non-finite data) — not a solver status."""


class LpInternalError(RuntimeError):
    """Solver broke its own contract (iteration cap, residual blowup)."""


@dataclass(frozen=True)
class LinearProgram:
    """``maximize objective @ x  s.t.  A x (<=|=|>=) b,  x >= lower_bounds``.

    ``objective=None`` marks a feasibility-only program (zero objective).
    ``senses`` holds one of the module constants ``LE``/``EQ``/``GE`` per row.
    """

    num_vars: int
    objective: np.ndarray | None
    A: np.ndarray
    senses: np.ndarray
    b: np.ndarray
    lower_bounds: np.ndarray

    @classmethod
    def build(
        cls,
        num_vars: int,
        objective: Sequence[float] | None = None,
        constraints: Iterable[tuple[Sequence[float], str | int, float]] = (),
        lower_bounds: Sequence[float] | None = None,
    ) -> "LinearProgram":
        """Assemble and validate a program from row tuples ``(coefs, sense, rhs)``."""
        rows = list(constraints)
        A = np.zeros((len(rows), num_vars))
        senses = np.zeros(len(rows), dtype=np.int8)
        b = np.zeros(len(rows))
        for k, (coefs, sense, rhs) in enumerate(rows):
            coefs = np.asarray(coefs, dtype=float)
            if coefs.shape != (num_vars,):
                raise LpStructureError(
                    f"constraint {k}: {coefs.shape[0] if coefs.ndim == 1 else coefs.shape} "
                    f"coefficients for {num_vars} variables"
                )
            if sense not in _SENSE_OF:
                raise LpStructureError(f"constraint {k}: unknown sense {sense!r}")
            A[k] = coefs
            senses[k] = _SENSE_OF[sense]
            b[k] = rhs
        obj = None if objective is None else np.asarray(objective, dtype=float)
        lb = (
            np.zeros(num_vars)
            if lower_bounds is None
            else np.asarray(lower_bounds, dtype=float)
        )
        lp = cls(num_vars=num_vars, objective=obj, A=A, senses=senses, b=b, lower_bounds=lb)
        lp.validate()
        return lp

    def validate(self) -> None:
        if self.num_vars < 0:
            raise LpStructureError("negative variable count")
        if self.A.shape != (len(self.b), self.num_vars):
            raise LpStructureError(
                f"constraint matrix {self.A.shape} does not match "
                f"{len(self.b)} rows x {self.num_vars} variables"
            )
        if self.senses.shape != (len(self.b),):
            raise LpStructureError("senses/rhs length mismatch")
        if self.objective is not None and self.objective.shape != (self.num_vars,):
            raise LpStructureError(
                f"objective has {self.objective.shape} coefficients, expected {self.num_vars}"
            )
        if self.lower_bounds.shape != (self.num_vars,):
            raise LpStructureError("lower_bounds length mismatch")
        if not np.isfinite(self.A).all() or not np.isfinite(self.b).all():
            raise LpStructureError("non-finite constraint data")
        if self.objective is not None and not np.isfinite(self.objective).all():
            raise LpStructureError("non-finite objective")
        if not np.isfinite(self.lower_bounds).all():
            raise LpStructureError("lower bounds must be finite")

    @property
    def feasibility_only(self) -> bool:
        return self.objective is None or not self.objective.any()


@dataclass(frozen=True)
class LpSolution:
    """Solve result; ``values``/``objective_value`` are set iff Optimal."""

    status: LpStatus
    values: np.ndarray | None = None
    objective_value: float | None = None

    @property
    def is_optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


@njit(cache=True)
def _pivot(T, cost, basis, r, c, m, width):  # pragma: no cover - jit kernel
    inv = 1.0 / T[r, c]
    for j in range(width):
        T[r, j] *= inv
    for k in range(m):
        if k != r:
            f = T[k, c]
            if f != 0.0:
                for j in range(width):
                    T[k, j] -= f * T[r, j]
                T[k, c] = 0.0
    f = cost[c]
    if f != 0.0:
        for j in range(width):
            cost[j] -= f * T[r, j]
        cost[c] = 0.0
    basis[r] = c


@njit(cache=True)
def _run_phase(T, cost, basis, m, ncols, scan_limit, pivot_tol, max_iter):  # pragma: no cover
    """Minimize the current cost row.  Returns (status, iterations)."""
    iters = 0
    while iters < max_iter:
        enter = -1
        for j in range(scan_limit):
            if cost[j] < -pivot_tol:
                enter = j
                break
        if enter < 0:
            return _OPTIMAL, iters
        leave = -1
        best_ratio = np.inf
        leave_var = np.iinfo(np.int64).max
        for r in range(m):
            a = T[r, enter]
            if a > pivot_tol:
                ratio = T[r, ncols] / a
                if ratio < best_ratio or (ratio == best_ratio and basis[r] < leave_var):
                    best_ratio = ratio
                    leave = r
                    leave_var = basis[r]
        if leave < 0:
            return _UNBOUNDED, iters
        _pivot(T, cost, basis, leave, enter, m, ncols + 1)
        iters += 1
    return _ITER_LIMIT, iters


@njit(cache=True)
def _two_phase(A, b, c, pivot_tol, phase1_tol, max_iter):  # pragma: no cover - jit kernel
    """maximize c@z  s.t.  A z <= b, z >= 0 (b of any sign).

    Returns (status, z).  Dense tableau, Bland's rule in both phases.
    """
    m, n = A.shape
    n_art = 0
    for i in range(m):
        if b[i] < 0.0:
            n_art += 1
    ncols = n + m + n_art
    T = np.zeros((m, ncols + 1))
    basis = np.empty(m, dtype=np.int64)
    art_start = n + m
    k_art = 0
    for i in range(m):
        if b[i] < 0.0:
            for j in range(n):
                T[i, j] = -A[i, j]
            T[i, n + i] = -1.0
            T[i, art_start + k_art] = 1.0
            T[i, ncols] = -b[i]
            basis[i] = art_start + k_art
            k_art += 1
        else:
            for j in range(n):
                T[i, j] = A[i, j]
            T[i, n + i] = 1.0
            T[i, ncols] = b[i]
            basis[i] = n + i

    cost = np.zeros(ncols + 1)
    if n_art > 0:
        for j in range(art_start, ncols):
            cost[j] = 1.0
        for i in range(m):
            if basis[i] >= art_start:
                for j in range(ncols + 1):
                    cost[j] -= T[i, j]
        status, it1 = _run_phase(T, cost, basis, m, ncols, ncols, pivot_tol, max_iter)
        if status == _ITER_LIMIT:
            return _ITER_LIMIT, np.zeros(n)
        if -cost[ncols] > phase1_tol:
            return _INFEASIBLE, np.zeros(n)
        # Pivot leftover artificials out where possible; all-zero rows keep a
        # degenerate artificial basic at value ~0, which is harmless because
        # artificial columns are excluded from phase-two entering scans.
        for i in range(m):
            if basis[i] >= art_start:
                for j in range(art_start):
                    if abs(T[i, j]) > pivot_tol:
                        _pivot(T, cost, basis, i, j, m, ncols + 1)
                        break

    for j in range(ncols + 1):
        cost[j] = 0.0
    for j in range(n):
        cost[j] = -c[j]
    for i in range(m):
        bj = basis[i]
        if bj < n and c[bj] != 0.0:
            for j in range(ncols + 1):
                cost[j] += c[bj] * T[i, j]
    status, _ = _run_phase(T, cost, basis, m, ncols, art_start, pivot_tol, max_iter)
    z = np.zeros(n)
    if status == _OPTIMAL:
        for i in range(m):
            if basis[i] < n:
                v = T[i, ncols]
                z[basis[i]] = v if v > 0.0 else 0.0
    return status, z


def _standard_form(lp: LinearProgram) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shift out lower bounds and normalize every row to <= form."""
    lb = lp.lower_bounds
    shifted_b = lp.b - lp.A @ lb
    n_eq = int(np.count_nonzero(lp.senses == EQ))
    m_std = len(lp.b) + n_eq
    A_std = np.empty((m_std, lp.num_vars))
    b_std = np.empty(m_std)
    k = 0
    for i in range(len(lp.b)):
        s = lp.senses[i]
        if s == LE:
            A_std[k] = lp.A[i]
            b_std[k] = shifted_b[i]
            k += 1
        elif s == GE:
            A_std[k] = -lp.A[i]
            b_std[k] = -shifted_b[i]
            k += 1
        else:
            A_std[k] = lp.A[i]
            b_std[k] = shifted_b[i] + _EQ_SLACK
            A_std[k + 1] = -lp.A[i]
            b_std[k + 1] = -shifted_b[i] + _EQ_SLACK
            k += 2
    c = np.zeros(lp.num_vars) if lp.objective is None else lp.objective.astype(float)
    return A_std, b_std, c


def solve_lp(lp: LinearProgram) -> LpSolution:
    """Solve ``lp``; structural problems raise, solver outcomes are statuses."""
    lp.validate()
    A_std, b_std, c = _standard_form(lp)
    status, z = _two_phase(
        np.ascontiguousarray(A_std),
        np.ascontiguousarray(b_std),
        np.ascontiguousarray(c),
        PIVOT_TOL,
        _PHASE1_TOL,
        _MAX_ITER,
    )
    if status == _ITER_LIMIT:
        raise LpInternalError("simplex iteration cap hit; program likely ill-posed")
    if status == _INFEASIBLE:
        return LpSolution(LpStatus.INFEASIBLE)
    if status == _UNBOUNDED:
        return LpSolution(LpStatus.UNBOUNDED)
    x = z + lp.lower_bounds
    residual = _max_violation(lp, x)
    if residual > 4.0 * FEAS_TOL:
        raise LpInternalError(f"optimal point violates constraints by {residual:g}")
    obj = 0.0 if lp.objective is None else float(lp.objective @ x)
    return LpSolution(LpStatus.OPTIMAL, values=x, objective_value=obj)


def check_feasible(lp: LinearProgram) -> bool:
    """True iff the constraint system admits a point (objective ignored)."""
    probe = LinearProgram(
        num_vars=lp.num_vars,
        objective=None,
        A=lp.A,
        senses=lp.senses,
        b=lp.b,
        lower_bounds=lp.lower_bounds,
    )
    return solve_lp(probe).status is LpStatus.OPTIMAL


def _max_violation(lp: LinearProgram, x: np.ndarray) -> float:
    """Largest constraint or bound residual of ``x``; 0 means exactly feasible."""
    if len(lp.b) == 0:
        gap = 0.0
    else:
        act = lp.A @ x
        worst = 0.0
        over = act - lp.b
        for i in range(len(lp.b)):
            s = lp.senses[i]
            if s == LE:
                v = over[i]
            elif s == GE:
                v = -over[i]
            else:
                v = abs(over[i])
            if v > worst:
                worst = v
        gap = worst
    lb_gap = float(np.max(lp.lower_bounds - x, initial=0.0))
    return max(gap, lb_gap)
