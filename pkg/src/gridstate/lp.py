"""Bounded-variable revised simplex and binary branch-and-bound.

The basis inverse is kept dense and updated by elementary eta steps, with a
fresh inversion every ``REFACTOR_EVERY`` pivots. That is adequate for the
desk-scale LPs produced here (LAV fits, DC OPF, PMU placement).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-10
REFACTOR_EVERY = 50
DEGENERATE_SWITCH = 10


class LpStallError(RuntimeError):
    """Pivot budget exhausted before reaching a verdict."""


class NodeBudgetExceeded(RuntimeError):
    def __init__(self, nodes, incumbent, objective):
        self.nodes = nodes
        self.incumbent = incumbent
        self.objective = objective
        super().__init__(f"branch-and-bound node budget of {nodes} exceeded")


@dataclass
class LinearProgram:
    """min c^T x  s.t.  A x (<=, =, >=) b,  lower <= x <= upper."""

    c: np.ndarray
    A: object
    senses: list
    b: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    integer: np.ndarray | None = None
    row_names: list | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = len(self.c)
        self.A = sp.csc_matrix(self.A, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        m = len(self.b)
        if self.A.shape != (m, n):
            raise ValueError(f"constraint matrix is {self.A.shape}, expected {(m, n)}")
        self.senses = list(self.senses)
        if len(self.senses) != m or any(s not in ("<=", "=", ">=") for s in self.senses):
            raise ValueError("senses must be one of '<=', '=', '>=' per row")
        self.lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=float)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        self.integer = (np.zeros(n, dtype=bool) if self.integer is None
                        else np.asarray(self.integer, dtype=bool))
        if np.any(self.lower > self.upper):
            raise ValueError("variable lower bound exceeds upper bound")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.b))
                and np.all(np.isfinite(self.A.data))):
            raise ValueError("LP data must be finite")

    @property
    def shape(self):
        return self.A.shape


@dataclass
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None = None
    objective: float = math.nan
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    iterations: int = 0
    violated_rows: list = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class _Simplex:
    def __init__(self, lp: LinearProgram, start=None):
        m, n = lp.shape
        self.m, self.n = m, n
        slack_lo = np.array([0.0 if s == "<=" else (-np.inf if s == ">=" else 0.0)
                             for s in lp.senses])
        slack_hi = np.array([np.inf if s == "<=" else 0.0 for s in lp.senses])
        self.lo = np.concatenate([lp.lower, slack_lo, np.zeros(m)])
        self.hi = np.concatenate([lp.upper, slack_hi, np.full(m, np.inf)])
        x = np.zeros(n + 2 * m)
        x[:n] = _initial_values(lp.lower, lp.upper, start)
        res = lp.b - lp.A @ x[:n]
        sign = np.where(res >= 0, 1.0, -1.0)
        self.A = sp.hstack([lp.A, sp.eye(m), sp.diags(sign)], format="csc")
        self.b = lp.b
        basis = n + m + np.arange(m)
        # crash: take a slack or singleton structural column where it is feasible
        slack_val = res
        for i in range(m):
            if self.lo[n + i] - FEAS_TOL <= slack_val[i] <= self.hi[n + i] + FEAS_TOL:
                basis[i] = n + i
        col_nnz = np.diff(lp.A.indptr)
        used = set(basis.tolist())
        for j in np.flatnonzero(col_nnz == 1):
            i = lp.A.indices[lp.A.indptr[j]]
            if basis[i] < n + m or j in used:
                continue
            a = lp.A.data[lp.A.indptr[j]]
            val = x[j] + res[i] / a
            if self.lo[j] - FEAS_TOL <= val <= self.hi[j] + FEAS_TOL and x[j] == 0.0:
                basis[i] = j
                used.add(j)
        self.x = x
        self.basis = basis
        self.is_basic = np.zeros(n + 2 * m, dtype=bool)
        self.is_basic[basis] = True
        art = n + m + np.arange(m)
        nonbasic_art = art[~self.is_basic[art]]
        self.hi[nonbasic_art] = 0.0
        self.iterations = 0
        self._invert()

    def _invert(self):
        B = self.A[:, self.basis].toarray()
        self.Binv = np.linalg.inv(B)
        self.since_refactor = 0

    def _ratio_test(self, xb, delta, flip, bland):
        """Harris two-pass ratio test; returns (step, leaving row or -1)."""
        lo_b, hi_b = self.lo[self.basis], self.hi[self.basis]
        piv = PIVOT_TOL * max(1.0, np.abs(delta).max(initial=0.0))
        dec = (delta < -piv) & np.isfinite(lo_b)
        inc = (delta > piv) & np.isfinite(hi_b)
        with np.errstate(divide="ignore", invalid="ignore"):
            slack = np.where(dec, xb - lo_b, np.where(inc, hi_b - xb, np.inf))
            rate = np.abs(delta)
            relaxed = np.where(dec | inc, (np.maximum(slack, 0.0) + FEAS_TOL) / rate, np.inf)
            exact = np.where(dec | inc, np.maximum(slack, 0.0) / rate, np.inf)
        t_max = relaxed.min(initial=np.inf)
        if flip <= min(t_max, exact.min(initial=np.inf)):
            return flip, -1
        cand = np.flatnonzero(exact <= t_max)
        if not len(cand):
            return flip, -1
        if bland:
            leave = cand[np.argmin(self.basis[cand])]
        else:
            leave = cand[np.argmax(rate[cand])]
        return exact[leave], int(leave)

    def _basic_values(self):
        xn = self.x.copy()
        xn[self.basis] = 0.0
        return self.Binv @ (self.b - self.A @ xn)

    def run(self, cost, max_iter):
        bland = False
        degenerate = 0
        while True:
            if self.iterations >= max_iter:
                raise LpStallError(f"simplex stalled after {self.iterations} pivots")
            xb = self._basic_values()
            self.x[self.basis] = xb
            y = self.Binv.T @ cost[self.basis]
            d = cost - self.A.T @ y
            d[self.basis] = 0.0
            fixed = self.hi <= self.lo
            can_up = (~self.is_basic) & (~fixed) & (self.x < self.hi - FEAS_TOL) & (d < -OPT_TOL)
            can_dn = (~self.is_basic) & (~fixed) & (self.x > self.lo + FEAS_TOL) & (d > OPT_TOL)
            eligible = can_up | can_dn
            if not eligible.any():
                return "optimal", y, d
            cand = np.flatnonzero(eligible)
            j = cand[0] if bland else cand[np.argmax(np.abs(d[cand]))]
            direction = 1.0 if can_up[j] else -1.0
            alpha = self.Binv @ self.A[:, j].toarray().ravel()
            delta = -direction * alpha  # change of x_B per unit step
            t_best, leave = self._ratio_test(xb, delta, self.hi[j] - self.lo[j], bland)
            if not np.isfinite(t_best):
                return "unbounded", y, d
            self.iterations += 1
            if t_best <= 1e-12:
                degenerate += 1
                if degenerate >= DEGENERATE_SWITCH:
                    bland = True
            else:
                degenerate = 0
                bland = False
            self.x[j] += direction * t_best
            if leave < 0:
                # bound flip of the entering variable
                self.x[j] = self.hi[j] if direction > 0 else self.lo[j]
                continue
            var = self.basis[leave]
            self.x[self.basis] = xb + t_best * delta
            self.x[var] = self.lo[var] if delta[leave] < 0 else self.hi[var]
            self.is_basic[var] = False
            self.is_basic[j] = True
            self.basis[leave] = j
            self.since_refactor += 1
            if self.since_refactor >= REFACTOR_EVERY:
                self._invert()
            else:
                piv = alpha[leave]
                row = self.Binv[leave] / piv
                self.Binv -= np.outer(alpha, row)
                self.Binv[leave] = row


def _initial_values(lower, upper, start):
    x = np.where(np.isfinite(lower), lower, np.where(np.isfinite(upper), upper, 0.0))
    if start is not None:
        start = np.asarray(start, dtype=float)
        free = ~np.isfinite(lower) & ~np.isfinite(upper)
        x[free] = start[free]
    return x


def solve_lp(lp: LinearProgram, max_iter: int | None = None, start=None) -> LpResult:
    """Solve an LP to an optimal basic solution.

    ``start`` optionally supplies values for free variables, which otherwise
    start at zero. Raises :class:`LpStallError` when the pivot budget runs out.
    """
    m, n = lp.shape
    if max_iter is None:
        max_iter = 50 * (m + n) + 1000
    if m == 0:
        x = _initial_values(lp.lower, lp.upper, start)
        if np.any((lp.c < 0) & ~np.isfinite(lp.upper)) or np.any((lp.c > 0) & ~np.isfinite(lp.lower)):
            return LpResult("unbounded")
        x = np.where(lp.c < 0, lp.upper, np.where(lp.c > 0, lp.lower, x))
        return LpResult("optimal", x, float(lp.c @ x), np.zeros(0), lp.c.copy())
    s = _Simplex(lp, start)
    N = n + 2 * m
    art = n + m + np.arange(m)
    phase1 = np.zeros(N)
    phase1[art] = 1.0
    if np.any(s.x[art] > 0) or s.is_basic[art].any():
        status, _, _ = s.run(phase1, max_iter)
        infeas = s.x[art].sum()
        if infeas > 1e-7 * max(1.0, np.abs(lp.b).max()):
            rows = [int(i) for i in np.flatnonzero(s.x[art] > 1e-7)]
            names = [lp.row_names[i] for i in rows] if lp.row_names else rows
            return LpResult("infeasible", iterations=s.iterations, violated_rows=names)
    s.hi[art] = 0.0
    s.x[art] = np.minimum(s.x[art], 0.0)
    cost = np.concatenate([lp.c, np.zeros(2 * m)])
    status, y, d = s.run(cost, max_iter)
    x = s.x[:n].copy()
    if status == "unbounded":
        return LpResult("unbounded", iterations=s.iterations)
    return LpResult("optimal", x, float(lp.c @ x), y, d[:n], s.iterations)


def _with_bounds(lp: LinearProgram, lower, upper) -> LinearProgram:
    out = LinearProgram.__new__(LinearProgram)
    out.__dict__.update(lp.__dict__)
    out.lower = lower
    out.upper = upper
    return out


def solve_binary_ilp(lp: LinearProgram, node_budget: int = 100_000) -> LpResult:
    """Exact optimum over 0/1 integer variables by depth-first branch-and-bound.

    Branches on the most fractional variable (lowest index on ties), exploring
    the 1-branch first.
    """
    ints = np.flatnonzero(lp.integer)
    if np.any(lp.lower[ints] < 0) or np.any(lp.upper[ints] > 1):
        raise ValueError("integer variables must be binary")
    integral_obj = bool(np.all(lp.integer) and np.all(lp.c == np.round(lp.c)))
    best_x, best_obj = None, np.inf
    stack = [(lp.lower.copy(), lp.upper.copy())]
    nodes = 0
    iterations = 0
    while stack:
        lo, hi = stack.pop()
        nodes += 1
        if nodes > node_budget:
            raise NodeBudgetExceeded(node_budget, best_x, best_obj)
        res = solve_lp(_with_bounds(lp, lo, hi))
        iterations += res.iterations
        if res.status == "unbounded":
            raise ValueError("LP relaxation is unbounded")
        if not res.optimal:
            continue
        bound = math.ceil(res.objective - 1e-7) if integral_obj else res.objective
        if bound >= best_obj - 1e-9:
            continue
        xi = res.x[ints]
        frac = np.abs(xi - np.round(xi))
        if np.all(frac <= 1e-6):
            x = res.x.copy()
            x[ints] = np.round(xi)
            best_x, best_obj = x, float(lp.c @ x)
            continue
        k = int(np.argmin(np.where(frac > 1e-6, np.abs(xi - 0.5), np.inf)))
        j = ints[k]
        lo0, hi0 = lo.copy(), hi.copy()
        hi0[j] = 0.0
        lo1, hi1 = lo.copy(), hi.copy()
        lo1[j] = 1.0
        stack.append((lo0, hi0))
        stack.append((lo1, hi1))
    if best_x is None:
        return LpResult("infeasible", iterations=iterations)
    log.debug("branch-and-bound explored %d nodes", nodes)
    return LpResult("optimal", best_x, best_obj, iterations=iterations)
