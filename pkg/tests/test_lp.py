import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridstate.lp import LinearProgram, NodeBudgetExceeded, solve_binary_ilp, solve_lp


def vertex_oracle(c, A, b, upper):
    """min c x, A x <= b, 0 <= x <= upper by enumerating basic solutions.

    Slacks s = b - A x >= 0 join the variables; every basis of m columns with
    the remaining variables at one of their bounds gives a candidate vertex.
    """
    m, n = A.shape
    M = np.hstack([A, np.eye(m)])
    ub = np.concatenate([upper, np.full(m, np.inf)])
    best = np.inf
    for basis in itertools.combinations(range(n + m), m):
        Bm = M[:, basis]
        if abs(np.linalg.det(Bm)) < 1e-12:
            continue
        rest = [j for j in range(n + m) if j not in basis]
        choices = [(0.0, ub[j]) if np.isfinite(ub[j]) else (0.0,) for j in rest]
        for vals in itertools.product(*choices):
            z = np.zeros(n + m)
            z[rest] = vals
            z[list(basis)] = np.linalg.solve(Bm, b - M[:, rest] @ np.array(vals))
            if np.all(z >= -1e-9) and np.all(z <= ub + 1e-9):
                best = min(best, c @ z[:n])
    return best


def test_single_bound():
    res = solve_lp(LinearProgram([1.0], [[1.0]], [">="], [3.0]))
    assert res.optimal and res.x[0] == pytest.approx(3.0)


def test_lav_median():
    z = np.array([1.0, 1.0, 10.0])
    A = np.hstack([np.ones((3, 1)), np.eye(3), -np.eye(3)])
    c = np.concatenate([[0.0], np.ones(6)])
    lo = np.concatenate([[-np.inf], np.zeros(6)])
    res = solve_lp(LinearProgram(c, A, ["="] * 3, z, lo))
    assert res.x[0] == pytest.approx(1.0) and res.objective == pytest.approx(9.0)


def test_infeasible_and_unbounded():
    res = solve_lp(LinearProgram([1.0], [[1.0], [1.0]], ["<=", ">="], [1.0, 2.0], row_names=["a", "b"]))
    assert res.status == "infeasible" and res.violated_rows
    assert solve_lp(LinearProgram([-1.0], [[1.0]], [">="], [0.0])).status == "unbounded"


def test_invalid_data():
    with pytest.raises(ValueError):
        LinearProgram([1.0, 2.0], [[1.0]], ["<="], [1.0])
    with pytest.raises(ValueError):
        LinearProgram([1.0], [[1.0]], ["<"], [1.0])
    with pytest.raises(ValueError):
        LinearProgram([1.0], [[1.0]], ["<="], [1.0], lower=[2.0], upper=[1.0])
    with pytest.raises(ValueError):
        LinearProgram([np.nan], [[1.0]], ["<="], [1.0])


@pytest.mark.parametrize("seed", range(6))
def test_random_lp_vs_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    n, m = 10, 2
    A = rng.uniform(-1, 2, (m, n))
    b = rng.uniform(1, 4, m)
    c = rng.uniform(-2, 1, n)
    upper = np.ones(n)
    res = solve_lp(LinearProgram(c, A, ["<="] * m, b, upper=upper))
    assert res.optimal
    assert np.all(A @ res.x <= b + 1e-7) and np.all(res.x >= -1e-7) and np.all(res.x <= 1 + 1e-7)
    assert res.objective == pytest.approx(vertex_oracle(c, A, b, upper), abs=1e-7)


def _dual_objective(lp, res):
    d = res.reduced_costs
    bound = np.where(d > 0, lp.lower, np.where(d < 0, lp.upper, 0.0))
    return float(lp.b @ res.duals + np.sum(np.where(d != 0, d * bound, 0.0)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 8), st.integers(1, 6))
def test_duality_gap_property(seed, n, m):
    rng = np.random.default_rng(seed)
    A = rng.uniform(-1, 1, (m, n))
    x0 = rng.uniform(0, 1, n)  # feasible point
    senses = list(rng.choice(["<=", ">=", "="], m))
    b = A @ x0
    b = np.where(np.array(senses) == "<=", b + 0.1, np.where(np.array(senses) == ">=", b - 0.1, b))
    lp = LinearProgram(rng.standard_normal(n), A, senses, b, upper=np.full(n, 2.0))
    res = solve_lp(lp)
    assert res.optimal
    r = A @ res.x - b
    for s, v in zip(senses, r):
        assert (v <= 1e-7) if s == "<=" else (v >= -1e-7) if s == ">=" else abs(v) <= 1e-7
    assert abs(res.objective - _dual_objective(lp, res)) < 1e-6
    y = res.duals
    assert all((yi <= 1e-9) if s == "<=" else (yi >= -1e-9) if s == ">=" else True
               for s, yi in zip(senses, y))


def test_degenerate_lp_terminates():
    # many redundant constraints through one vertex
    rows = [[1.0, 1.0]] * 6 + [[1.0, 0.0], [0.0, 1.0]]
    res = solve_lp(LinearProgram([-1.0, -1.0], rows, ["<="] * 8, [1.0] * 8))
    assert res.optimal and res.objective == pytest.approx(-1.0)


# ------------------------------------------------------------------ binary ILP

def test_single_cover():
    res = solve_binary_ilp(LinearProgram([1, 1], [[1, 1]], [">="], [1], upper=[1, 1],
                                         integer=[True, True]))
    assert res.objective == pytest.approx(1.0)


def test_path_cover_center():
    A = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]])
    res = solve_binary_ilp(LinearProgram(np.ones(3), A, [">="] * 3, np.ones(3),
                                         upper=np.ones(3), integer=np.ones(3, bool)))
    assert res.x.tolist() == [0, 1, 0]


def brute_force_cover(A):
    n = A.shape[1]
    best = None
    for mask in range(1 << n):
        x = np.array([(mask >> j) & 1 for j in range(n)])
        if np.all(A @ x >= 1) and (best is None or x.sum() < best):
            best = x.sum()
    return best


@pytest.mark.parametrize("seed", range(5))
def test_random_set_cover_vs_brute_force(seed):
    rng = np.random.default_rng(seed)
    A = (rng.random((9, 12)) < 0.25).astype(float)
    A[np.arange(9), rng.integers(0, 12, 9)] = 1.0
    res = solve_binary_ilp(LinearProgram(np.ones(12), A, [">="] * 9, np.ones(9),
                                         upper=np.ones(12), integer=np.ones(12, bool)))
    assert res.optimal and np.all(A @ res.x >= 1)
    assert res.objective == brute_force_cover(A)
    # never worse than a greedy cover
    left, greedy = set(range(9)), 0
    while left:
        j = max(range(12), key=lambda c: sum(A[i, c] for i in left))
        left -= {i for i in left if A[i, j]}
        greedy += 1
    assert res.objective <= greedy


def test_node_budget():
    rng = np.random.default_rng(1)
    A = (rng.random((30, 25)) < 0.15).astype(float)
    A[np.arange(30), rng.integers(0, 25, 30)] = 1.0
    lp = LinearProgram(np.ones(25), A, [">="] * 30, np.ones(30), upper=np.ones(25),
                       integer=np.ones(25, bool))
    with pytest.raises(NodeBudgetExceeded):
        solve_binary_ilp(lp, node_budget=1)


def test_ilp_infeasible_and_nonbinary():
    lp = LinearProgram([1.0], [[1.0]], [">="], [2.0], upper=[1.0], integer=[True])
    assert solve_binary_ilp(lp).status == "infeasible"
    with pytest.raises(ValueError):
        solve_binary_ilp(LinearProgram([1.0], [[1.0]], [">="], [1.0], upper=[3.0], integer=[True]))
