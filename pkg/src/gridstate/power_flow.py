"""AC and DC power flow.

Newton-Raphson works in polar coordinates with a Jacobian laid out once on a
fixed pattern derived from Y and refactored in place every iteration. The
fast decoupled variants factor B' and B'' once and keep the factors while the
network matrices are unchanged. Gauss-Seidel sweeps bus by bus in complex form.

Fast decoupled matrix conventions (B = -Im Y of a modified network):

    ==========  =====================================  ====================
    matrix      removed from the network               extra for variant
    ==========  =====================================  ====================
    B'          bus shunts, line charging, tap ratios  XB: resistances
    B''         phase shifts                           BX: resistances
    ==========  =====================================  ====================
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .network import (PQ, PV, SLACK, AcModel, DcModel, Network, branch_block)
from .sparse import (LuFactorization, SingularMatrixError, SparseMatrix, lu_factor,
                     lu_refactor, lu_solve)

log = logging.getLogger(__name__)

TOLERANCE = 1e-8
MAX_ITER = {"nr": 50, "fdxb": 50, "fdbx": 50, "gs": 1000}
DIVERGENCE_WINDOW = {"nr": 5, "fdxb": 5, "fdbx": 5, "gs": 20}


@dataclass
class ReuseRecord:
    matrix_reused: bool = False
    pattern_reused: bool = False
    factor_reused: bool = False
    warm_start: bool = False
    factor_events: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"matrix_reused": self.matrix_reused, "pattern_reused": self.pattern_reused,
                "factor_reused": self.factor_reused, "warm_start": self.warm_start,
                "factor_events": list(self.factor_events)}


@dataclass
class PowerFlowReport:
    method: str
    status: str  # converged | diverged | max_iterations | singular
    iterations: int
    V: np.ndarray | None
    mismatch_trace: list
    reuse: ReuseRecord
    message: str = ""
    injections: np.ndarray | None = None  # complex S per bus, or real P for DC
    flow_from: np.ndarray | None = None
    flow_to: np.ndarray | None = None
    theta: np.ndarray | None = None
    unreferenced_island: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def vm(self):
        return None if self.V is None else np.abs(self.V)

    @property
    def va(self):
        return self.theta if self.V is None else np.angle(self.V)


@dataclass
class PowerFlowState:
    """Warm-start voltages and per-method reusable workspaces."""

    V: np.ndarray | None = None
    theta: np.ndarray | None = None
    workspace: dict = field(default_factory=dict)


def _bus_sets(network: Network):
    kinds = [b.kind for b in network.buses]
    ref = np.array([i for i, k in enumerate(kinds) if k == SLACK])
    if len(ref) != 1:
        raise ValueError(f"expected exactly one slack bus, found {len(ref)}")
    pv = np.array([i for i, k in enumerate(kinds) if k == PV], dtype=np.int64)
    pq = np.array([i for i, k in enumerate(kinds) if k == PQ], dtype=np.int64)
    return int(ref[0]), pv, pq


def _initial_voltage(network: Network, state: PowerFlowState | None, flat: bool):
    vm = network.voltage_targets()
    va = np.array([b.va_init for b in network.buses])
    warm = state is not None and state.V is not None and not flat and len(state.V) == network.n_bus
    if warm:
        ref, pv, pq = _bus_sets(network)
        V = state.V.copy()
        fixed = np.append(pv, ref)
        V[fixed] = vm[fixed] * np.exp(1j * np.angle(V[fixed]))
        V[ref] = vm[ref] * np.exp(1j * va[ref])
        return V, True
    if flat:
        ref, pv, pq = _bus_sets(network)
        vm[pq] = 1.0
        slack_angle = va[ref]
        va[:] = 0.0
        va[ref] = slack_angle
    return vm * np.exp(1j * va), False


def _mismatch(V, Y, Sbus, pvpq, pq):
    S = V * np.conj(Y @ V)
    mis = S - Sbus
    return np.concatenate([mis.real[pvpq], mis.imag[pq]]), S


class _Tracker:
    """Convergence and divergence bookkeeping shared by the AC methods."""

    def __init__(self, tol, window):
        self.tol, self.window = tol, window
        self.trace = []
        self.rising = 0

    def update(self, norm) -> str | None:
        if not np.isfinite(norm):
            self.trace.append(float(norm))
            return "diverged"
        if self.trace and norm > self.trace[-1]:
            self.rising += 1
        else:
            self.rising = 0
        self.trace.append(float(norm))
        if norm < self.tol:
            return "converged"
        if self.rising >= self.window:
            return "diverged"
        return None


def _finish(method, status, it, V, ac: AcModel, tracker, reuse, message=""):
    Sf, St = ac.branch_powers(V)
    return PowerFlowReport(method, status, it, V, tracker.trace, reuse, message,
                           injections=ac.injections(V), flow_from=Sf, flow_to=St)


# --------------------------------------------------------------------------
# Newton-Raphson


@dataclass
class _JacobianLayout:
    pattern: SparseMatrix
    src: np.ndarray  # Y storage position per Jacobian entry
    code: np.ndarray  # 0: Re dS/dVa, 1: Re dS/dVm, 2: Im dS/dVa, 3: Im dS/dVm
    rows: np.ndarray  # Y row/col per Y storage position
    cols: np.ndarray
    key: tuple
    fact: LuFactorization | None = None


def _jacobian_layout(ac: AcModel, pv, pq, key) -> _JacobianLayout:
    pat = ac.pattern
    n = pat.n
    cols = np.repeat(np.arange(n, dtype=np.int64), np.diff(pat.indptr))
    rows = pat.indices
    pvpq = np.concatenate([pv, pq])
    a = np.full(n, -1, dtype=np.int64)
    a[pvpq] = np.arange(len(pvpq))
    m = np.full(n, -1, dtype=np.int64)
    m[pq] = len(pvpq) + np.arange(len(pq))
    k = np.arange(len(rows), dtype=np.int64)
    r_blocks, c_blocks, s_blocks, codes = [], [], [], []
    for code, (rmap, cmap) in enumerate([(a, a), (a, m), (m, a), (m, m)]):
        ok = (rmap[rows] >= 0) & (cmap[cols] >= 0)
        r_blocks.append(rmap[rows[ok]])
        c_blocks.append(cmap[cols[ok]])
        s_blocks.append(k[ok])
        codes.append(np.full(int(ok.sum()), code, dtype=np.int8))
    r = np.concatenate(r_blocks)
    c = np.concatenate(c_blocks)
    order = np.lexsort((r, c))
    dim = len(pvpq) + len(pq)
    indptr = np.zeros(dim + 1, dtype=np.int64)
    np.add.at(indptr, c + 1, 1)
    np.cumsum(indptr, out=indptr)
    J = SparseMatrix((dim, dim), indptr, r[order].astype(np.int64), np.zeros(len(r)))
    return _JacobianLayout(J, np.concatenate(s_blocks)[order], np.concatenate(codes)[order],
                           rows, cols, key)


def _jacobian_values(layout: _JacobianLayout, ac: AcModel, V) -> np.ndarray:
    Y = ac.values
    i, j = layout.rows, layout.cols
    Ibus = ac.Y @ V
    Vn = V / np.abs(V)
    diag = i == j
    yv = Y * V[j]
    dva = 1j * V[i] * (np.where(diag, np.conj(Ibus[i]), 0.0) - np.conj(yv))
    dvm = V[i] * np.conj(Y * Vn[j]) + np.where(diag, np.conj(Ibus[i]) * Vn[i], 0.0)
    parts = np.stack([dva.real, dvm.real, dva.imag, dvm.imag])
    return parts[layout.code, layout.src]


def solve_newton_raphson(network: Network, ac: AcModel, state: PowerFlowState | None = None,
                         tol: float = TOLERANCE, max_iter: int | None = None,
                         flat: bool = False) -> PowerFlowReport:
    """Polar Newton-Raphson; the Jacobian pattern and LU storage are reused."""
    max_iter = MAX_ITER["nr"] if max_iter is None else max_iter
    state = state if state is not None else PowerFlowState()
    ref, pv, pq = _bus_sets(network)
    pvpq = np.concatenate([pv, pq])
    V, warm = _initial_voltage(network, state, flat)
    p, q = network.specified_injections()
    Sbus = p + 1j * q
    reuse = ReuseRecord(warm_start=warm)
    key = (ac.pattern_version, id(ac.pattern), tuple(pv), tuple(pq))
    ws = state.workspace.get("nr")
    if ws is not None and ws.key == key:
        reuse.pattern_reused = True
    else:
        ws = _jacobian_layout(ac, pv, pq, key)
        state.workspace["nr"] = ws
    ws_version = state.workspace.get("nr_values_version")
    reuse.matrix_reused = ws_version == (id(ac), ac.values_version)
    state.workspace["nr_values_version"] = (id(ac), ac.values_version)
    tracker = _Tracker(tol, DIVERGENCE_WINDOW["nr"])
    Y = ac.Y
    npv = len(pvpq)
    Va, Vm = np.angle(V), np.abs(V)
    for it in range(max_iter + 1):
        F, _ = _mismatch(V, Y, Sbus, pvpq, pq)
        verdict = tracker.update(np.max(np.abs(F)) if len(F) else 0.0)
        if verdict is not None:
            break
        if it == max_iter:
            verdict = "max_iterations"
            break
        J = ws.pattern
        J.data = _jacobian_values(ws, ac, V)
        try:
            if ws.fact is None:
                ws.fact = lu_factor(J)
                reuse.factor_events.append("factor")
            else:
                reuse.factor_events.append(lu_refactor(ws.fact, J).kind)
        except SingularMatrixError as exc:
            ws.fact = None
            return _finish("nr", "singular", it, V, ac, tracker, reuse, str(exc))
        dx = -lu_solve(ws.fact, F)
        Va[pvpq] += dx[:npv]
        Vm[pq] += dx[npv:]
        V = Vm * np.exp(1j * Va)
    state.V = V
    return _finish("nr", verdict, len(tracker.trace) - 1, V, ac, tracker, reuse)


# --------------------------------------------------------------------------
# fast decoupled


def _b_values(network: Network, ac: AcModel, which: str, variant: str) -> np.ndarray:
    """-Im(Y) of the modified network on the Y pattern."""
    pat = ac.pattern
    vals = np.zeros(pat.nnz)
    blocks = []
    for br in network.branches:
        if which == "p":
            mod = replace(br, b_shunt=0.0, g_shunt=0.0, ratio=1.0)
            if variant == "xb":
                mod.r = 0.0
        else:
            mod = replace(br, shift=0.0)
            if variant == "bx":
                mod.r = 0.0
        blocks.append(branch_block(mod))
    blocks = np.array(blocks, dtype=complex).reshape(-1, 4)
    for c in range(4):
        np.add.at(vals, pat.slots[:, c], -blocks[:, c].imag)
    if which == "pp":
        np.add.at(vals, pat.diag, -np.array([b.b_shunt for b in network.buses]))
    return vals


@dataclass
class _DecoupledWorkspace:
    key: tuple
    values_key: tuple
    bp: SparseMatrix
    bpp: SparseMatrix
    src_p: np.ndarray
    src_pp: np.ndarray
    fact_p: LuFactorization
    fact_pp: LuFactorization


def _decoupled_workspace(network, ac, variant, pv, pq, state, reuse):
    pvpq = np.concatenate([pv, pq])
    key = (variant, ac.pattern_version, id(ac.pattern), tuple(pv), tuple(pq))
    values_key = (id(ac), ac.values_version, tuple(b.b_shunt for b in network.buses))
    ws = state.workspace.get("fd")
    if ws is not None and ws.key == key and ws.values_key == values_key:
        reuse.matrix_reused = reuse.pattern_reused = reuse.factor_reused = True
        return ws
    full = SparseMatrix((ac.pattern.n, ac.pattern.n), ac.pattern.indptr, ac.pattern.indices,
                        np.zeros(ac.pattern.nnz))
    vp = _b_values(network, ac, "p", variant)
    vpp = _b_values(network, ac, "pp", variant)
    if ws is not None and ws.key == key:
        reuse.pattern_reused = True
        ws.bp.data = vp[ws.src_p]
        ws.bpp.data = vpp[ws.src_pp]
        reuse.factor_events.append(lu_refactor(ws.fact_p, ws.bp).kind)
        reuse.factor_events.append(lu_refactor(ws.fact_pp, ws.bpp).kind)
        ws.values_key = values_key
        return ws
    bp, src_p = full.submatrix_map(pvpq, pvpq)
    bpp, src_pp = full.submatrix_map(pq, pq)
    bp.data = vp[src_p]
    bpp.data = vpp[src_pp]
    ws = _DecoupledWorkspace(key, values_key, bp, bpp, src_p, src_pp,
                             lu_factor(bp), lu_factor(bpp))
    reuse.factor_events += ["factor", "factor"]
    state.workspace["fd"] = ws
    return ws


def solve_fast_decoupled(network: Network, ac: AcModel, variant: str = "xb",
                         state: PowerFlowState | None = None, tol: float = TOLERANCE,
                         max_iter: int | None = None, flat: bool = False) -> PowerFlowReport:
    """Fast decoupled power flow (XB or BX); factors persist in ``state``."""
    variant = variant.lower()
    if variant not in ("xb", "bx"):
        raise ValueError("variant must be 'xb' or 'bx'")
    method = "fd" + variant
    max_iter = MAX_ITER[method] if max_iter is None else max_iter
    state = state if state is not None else PowerFlowState()
    ref, pv, pq = _bus_sets(network)
    pvpq = np.concatenate([pv, pq])
    V, warm = _initial_voltage(network, state, flat)
    p, q = network.specified_injections()
    Sbus = p + 1j * q
    reuse = ReuseRecord(warm_start=warm)
    tracker = _Tracker(tol, DIVERGENCE_WINDOW[method])
    try:
        ws = _decoupled_workspace(network, ac, variant, pv, pq, state, reuse)
    except SingularMatrixError as exc:
        state.workspace.pop("fd", None)
        return PowerFlowReport(method, "singular", 0, V, [], reuse, str(exc))
    Y = ac.Y
    Va, Vm = np.angle(V), np.abs(V)
    npv = len(pvpq)
    it = 0
    while True:
        F, _ = _mismatch(V, Y, Sbus, pvpq, pq)
        verdict = tracker.update(np.max(np.abs(F)) if len(F) else 0.0)
        if verdict is not None:
            break
        if it == max_iter:
            verdict = "max_iterations"
            break
        it += 1
        # P-theta half step
        Va[pvpq] -= lu_solve(ws.fact_p, F[:npv] / Vm[pvpq])
        V = Vm * np.exp(1j * Va)
        if len(pq):
            F, _ = _mismatch(V, Y, Sbus, pvpq, pq)
            Vm[pq] -= lu_solve(ws.fact_pp, F[npv:] / Vm[pq])
            V = Vm * np.exp(1j * Va)
    state.V = V
    return _finish(method, verdict, it, V, ac, tracker, reuse)


# --------------------------------------------------------------------------
# Gauss-Seidel


def solve_gauss_seidel(network: Network, ac: AcModel, state: PowerFlowState | None = None,
                       tol: float = TOLERANCE, max_iter: int | None = None,
                       flat: bool = False) -> PowerFlowReport:
    """Bus-by-bus complex sweeps; PV magnitudes are pinned after each update."""
    max_iter = MAX_ITER["gs"] if max_iter is None else max_iter
    state = state if state is not None else PowerFlowState()
    ref, pv, pq = _bus_sets(network)
    pvpq = np.concatenate([pv, pq])
    V, warm = _initial_voltage(network, state, flat)
    vset = np.abs(V)
    p, q = network.specified_injections()
    Sbus = p + 1j * q
    reuse = ReuseRecord(warm_start=warm, matrix_reused=True, pattern_reused=True)
    tracker = _Tracker(tol, DIVERGENCE_WINDOW["gs"])
    Y = ac.Y.tocsr()
    indptr, indices, data = Y.indptr, Y.indices, Y.data
    is_pv = np.zeros(network.n_bus, dtype=bool)
    is_pv[pv] = True
    order = np.sort(pvpq)
    ydiag = Y.diagonal()
    it = 0
    while True:
        F, _ = _mismatch(V, Y, Sbus, pvpq, pq)
        verdict = tracker.update(np.max(np.abs(F)) if len(F) else 0.0)
        if verdict is not None:
            break
        if it == max_iter:
            verdict = "max_iterations"
            break
        it += 1
        for i in order:
            lo, hi = indptr[i], indptr[i + 1]
            yv = data[lo:hi] @ V[indices[lo:hi]]
            s = Sbus[i]
            if is_pv[i]:
                s = complex(s.real, (V[i] * np.conj(yv)).imag)
            V[i] += (np.conj(s / V[i]) - yv) / ydiag[i]
            if is_pv[i]:
                V[i] = vset[i] * V[i] / abs(V[i])
    state.V = V
    return _finish("gs", verdict, it, V, ac, tracker, reuse)


# --------------------------------------------------------------------------
# DC power flow


@dataclass
class _DcWorkspace:
    key: tuple
    values_version: tuple
    reduced: SparseMatrix
    src: np.ndarray
    fact: LuFactorization


def _islands_without_slack(network: Network, ref: int) -> list:
    f, t = network.branch_ends()
    on = np.array([br.in_service for br in network.branches], dtype=bool)
    n = network.n_bus
    G = sp.coo_matrix((np.ones(on.sum()), (f[on], t[on])), shape=(n, n))
    _, labels = connected_components(G, directed=False)
    ids = network.bus_ids()
    return sorted(int(b) for b in ids[labels != labels[ref]])


def solve_dc(network: Network, dc: DcModel, state: PowerFlowState | None = None) -> PowerFlowReport:
    """Angles from the reduced B; the factorization is cached in ``state``."""
    state = state if state is not None else PowerFlowState()
    ref, pv, pq = _bus_sets(network)
    n = network.n_bus
    keep = np.delete(np.arange(n), ref)
    reuse = ReuseRecord()
    key = (dc.pattern_version, id(dc.pattern), ref)
    vkey = (id(dc), dc.values_version)
    ws = state.workspace.get("dc")
    try:
        if ws is not None and ws.key == key:
            reuse.pattern_reused = True
            if ws.values_version == vkey:
                reuse.matrix_reused = reuse.factor_reused = True
            else:
                ws.reduced.data = dc.values[ws.src]
                reuse.factor_events.append(lu_refactor(ws.fact, ws.reduced).kind)
                ws.values_version = vkey
        else:
            full = SparseMatrix((n, n), dc.pattern.indptr, dc.pattern.indices, dc.values)
            reduced, src = full.submatrix_map(keep, keep)
            ws = _DcWorkspace(key, vkey, reduced, src, lu_factor(reduced))
            reuse.factor_events.append("factor")
            state.workspace["dc"] = ws
    except SingularMatrixError as exc:
        state.workspace.pop("dc", None)
        island = _islands_without_slack(network, ref)
        return PowerFlowReport("dc", "singular", 0, None, [], reuse,
                               f"reduced B is singular ({exc}); buses without a slack path: {island}",
                               unreferenced_island=island)
    p, _ = network.specified_injections()
    c = dc.constant_injection
    theta = np.zeros(n)
    theta[ref] = network.buses[ref].va_init
    rhs = p - c - dc.B @ theta
    theta[keep] += lu_solve(ws.fact, rhs[keep])
    state.theta = theta
    flows = dc.branch_flows(theta)
    return PowerFlowReport("dc", "converged", 1, None, [], reuse, injections=dc.injections(theta),
                           flow_from=flows, flow_to=-flows, theta=theta)


def solve_power_flow(network: Network, models, method: str = "nr",
                     state: PowerFlowState | None = None, **kw) -> PowerFlowReport:
    """Dispatch by method name: nr, fdxb, fdbx, gs, dc."""
    method = method.lower()
    if method == "nr":
        return solve_newton_raphson(network, models.ac, state, **kw)
    if method in ("fdxb", "fdbx"):
        return solve_fast_decoupled(network, models.ac, method[2:], state, **kw)
    if method == "gs":
        return solve_gauss_seidel(network, models.ac, state, **kw)
    if method == "dc":
        return solve_dc(network, models.dc, state)
    raise ValueError(f"unknown power flow method {method!r}")
