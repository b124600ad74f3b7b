"""State estimation: nonlinear (AC), PMU-only and DC models.

Each model turns a measurement set into rows with a fixed sparsity pattern.
Rows of out-of-service measurements stay in the layout with zero weight, so
removing or restoring a measurement never changes a pattern. The gain matrix
is assembled on a pattern fixed at construction and refactored in place.

Solution paths for every (linearized) weighted least-squares step:

* ``wls``: normal equations G dx = J^T W r with G = J^T W J
* ``orthogonal``: Householder QR of S J, S^T S = W
* ``pw``: Peters-Wilkinson, LU of S J followed by an L^T L solve
* ``lav``: least absolute value through a split-residual LP
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .lp import LinearProgram, solve_lp
from .measurements import MeasurementSet, phasor_to_rectangular
from .network import ModelHandles, Network, build_models
from .sparse import (RankDeficientError, SingularMatrixError, SparseMatrix, lu_factor,
                     lu_refactor, lu_solve, qr_factor, qr_solve_ls)
from .sparse import _kernels

log = logging.getLogger(__name__)

TOLERANCE = 1e-8
MAX_ITER = 50
CURRENT_FLOOR = 1e-10  # guards d|I| and d(angle I) as |I| -> 0
PIVOT_FLOOR = 1e-13  # relative gain pivot below which a state is unobservable
METHODS = ("wls", "orthogonal", "pw", "lav")


class EstimationError(RuntimeError):
    pass


class UnobservableError(EstimationError):
    def __init__(self, states):
        self.states = list(states)
        super().__init__(f"rank-deficient model; unobservable states: {self.states[:10]}"
                         + (" ..." if len(self.states) > 10 else ""))


@dataclass
class RowLayout:
    ids: list  # measurement id per row
    meas: np.ndarray  # index into the measurement set
    quantity: list  # V, S, Sf, St, If, It (ac/pmu) or pf, p, va (dc)
    transform: list  # real, imag, abs, angle
    element: np.ndarray  # bus or branch position
    partner: np.ndarray  # other row of a rectangular phasor, else -1
    rect: np.ndarray  # row belongs to a rectangular phasor
    first_of_pair: np.ndarray  # magnitude row (real part) of a rectangular phasor
    skipped: list  # ids not used by this model

    def __len__(self):
        return len(self.ids)


def _layout(network: Network, mset: MeasurementSet, kind: str) -> RowLayout:
    bidx = network.bus_index()
    ids, meas, quantity, transform, element, rect, first = [], [], [], [], [], [], []
    skipped = []
    pair_key = {}
    for mi, m in enumerate(mset.measurements):
        k = m.kind
        if kind == "dc":
            if k == "pflow":
                q, t = ("pf", "from" if m.side == "from" else "to")
            elif k == "pinj":
                q, t = "p", "real"
            elif k == "vphasor_ang":
                q, t = "va", "angle"
            else:
                skipped.append(m.id)
                continue
            is_rect = False
        else:
            if kind == "pmu" and not m.is_phasor:
                skipped.append(m.id)
                continue
            is_rect = m.is_phasor and (m.coordinates == "rect" or kind == "pmu")
            if m.on_branch:
                side = "f" if m.side == "from" else "t"
            if k == "vmag":
                q, t = "V", "abs"
            elif k in ("pinj", "qinj"):
                q, t = "S", "real" if k == "pinj" else "imag"
            elif k in ("pflow", "qflow"):
                q, t = "S" + side, "real" if k == "pflow" else "imag"
            elif k == "imag":
                q, t = "I" + side, "abs"
            else:
                q = "V" if k.startswith("v") else "I" + side
                mag = k.endswith("_mag")
                t = ("real" if mag else "imag") if is_rect else ("abs" if mag else "angle")
            if is_rect and mset.partner(m) is None:
                raise EstimationError(f"phasor {m.id} needs both magnitude and angle in rectangular form")
        ids.append(m.id)
        meas.append(mi)
        quantity.append(q)
        transform.append(t)
        element.append(bidx[m.element] if not m.on_branch else m.element - 1)
        rect.append(is_rect)
        first.append(is_rect and k.endswith("_mag"))
        if is_rect:
            pair_key.setdefault(m.phasor_key, []).append(len(ids) - 1)
    partner = np.full(len(ids), -1, dtype=np.int64)
    for rows in pair_key.values():
        a, b = rows
        partner[a], partner[b] = b, a
    return RowLayout(ids, np.array(meas, dtype=np.int64), quantity, transform,
                     np.array(element, dtype=np.int64), partner, np.array(rect, dtype=bool),
                     np.array(first, dtype=bool), skipped)


@dataclass
class EstimationReport:
    model: str
    method: str
    status: str  # converged | max_iterations | diverged | unobservable
    iterations: int
    x: np.ndarray | None
    residuals: np.ndarray | None  # per row, nan for masked rows
    row_ids: list
    step_trace: list = field(default_factory=list)
    objective: float = math.nan  # weighted sum of squares, or sum |r| for LAV
    k: int = 0
    m: int = 0
    V: np.ndarray | None = None
    theta: np.ndarray | None = None
    reuse: dict = field(default_factory=dict)
    message: str = ""
    unobservable: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


class EstimationModel:
    """Measurement model, weights and gain workspace for one estimator kind.

    ``kind`` is "ac" (x = [theta without slack, V]), "pmu" (x = [Re V, Im V])
    or "dc" (x = theta without slack).
    """

    def __init__(self, network: Network, measurements: MeasurementSet, kind: str = "ac",
                 models: ModelHandles | None = None):
        if kind not in ("ac", "pmu", "dc"):
            raise ValueError(f"unknown model kind {kind!r}")
        self.network = network
        self.measurements = measurements
        self.kind = kind
        self.models = models if models is not None else build_models(network)
        self.x = None
        self.gain_fact = None
        self._gain_key = None
        self._versions = {}
        self.reuse = {}
        self._build_structure()

    # ---------------------------------------------------------------- structure

    @property
    def n(self) -> int:
        return self.network.n_bus

    @property
    def m(self) -> int:
        return {"ac": 2 * self.n - 1, "pmu": 2 * self.n, "dc": self.n - 1}[self.kind]

    @property
    def k(self) -> int:
        """Number of active rows."""
        return int(self.active.sum())

    def state_names(self) -> list:
        ids = self.network.bus_ids()
        ref = self.ref
        th = [f"theta[{b}]" for i, b in enumerate(ids) if i != ref]
        if self.kind == "ac":
            return th + [f"V[{b}]" for b in ids]
        if self.kind == "pmu":
            return [f"ReV[{b}]" for b in ids] + [f"ImV[{b}]" for b in ids]
        return th

    def _structure_key(self):
        mdl = self.models.dc if self.kind == "dc" else self.models.ac
        return (id(self.measurements), self.measurements.structure_version,
                id(mdl), mdl.pattern_version, self.network.slack)

    def _build_structure(self):
        self.ref = self.network.slack
        self.layout = _layout(self.network, self.measurements, self.kind)
        k = len(self.layout)
        self.theta_ref = self.network.buses[self.ref].va_init
        keep = np.ones(2 * self.n if self.kind != "dc" else self.n, dtype=bool)
        if self.kind != "pmu":
            keep[self.ref] = False
        self._keep_cols = np.flatnonzero(keep)
        self._weight_pattern()
        if self.kind == "ac":
            jp = self._ac_pattern()
        else:
            self._build_linear()
            jp = sp.csr_matrix(self.H)
            jp.data[:] = 1.0
        jp = sp.csr_matrix(jp)
        jp.data = np.ones_like(jp.data)
        wp = self.W_pattern.to_scipy().copy()
        wp.data = np.ones_like(wp.data)
        # all-positive products, so no structural entry cancels
        gp = sp.csc_matrix(jp.T @ wp @ jp) + sp.eye(self.m, format="csc")
        self.gain_pattern = SparseMatrix.from_scipy(gp)
        self.gain_pattern.data = np.zeros(self.gain_pattern.nnz)
        self._gain_mirror = self.gain_pattern.transpose_map()
        gp_rows = self.gain_pattern.indices
        gp_cols = np.repeat(np.arange(self.m), np.diff(self.gain_pattern.indptr))
        self._gain_lower = np.flatnonzero(gp_rows > gp_cols)
        self.gain_fact = None
        self._versions = {"structure": self._structure_key()}
        self._refresh_weights(force=True)
        self.k_total = k

    def _weight_pattern(self):
        L = self.layout
        k = len(L)
        rows = list(range(k))
        cols = list(range(k))
        for i in np.flatnonzero(L.partner >= 0):
            rows.append(i)
            cols.append(int(L.partner[i]))
        self.W_pattern = SparseMatrix.from_triplets(np.array(rows), np.array(cols),
                                                    np.zeros(len(rows)), (k, k))
        self._w_diag = self.W_pattern.positions(np.arange(k), np.arange(k))
        pr = np.flatnonzero(L.first_of_pair)
        self._w_pairs = (pr, L.partner[pr],
                         self.W_pattern.positions(pr, L.partner[pr]),
                         self.W_pattern.positions(L.partner[pr], pr))

    def _ac_pattern(self):
        """Structural Jacobian pattern over all 2n voltage variables."""
        n = self.n
        L = self.layout
        f_idx, t_idx = self.models.ac.from_idx, self.models.ac.to_idx
        Yp = self.models.ac.pattern.matrix(np.ones(self.models.ac.pattern.nnz)).tocsr()
        rows, cols = [], []
        for r, (q, e) in enumerate(zip(L.quantity, L.element)):
            if q == "V":
                buses = [e]
            elif q == "S":
                buses = Yp.indices[Yp.indptr[e]:Yp.indptr[e + 1]].tolist()
            else:
                buses = [f_idx[e], t_idx[e]]
            for b in buses:
                rows += [r, r]
                cols += [b, n + b]
        P = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(L), 2 * n))
        return P[:, self._keep_cols]

    # ---------------------------------------------------------------- weights

    def _refresh_weights(self, force=False):
        ms = self.measurements
        key = (ms.values_version, ms.weights_version, ms.status_version)
        if not force and self._versions.get("measurements") == key:
            return False, False
        # rectangular phasor weights follow the measured values
        wkey = (ms.weights_version, ms.status_version,
                ms.values_version if len(self._w_pairs[0]) else None)
        L = self.layout
        meas = [ms.measurements[i] for i in L.meas]
        k = len(L)
        z = np.empty(k)
        sigma = np.empty(k)
        active = np.array([m.status == 1 for m in meas], dtype=bool)
        for r, m in enumerate(meas):
            z[r] = m.value
            sigma[r] = m.variance
        W = np.zeros(self.W_pattern.nnz)
        S_blocks = {}
        W[self._w_diag] = np.where(active, 1.0 / sigma, 0.0)
        S_diag = np.where(active, 1.0 / np.sqrt(sigma), 0.0)
        pr, pp, pos_ab, pos_ba = self._w_pairs
        cov_off = np.zeros(k)
        for a, b, pab, pba in zip(pr, pp, pos_ab, pos_ba):
            mm, ma = meas[a], meas[b]
            re, im, cov = phasor_to_rectangular(mm.value, ma.value, mm.variance, ma.variance,
                                                mm.neglect_covariance)
            z[a], z[b] = re, im
            sigma[a], sigma[b] = cov[0, 0], cov[1, 1]
            cov_off[a] = cov_off[b] = cov[0, 1]
            if not active[a]:
                W[self._w_diag[a]] = W[self._w_diag[b]] = 0.0
                S_diag[a] = S_diag[b] = 0.0
                continue
            inv = np.linalg.inv(cov)
            W[self._w_diag[a]], W[pab], W[pba], W[self._w_diag[b]] = inv[0, 0], inv[0, 1], inv[1, 0], inv[1, 1]
            Lc = np.linalg.cholesky(cov)
            S_blocks[(a, b)] = np.linalg.inv(Lc)
        self.z = z
        self.sigma_diag = sigma
        self.sigma_offdiag = cov_off
        self.active = active
        self.W = self.W_pattern.to_scipy().copy()
        self.W.data = W
        # S with S^T S = W, lower-triangular inside each 2x2 block
        rows = list(range(k))
        cols = list(range(k))
        vals = list(S_diag)
        for (a, b), Sb in S_blocks.items():
            vals[a], vals[b] = Sb[0, 0], Sb[1, 1]
            rows.append(b)
            cols.append(a)
            vals.append(Sb[1, 0])
        self.S = sp.csr_matrix((vals, (rows, cols)), shape=(k, k))
        self._versions["measurements"] = key
        w_changed = force or self._versions.get("weights") != wkey
        self._versions["weights"] = wkey
        return True, w_changed

    def refresh(self) -> dict:
        """Bring the model in line with its network and measurements.

        Decisions use version counters only. Returns what was reused.
        """
        reuse = {"structure_reused": True, "values_reused": True, "weights_reused": True,
                 "coefficients_reused": True}
        if self._versions.get("structure") != self._structure_key():
            self._build_structure()
            return dict.fromkeys(reuse, False)
        v_changed, w_changed = self._refresh_weights()
        reuse["values_reused"] = not v_changed
        reuse["weights_reused"] = not w_changed
        if self.kind != "ac":
            mdl = self.models.dc if self.kind == "dc" else self.models.ac
            key = (mdl.values_version, getattr(mdl, "constants_version", 0))
            if self._versions.get("coefficients") != key:
                self._build_linear()
                reuse["coefficients_reused"] = False
        return reuse

    # ---------------------------------------------------------------- linear models

    def _build_linear(self):
        L = self.layout
        k = len(L)
        n = self.n
        if self.kind == "dc":
            dc = self.models.dc
            Bm = dc.B.tocsr()
            const = dc.constant_injection
            rows, cols, vals = [], [], []
            c = np.zeros(k)
            for r, (q, t, e) in enumerate(zip(L.quantity, L.transform, L.element)):
                if q == "pf":
                    sgn = 1.0 if t == "from" else -1.0
                    b = dc.susceptance[e]
                    rows += [r, r]
                    cols += [dc.from_idx[e], dc.to_idx[e]]
                    vals += [sgn * b, -sgn * b]
                    c[r] = -sgn * dc.shift_flow[e]
                elif q == "p":
                    lo, hi = Bm.indptr[e], Bm.indptr[e + 1]
                    rows += [r] * (hi - lo)
                    cols += Bm.indices[lo:hi].tolist()
                    vals += Bm.data[lo:hi].tolist()
                    c[r] = const[e]
                else:
                    rows.append(r)
                    cols.append(e)
                    vals.append(1.0)
            Hfull = sp.csr_matrix((vals, (rows, cols)), shape=(k, n))
            c = c + Hfull[:, self.ref].toarray().ravel() * self.theta_ref
            self.H = sp.csr_matrix(Hfull[:, self._keep_cols])
            self.c = c
            key = (dc.values_version, dc.constants_version)
        else:
            ac = self.models.ac
            blocks = ac.blocks
            rows, cols, vals = [], [], []
            for r, (q, t, e) in enumerate(zip(L.quantity, L.transform, L.element)):
                if q == "V":
                    coeffs = {e: 1.0 + 0j}
                else:
                    f, to = ac.from_idx[e], ac.to_idx[e]
                    if q == "If":
                        coeffs = {f: blocks[e, 0], to: blocks[e, 1]}
                    else:
                        coeffs = {f: blocks[e, 2], to: blocks[e, 3]}
                for b, y in coeffs.items():
                    # Re(y V) = Re y e - Im y f ; Im(y V) = Im y e + Re y f
                    if t == "real":
                        rows += [r, r]
                        cols += [b, n + b]
                        vals += [y.real, -y.imag]
                    else:
                        rows += [r, r]
                        cols += [b, n + b]
                        vals += [y.imag, y.real]
            self.H = sp.csr_matrix((vals, (rows, cols)), shape=(k, 2 * n))
            self.c = np.zeros(k)
            key = (ac.values_version, 0)
        self._versions["coefficients"] = key

    # ---------------------------------------------------------------- nonlinear model

    def voltages(self, x) -> np.ndarray:
        if self.kind == "pmu":
            return x[:self.n] + 1j * x[self.n:]
        th = np.empty(self.n)
        th[self.ref] = self.theta_ref
        th[np.delete(np.arange(self.n), self.ref)] = x[:self.n - 1]
        if self.kind == "dc":
            return np.exp(1j * th)
        return x[self.n - 1:] * np.exp(1j * th)

    def angles(self, x) -> np.ndarray:
        th = np.empty(self.n)
        th[self.ref] = self.theta_ref
        th[np.delete(np.arange(self.n), self.ref)] = x[:self.n - 1]
        return th

    def state_from_voltages(self, V) -> np.ndarray:
        V = np.asarray(V)
        keep = np.delete(np.arange(self.n), self.ref)
        if self.kind == "pmu":
            return np.concatenate([V.real, V.imag])
        if self.kind == "dc":
            return np.angle(V)[keep] if np.iscomplexobj(V) else V[keep]
        return np.concatenate([np.angle(V)[keep], np.abs(V)])

    def flat_start(self) -> np.ndarray:
        if self.kind == "pmu":
            return np.concatenate([np.ones(self.n), np.zeros(self.n)])
        if self.kind == "dc":
            return np.zeros(self.n - 1)
        return np.concatenate([np.zeros(self.n - 1), np.ones(self.n)])

    def evaluate(self, x, jacobian=True):
        """h(x) and (optionally) the Jacobian on the fixed pattern."""
        if self.kind != "ac":
            return self.H @ x + self.c, (self.H if jacobian else None)
        ac = self.models.ac
        V = self.voltages(x)
        n = self.n
        L = self.layout
        Vn = V / np.abs(V)
        Ibus = ac.Y @ V
        If, It = ac.branch_currents(V)
        quantities = {"V": V, "S": V * np.conj(Ibus), "If": If, "It": It,
                      "Sf": V[ac.from_idx] * np.conj(If), "St": V[ac.to_idx] * np.conj(It)}
        qarr = np.array(L.quantity, dtype=object)
        tarr = np.array(L.transform, dtype=object)
        h = np.zeros(len(L))
        blocks = []
        derivs = {}
        for qname in ("V", "S", "If", "It", "Sf", "St"):
            rows = np.flatnonzero(qarr == qname)
            if not len(rows):
                continue
            val = quantities[qname][L.element[rows]]
            t = tarr[rows]
            mag = np.abs(val)
            h[rows] = np.select([t == "real", t == "imag", t == "abs"],
                                [val.real, val.imag, mag], np.angle(val))
            if not jacobian:
                continue
            if qname not in derivs:
                derivs[qname] = self._derivatives(qname, V, Vn, Ibus, If, It)
            Dva, Dvm = derivs[qname]
            D = sp.hstack([Dva[L.element[rows]], Dvm[L.element[rows]]], format="csr")
            safe = np.maximum(mag, CURRENT_FLOOR)
            fac = np.select([t == "real", t == "imag", t == "abs"],
                            [np.ones(len(rows)), -1j * np.ones(len(rows)), np.conj(val) / safe],
                            -1j * np.conj(val) / safe ** 2)
            Jr = sp.coo_matrix((sp.diags(fac) @ D).real)
            blocks.append(sp.coo_matrix((Jr.data, (rows[Jr.row], Jr.col)), shape=(len(L), 2 * n)))
        if not jacobian:
            return h, None
        J = sp.csr_matrix(sum(blocks[1:], blocks[0]) if blocks else sp.csr_matrix((len(L), 2 * n)))
        J = J[:, self._keep_cols]
        return h, J

    def _derivatives(self, qname, V, Vn, Ibus, If, It):
        ac = self.models.ac
        n = self.n
        dV = sp.diags(1j * V, format="csr")
        dN = sp.diags(Vn, format="csr")
        if qname == "V":
            return dV, dN
        if qname == "S":
            Y = ac.Y
            dVa = sp.diags(1j * V) @ np.conj(sp.diags(Ibus) - Y @ sp.diags(V))
            dVm = sp.diags(V) @ np.conj(Y @ dN) + sp.diags(np.conj(Ibus) * Vn)
            return sp.csr_matrix(dVa), sp.csr_matrix(dVm)
        nl = len(ac.from_idx)
        k = np.arange(nl)
        b = ac.blocks
        Yf = sp.csr_matrix((np.concatenate([b[:, 0], b[:, 1]]),
                            (np.concatenate([k, k]), np.concatenate([ac.from_idx, ac.to_idx]))), shape=(nl, n))
        Yt = sp.csr_matrix((np.concatenate([b[:, 2], b[:, 3]]),
                            (np.concatenate([k, k]), np.concatenate([ac.from_idx, ac.to_idx]))), shape=(nl, n))
        side = qname[1]
        Ybr = Yf if side == "f" else Yt
        dIa, dIm = Ybr @ dV, Ybr @ dN
        if qname[0] == "I":
            return sp.csr_matrix(dIa), sp.csr_matrix(dIm)
        idx = ac.from_idx if side == "f" else ac.to_idx
        I = If if side == "f" else It
        C = sp.csr_matrix((np.ones(nl), (k, idx)), shape=(nl, n))
        dSa = sp.diags(np.conj(I)) @ C @ dV + sp.diags(V[idx]) @ np.conj(dIa)
        dSm = sp.diags(np.conj(I)) @ C @ dN + sp.diags(V[idx]) @ np.conj(dIm)
        return sp.csr_matrix(dSa), sp.csr_matrix(dSm)

    def residual(self, x, h=None):
        h = self.evaluate(x, jacobian=False)[0] if h is None else h
        r = self.z - h
        ang = np.array([t == "angle" for t in self.layout.transform], dtype=bool)
        r[ang] = (r[ang] + np.pi) % (2 * np.pi) - np.pi
        return r

    # ---------------------------------------------------------------- solution steps

    def gain(self, J) -> SparseMatrix:
        G = sp.csc_matrix(J.T @ self.W @ J)
        pat = self.gain_pattern
        data = pat.scatter_from(G)
        data[self._gain_lower] = data[self._gain_mirror[self._gain_lower]]
        return SparseMatrix(pat.shape, pat.indptr, pat.indices, data)

    def factor_gain(self, J, events=None):
        self._gain_key = None
        G = self.gain(J)
        if self.gain_fact is None:
            self.gain_fact = lu_factor(G)
            kind = "factor"
        else:
            kind = lu_refactor(self.gain_fact, G).kind
        if events is not None:
            events.append(kind)
        d = np.abs(self.gain_fact.diagonal_u())
        bad = np.flatnonzero(d <= PIVOT_FLOOR * d.max()) if d.size else []
        if len(bad):
            names = self.state_names()
            raise UnobservableError([names[self.gain_fact.q[j]] for j in bad])
        return self.gain_fact

    def _step(self, method, J, r, events):
        if method == "wls":
            try:
                fact = self.factor_gain(J, events)
            except SingularMatrixError as exc:
                self.gain_fact = None
                raise UnobservableError([self.state_names()[exc.column]]) from None
            return lu_solve(fact, J.T @ (self.W @ r))
        act = np.flatnonzero(self.active)
        A = (self.S @ J)[act]
        b = (self.S @ r)[act]
        if A.shape[0] < A.shape[1]:
            raise UnobservableError(self.state_names())
        if method == "orthogonal":
            fact = qr_factor(A)
            events.append("qr")
            try:
                return qr_solve_ls(fact, b)
            except RankDeficientError as exc:
                raise UnobservableError([self.state_names()[exc.column]]) from None
        if method == "pw":
            return self._peters_wilkinson(A, b, events)
        raise ValueError(f"unknown method {method!r}")

    def _peters_wilkinson(self, A, b, events):
        try:
            fact = lu_factor(A)
        except SingularMatrixError as exc:
            raise UnobservableError([self.state_names()[exc.column]]) from None
        events.append("lu_rect")
        d = np.abs(fact.diagonal_u())
        bad = np.flatnonzero(d <= PIVOT_FLOOR * d.max())
        if len(bad):
            names = self.state_names()
            raise UnobservableError([names[fact.q[j]] for j in bad])
        Lm = fact.L()
        bp = np.empty(len(b))
        bp[fact.pinv] = b
        LtL = sp.csc_matrix(Lm.T @ Lm)
        y = lu_solve(lu_factor(LtL), Lm.T @ bp)
        _kernels.upper_solve(fact.Up, fact.Ui, fact.Ux, y)
        x = np.empty(A.shape[1])
        x[fact.q] = y
        return x

    def _lav_step(self, J, r):
        act = np.flatnonzero(self.active)
        Ja = sp.csr_matrix(J)[act]
        ka, m = Ja.shape
        A = sp.hstack([Ja, sp.eye(ka), -sp.eye(ka)], format="csc")
        c = np.concatenate([np.zeros(m), np.ones(2 * ka)])
        lo = np.concatenate([np.full(m, -np.inf), np.zeros(2 * ka)])
        lp = LinearProgram(c, A, ["="] * ka, r[act], lo)
        res = solve_lp(lp)
        if not res.optimal:
            raise EstimationError(f"LAV linear program ended {res.status}")
        return res.x[:m], res.iterations

    # ---------------------------------------------------------------- driver

    def solve(self, method: str = "wls", start="flat", tol: float = TOLERANCE,
              max_iter: int = MAX_ITER) -> EstimationReport:
        """Estimate the state. ``start`` is "flat", "warm" or a state vector."""
        if method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        reuse = self.refresh()
        reuse["gain_pattern_reused"] = reuse["structure_reused"]
        events = []
        if isinstance(start, str):
            warm = start == "warm" and self.x is not None and len(self.x) == self.m
            x = self.x.copy() if warm else self.flat_start()
        else:
            x = np.asarray(start, dtype=float).copy()
            warm = True
        reuse["warm_start"] = warm and self.kind == "ac"
        linear = self.kind != "ac"
        trace = []
        status = "max_iterations"
        it = 0
        try:
            if linear:
                r = self.z - self.c
                key = (self._versions.get("weights"), self._versions.get("coefficients"),
                       self._versions.get("structure"))
                if method == "lav":
                    x, _ = self._lav_step(self.H, r)
                elif method == "wls" and self.gain_fact is not None and self._gain_key == key:
                    # gain unchanged since the last solve: reuse the factorization outright
                    x = lu_solve(self.gain_fact, self.H.T @ (self.W @ r))
                    events.append("reused")
                else:
                    x = self._step(method, self.H, r, events)
                    if method == "wls":
                        self._gain_key = key
                it, status = 1, "converged"
            else:
                for it in range(1, max_iter + 1):
                    h, J = self.evaluate(x)
                    r = self.residual(x, h)
                    if method == "lav":
                        dx, _ = self._lav_step(J, r)
                    else:
                        dx = self._step(method, J, r, events)
                    if not np.all(np.isfinite(dx)):
                        status = "diverged"
                        break
                    x = x + dx
                    step = float(np.max(np.abs(dx))) if len(dx) else 0.0
                    trace.append(step)
                    if step < tol:
                        status = "converged"
                        break
                    if len(trace) > 5 and all(trace[-i] > trace[-i - 1] for i in range(1, 6)):
                        status = "diverged"
                        break
        except UnobservableError as exc:
            return EstimationReport(self.kind, method, "unobservable", it, None, None,
                                    self.layout.ids, trace, k=self.k, m=self.m, reuse=reuse,
                                    message=str(exc), unobservable=exc.states)
        self.x = x
        reuse["factor_events"] = events
        reuse["factor_reused"] = "reused" in events
        self.reuse = reuse
        r = self.residual(x)
        res = np.where(self.active, r, np.nan)
        if method == "lav":
            obj = float(np.sum(np.abs(r[self.active])))
        else:
            ra = np.where(self.active, r, 0.0)
            obj = float(ra @ (self.W @ ra))
        rep = EstimationReport(self.kind, method, status, it, x, res, self.layout.ids, trace,
                               obj, self.k, self.m, reuse=reuse)
        if self.kind == "dc":
            rep.theta = self.angles(x)
        else:
            rep.V = self.voltages(x)
            rep.theta = np.angle(rep.V)
        return rep

    def jacobian_at_solution(self):
        if self.x is None:
            raise EstimationError("no estimate available")
        return self.evaluate(self.x)[1]


def solve_wls_nonlinear(network, measurements, method="wls", models=None, **kw) -> EstimationReport:
    return EstimationModel(network, measurements, "ac", models).solve(method, **kw)


def solve_wls_pmu(network, measurements, method="wls", models=None, **kw) -> EstimationReport:
    return EstimationModel(network, measurements, "pmu", models).solve(method, **kw)


def solve_wls_dc(network, measurements, method="wls", models=None, **kw) -> EstimationReport:
    return EstimationModel(network, measurements, "dc", models).solve(method, **kw)


def solve_orthogonal(model: EstimationModel, **kw) -> EstimationReport:
    return model.solve("orthogonal", **kw)


def solve_peters_wilkinson(model: EstimationModel, **kw) -> EstimationReport:
    return model.solve("pw", **kw)


def solve_lav(model: EstimationModel, **kw) -> EstimationReport:
    return model.solve("lav", **kw)
