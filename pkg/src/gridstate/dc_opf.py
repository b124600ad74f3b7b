"""DC optimal power flow as a linear program.

Variables are in-service generator outputs, all bus angles and one epigraph
variable per piecewise-linear cost. Quadratic costs must be linearized first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .lp import LinearProgram, solve_lp
from .network import DcModel, Network

DEFAULT_SEGMENTS = 8


class DcOpfError(ValueError):
    pass


@dataclass
class DcOpfReport:
    status: str  # optimal | infeasible | unbounded
    objective: float = float("nan")
    dispatch: np.ndarray | None = None  # per generator, nan when out of service
    theta: np.ndarray | None = None
    flows: np.ndarray | None = None
    prices: np.ndarray | None = None  # balance-row duals per bus
    violated: list = field(default_factory=list)
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _costs(network: Network, segments):
    out = []
    for k, g in enumerate(network.generators, start=1):
        if not g.in_service:
            out.append(None)
            continue
        if g.cost is None:
            raise DcOpfError(f"generator {k} has no cost curve")
        cost = g.cost
        if cost.kind == "polynomial" and cost.degree > 1:
            if segments is None:
                raise DcOpfError(
                    f"generator {k} has a degree-{cost.degree} polynomial cost; the DC OPF is a "
                    "linear program, so pass a segment count to piecewise-linearize it")
            cost = cost.linearized(g.p_min, g.p_max, segments)
        out.append(cost)
    return out


def build_dc_opf(network: Network, dc: DcModel, segments: int | None = None):
    """Assemble the LP; returns (lp, layout) with column offsets."""
    costs = _costs(network, segments)
    idx = network.bus_index()
    n = network.n_bus
    gens = [k for k, c in enumerate(costs) if c is not None]
    ng = len(gens)
    pwl = [k for k in gens if costs[k].kind == "piecewise_linear"]
    n_t = len(pwl)
    ncol = ng + n + n_t
    th0, t0 = ng, ng + n
    c = np.zeros(ncol)
    const = 0.0
    lo = np.full(ncol, -np.inf)
    hi = np.full(ncol, np.inf)
    for j, k in enumerate(gens):
        g = network.generators[k]
        lo[j], hi[j] = g.p_min, g.p_max
        if costs[k].kind == "polynomial":
            coef = costs[k].coefficients
            if len(coef) >= 2:
                c[j] = coef[-2]
            if coef:
                const += coef[-1]
    ref = network.slack
    lo[th0 + ref] = hi[th0 + ref] = network.buses[ref].va_init

    rows, cols, vals, rhs, senses, names = [], [], [], [], [], []

    def add_row(entries, sense, b, name):
        r = len(rhs)
        for col, v in entries:
            rows.append(r)
            cols.append(col)
            vals.append(v)
        senses.append(sense)
        rhs.append(b)
        names.append(name)

    # nodal balance: sum Pg - B theta = load + constant injection
    B = dc.B.tocsr()
    p_load = np.array([b.p_load for b in network.buses])
    const_inj = dc.constant_injection
    gens_at = {}
    for j, k in enumerate(gens):
        gens_at.setdefault(idx[network.generators[k].bus], []).append(j)
    for i in range(n):
        lo_i, hi_i = B.indptr[i], B.indptr[i + 1]
        entries = [(j, 1.0) for j in gens_at.get(i, [])]
        entries += [(th0 + int(col), -float(v)) for col, v in zip(B.indices[lo_i:hi_i], B.data[lo_i:hi_i])
                    if v != 0.0]
        add_row(entries, "=", p_load[i] + const_inj[i], f"balance bus {network.buses[i].id}")
    # flow limits
    for k, br in enumerate(network.branches):
        if not br.in_service or br.rate <= 0:
            continue
        f, t = dc.from_idx[k], dc.to_idx[k]
        b = dc.susceptance[k]
        s = dc.shift_flow[k]
        entries = [(th0 + f, b), (th0 + t, -b)]
        add_row(entries, "<=", br.rate + s, f"flow limit branch {k + 1} (from)")
        add_row(entries, ">=", -br.rate + s, f"flow limit branch {k + 1} (to)")
    # epigraph rows: t >= c_k + slope_k (Pg - p_k)
    for e, k in enumerate(pwl):
        j = gens.index(k)
        pts = np.array(costs[k].points)
        slopes = np.diff(pts[:, 1]) / np.diff(pts[:, 0])
        c[t0 + e] = 1.0
        for s_no, (slope, (pk, ck)) in enumerate(zip(slopes, pts[:-1])):
            add_row([(t0 + e, 1.0), (j, -slope)], ">=", ck - slope * pk,
                    f"cost segment {s_no + 1} generator {k + 1}")
    A = sp.csc_matrix((vals, (rows, cols)), shape=(len(rhs), ncol))
    lp = LinearProgram(c, A, senses, np.array(rhs), lo, hi, row_names=names)
    layout = {"gens": gens, "theta": th0, "n": n, "constant": const, "balance_rows": n}
    return lp, layout


def solve_dc_opf(network: Network, dc: DcModel, segments: int | None = None,
                 warm_theta=None) -> DcOpfReport:
    """Least-cost dispatch under DC flow, generator and line limits.

    ``warm_theta`` (for example from a DC power flow) seeds the free angle
    variables of the simplex start.
    """
    lp, lay = build_dc_opf(network, dc, segments)
    start = None
    if warm_theta is not None:
        start = np.zeros(len(lp.c))
        start[lay["theta"]:lay["theta"] + lay["n"]] = warm_theta
    res = solve_lp(lp, start=start)
    if res.status == "infeasible":
        return DcOpfReport("infeasible", violated=res.violated_rows, iterations=res.iterations)
    if res.status == "unbounded":
        return DcOpfReport("unbounded", iterations=res.iterations)
    dispatch = np.full(len(network.generators), np.nan)
    dispatch[lay["gens"]] = res.x[:len(lay["gens"])]
    theta = res.x[lay["theta"]:lay["theta"] + lay["n"]]
    flows = dc.branch_flows(theta)
    return DcOpfReport("optimal", res.objective + lay["constant"], dispatch, theta, flows,
                       res.duals[:lay["balance_rows"]], iterations=res.iterations)
