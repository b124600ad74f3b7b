"""Observability analysis on the decoupled active-power model.

Islands are found topologically: buses joined by branches with active flow
measurements form flow islands, and injections that touch exactly two islands
merge them. Maximal islands additionally use injections spanning three or
more islands, grouping islands whose relative angle the reduced model fixes.

Restoration stacks the retained rows and the pseudo-measurement candidates
into a reduced matrix H with one column per island, factors the Gram matrix
D = H H^T by QR and keeps the candidates whose R pivot is not negligible.

PMU placement solves the covering integer program, with or without legacy
flow and injection measurements.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .lp import LinearProgram, solve_binary_ilp
from .measurements import Measurement, MeasurementSet
from .network import Network, build_ac_model
from .sparse import qr_factor

PIVOT_THRESHOLD = 1e-5  # zero pivot threshold, relative to the largest |R_ii|
NULL_TOL = 1e-8  # islands with null-space rows closer than this are merged


class ObservabilityError(ValueError):
    pass


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[max(ra, rb)] = min(ra, rb)
        return True


@dataclass
class IslandPartition:
    kind: str  # flow | maximal
    islands: list  # bus ids per island, islands ordered by their smallest bus position
    island_of: np.ndarray  # island number per bus position
    tie_branches: list  # 1-based labels of in-service branches joining two islands
    tie_buses: list  # bus ids at the ends of tie branches
    tie_injections: list = field(default_factory=list)  # ids of injections still spanning islands
    used_injections: list = field(default_factory=list)  # ids consumed by merges

    @property
    def count(self) -> int:
        return len(self.islands)

    @property
    def observable(self) -> bool:
        return self.count == 1

    def as_dict(self) -> dict:
        return {"kind": self.kind, "islands": self.islands, "tie_branches": self.tie_branches,
                "tie_buses": self.tie_buses, "tie_injections": self.tie_injections}


def _neighbors(network: Network) -> list:
    idx = network.bus_index()
    adj = [[] for _ in range(network.n_bus)]
    for br in network.branches:
        if br.in_service:
            f, t = idx[br.from_bus], idx[br.to_bus]
            if f != t:
                adj[f].append(t)
                adj[t].append(f)
    return adj


def _active_p(network: Network, measurements: MeasurementSet):
    """In-service active flow (branch positions) and injection measurements."""
    idx = network.bus_index()
    flows, injections = [], []
    for m in measurements:
        if not m.in_service:
            continue
        if m.kind == "pflow":
            k = m.element - 1
            if 0 <= k < len(network.branches) and network.branches[k].in_service:
                flows.append((m, k))
        elif m.kind == "pinj" and m.element in idx:
            injections.append((m, idx[m.element]))
    return flows, injections


def _reduced_injection(bus, adj, island_of, s) -> dict:
    """Unit-weight reduced row of an injection: island -> coefficient."""
    row = {}
    home = island_of[bus]
    for j in adj[bus]:
        other = island_of[j]
        if other != home:
            row[home] = row.get(home, 0.0) + 1.0
            row[other] = row.get(other, 0.0) - 1.0
    return row


def _partition(network: Network, labels, kind, injections, used, adj) -> IslandPartition:
    roots = {}
    island_of = np.empty(network.n_bus, dtype=np.int64)
    for i, lab in enumerate(labels):
        island_of[i] = roots.setdefault(lab, len(roots))
    ids = network.bus_ids()
    islands = [[] for _ in roots]
    for i, c in enumerate(island_of):
        islands[c].append(int(ids[i]))
    ties, tie_buses = [], set()
    idx = network.bus_index()
    for k, br in enumerate(network.branches):
        if br.in_service and island_of[idx[br.from_bus]] != island_of[idx[br.to_bus]]:
            ties.append(k + 1)
            tie_buses.update((br.from_bus, br.to_bus))
    tie_inj = [m.id for m, b in injections
               if m.id not in used and _reduced_injection(b, adj, island_of, len(islands))]
    return IslandPartition(kind, islands, island_of, ties, sorted(tie_buses), tie_inj,
                           [m.id for m, _ in injections if m.id in used])


def find_flow_islands(network: Network, measurements: MeasurementSet) -> IslandPartition:
    """Flow islands, merged by injections touching exactly two islands until no change."""
    adj = _neighbors(network)
    flows, injections = _active_p(network, measurements)
    idx = network.bus_index()
    uf = _UnionFind(network.n_bus)
    for _, k in flows:
        br = network.branches[k]
        uf.union(idx[br.from_bus], idx[br.to_bus])
    used = set()
    changed = True
    while changed:
        changed = False
        for m, b in injections:
            if m.id in used:
                continue
            touched = {uf.find(b)} | {uf.find(j) for j in adj[b]}
            if len(touched) == 1:
                used.add(m.id)  # interior injection, nothing to merge
            elif len(touched) == 2:
                a, c = touched
                uf.union(a, c)
                used.add(m.id)
                changed = True
    labels = [uf.find(i) for i in range(network.n_bus)]
    return _partition(network, labels, "flow", injections, used, adj)


def _null_groups(rows: list, s: int) -> list:
    """Group islands whose relative angle is fixed by the reduced rows.

    Islands a and b belong together when every null vector of the reduced
    matrix takes equal values on them.
    """
    if not rows:
        return [[c] for c in range(s)]
    H = np.zeros((len(rows), s))
    for r, row in enumerate(rows):
        for c, v in row.items():
            H[r, c] = v
    N = scipy.linalg.null_space(H)
    if N.shape[1] == 0:
        return [list(range(s))]
    groups, assigned = [], np.full(s, -1)
    for a in range(s):
        if assigned[a] >= 0:
            continue
        same = np.flatnonzero((assigned < 0) & (np.linalg.norm(N - N[a], axis=1) <= NULL_TOL))
        assigned[same] = len(groups)
        groups.append(same.tolist())
    return groups


def find_maximal_islands(network: Network, measurements: MeasurementSet,
                         flow: IslandPartition | None = None) -> IslandPartition:
    """Merge flow islands using the remaining multi-island injections."""
    flow = find_flow_islands(network, measurements) if flow is None else flow
    adj = _neighbors(network)
    _, injections = _active_p(network, measurements)
    used = set(flow.used_injections)
    labels = flow.island_of.copy()
    while True:
        s = int(labels.max()) + 1
        remaining = [(m, b) for m, b in injections if m.id not in used]
        rows = [r for r in (_reduced_injection(b, adj, labels, s) for _, b in remaining) if r]
        groups = _null_groups(rows, s)
        if len(groups) == s:
            break
        new = np.empty(s, dtype=np.int64)
        for g, members in enumerate(groups):
            new[members] = g
        labels = new[labels]
        for m, b in remaining:
            if not _reduced_injection(b, adj, labels, len(groups)):
                used.add(m.id)
    # renumber islands by smallest bus position
    return _partition(network, labels.tolist(), "maximal", injections, used, adj)


# ---------------------------------------------------------------- restoration

@dataclass
class RestorationResult:
    selected: list  # ids of chosen pseudo-measurements, in input order
    observable: bool
    islands: list  # bus-id groups left after adding the selection
    ignored: list  # candidate ids outside the admissible pseudo types
    pivots: np.ndarray  # |R_ii| per stacked row (reference, retained, candidates)
    threshold: float

    def as_dict(self) -> dict:
        return {"selected": self.selected, "observable": self.observable,
                "islands": self.islands, "ignored": self.ignored, "threshold": self.threshold}


def _reduced_rows(network, partition, mlist, adj, tie_only):
    """Reduced rows for admissible measurements; returns (rows, kept, ignored)."""
    idx = network.bus_index()
    isl = partition.island_of
    s = partition.count
    tie_set = set(partition.tie_branches)
    tie_bus = set(partition.tie_buses)
    rows, kept, ignored = [], [], []
    for m in mlist:
        row = None
        if m.kind == "vphasor_ang" and m.element in idx:
            row = {int(isl[idx[m.element]]): 1.0}
        elif m.kind == "pinj" and m.element in idx and (not tie_only or m.element in tie_bus):
            row = _reduced_injection(idx[m.element], adj, isl, s) or None
        elif m.kind == "pflow" and tie_only and m.element in tie_set:
            br = network.branches[m.element - 1]
            row = {int(isl[idx[br.from_bus]]): 1.0}
            row[int(isl[idx[br.to_bus]])] = row.get(int(isl[idx[br.to_bus]]), 0.0) - 1.0
        if row is None:
            ignored.append(m.id)
        else:
            rows.append(row)
            kept.append(m.id)
    return rows, kept, ignored


def restore_observability(network: Network, partition: IslandPartition,
                          measurements: MeasurementSet, pseudo: MeasurementSet,
                          threshold: float = PIVOT_THRESHOLD) -> RestorationResult:
    """Choose a non-redundant subset of pseudo-measurements that joins the islands.

    The slack bus supplies an implicit angle reference on its island. Retained
    rows are tie injections and in-service voltage angle phasors.
    """
    adj = _neighbors(network)
    s = partition.count
    ref = {int(partition.island_of[network.slack]): 1.0}
    tie_inj = set(partition.tie_injections)
    retained = [m for m in measurements if m.in_service
                and ((m.kind == "pinj" and m.id in tie_inj) or m.kind == "vphasor_ang")]
    r_rows, _, _ = _reduced_rows(network, partition, retained, adj, tie_only=False)
    p_rows, p_ids, ignored = _reduced_rows(network, partition, list(pseudo), adj, tie_only=True)
    rows = [ref] + r_rows + p_rows
    data, ri, ci = [], [], []
    for r, row in enumerate(rows):
        for c, v in row.items():
            ri.append(r)
            ci.append(c)
            data.append(v)
    H = sp.csr_matrix((data, (ri, ci)), shape=(len(rows), s))
    D = sp.csc_matrix(H @ H.T)
    pivots = np.abs(qr_factor(D, ordering="natural").r_diagonal)
    tol = threshold * pivots.max()
    first = 1 + len(r_rows)
    selected = [p_ids[i] for i in range(len(p_rows)) if pivots[first + i] >= tol]
    chosen = set(selected)
    final = [ref] + r_rows + [row for pid, row in zip(p_ids, p_rows) if pid in chosen]
    groups = _null_groups(final, s)
    # the reference row pins its group; report every group as a bus-id list
    islands = [sorted(b for c in g for b in partition.islands[c]) for g in groups]
    return RestorationResult(selected, len(groups) == 1, islands, ignored, pivots, float(tol))


def transfer_pseudo(measurements: MeasurementSet, pseudo: MeasurementSet, selected) -> MeasurementSet:
    """Copy of ``measurements`` with the selected pseudo-measurements appended."""
    out = measurements.copy()
    taken = {m.id for m in out}
    for mid in selected:
        p = pseudo[mid]
        new_id = mid if mid not in taken else f"pseudo:{mid}"
        out.measurements.append(Measurement(**{**vars(p), "id": new_id, "status": 1}))
        taken.add(new_id)
    out.reindex()
    out.structure_version += 1
    return out


# ---------------------------------------------------------------- PMU placement

@dataclass
class PlacementResult:
    buses: list  # bus ids receiving a PMU
    formulation: str  # plain | legacy
    constraints: list  # (row label, bus positions with coefficient, right-hand side)
    iterations: int = 0  # simplex pivots over the branch-and-bound tree

    @property
    def size(self) -> int:
        return len(self.buses)

    def as_dict(self) -> dict:
        return {"buses": self.buses, "size": self.size, "formulation": self.formulation}


def connectivity(network: Network) -> sp.csr_matrix:
    """Binary a_ij from the nonzero pattern of the admittance matrix."""
    Y = build_ac_model(network).Y.tocsr()
    Y.eliminate_zeros()
    A = sp.csr_matrix((np.ones(Y.nnz), Y.indices, Y.indptr), shape=Y.shape)
    return sp.csr_matrix(A + sp.eye(network.n_bus) - sp.diags(A.diagonal()))


def placement_constraints(network: Network, legacy: MeasurementSet | None = None):
    """Rows (label, {bus position: c}, b) of the covering program.

    Without legacy measurements every bus must be reached. With them, a flow
    measurement on (i, j) needs one of i, j reached, an injection at i with
    neighbors N_i needs |N_i| of the set {i} + N_i reached, and buses touched
    by no measurement need to be reached themselves.
    """
    n = network.n_bus
    ids = network.bus_ids()
    if legacy is None:
        return [(f"bus {ids[i]}", {i: 1}, 1) for i in range(n)]
    adj = _neighbors(network)
    idx = network.bus_index()
    flows, injections = _active_p(network, legacy)
    rows, seen, touched = [], set(), set()
    for m, k in flows:
        br = network.branches[k]
        ends = frozenset((idx[br.from_bus], idx[br.to_bus]))
        touched |= ends
        if ("flow", ends) not in seen:
            seen.add(("flow", ends))
            rows.append((f"flow {m.id}", {i: 1 for i in sorted(ends)}, 1))
    for m, b in injections:
        group = frozenset([b] + adj[b])
        touched |= group
        if ("inj", group) not in seen:
            seen.add(("inj", group))
            rows.append((f"injection {m.id}", {i: 1 for i in sorted(group)}, len(set(adj[b]))))
    for i in range(n):
        if i not in touched:
            rows.append((f"bus {ids[i]}", {i: 1}, 1))
    return rows


def place_pmus(network: Network, legacy: MeasurementSet | None = None,
               node_budget: int = 100_000) -> PlacementResult:
    """Minimum PMU set making the system observable under the covering model."""
    n = network.n_bus
    A = connectivity(network)
    cons = placement_constraints(network, legacy)
    C = np.zeros((len(cons), n))
    for r, (_, coef, _) in enumerate(cons):
        for i, c in coef.items():
            C[r, i] = c
    M = sp.csr_matrix(C) @ A
    b = np.array([rhs for _, _, rhs in cons], dtype=float)
    lp = LinearProgram(np.ones(n), M, [">="] * len(cons), b, np.zeros(n), np.ones(n),
                       integer=np.ones(n, dtype=bool), row_names=[c[0] for c in cons])
    res = solve_binary_ilp(lp, node_budget)
    if not res.optimal:
        raise ObservabilityError(f"placement program is {res.status}")
    ids = network.bus_ids()
    chosen = [int(ids[i]) for i in np.flatnonzero(res.x > 0.5)]
    return PlacementResult(chosen, "plain" if legacy is None else "legacy", cons, res.iterations)


def placement_feasible(network: Network, buses, legacy: MeasurementSet | None = None) -> bool:
    """Whether a PMU set satisfies every covering constraint."""
    idx = network.bus_index()
    d = np.zeros(network.n_bus)
    d[[idx[b] for b in buses]] = 1.0
    reach = connectivity(network) @ d
    return all(sum(c * reach[i] for i, c in coef.items()) >= rhs
               for _, coef, rhs in placement_constraints(network, legacy))

