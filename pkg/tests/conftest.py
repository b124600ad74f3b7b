import numpy as np
import pytest

from gridstate.case_io import load_case
from gridstate.measurements import Measurement, MeasurementSet
from gridstate.network import PQ, SLACK, Branch, Bus, Generator, Network


@pytest.fixture(scope="session")
def case14():
    return load_case("case14")


@pytest.fixture(scope="session")
def case30():
    return load_case("case30")


def path3(x=(0.1, 0.2), r=(0.01, 0.02)) -> Network:
    """Slack-PQ-PQ chain used across the unit tests."""
    buses = [Bus(1, SLACK, base_kv=100.0), Bus(2, PQ, p_load=0.3, q_load=0.1, base_kv=100.0),
             Bus(3, PQ, p_load=0.2, q_load=0.05, base_kv=100.0)]
    branches = [Branch(1, 2, r[0], x[0], b_shunt=0.02), Branch(2, 3, r[1], x[1], b_shunt=0.01)]
    return Network(100.0, buses, branches, [Generator(1, 0.5, 0.0)], "path3")


def dense_dc_rows(network, mset, drop_slack=True):
    """Dense unit-weight DC rows (flows, injections, angle phasors) for rank oracles."""
    idx = network.bus_index()
    n = network.n_bus
    adj = [[] for _ in range(n)]
    for br in network.branches:
        if br.in_service:
            f, t = idx[br.from_bus], idx[br.to_bus]
            adj[f].append(t)
            adj[t].append(f)
    rows = []
    for m in mset:
        if not m.in_service:
            continue
        r = np.zeros(n)
        if m.kind == "pflow":
            br = network.branches[m.element - 1]
            r[idx[br.from_bus]] += 1.0
            r[idx[br.to_bus]] -= 1.0
        elif m.kind == "pinj":
            i = idx[m.element]
            for j in adj[i]:
                r[i] += 1.0
                r[j] -= 1.0
        elif m.kind == "vphasor_ang":
            r[idx[m.element]] = 1.0
        else:
            continue
        rows.append(r)
    H = np.array(rows).reshape(-1, n)
    return np.delete(H, network.slack, axis=1) if drop_slack else H


def dense_rank(H) -> int:
    return int(np.linalg.matrix_rank(H)) if H.size else 0


def oracle_islands(network, mset):
    """Bus groups whose angle differences are fixed by the measurement rows."""
    H = dense_dc_rows(network, mset, drop_slack=False)
    n = network.n_bus
    rk = dense_rank(H)
    lab = -np.ones(n, dtype=int)
    g = 0
    for i in range(n):
        if lab[i] >= 0:
            continue
        lab[i] = g
        for j in range(i + 1, n):
            if lab[j] < 0:
                e = np.zeros(n)
                e[i], e[j] = 1.0, -1.0
                if dense_rank(np.vstack([H, e])) == rk:
                    lab[j] = g
        g += 1
    return lab


def same_partition(a, b) -> bool:
    a, b = np.asarray(a), np.asarray(b)
    return bool(np.all((a[:, None] == a[None, :]) == (b[:, None] == b[None, :])))


def measurement_set(specs) -> MeasurementSet:
    """Build a set from (kind, element, side) tuples with zero values."""
    out = []
    for n, spec in enumerate(specs, start=1):
        kind, element, side = (spec + ("-",))[:3] if len(spec) == 2 else spec
        coords = "polar" if kind.startswith(("vphasor", "iphasor")) else "-"
        out.append(Measurement(f"m{n}", kind, element, side, 0.0, 1e-4, coordinates=coords))
    return MeasurementSet(out)
