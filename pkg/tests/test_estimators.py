import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridstate.estimators import (EstimationModel, solve_lav, solve_orthogonal,
                                  solve_peters_wilkinson, solve_wls_dc, solve_wls_nonlinear,
                                  solve_wls_pmu)
from gridstate.measurements import (Measurement, MeasurementSet, default_template,
                                    generate_from_solution, pmu_entries, update_measurement)
from gridstate.network import PQ, SLACK, Branch, Bus, Generator, Network, build_models
from gridstate.power_flow import solve_power_flow

from conftest import path3


@pytest.fixture(scope="module")
def solved(case14, case30):
    out = {}
    for net in (case14, case30):
        h = build_models(net)
        out[net.name] = (net, h, solve_power_flow(net, h, "nr").V,
                         solve_power_flow(net, h, "dc").theta)
    return out


def two_bus_dc(values, variances, kind="pflow"):
    """Slack and one PQ bus joined by parallel unit-reactance lines."""
    net = Network(100.0, [Bus(1, SLACK), Bus(2, PQ)],
                  [Branch(1, 2, 0.0, 1.0) for _ in values], [Generator(1, 0.0)])
    ms = MeasurementSet([Measurement(f"z{i}", kind, i + 1, "from", v, s)
                         for i, (v, s) in enumerate(zip(values, variances))])
    return net, ms


def dense_dc_oracle(net, ms, h):
    """Jacobian of the DC measurement functions by finite differences of the
    model's flow and injection formulas, with slack column removed."""
    dc = h.dc
    idx = net.bus_index()
    n = net.n_bus

    def fun(theta):
        flows, pinj = dc.branch_flows(theta), dc.injections(theta)
        out = []
        for m in ms:
            if m.kind == "pflow":
                out.append(flows[m.element - 1] * (1 if m.side == "from" else -1))
            elif m.kind == "pinj":
                out.append(pinj[idx[m.element]])
            else:
                out.append(theta[idx[m.element]])
        return np.array(out)

    c = fun(np.zeros(n))
    H = np.column_stack([fun(np.eye(n)[j]) - c for j in range(n)])
    keep = [j for j in range(n) if j != net.slack]
    return H[:, keep], c


# ---------------------------------------------------------------- nonlinear WLS

def test_single_bus_two_readings():
    net = Network(100.0, [Bus(1, SLACK)], [])
    ms = MeasurementSet([Measurement("a", "vmag", 1, "-", 1.00, 1e-4),
                         Measurement("b", "vmag", 1, "-", 1.02, 1e-4)])
    rep = solve_wls_nonlinear(net, ms)
    assert rep.converged
    assert rep.x == pytest.approx([1.01], abs=1e-12)
    assert (rep.m, rep.k) == (1, 2)


@pytest.mark.parametrize("name", ["case14", "case30"])
@pytest.mark.parametrize("kind", ["ac", "pmu", "dc"])
def test_zero_noise_recovery(solved, name, kind):
    net, h, V, theta = solved[name]
    if kind == "ac":
        tpl = default_template(net, pmu_buses=[net.buses[1].id], seed=1)
        ms = generate_from_solution(net, h.ac, V, tpl, exact=True)
        rep = solve_wls_nonlinear(net, ms, models=h)
        err = np.abs(rep.V - V).max()
    elif kind == "pmu":
        tpl = [e for b in net.buses for e in pmu_entries(net, b.id, 1e-6)]
        ms = generate_from_solution(net, h.ac, V, tpl, exact=True)
        rep = solve_wls_pmu(net, ms, models=h)
        err = np.abs(rep.V - V).max()
    else:
        ms = generate_from_solution(net, h.dc, theta, default_template(net, model="dc", seed=2),
                                    exact=True)
        rep = solve_wls_dc(net, ms, models=h)
        err = np.abs(rep.theta - theta).max()
    assert rep.converged
    assert err < (1e-6 if kind == "ac" else 1e-8)


def test_exact_start_gives_zero_step(solved):
    net, h, V, _ = solved["case14"]
    ms = generate_from_solution(net, h.ac, V, default_template(net, seed=1), exact=True)
    mdl = EstimationModel(net, ms, "ac", h)
    rep = mdl.solve(start=mdl.state_from_voltages(V))
    assert rep.converged and rep.iterations == 1
    assert rep.step_trace[0] < 1e-9


def test_ac_fixed_point_and_symmetric_gain(solved):
    net, h, V, _ = solved["case30"]
    ms = generate_from_solution(net, h.ac, V, default_template(net, seed=4), seed=9)
    mdl = EstimationModel(net, ms, "ac", h)
    rep = mdl.solve()
    assert rep.converged
    J = mdl.jacobian_at_solution()
    r = np.where(mdl.active, mdl.residual(rep.x), 0.0)
    grad = J.T @ (mdl.W @ r)
    assert np.abs(grad).max() < 1e-6 * np.abs(J.T @ (mdl.W @ mdl.z)).max()
    G = mdl.gain(J).to_scipy().toarray()
    assert np.array_equal(G, G.T)
    # objective reported is the weighted residual sum of squares
    assert rep.objective == pytest.approx(float(r @ (mdl.W @ r)), rel=1e-12)


def test_row_accounting(solved):
    net, h, V, _ = solved["case14"]
    ms = generate_from_solution(net, h.ac, V, default_template(net, seed=1), exact=True)
    mdl = EstimationModel(net, ms, "ac", h)
    assert mdl.m == 2 * net.n_bus - 1
    assert mdl.k == len(ms)
    update_measurement(ms, ms.measurements[3].id, {"status": 0})
    rep = mdl.solve()
    assert rep.k == len(ms) - 1
    assert math.isnan(rep.residuals[3])
    assert rep.row_ids == [m.id for m in ms]


def test_unobservable_reported():
    net = path3()
    ms = MeasurementSet([Measurement("v1", "vmag", 1, "-", 1.0, 1e-4),
                         Measurement("p1", "pflow", 1, "from", 0.5, 1e-4),
                         Measurement("q1", "qflow", 1, "from", 0.1, 1e-4)])
    rep = solve_wls_nonlinear(net, ms)
    assert rep.status == "unobservable"
    assert rep.x is None and rep.unobservable


# ---------------------------------------------------------------- PMU model

def test_single_bus_phasor():
    net = Network(100.0, [Bus(1, SLACK)], [])
    ms = MeasurementSet([Measurement("a", "vphasor_mag", 1, "-", 1.0, 1e-4, coordinates="rect"),
                         Measurement("b", "vphasor_ang", 1, "-", 0.0, 1e-4, coordinates="rect")])
    rep = solve_wls_pmu(net, ms)
    assert rep.x == pytest.approx([1.0, 0.0], abs=1e-14)


def _polar_oracle_weights(ms, neglect):
    """Inverse first-order covariance of each polar phasor, built from the
    Jacobian of (m cos a, m sin a)."""
    blocks = []
    phasors = {}
    for m in ms:
        phasors.setdefault(m.phasor_key, {})[m.kind.split("_")[1]] = m
    for p in phasors.values():
        mag, ang = p["mag"], p["ang"]
        Jp = np.array([[math.cos(ang.value), -mag.value * math.sin(ang.value)],
                       [math.sin(ang.value), mag.value * math.cos(ang.value)]])
        cov = Jp @ np.diag([mag.variance, ang.variance]) @ Jp.T
        if neglect:
            cov = np.diag(np.diag(cov))
        blocks.append((ms.index_of(mag.id), ms.index_of(ang.id), np.linalg.inv(cov)))
    W = np.zeros((len(ms), len(ms)))
    for a, b, inv in blocks:
        W[np.ix_([a, b], [a, b])] = inv
    return W


@pytest.mark.parametrize("neglect", [False, True])
def test_polar_pmu_matches_dense_oracle(solved, neglect):
    net, h, V, _ = solved["case14"]
    tpl = [e for b in (2, 6, 7, 9) for e in pmu_entries(net, b, 1e-4, "polar")]
    ms = generate_from_solution(net, h.ac, V, tpl, seed=5)
    for m in ms:
        m.neglect_covariance = neglect
    mdl = EstimationModel(net, ms, "pmu", h)
    rep = mdl.solve()
    H = mdl.H.toarray()
    z = np.array([[m.value * math.cos(a.value), m.value * math.sin(a.value)]
                  for m, a in zip(ms.measurements[::2], ms.measurements[1::2])]).ravel()
    W = _polar_oracle_weights(ms, neglect)
    x = np.linalg.solve(H.T @ W @ H, H.T @ W @ (z - mdl.c))
    assert np.abs(rep.x - x).max() < 1e-9


def test_pmu_exact_residuals_vanish(solved):
    net, h, V, _ = solved["case30"]
    tpl = [e for b in net.buses for e in pmu_entries(net, b.id, 1e-6)]
    ms = generate_from_solution(net, h.ac, V, tpl, exact=True)
    rep = solve_wls_pmu(net, ms, models=h)
    assert np.nanmax(np.abs(rep.residuals)) < 1e-8
    assert rep.iterations == 1


# ---------------------------------------------------------------- DC model

def test_dc_phase_shifter_in_constant_term():
    net = path3(r=(0.0, 0.0))
    net.branches[0].shift = 0.1
    h = build_models(net)
    theta = solve_power_flow(net, h, "dc").theta
    tpl = default_template(net, model="dc", p_injection=1.0, p_to_side=1.0, seed=0)
    ms = generate_from_solution(net, h.dc, theta, tpl, exact=True)
    mdl = EstimationModel(net, ms, "dc", h)
    rep = mdl.solve()
    assert np.abs(rep.theta - theta).max() < 1e-12
    assert np.abs(mdl.c).max() > 0


def test_dc_noisy_matches_dense_oracle(solved):
    net, h, _, theta = solved["case30"]
    ms = generate_from_solution(net, h.dc, theta, default_template(net, model="dc", seed=3),
                                seed=11)
    rep = solve_wls_dc(net, ms, models=h)
    H, c = dense_dc_oracle(net, ms, h)
    w = np.array([1.0 / m.variance for m in ms])
    z = np.array([m.value for m in ms])
    x = np.linalg.solve(H.T @ (w[:, None] * H), H.T @ (w * (z - c)))
    assert np.abs(rep.x - x).max() < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_dc_matches_dense_oracle_property(seed):
    net = path3(r=(0.0, 0.0))
    h = build_models(net)
    theta = solve_power_flow(net, h, "dc").theta
    tpl = default_template(net, model="dc", p_injection=0.7, seed=seed)
    ms = generate_from_solution(net, h.dc, theta, tpl, seed=seed)
    rep = solve_wls_dc(net, ms, models=h)
    H, c = dense_dc_oracle(net, ms, h)
    w = np.array([1.0 / m.variance for m in ms])
    z = np.array([m.value for m in ms])
    x = np.linalg.solve(H.T @ (w[:, None] * H), H.T @ (w * (z - c)))
    assert np.abs(rep.x - x).max() < 1e-10


def test_identity_model_returns_readings():
    net = Network(100.0, [Bus(1, SLACK), Bus(2, PQ)], [Branch(1, 2, 0.0, 0.5)],
                  [Generator(1, 0.0)])
    ms = MeasurementSet([Measurement("a", "vphasor_ang", 2, "-", 0.37, 1.0, coordinates="polar")])
    rep = solve_wls_dc(net, ms)
    assert rep.x == pytest.approx([0.37], abs=1e-15)


# ---------------------------------------------------------------- method agreement

@pytest.mark.parametrize("kind", ["ac", "pmu", "dc"])
def test_methods_agree(solved, kind):
    net, h, V, theta = solved["case14"]
    if kind == "ac":
        ms = generate_from_solution(net, h.ac, V, default_template(net, seed=2), seed=3)
    elif kind == "pmu":
        tpl = [e for b in (2, 6, 7, 9) for e in pmu_entries(net, b, 1e-6)]
        ms = generate_from_solution(net, h.ac, V, tpl, seed=3)
    else:
        ms = generate_from_solution(net, h.dc, theta, default_template(net, model="dc", seed=2),
                                    seed=3)
    ref = EstimationModel(net, ms, kind, h).solve("wls").x
    for fn in (solve_orthogonal, solve_peters_wilkinson):
        rep = fn(EstimationModel(net, ms, kind, h))
        assert rep.converged
        assert np.abs(rep.x - ref).max() < 1e-7


def test_orthogonal_extreme_weight_ratio():
    net, ms = two_bus_dc([1.0, 2.0], [1.0, 1e-10])
    rep = solve_orthogonal(EstimationModel(net, ms, "dc"))
    flow = (1.0 / 1.0 + 2.0 / 1e-10) / (1.0 + 1e10)
    assert -rep.x[0] == pytest.approx(flow, rel=1e-6)


# ---------------------------------------------------------------- LAV

def test_lav_median():
    net, ms = two_bus_dc([1.0, 1.0, 10.0], [1.0, 1.0, 1.0])
    rep = solve_lav(EstimationModel(net, ms, "dc"))
    assert -rep.x[0] == pytest.approx(1.0, abs=1e-12)
    assert rep.objective == pytest.approx(9.0, abs=1e-12)


def test_lav_rejects_gross_error(solved):
    net, h, _, theta = solved["case14"]
    tpl = default_template(net, model="dc", p_injection=1.0, p_to_side=1.0, seed=0)
    ms = generate_from_solution(net, h.dc, theta, tpl, exact=True)
    ms.measurements[0].value += 5.0
    ms.values_version += 1
    rep = solve_lav(EstimationModel(net, ms, "dc", h))
    assert np.abs(rep.theta - theta).max() < 1e-4
    wls = solve_wls_dc(net, ms, models=h)
    assert np.abs(wls.theta - theta).max() > 1e-2


@pytest.mark.parametrize("kind", ["ac", "dc"])
def test_lav_exact_objective_zero(solved, kind):
    net, h, V, theta = solved["case14"]
    if kind == "ac":
        ms = generate_from_solution(net, h.ac, V, default_template(net, seed=1), exact=True)
    else:
        ms = generate_from_solution(net, h.dc, theta, default_template(net, model="dc", seed=1),
                                    exact=True)
    rep = solve_lav(EstimationModel(net, ms, kind, h))
    assert rep.converged
    assert rep.objective < 1e-6


# ---------------------------------------------------------------- reuse

def test_linear_gain_factor_reused(solved):
    net, h, _, theta = solved["case14"]
    ms = generate_from_solution(net, h.dc, theta, default_template(net, model="dc", seed=1),
                                seed=2)
    mdl = EstimationModel(net, ms, "dc", h)
    mdl.solve()
    for m in ms:
        m.value += 0.01
    ms.values_version += 1
    rep = mdl.solve()
    assert rep.reuse["factor_reused"]
    fresh = EstimationModel(net, ms, "dc", h).solve()
    assert np.abs(rep.x - fresh.x).max() < 1e-12
    update_measurement(ms, ms.measurements[0].id, {"variance": 2e-4})
    assert not mdl.solve().reuse["factor_reused"]
