import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridstate.network import PQ, PV, SLACK, Branch, Bus, Change, Network, build_models, update_component
from gridstate.power_flow import (TOLERANCE, PowerFlowState, solve_dc, solve_fast_decoupled,
                                  solve_gauss_seidel, solve_newton_raphson, solve_power_flow)

from conftest import path3


def mismatch(net, models, V):
    p, q = net.specified_injections()
    S = models.ac.injections(V)
    pv = [i for i, b in enumerate(net.buses) if b.kind == PV]
    pq = [i for i, b in enumerate(net.buses) if b.kind == PQ]
    pvpq = sorted(pv + pq)
    return max(np.abs(S.real - p)[pvpq].max(), np.abs(S.imag - q)[pq].max())


def test_default_tolerance():
    assert TOLERANCE == 1e-8


def test_no_load_fixed_point():
    net = Network(100.0, [Bus(1, SLACK), Bus(2, PQ)], [Branch(1, 2, 0.01, 0.1)])
    for method in ("nr", "fdxb", "fdbx", "gs"):
        rep = solve_power_flow(net, build_models(net), method, flat=True)
        assert rep.converged and rep.iterations <= 1
        np.testing.assert_allclose(rep.V, [1.0, 1.0], atol=1e-12)


def test_nr_case14(case14):
    models = build_models(case14)
    t = time.perf_counter()
    rep = solve_newton_raphson(case14, models.ac, flat=True)
    assert time.perf_counter() - t < 1.0
    assert rep.converged and rep.iterations <= 10
    assert rep.mismatch_trace[-1] < 1e-8
    # independent mismatch from Y V
    assert mismatch(case14, models, rep.V) < 1e-8
    np.testing.assert_allclose(rep.injections, rep.V * np.conj(models.ac.Y @ rep.V), atol=1e-12)


def test_power_balance(case30):
    models = build_models(case30)
    rep = solve_newton_raphson(case30, models.ac)
    Sf, St = models.ac.branch_powers(rep.V)
    shunt = np.abs(rep.V) ** 2 * np.conj(models.ac.shunts)
    losses = np.sum(Sf + St) + np.sum(shunt)
    assert abs(np.sum(rep.injections) - losses) < 1e-8


def test_warm_start_fewer_iterations(case14):
    net = case14.copy()
    models = build_models(net)
    state = PowerFlowState()
    cold = solve_newton_raphson(net, models.ac, state, flat=True)
    update_component(net, models, Change("bus", 9, {"p_load": net.buses[8].p_load * 1.01}))
    warm = solve_newton_raphson(net, models.ac, state)
    flat = solve_newton_raphson(net, models.ac, flat=True)
    assert warm.reuse.warm_start and warm.iterations < flat.iterations
    assert np.max(np.abs(warm.V - flat.V)) < 1e-7
    assert cold.converged


@pytest.mark.parametrize("name", ["case14", "case30"])
def test_cross_method_agreement(name, request):
    net = request.getfixturevalue(name)
    models = build_models(net)
    ref = solve_newton_raphson(net, models.ac, flat=True)
    for method in ("fdxb", "fdbx", "gs"):
        rep = solve_power_flow(net, models, method, flat=True)
        assert rep.converged, method
        assert np.max(np.abs(rep.V - ref.V)) < 1e-6, method


def test_fd_load_change_reuses_factors(case14):
    net = case14.copy()
    models = build_models(net)
    state = PowerFlowState()
    solve_fast_decoupled(net, models.ac, "xb", state)
    update_component(net, models, Change("bus", 4, {"p_load": 0.5}))
    rep = solve_fast_decoupled(net, models.ac, "xb", state)
    assert rep.reuse.factor_reused and not [e for e in rep.reuse.factor_events if "factor" in e]
    cold = solve_fast_decoupled(net, build_models(net).ac, "xb", tol=1e-12)
    again = solve_fast_decoupled(net, models.ac, "xb", state, tol=1e-12)
    assert np.max(np.abs(again.V - cold.V)) < 1e-10


def test_xb_bx_coincide_without_resistance(case14):
    net = case14.copy()
    for br in net.branches:
        br.r = 0.0
    models = build_models(net)
    a = solve_fast_decoupled(net, models.ac, "xb", flat=True)
    b = solve_fast_decoupled(net, models.ac, "bx", flat=True)
    assert a.iterations == b.iterations
    assert np.array_equal(a.mismatch_trace, b.mismatch_trace)


def test_gs_pins_pv_magnitudes(case14):
    models = build_models(case14)
    rep = solve_gauss_seidel(case14, models.ac, flat=True)
    targets = case14.voltage_targets()
    for i, b in enumerate(case14.buses):
        if b.kind != PQ:
            assert abs(rep.vm[i]) == pytest.approx(targets[i], abs=1e-12)


def test_max_iterations_reported(case14):
    rep = solve_newton_raphson(case14, build_models(case14).ac, flat=True, max_iter=1)
    assert rep.status == "max_iterations" and not rep.converged


def test_divergence_reported():
    net = path3()
    net.buses[2].p_load = 40.0
    rep = solve_newton_raphson(net, build_models(net).ac, flat=True)
    assert rep.status in ("diverged", "max_iterations", "singular")


# ------------------------------------------------------------------ DC

def test_dc_two_bus():
    net = Network(100.0, [Bus(1, SLACK), Bus(2, PQ, p_load=1.0)], [Branch(1, 2, 0.0, 0.5)])
    rep = solve_dc(net, build_models(net).dc)
    assert rep.theta[1] == pytest.approx(-0.5) and rep.flow_from[0] == pytest.approx(1.0)


def test_dc_shift_only():
    net = Network(100.0, [Bus(1, SLACK), Bus(2, PQ)], [Branch(1, 2, 0.0, 0.5, shift=0.1)])
    dc = build_models(net).dc
    assert dc.branch_flows(np.zeros(2))[0] == pytest.approx(-0.2)


def test_dc_case30_dense_oracle(case30):
    dc = build_models(case30).dc
    rep = solve_dc(case30, dc)
    B = dc.B.toarray()
    p, _ = case30.specified_injections()
    keep = np.delete(np.arange(30), case30.slack)
    theta = np.zeros(30)
    theta[keep] = np.linalg.solve(B[np.ix_(keep, keep)], (p - dc.constant_injection)[keep])
    assert np.max(np.abs(rep.theta - theta)) < 1e-10


def test_dc_island_without_slack():
    net = Network(100.0, [Bus(1, SLACK), Bus(2), Bus(3), Bus(4)],
                  [Branch(1, 2, 0, 0.1), Branch(3, 4, 0, 0.1)])
    rep = solve_dc(net, build_models(net).dc)
    assert rep.status == "singular" and rep.unreferenced_island == [3, 4]


def test_dc_kvl_on_triangle():
    net = Network(100.0, [Bus(1, SLACK), Bus(2, PQ, p_load=0.4), Bus(3, PQ, p_load=0.7)],
                  [Branch(1, 2, 0, 0.1), Branch(2, 3, 0, 0.2), Branch(3, 1, 0, 0.25)])
    rep = solve_dc(net, build_models(net).dc)
    x = np.array([0.1, 0.2, 0.25])
    assert abs(np.sum(rep.flow_from * x)) < 1e-14


def test_dc_reuse_matches_cold(case30):
    net = case30.copy()
    models = build_models(net)
    state = PowerFlowState()
    solve_dc(net, models.dc, state)
    update_component(net, models, Change("bus", 5, {"p_load": 1.2}))
    rep = solve_dc(net, models.dc, state)
    assert rep.reuse.factor_reused
    cold = solve_dc(net, build_models(net).dc)
    assert np.max(np.abs(rep.theta - cold.theta)) < 1e-10
    update_component(net, models, Change("branch", 4, {"x": 0.3}))
    rep = solve_dc(net, models.dc, state)
    assert rep.reuse.factor_events == ["refactor"]
    assert np.max(np.abs(rep.theta - solve_dc(net, build_models(net).dc).theta)) < 1e-10


@settings(max_examples=15, deadline=None)
@given(st.floats(0.9, 1.1), st.integers(2, 14))
def test_warm_cold_agree_property(case14, scale, bus):
    net = case14.copy()
    models = build_models(net)
    state = PowerFlowState()
    solve_newton_raphson(net, models.ac, state)
    b = net.buses[net.bus_index()[bus]]
    update_component(net, models, Change("bus", bus, {"p_load": b.p_load * scale + 0.01}))
    warm = solve_newton_raphson(net, models.ac, state)
    cold = solve_newton_raphson(net, build_models(net).ac, flat=True)
    assert warm.converged and cold.converged
    assert np.max(np.abs(warm.V - cold.V)) < 1e-7
