import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridstate.estimators import EstimationModel
from gridstate.measurements import (Measurement, MeasurementError, MeasurementSet, TemplateEntry,
                                    default_template, generate_from_solution, phasor_to_rectangular,
                                    pmu_entries, randomize_availability, resample_values,
                                    update_measurement)
from gridstate.network import build_models
from gridstate.power_flow import solve_power_flow


@pytest.fixture(scope="module")
def solved14(case14):
    models = build_models(case14)
    return models, solve_power_flow(case14, models, "nr")


def test_exact_mode(case14, solved14):
    models, pf = solved14
    tpl = [TemplateEntry("vmag", 3, "-", 0.0), TemplateEntry("pflow", 2, "from", 1e-4)]
    ms = generate_from_solution(case14, models.ac, pf.V, tpl, exact=True)
    assert ms["m1"].value == abs(pf.V[2])
    Sf, _ = models.ac.branch_powers(pf.V)
    assert ms["m2"].value == Sf[1].real
    assert ms["m1"].variance == 1.0  # zero variance stored as unit variance
    with pytest.raises(MeasurementError):
        generate_from_solution(case14, models.ac, pf.V, tpl)


def test_seed_determinism(case14, solved14):
    models, pf = solved14
    tpl = default_template(case14, seed=4, pmu_buses=[2])
    a = generate_from_solution(case14, models.ac, pf.V, tpl, seed=9)
    b = generate_from_solution(case14, models.ac, pf.V, tpl, seed=9)
    assert [vars(m) for m in a] == [vars(m) for m in b]
    c = generate_from_solution(case14, models.ac, pf.V, tpl, seed=10)
    assert [m.value for m in a] != [m.value for m in c]


def test_noise_statistics(case14, solved14):
    models, pf = solved14
    N, v = 100_000, 4e-4
    tpl = [TemplateEntry("vmag", 1, "-", v)] * N
    ms = generate_from_solution(case14, models.ac, pf.V, tpl, seed=1)
    u = np.array([m.value for m in ms]) - abs(pf.V[0])
    assert abs(u.mean()) < 4 * math.sqrt(v) / math.sqrt(N)
    assert abs(u.var() / v - 1) < 0.05


def test_unknown_element(case14, solved14):
    models, pf = solved14
    with pytest.raises(MeasurementError):
        generate_from_solution(case14, models.ac, pf.V, [TemplateEntry("pflow", 99, "from")])


def test_default_template_shape(case14):
    tpl = default_template(case14, p_injection=0.0, p_to_side=0.0)
    kinds = [e.kind for e in tpl]
    assert kinds.count("vmag") == 14 and kinds.count("pflow") == 20 and kinds.count("qflow") == 20
    full = default_template(case14, p_injection=1.0, p_to_side=1.0)
    assert [e.kind for e in full].count("pinj") == 14
    dc = default_template(case14, model="dc", pmu_buses=[5])
    assert {e.kind for e in dc} <= {"pflow", "pinj", "vphasor_ang"}


def test_pmu_entries(case14):
    e = pmu_entries(case14, 2, 1e-6)
    branches = [k for k, br in enumerate(case14.branches, 1) if 2 in (br.from_bus, br.to_bus)]
    assert len(e) == 2 + 2 * len(branches)


# ------------------------------------------------------------------ availability

def _legacy_set(n=12):
    ms = [Measurement(f"p{i}", "pflow", i + 1, "from", 0.0, 1e-4) for i in range(n)]
    ms += [Measurement(f"v{i}", "vmag", i + 1, "-", 1.0, 1e-4) for i in range(5)]
    return MeasurementSet(ms)


def test_availability_counts():
    ms = _legacy_set()
    randomize_availability(ms, {"all": len(ms)}, seed=1)
    assert all(m.status == 1 for m in ms)
    randomize_availability(ms, {"P": 4}, seed=2)
    assert sum(m.status for m in ms.by_kind("pflow")) == 4
    assert all(m.status == 1 for m in ms.by_kind("vmag"))
    with pytest.raises(MeasurementError):
        randomize_availability(ms, {"P": 13})


def test_availability_seeds_differ():
    picks = set()
    for seed in range(20):
        ms = _legacy_set()
        randomize_availability(ms, {"P": 6}, seed=seed)
        picks.add(tuple(m.status for m in ms.by_kind("pflow")))
    assert len(picks) > 1


def test_availability_counts_phasor_as_unit(case14):
    tpl = pmu_entries(case14, 2, 1e-6) + pmu_entries(case14, 6, 1e-6)
    ms = generate_from_solution(case14, build_models(case14).ac, np.ones(14, complex), tpl, seed=0)
    randomize_availability(ms, {"Vbar": 1}, seed=3)
    on = [m for m in ms.by_kind("vphasor_mag", "vphasor_ang") if m.status]
    assert len(on) == 2 and on[0].element == on[1].element


# ------------------------------------------------------------------ updates

def test_update_flags_and_partner():
    ms = MeasurementSet([Measurement("a", "vphasor_mag", 1, "-", 1.0, 1e-6, coordinates="rect"),
                         Measurement("b", "vphasor_ang", 1, "-", 0.0, 1e-6, coordinates="rect"),
                         Measurement("c", "vmag", 2, "-", 1.0, 1e-4)])
    d = update_measurement(ms, "a", {"status": 0})
    assert d["status"] and ms["b"].status == 0
    d = update_measurement(ms, "c", {"variance": 2e-4})
    assert d == {"values": False, "weights": True, "status": False, "structure": False}
    with pytest.raises(MeasurementError):
        update_measurement(ms, "zz", {"value": 1.0})
    with pytest.raises(MeasurementError):
        update_measurement(ms, "c", {"variance": 0.0})


def test_set_invariants():
    with pytest.raises(MeasurementError):
        MeasurementSet([Measurement("a", "vmag", 1, "-", 1, 1e-4), Measurement("a", "vmag", 2, "-", 1, 1e-4)])
    with pytest.raises(MeasurementError):
        MeasurementSet([Measurement("a", "vphasor_mag", 1, "-", 1, 1e-6, coordinates="rect"),
                        Measurement("b", "vphasor_ang", 1, "-", 0, 1e-6, coordinates="polar")])
    with pytest.raises(MeasurementError):
        Measurement("a", "pflow", 1, "-", 0, 1e-4)  # branch quantity without a side


def test_resample_keeps_layout(case14, solved14):
    models, pf = solved14
    ms = generate_from_solution(case14, models.ac, pf.V, default_template(case14), seed=1)
    before = [(m.id, m.variance, m.status) for m in ms]
    v0 = ms.values_version
    resample_values(ms, case14, models.ac, pf.V, seed=2)
    assert [(m.id, m.variance, m.status) for m in ms] == before
    assert ms.values_version == v0 + 1 and ms.structure_version == 0


# ------------------------------------------------------------------ polar to rectangular

def test_rectangular_axis_aligned():
    re, im, cov = phasor_to_rectangular(1.2, 0.0, 1e-4, 4e-6)
    assert (re, im) == (1.2, 0.0)
    np.testing.assert_allclose(cov, np.diag([1e-4, 1.44 * 4e-6]), atol=1e-20)


def test_rectangular_rotated():
    re, im, cov = phasor_to_rectangular(1.0, math.pi / 2, 1e-4, 4e-6)
    assert re == pytest.approx(0.0, abs=1e-15) and im == pytest.approx(1.0)
    assert cov[0, 0] == pytest.approx(4e-6) and cov[1, 1] == pytest.approx(1e-4)


def test_rectangular_neglect_flag():
    _, _, cov = phasor_to_rectangular(1.0, 0.7, 1e-4, 4e-6, neglect_covariance=True)
    assert cov[0, 1] == 0.0 and cov[1, 0] == 0.0


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(-math.pi, math.pi), st.floats(1e-8, 1e-2), st.floats(1e-8, 1e-2))
def test_rectangular_covariance_spd(mag, ang, vm, va):
    _, _, cov = phasor_to_rectangular(mag, ang, vm, va)
    assert np.array_equal(cov, cov.T)
    # first-order propagation oracle (valid where the floor is inactive)
    Jp = np.array([[math.cos(ang), -mag * math.sin(ang)], [math.sin(ang), mag * math.cos(ang)]])
    ref = Jp @ np.diag([vm, va]) @ Jp.T
    if mag * mag * va > 1e-6 * vm:
        np.testing.assert_allclose(cov, ref, rtol=1e-9, atol=1e-14 * vm)
    assert np.all(np.linalg.eigvalsh(cov) > 0)


def test_phasor_variance_update_is_local(case14, solved14):
    models, pf = solved14
    tpl = pmu_entries(case14, 2, 1e-6) + pmu_entries(case14, 9, 1e-6)
    ms = generate_from_solution(case14, models.ac, pf.V, tpl, seed=3)
    est = EstimationModel(case14, ms, "pmu", models)
    W0 = est.W.toarray().copy()
    target = ms.phasors()[1]
    update_measurement(ms, target.magnitude.id, {"variance": 4e-6})
    est.refresh()
    diff = np.argwhere(est.W.toarray() != W0)
    rows = {est.layout.ids.index(m.id) for m in target.rows}
    assert len(diff) and set(diff.ravel()) <= rows
