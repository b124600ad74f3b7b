"""Quasi-steady-state sequencing of changes and analyses.

A script is an ordered list of steps. Each step applies network and
measurement changes, then runs analyses. Models, factorizations and solutions
carry over between steps, and reuse is decided only by the dirty flags and
version counters the update functions maintain.

Script format (JSON)::

    {"steps": [
      {"changes": [
         {"element": "bus", "label": 4, "set": {"p_load": 0.5}},
         {"element": "generator", "label": 2, "set": {"p_output": 0.3}},
         {"element": "branch", "label": 7, "set": {"ratio": 0.99}},
         {"scale": "load", "factor": 1.05},
         {"scale": "ratio", "factor": 1.01, "branches": "transformers"},
         {"perturb": "injections", "fraction": 0.2, "spread": 0.1, "seed": 4},
         {"perturb": "ratio", "percent": 1.0, "seed": 5},
         {"measurement": "m3", "set": {"variance": 2e-4}}],
       "analyses": [
         {"run": "pf", "method": "nr"},
         {"run": "measure", "source": "ac", "seed": 3},
         {"run": "se", "model": "ac", "method": "wls", "tol": 1e-10}]}]}

A bare JSON list is read as the list of steps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bad_data import analyze_bad_data
from .dc_opf import solve_dc_opf
from .estimators import EstimationModel
from .measurements import MeasurementSet, resample_values, update_measurement
from .network import Change, Network, UpdateEffect, build_models, update_component
from .power_flow import PowerFlowState, solve_power_flow


class ScriptError(ValueError):
    pass


class StepError(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        self.step = step
        self.cause = cause
        super().__init__(f"step {step}: {cause}")


@dataclass
class AnalysisRecord:
    run: str
    method: str
    status: str
    reuse: dict
    iterations: int = 0
    result: object = None  # the solver's own report

    def as_dict(self) -> dict:
        return {"run": self.run, "method": self.method, "status": self.status,
                "iterations": self.iterations, "reuse": self.reuse}


@dataclass
class StepReport:
    index: int
    dirty: dict
    analyses: list = field(default_factory=list)

    def find(self, run: str) -> AnalysisRecord | None:
        return next((a for a in self.analyses if a.run == run), None)

    def as_dict(self) -> dict:
        return {"step": self.index, "dirty": self.dirty,
                "analyses": [a.as_dict() for a in self.analyses]}


def load_script(source) -> list:
    """Steps from a path, JSON text or an already parsed object."""
    if isinstance(source, (str, Path)) and Path(source).exists():
        data = json.loads(Path(source).read_text())
    elif isinstance(source, str):
        data = json.loads(source)
    else:
        data = source
    steps = data["steps"] if isinstance(data, dict) else data
    if not isinstance(steps, list):
        raise ScriptError("a script is a list of steps")
    for i, st in enumerate(steps):
        if not isinstance(st, dict) or set(st) - {"changes", "analyses", "label"}:
            raise ScriptError(f"step {i}: expected keys 'changes' and 'analyses'")
    return steps


def _transformers(network: Network) -> list:
    return [k + 1 for k, br in enumerate(network.branches)
            if br.in_service and (br.ratio != 1.0 or br.shift != 0.0)]


def _expand(network: Network, ch: dict) -> list:
    """Turn one script change into element changes (or a measurement edit)."""
    if "measurement" in ch:
        return [("measurement", ch["measurement"], ch.get("set", {}))]
    if "element" in ch:
        return [Change(ch["element"], ch.get("label"), dict(ch.get("set", {})), ch.get("add", False))]
    if "scale" in ch:
        f = float(ch["factor"])
        what = ch["scale"]
        if what == "load":
            buses = ch.get("buses") or network.bus_ids().tolist()
            idx = network.bus_index()
            return [Change("bus", b, {"p_load": network.buses[idx[b]].p_load * f,
                                      "q_load": network.buses[idx[b]].q_load * f}) for b in buses]
        if what == "generation":
            gens = ch.get("generators") or list(range(1, len(network.generators) + 1))
            return [Change("generator", g, {"p_output": network.generators[g - 1].p_output * f})
                    for g in gens]
        if what == "ratio":
            sel = ch.get("branches", "transformers")
            brs = _transformers(network) if sel == "transformers" else sel
            return [Change("branch", k, {"ratio": network.branches[k - 1].ratio * f}) for k in brs]
        raise ScriptError(f"unknown scale target {what!r}")
    if ch.get("perturb") == "ratio":
        # every selected transformer ratio moves by +/- percent, sign drawn per branch
        rng = np.random.default_rng(ch.get("seed"))
        pct = float(ch.get("percent", 1.0)) / 100.0
        sel = ch.get("branches", "transformers")
        brs = _transformers(network) if sel == "transformers" else sel
        return [Change("branch", k, {"ratio": network.branches[k - 1].ratio
                                     * (1.0 + pct * rng.choice((-1.0, 1.0)))}) for k in brs]
    if ch.get("perturb") == "injections":
        # scale a random share of loads and generator outputs by 1 + U(-spread, spread)
        rng = np.random.default_rng(ch.get("seed"))
        frac, spread = float(ch.get("fraction", 0.2)), float(ch.get("spread", 0.1))
        out = []
        for b in network.buses:
            if rng.random() < frac:
                s = 1.0 + rng.uniform(-spread, spread)
                out.append(Change("bus", b.id, {"p_load": b.p_load * s, "q_load": b.q_load * s}))
        for k, g in enumerate(network.generators, start=1):
            if rng.random() < frac:
                out.append(Change("generator", k, {"p_output": g.p_output * (1.0 + rng.uniform(-spread, spread))}))
        return out
    raise ScriptError(f"unrecognized change {ch}")


class QssSession:
    """Network, measurements and every reusable artifact across steps.

    With ``cold=True`` nothing carries over: models, factorizations and
    estimators are rebuilt before every step and iterative solvers start flat.
    This is the oracle that reuse must reproduce.
    """

    def __init__(self, network: Network, measurements: MeasurementSet | None = None,
                 cold: bool = False):
        self.network = network
        self.measurements = measurements
        self.cold = cold
        self.models = build_models(network)
        self.pf_state = PowerFlowState()
        self.estimators = {}
        self.last_pf = {}

    def _reset(self):
        self.models = build_models(self.network)
        self.pf_state = PowerFlowState()
        self.estimators = {}

    def apply(self, changes) -> dict:
        dirty = UpdateEffect()
        mdirty = {"values": False, "weights": False, "status": False, "structure": False}
        for ch in changes:
            for item in _expand(self.network, ch):
                if isinstance(item, tuple):
                    if self.measurements is None:
                        raise ScriptError("measurement change without a measurement set")
                    for k, v in update_measurement(self.measurements, item[1], item[2]).items():
                        mdirty[k] |= v
                    continue
                eff = update_component(self.network, self.models, item)
                for name in vars(dirty):
                    setattr(dirty, name, getattr(dirty, name) or getattr(eff, name))
        return {**vars(dirty), **{f"measurement_{k}": v for k, v in mdirty.items()}}

    def run_analysis(self, spec: dict) -> AnalysisRecord:
        kind = spec.get("run")
        if kind == "pf":
            method = spec.get("method", "nr")
            kw = {k: spec[k] for k in ("tol", "max_iter") if k in spec}
            if method != "dc":
                kw["flat"] = self.cold or spec.get("flat", False)
            rep = solve_power_flow(self.network, self.models, method, self.pf_state, **kw)
            self.last_pf["dc" if method == "dc" else "ac"] = rep
            return AnalysisRecord("pf", method, rep.status, rep.reuse.as_dict(), rep.iterations, rep)
        if kind == "measure":
            source = spec.get("source", "ac")
            pf = self.last_pf.get(source)
            if pf is None or not pf.converged:
                raise ScriptError("measure needs a converged power flow of the same kind earlier")
            model, state = ((self.models.dc, pf.theta) if source == "dc" else (self.models.ac, pf.V))
            resample_values(self.measurements, self.network, model, state,
                            spec.get("seed"), spec.get("exact", False))
            return AnalysisRecord("measure", source, "done", {"structure_reused": True})
        if kind == "se":
            mkind = spec.get("model", "ac")
            method = spec.get("method", "wls")
            est = self.estimators.get(mkind)
            if est is None:
                est = self.estimators[mkind] = EstimationModel(self.network, self.measurements,
                                                               mkind, self.models)
                fresh = True
            else:
                fresh = False
            start = "flat" if self.cold else spec.get("start", "warm")
            kw = {k: spec[k] for k in ("tol", "max_iter") if k in spec}
            rep = est.solve(method, start=start, **kw)
            reuse = dict(rep.reuse)
            if fresh:
                reuse = {k: (False if k.endswith("_reused") else v) for k, v in reuse.items()}
            return AnalysisRecord("se", f"{mkind}/{method}", rep.status, reuse, rep.iterations, rep)
        if kind == "baddata":
            mkind = spec.get("model", "ac")
            est = self.estimators.get(mkind)
            if est is None:
                est = self.estimators[mkind] = EstimationModel(self.network, self.measurements,
                                                               mkind, self.models)
            rep = analyze_bad_data(est, threshold=spec.get("threshold", 3.0),
                                   confidence=spec.get("confidence", 0.95),
                                   force=spec.get("force", False))
            return AnalysisRecord("baddata", mkind, rep.verdict, {}, len(rep.removals), rep)
        if kind == "opf-dc":
            rep = solve_dc_opf(self.network, self.models.dc, spec.get("segments"))
            return AnalysisRecord("opf-dc", "lp", rep.status, {}, rep.iterations, rep)
        raise ScriptError(f"unknown analysis {kind!r}")

    def step(self, index: int, step: dict) -> StepReport:
        dirty = self.apply(step.get("changes", []))
        if self.cold:
            self._reset()
        report = StepReport(index, dirty)
        for spec in step.get("analyses", []):
            report.analyses.append(self.run_analysis(spec))
        return report


def run_script(network: Network, measurements: MeasurementSet | None, script,
               cold: bool = False, in_place: bool = False) -> list:
    """Run every step; returns one :class:`StepReport` per step.

    Inputs are copied unless ``in_place``; solver errors carry the step index.
    """
    steps = load_script(script)
    if not in_place:
        network = network.copy()
        measurements = measurements.copy() if measurements is not None else None
    session = QssSession(network, measurements, cold)
    out = []
    for i, st in enumerate(steps):
        try:
            out.append(session.step(i, st))
        except ScriptError:
            raise
        except Exception as exc:  # surface the failing step
            raise StepError(i, exc) from exc
    return out


def cold_run(network: Network, measurements: MeasurementSet | None, script) -> list:
    """Reference run that rebuilds everything at every step."""
    return run_script(network, measurements, script, cold=True)

