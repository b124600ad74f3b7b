"""Command-line front end.

Every subcommand writes a JSON report (see docs/report_schema.md) to
``--report`` or standard output, and optionally a plain-text table.
Exit status: 0 success, 1 analysis failure, 2 input error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bad_data import analyze_bad_data
from .case_io import (CaseFormatError, load_case, read_measurements_csv, snapshot_read,
                      snapshot_write, write_measurements_csv)
from .dc_opf import DcOpfError, solve_dc_opf
from .estimators import METHODS, EstimationError, EstimationModel
from .lp import NodeBudgetExceeded
from .measurements import (MeasurementError, default_template, generate_from_solution,
                           pmu_entries, resample_values)
from .network import NetworkError, build_models
from .observability import (find_flow_islands, find_maximal_islands, place_pmus,
                            restore_observability)
from .power_flow import PowerFlowState, solve_power_flow
from .qss import ScriptError, StepError, run_script

REPORT_SCHEMA_VERSION = 1
log = logging.getLogger("gridstate")


class InputError(Exception):
    """Bad or missing input; exit status 2."""


class AnalysisFailure(Exception):
    """The analysis ran but did not succeed; exit status 1."""

    def __init__(self, message, results=None):
        super().__init__(message)
        self.results = results or {}


# ---------------------------------------------------------------- helpers

def _plain(obj):
    """JSON-safe copy: numpy to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _resolve_case(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    bundled = Path(__file__).parent / "cases" / f"{p.name}.m"
    if not p.suffix and bundled.exists():
        return bundled
    raise InputError(f"case not found: {arg}")


class Inputs:
    """Tracks every input file for the report digest."""

    def __init__(self):
        self.files = {}

    def add(self, label: str, path: Path):
        self.files[label] = {"path": str(path), "sha256": hashlib.sha256(path.read_bytes()).hexdigest()}

    def digest(self, options: dict) -> str:
        h = hashlib.sha256()
        for label in sorted(self.files):
            h.update(f"{label}={self.files[label]['sha256']};".encode())
        h.update(json.dumps(_plain(options), sort_keys=True).encode())
        return h.hexdigest()


def _case(args, inputs: Inputs):
    path = _resolve_case(args.case)
    inputs.add("case", path)
    return load_case(path)


def _measurements(path_arg, network, inputs: Inputs, label="measurements"):
    p = Path(path_arg)
    if not p.exists():
        raise InputError(f"measurement file not found: {path_arg}")
    inputs.add(label, p)
    if p.suffix == ".json":
        _, ms = snapshot_read(p)
        if ms is None:
            raise InputError(f"{path_arg} holds no measurements")
        return ms
    return read_measurements_csv(p, network)


def _bus_table(network, vm, va) -> list:
    return [{"bus": int(b), "vm": vm[i] if vm is not None else None, "va_deg": math.degrees(va[i])}
            for i, b in enumerate(network.bus_ids())]


def _format_table(rows: list, columns: list) -> str:
    if not rows:
        return ""
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.6g}"
        return "" if v is None else str(v)
    cells = [[fmt(r.get(c)) for c in columns] for r in rows]
    width = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, width))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, width)) for row in cells]
    return "\n".join(lines)


# ---------------------------------------------------------------- subcommands

def cmd_pf(args, inputs):
    net = _case(args, inputs)
    models = build_models(net)
    kw = {"tol": args.tol, "max_iter": args.max_iter, "flat": args.flat}
    kw = {k: v for k, v in kw.items() if v is not None}
    rep = solve_power_flow(net, models, args.method, PowerFlowState(), **kw)
    results = {"method": rep.method, "status": rep.status, "iterations": rep.iterations,
               "buses": _bus_table(net, rep.vm, rep.va),
               "branch_flows": [{"branch": k + 1, "p_from": f.real, "q_from": f.imag,
                                 "p_to": t.real, "q_to": t.imag}
                                for k, (f, t) in enumerate(zip(rep.flow_from, rep.flow_to))]
               if rep.flow_from is not None else []}
    logs = {"mismatch_trace": rep.mismatch_trace, "reuse": rep.reuse.as_dict(), "message": rep.message}
    if not rep.converged:
        raise AnalysisFailure(f"power flow {rep.status}: {rep.message}", {**results, "log": logs})
    return results, logs, _format_table(results["buses"], ["bus", "vm", "va_deg"])


def cmd_dcpf(args, inputs):
    net = _case(args, inputs)
    rep = solve_power_flow(net, build_models(net, ac=False), "dc")
    if not rep.converged:
        raise AnalysisFailure(rep.message, {"unreferenced_island": rep.unreferenced_island})
    results = {"status": rep.status, "buses": _bus_table(net, None, rep.theta),
               "branch_flows": [{"branch": k + 1, "p": float(p)} for k, p in enumerate(rep.flow_from)]}
    return results, {"reuse": rep.reuse.as_dict()}, _format_table(results["buses"], ["bus", "va_deg"])


def cmd_opf_dc(args, inputs):
    net = _case(args, inputs)
    try:
        rep = solve_dc_opf(net, build_models(net, ac=False).dc, args.segments or None)
    except DcOpfError as exc:
        raise InputError(str(exc)) from None
    if not rep.optimal:
        raise AnalysisFailure(f"DC OPF is {rep.status}", {"status": rep.status,
                                                           "violated_rows": rep.violated})
    results = {"status": rep.status, "objective": rep.objective,
               "dispatch": [{"generator": k + 1, "bus": g.bus, "p": rep.dispatch[k]}
                            for k, g in enumerate(net.generators)],
               "buses": [{"bus": int(b), "va_deg": math.degrees(rep.theta[i]), "price": rep.prices[i]}
                         for i, b in enumerate(net.bus_ids())],
               "branch_flows": [{"branch": k + 1, "p": float(p)} for k, p in enumerate(rep.flows)]}
    return results, {"iterations": rep.iterations}, _format_table(results["dispatch"], ["generator", "bus", "p"])


def _true_state(net, models, source):
    rep = solve_power_flow(net, models, "dc" if source == "dc" else "nr")
    if not rep.converged:
        raise AnalysisFailure(f"power flow for measurement generation {rep.status}")
    return (models.dc, rep.theta) if source == "dc" else (models.ac, rep.V)


def cmd_measure(args, inputs):
    net = _case(args, inputs)
    models = build_models(net)
    source = "dc" if args.model == "dc" else "ac"
    model, state = _true_state(net, models, source)
    pmus = list(args.pmu or [])
    if args.pmu_placement:
        pmus += [b for b in place_pmus(net).buses if b not in pmus]
    variances = {"legacy": args.legacy_variance, "phasor": args.phasor_variance}
    if args.model == "pmu":
        tpl = [e for b in (pmus or net.bus_ids().tolist())
               for e in pmu_entries(net, int(b), args.phasor_variance, args.coordinates)]
    else:
        tpl = default_template(net, args.p_injection, args.p_to_side, pmus, variances,
                               args.seed, args.coordinates, "dc" if args.model == "dc" else "ac")
    ms = generate_from_solution(net, model, state, tpl, args.seed, args.exact)
    if args.csv:
        write_measurements_csv(ms, args.csv)
    if args.snapshot:
        snapshot_write(args.snapshot, net, ms)
    counts = {}
    for m in ms:
        counts[m.kind] = counts.get(m.kind, 0) + 1
    results = {"count": len(ms), "by_kind": counts, "pmu_buses": pmus,
               "outputs": {"csv": args.csv, "snapshot": args.snapshot}}
    table = _format_table([{"kind": k, "count": v} for k, v in counts.items()], ["kind", "count"])
    return results, {}, table


def cmd_observe(args, inputs):
    net = _case(args, inputs)
    ms = _measurements(args.measurements, net, inputs)
    flow = find_flow_islands(net, ms)
    part = flow if args.islands == "flow" else find_maximal_islands(net, ms, flow)
    results = {"partition": part.as_dict(), "observable": part.observable}
    if args.pseudo:
        pseudo = _measurements(args.pseudo, net, inputs, "pseudo")
        rest = restore_observability(net, part, ms, pseudo, args.threshold)
        results["restoration"] = rest.as_dict()
        if not rest.observable:
            raise AnalysisFailure("pseudo-measurements cannot restore observability", results)
    rows = [{"island": i + 1, "buses": " ".join(map(str, isl))} for i, isl in enumerate(part.islands)]
    return results, {}, _format_table(rows, ["island", "buses"])


def cmd_pmu_place(args, inputs):
    net = _case(args, inputs)
    legacy = _measurements(args.legacy, net, inputs, "legacy") if args.legacy else None
    try:
        res = place_pmus(net, legacy, args.node_budget)
    except NodeBudgetExceeded as exc:
        raise AnalysisFailure(str(exc)) from None
    table = _format_table([{"pmu": i + 1, "bus": b} for i, b in enumerate(res.buses)], ["pmu", "bus"])
    return res.as_dict(), {"simplex_iterations": res.iterations,
                           "constraints": len(res.constraints)}, table


def _estimate(model, args):
    rep = model.solve(args.method, start="flat")
    if rep.status == "unobservable":
        raise AnalysisFailure(rep.message, {"status": rep.status, "unobservable": rep.unobservable})
    return rep


def _se_results(net, model, rep):
    vm = None if model.kind == "dc" else np.abs(rep.V)
    res = {"model": rep.model, "method": rep.method, "status": rep.status,
           "iterations": rep.iterations, "objective": rep.objective, "k": rep.k, "m": rep.m,
           "buses": _bus_table(net, vm, rep.theta),
           "residuals": [{"row": i, "measurement": mid, "residual": r}
                         for i, (mid, r) in enumerate(zip(rep.row_ids, rep.residuals))]}
    return res


def cmd_se(args, inputs):
    net = _case(args, inputs)
    ms = _measurements(args.measurements, net, inputs)
    models = build_models(net)
    model = EstimationModel(net, ms, args.model, models)
    rep = _estimate(model, args)
    results = _se_results(net, model, rep)
    logs = {"step_trace": rep.step_trace, "reuse": rep.reuse}
    if args.repeat > 1:
        # Monte Carlo: redraw the noise around the power-flow state, keep layout and variances
        src_model, state = _true_state(net, models, "dc" if args.model == "dc" else "ac")
        truth = state if args.model == "dc" else np.angle(state)
        errs = []
        for i in range(args.repeat):
            resample_values(ms, net, src_model, state, None if args.seed is None else args.seed + i)
            r = model.solve(args.method, start="flat")
            errs.append(float(np.max(np.abs(r.theta - truth))) if r.converged else None)
        results["repeat"] = {"runs": args.repeat, "max_angle_error": errs}
    if not rep.converged:
        raise AnalysisFailure(f"estimation {rep.status}", {**results, "log": logs})
    table = _format_table(results["buses"], ["bus", "vm", "va_deg"])
    return results, logs, table


def cmd_baddata(args, inputs):
    net = _case(args, inputs)
    ms = _measurements(args.measurements, net, inputs)
    model = EstimationModel(net, ms, args.model)
    rep = _estimate(model, args)
    bd = analyze_bad_data(model, rep, args.threshold, args.confidence, args.method, args.force)
    chi = bd.chi_squared
    results = {"verdict": bd.verdict, "passed": bd.passed,
               "chi_squared": None if chi is None else vars(chi),
               "final_chi_squared": None if bd.final_chi_squared is None else vars(bd.final_chi_squared),
               "removals": [r.as_dict() for r in bd.removals], "critical": bd.critical,
               "largest_normalized_residual": bd.largest, "message": bd.message}
    if bd.estimate is not None and bd.estimate.x is not None:
        results["estimate"] = _se_results(net, model, bd.estimate)
    if bd.verdict in ("unobservable", "estimator_failed"):
        raise AnalysisFailure(bd.message or bd.verdict, results)
    table = _format_table([r.as_dict() for r in bd.removals],
                          ["pass", "measurement", "residual", "normalized_residual"])
    return results, {}, table


def cmd_qss(args, inputs):
    net = _case(args, inputs)
    ms = _measurements(args.measurements, net, inputs) if args.measurements else None
    sp = Path(args.script)
    if not sp.exists():
        raise InputError(f"script not found: {args.script}")
    inputs.add("script", sp)
    try:
        steps = run_script(net, ms, sp)
    except StepError as exc:
        raise AnalysisFailure(str(exc), {"failed_step": exc.step}) from None
    out = []
    failed = False
    for st in steps:
        d = st.as_dict()
        for a, rec in zip(d["analyses"], st.analyses):
            rep = rec.result
            if rec.run == "pf":
                a["buses"] = _bus_table(net, rep.vm, rep.va) if rep.va is not None else []
            elif rec.run == "se" and rep.x is not None:
                a["buses"] = _bus_table(net, None if rep.V is None else np.abs(rep.V), rep.theta)
            failed |= rec.status not in ("converged", "done", "optimal", "clean", "removed")
        out.append(d)
    results = {"steps": out}
    if failed:
        raise AnalysisFailure("at least one analysis did not succeed", results)
    rows = [{"step": s["step"], "run": a["run"], "status": a["status"], "iterations": a["iterations"]}
            for s in out for a in s["analyses"]]
    return results, {}, _format_table(rows, ["step", "run", "status", "iterations"])


def cmd_convert(args, inputs):
    net = _case(args, inputs)
    ms = _measurements(args.measurements, net, inputs) if args.measurements else None
    snapshot_write(args.output, net, ms)
    return {"output": args.output, "buses": net.n_bus, "branches": len(net.branches),
            "generators": len(net.generators),
            "measurements": None if ms is None else len(ms)}, {}, ""


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--report", help="write the JSON report here instead of standard output")
    common.add_argument("--table", action="store_true", help="print a plain-text table")
    common.add_argument("--seed", type=int, default=None, help="random seed")

    p = argparse.ArgumentParser(prog="gridstate", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, helptext):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        sp.set_defaults(func=func)
        sp.add_argument("case", help="MATPOWER file, bundled case name or JSON snapshot")
        return sp

    sp = add("pf", cmd_pf, "AC power flow")
    sp.add_argument("--method", choices=["nr", "fdxb", "fdbx", "gs"], default="nr")
    sp.add_argument("--flat", action="store_true", help="flat start instead of the case voltages")
    sp.add_argument("--tol", type=float)
    sp.add_argument("--max-iter", type=int)

    add("dcpf", cmd_dcpf, "DC power flow")

    sp = add("opf-dc", cmd_opf_dc, "DC optimal power flow")
    sp.add_argument("--segments", type=int, default=8,
                    help="segments for piecewise-linearizing polynomial costs (0 rejects them)")

    sp = add("measure", cmd_measure, "generate measurements from a power-flow solution")
    sp.add_argument("--model", choices=["ac", "pmu", "dc"], default="ac")
    sp.add_argument("--csv", help="measurement CSV output")
    sp.add_argument("--snapshot", help="JSON snapshot output (network and measurements)")
    sp.add_argument("--pmu", type=int, action="append", help="bus with a PMU (repeatable)")
    sp.add_argument("--pmu-placement", action="store_true", help="add PMUs at an optimal placement")
    sp.add_argument("--p-injection", type=float, default=0.5)
    sp.add_argument("--p-to-side", type=float, default=0.5)
    sp.add_argument("--coordinates", choices=["rect", "polar"], default="rect")
    sp.add_argument("--legacy-variance", type=float, default=1e-4)
    sp.add_argument("--phasor-variance", type=float, default=1e-6)
    sp.add_argument("--exact", action="store_true", help="no noise")

    sp = add("observe", cmd_observe, "observable islands and restoration")
    sp.add_argument("measurements")
    sp.add_argument("--islands", choices=["flow", "maximal"], default="maximal")
    sp.add_argument("--pseudo", help="pseudo-measurement candidates")
    sp.add_argument("--threshold", type=float, default=1e-5)

    sp = add("pmu-place", cmd_pmu_place, "optimal PMU placement")
    sp.add_argument("--legacy", help="legacy measurements to take into account")
    sp.add_argument("--node-budget", type=int, default=100_000)

    for name, func, helptext in (("se", cmd_se, "state estimation"),
                                 ("baddata", cmd_baddata, "chi-squared test and LNR removal")):
        sp = add(name, func, helptext)
        sp.add_argument("measurements")
        sp.add_argument("--model", choices=["ac", "pmu", "dc"], default="ac")
        sp.add_argument("--method", choices=list(METHODS) if name == "se" else ["wls"],
                        default="wls")
    sub.choices["se"].add_argument("--repeat", type=int, default=1,
                                   help="Monte Carlo runs with redrawn noise")
    bd = sub.choices["baddata"]
    bd.add_argument("--threshold", type=float, default=3.0)
    bd.add_argument("--confidence", type=float, default=0.95)
    bd.add_argument("--force", action="store_true", help="run LNR even if chi-squared passes")

    sp = add("qss", cmd_qss, "quasi-steady-state script")
    sp.add_argument("measurements", nargs="?")
    sp.add_argument("--script", required=True)

    sp = add("convert", cmd_convert, "MATPOWER case to JSON snapshot")
    sp.add_argument("measurements", nargs="?")
    sp.add_argument("--output", "-o", required=True)
    return p


def _configure_logging():
    level = os.environ.get("GRIDSTATE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)  # usage errors exit with status 2
    options = {k: v for k, v in vars(args).items() if k not in ("func", "report", "table")}
    inputs = Inputs()
    report = {"schema_version": REPORT_SCHEMA_VERSION, "command": args.command,
              "version": __version__,
              "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
              "options": options, "results": {}, "log": {}, "error": None}
    table = ""
    code = 0
    try:
        results, logs, table = args.func(args, inputs)
        report.update(status="ok", results=results, log=logs)
    except AnalysisFailure as exc:
        code = 1
        report.update(status="failed", results=exc.results,
                      error={"type": "analysis", "message": str(exc)})
    except (InputError, CaseFormatError, MeasurementError, NetworkError, ScriptError,
            FileNotFoundError, IsADirectoryError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        code = 2
        report.update(status="error", error={"type": "input", "message": str(exc),
                                             "exception": type(exc).__name__})
    except (EstimationError, ArithmeticError, np.linalg.LinAlgError) as exc:
        code = 1
        report.update(status="failed", error={"type": "analysis", "message": str(exc),
                                              "exception": type(exc).__name__})
    except Exception as exc:  # structured report for anything unexpected
        log.exception("unexpected failure")
        code = 1
        report.update(status="failed", error={"type": "internal", "message": str(exc),
                                              "exception": type(exc).__name__})
    report["inputs"] = {"files": inputs.files, "digest": inputs.digest(options)}
    text = json.dumps(_plain(report), indent=1, sort_keys=True, allow_nan=False) + "\n"
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.table and table:
        (sys.stdout if args.report else sys.stderr).write(table + "\n")
    if code == 2:
        sys.stderr.write(f"gridstate {args.command}: {report['error']['message']}\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
