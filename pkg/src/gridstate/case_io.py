"""MATPOWER case parsing, JSON snapshots and the measurement CSV format.

Only a numeric subset of MATPOWER syntax is accepted: the ``function``
header, scalar assignments such as ``mpc.baseMVA = 100;`` and bracketed
numeric matrices. Anything else (cell arrays, strings other than the version
tag, expressions) is rejected with its line number.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .measurements import Measurement, MeasurementError, MeasurementSet
from .network import SLACK, PQ, PV, Branch, Bus, CostCurve, Generator, Network

SCHEMA_VERSION = 1
MIN_COLUMNS = {"bus": 13, "branch": 13, "gen": 10}
BUS_TYPES = {1: PQ, 2: PV, 3: SLACK}
CSV_HEADER = ["id", "kind", "element", "side", "value", "variance", "status", "coordinates"]


class CaseFormatError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class CaseFile:
    name: str
    base_mva: float
    tables: dict = field(default_factory=dict)  # name -> 2-D array
    scalars: dict = field(default_factory=dict)

    @property
    def bus(self):
        return self.tables["bus"]

    @property
    def gen(self):
        return self.tables["gen"]

    @property
    def branch(self):
        return self.tables["branch"]

    @property
    def gencost(self):
        return self.tables.get("gencost")


_FUNC = re.compile(r"^function\s+(\w+)\s*=\s*(\w+)\s*$")
_ASSIGN = re.compile(r"^(\w+)\.(\w+)\s*=\s*(.*)$")
_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$|^[+-]?(Inf|inf|NaN|nan)$")


def _strip_comment(line: str) -> str:
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


def _parse_number(tok: str, lineno: int) -> float:
    if not _NUMBER.match(tok):
        raise CaseFormatError(f"non-numeric token {tok!r}", lineno)
    return float(tok)


def parse_matpower(text: str) -> CaseFile:
    """Parse the MATPOWER subset into numeric tables."""
    name, struct = "", None
    tables, scalars = {}, {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        lineno = i + 1
        line = _strip_comment(lines[i]).strip()
        i += 1
        if not line:
            continue
        m = _FUNC.match(line)
        if m:
            struct, name = m.group(1), m.group(2)
            continue
        m = _ASSIGN.match(line)
        if not m or (struct is not None and m.group(1) != struct):
            raise CaseFormatError(f"unsupported statement {line!r}", lineno)
        field_name, rhs = m.group(2), m.group(3).strip()
        if rhs.startswith("["):
            body = rhs[1:]
            rows, current, start = [], [], lineno
            while True:
                end = body.find("]")
                chunk = body if end < 0 else body[:end]
                for part_no, part in enumerate(chunk.split(";")):
                    if part_no > 0 and current:
                        rows.append((current, lineno))
                        current = []
                    toks = part.replace(",", " ").split()
                    current += [_parse_number(t, lineno) for t in toks]
                if end >= 0:
                    tail = body[end + 1:].strip()
                    if tail not in ("", ";"):
                        raise CaseFormatError(f"unexpected text after matrix: {tail!r}", lineno)
                    break
                # newline ends a row
                if current:
                    rows.append((current, lineno))
                    current = []
                if i >= len(lines):
                    raise CaseFormatError(f"unterminated matrix mpc.{field_name}", start)
                lineno = i + 1
                body = _strip_comment(lines[i])
                i += 1
            if current:
                rows.append((current, lineno))
            widths = {len(r) for r, _ in rows}
            if len(widths) > 1:
                bad = next(ln for r, ln in rows if len(r) != len(rows[0][0]))
                raise CaseFormatError(f"ragged rows in mpc.{field_name}", bad)
            tables[field_name] = np.array([r for r, _ in rows], dtype=float).reshape(len(rows), -1)
        elif rhs.startswith("'") or rhs.startswith('"'):
            if field_name != "version":
                raise CaseFormatError(f"string field mpc.{field_name} is not supported", lineno)
            scalars[field_name] = rhs.rstrip(";").strip().strip("'\"")
        else:
            scalars[field_name] = _parse_number(rhs.rstrip(";").strip(), lineno)
    if "baseMVA" not in scalars:
        raise CaseFormatError("missing required field mpc.baseMVA")
    if not scalars["baseMVA"] > 0:
        raise CaseFormatError("baseMVA must be positive")
    for req, cols in MIN_COLUMNS.items():
        if req not in tables:
            raise CaseFormatError(f"missing required table mpc.{req}")
        if tables[req].shape[0] and tables[req].shape[1] < cols:
            raise CaseFormatError(f"mpc.{req} needs at least {cols} columns, found {tables[req].shape[1]}")
    base = scalars.pop("baseMVA")
    return CaseFile(name, base, tables, scalars)


def read_case(path) -> CaseFile:
    return parse_matpower(Path(path).read_text(encoding="utf-8"))


def _cost_from_row(row, base_mva) -> CostCurve:
    model, n = int(row[0]), int(row[3])
    params = row[4:]
    if model == 1:
        if len(params) < 2 * n:
            raise CaseFormatError("gencost row is shorter than its breakpoint count")
        pts = [(params[2 * k] / base_mva, params[2 * k + 1]) for k in range(n)]
        return CostCurve("piecewise_linear", points=pts)
    if model == 2:
        if len(params) < n:
            raise CaseFormatError("gencost row is shorter than its coefficient count")
        # c_k P_MW^k with P_MW = base * p
        coeffs = [c * base_mva ** (n - 1 - k) for k, c in enumerate(params[:n])]
        return CostCurve("polynomial", coefficients=coeffs)
    raise CaseFormatError(f"unknown gencost model {model}")


def to_network(case: CaseFile) -> Network:
    """Convert MATPOWER units (MW, MVAr, degrees) to per-unit and radians."""
    base = case.base_mva
    buses = []
    for row in case.bus:
        code = int(row[1])
        if code not in BUS_TYPES:
            raise CaseFormatError(f"bus {int(row[0])}: unsupported bus type {code}")
        buses.append(Bus(
            id=int(row[0]), kind=BUS_TYPES[code], vm_init=float(row[7]),
            va_init=math.radians(row[8]), p_load=row[2] / base, q_load=row[3] / base,
            g_shunt=row[4] / base, b_shunt=row[5] / base,
            base_kv=float(row[9]) if row[9] > 0 else None))
    branches = []
    for row in case.branch:
        branches.append(Branch(
            from_bus=int(row[0]), to_bus=int(row[1]), r=float(row[2]), x=float(row[3]),
            g_shunt=0.0, b_shunt=float(row[4]), ratio=float(row[8]) if row[8] != 0 else 1.0,
            shift=math.radians(row[9]), in_service=bool(row[10]), rate=row[5] / base))
    costs = case.gencost
    gens = []
    for k, row in enumerate(case.gen):
        cost = _cost_from_row(costs[k], base) if costs is not None and k < len(costs) else None
        gens.append(Generator(
            bus=int(row[0]), p_output=row[1] / base, q_output=row[2] / base,
            q_max=row[3] / base, q_min=row[4] / base, v_setpoint=float(row[5]),
            in_service=bool(row[7] > 0), p_max=row[8] / base, p_min=row[9] / base, cost=cost))
    net = Network(base, buses, branches, gens, case.name)
    net.validate()
    return net


def load_case(path) -> Network:
    """Read a MATPOWER file, or one of the bundled cases by name (e.g. "case14")."""
    p = Path(path)
    if not p.exists() and not p.suffix:
        bundled = Path(__file__).parent / "cases" / f"{p.name}.m"
        if bundled.exists():
            p = bundled
    if p.suffix == ".json":
        return snapshot_read(p)[0]
    return to_network(read_case(p))


def bundled_cases() -> list:
    return sorted(p.stem for p in (Path(__file__).parent / "cases").glob("*.m"))


# --------------------------------------------------------------------------
# JSON snapshot


def _enc(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def _dec(x):
    return float(x) if isinstance(x, str) and x in ("inf", "-inf", "nan") else x


def _plain(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return _enc(float(v))
    return v


def _record(obj) -> dict:
    return {k: _plain(v) for k, v in vars(obj).items()}


def network_to_dict(net: Network) -> dict:
    def gen_dict(g):
        d = _record(g)
        d["cost"] = None if g.cost is None else {
            "kind": g.cost.kind, "coefficients": list(g.cost.coefficients),
            "points": [list(p) for p in g.cost.points]}
        return d
    return {"name": net.name, "base_mva": net.base_mva,
            "buses": [_record(b) for b in net.buses],
            "branches": [_record(b) for b in net.branches],
            "generators": [gen_dict(g) for g in net.generators]}


def network_from_dict(d: dict) -> Network:
    def dec(rec):
        return {k: _dec(v) for k, v in rec.items()}
    gens = []
    for g in d["generators"]:
        g = dec(g)
        c = g.pop("cost")
        g["cost"] = None if c is None else CostCurve(
            c["kind"], coefficients=c["coefficients"], points=[tuple(p) for p in c["points"]])
        gens.append(Generator(**g))
    net = Network(d["base_mva"], [Bus(**dec(b)) for b in d["buses"]],
                  [Branch(**dec(b)) for b in d["branches"]], gens, d.get("name", ""))
    net.validate()
    return net


def measurements_to_list(mset: MeasurementSet) -> list:
    return [dict(vars(m)) for m in mset.measurements]


def snapshot_write(path, network: Network | None = None, measurements: MeasurementSet | None = None):
    """Write a versioned JSON snapshot; floats use shortest round-trip repr."""
    doc = {"schema_version": SCHEMA_VERSION}
    if network is not None:
        doc["network"] = network_to_dict(network)
    if measurements is not None:
        doc["measurements"] = {"seed": measurements.seed,
                               "items": measurements_to_list(measurements)}
    Path(path).write_text(json.dumps(doc, indent=1, allow_nan=False) + "\n", encoding="utf-8")


def snapshot_read(path):
    """Return (network or None, measurements or None)."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"malformed snapshot: {exc}") from None
    if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
        raise CaseFormatError(f"unsupported snapshot schema_version {doc.get('schema_version') if isinstance(doc, dict) else None!r}")
    try:
        net = network_from_dict(doc["network"]) if "network" in doc else None
        meas = None
        if "measurements" in doc:
            m = doc["measurements"]
            meas = MeasurementSet([Measurement(**r) for r in m["items"]], m.get("seed"))
    except (KeyError, TypeError) as exc:
        raise CaseFormatError(f"malformed snapshot: {exc}") from None
    return net, meas


# --------------------------------------------------------------------------
# measurement CSV


def write_measurements_csv(mset: MeasurementSet, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for m in mset.measurements:
            w.writerow([m.id, m.kind, m.element, m.side, repr(float(m.value)),
                        repr(float(m.variance)), m.status, m.coordinates])


def read_measurements_csv(path, network: Network | None = None) -> MeasurementSet:
    """Read the measurement CSV; element references are checked against ``network``."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise CaseFormatError(f"measurement CSV header must be {','.join(CSV_HEADER)}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise CaseFormatError(f"expected {len(CSV_HEADER)} fields", lineno)
            try:
                m = Measurement(row[0], row[1], int(row[2]), row[3], float(row[4]),
                                float(row[5]), int(row[6]), row[7])
            except (ValueError, MeasurementError) as exc:
                raise CaseFormatError(str(exc), lineno) from None
            if network is not None:
                _check_reference(m, network, lineno)
            out.append(m)
    try:
        return MeasurementSet(out)
    except MeasurementError as exc:
        raise CaseFormatError(str(exc)) from None


def _check_reference(m: Measurement, network: Network, lineno: int) -> None:
    if m.on_branch:
        ok = 1 <= m.element <= len(network.branches)
    else:
        ok = m.element in network.bus_index()
    if not ok:
        raise CaseFormatError(f"{m.id}: dangling element reference {m.element}", lineno)


def check_references(mset: MeasurementSet, network: Network) -> None:
    for m in mset.measurements:
        _check_reference(m, network, None)
