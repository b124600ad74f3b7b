"""Bus/branch network data and the AC/DC matrix models built from it.

Every branch follows the unified pi model: a series admittance y = 1/(r + jx),
a total shunt admittance ys = g + jb split half per side, and a complex ratio
alpha = exp(-j*phi)/tau on the from side. Matrices are assembled once on a
fixed sparsity pattern covering every branch, including out-of-service ones,
so status toggles and parameter changes are numeric patches.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np
import scipy.sparse as sp

SLACK, PQ, PV = "slack", "pq", "pv"
BUS_KINDS = (SLACK, PQ, PV)


class NetworkError(ValueError):
    """Invalid network data."""


@dataclass
class Bus:
    id: int
    kind: str = PQ
    vm_init: float = 1.0
    va_init: float = 0.0  # radians
    p_load: float = 0.0  # per-unit
    q_load: float = 0.0
    g_shunt: float = 0.0
    b_shunt: float = 0.0
    base_kv: float | None = None


@dataclass
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    g_shunt: float = 0.0  # total, split half per side
    b_shunt: float = 0.0
    ratio: float = 1.0
    shift: float = 0.0  # radians
    in_service: bool = True
    rate: float = 0.0  # per-unit flow limit, 0 means unlimited

    @property
    def series_admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)

    @property
    def complex_ratio(self) -> complex:
        """alpha = exp(-j*phi) / tau."""
        return complex(math.cos(self.shift), -math.sin(self.shift)) / self.ratio


@dataclass
class CostCurve:
    """Generator cost in currency/hour as a function of output in per-unit.

    ``polynomial``: coefficients, highest order first.
    ``piecewise_linear``: (power, cost) breakpoints.
    """

    kind: str
    coefficients: tuple = ()
    points: tuple = ()

    def __post_init__(self):
        self.coefficients = tuple(float(c) for c in self.coefficients)
        self.points = tuple((float(p), float(c)) for p, c in self.points)
        if self.kind not in ("polynomial", "piecewise_linear"):
            raise NetworkError(f"unknown cost curve kind {self.kind!r}")
        if self.kind == "piecewise_linear":
            if len(self.points) < 2:
                raise NetworkError("piecewise-linear cost needs at least two breakpoints")
            p = np.array([q[0] for q in self.points])
            c = np.array([q[1] for q in self.points])
            if np.any(np.diff(p) <= 0):
                raise NetworkError("piecewise-linear breakpoints must be strictly increasing")
            slopes = np.diff(c) / np.diff(p)
            if np.any(np.diff(slopes) < -1e-12 * np.maximum(1.0, np.abs(slopes[1:]))):
                raise NetworkError("piecewise-linear cost must be convex")

    @property
    def degree(self) -> int:
        nz = [i for i, c in enumerate(self.coefficients) if c != 0.0]
        return len(self.coefficients) - 1 - nz[0] if nz else 0

    def evaluate(self, p):
        p = np.asarray(p, dtype=float)
        if self.kind == "polynomial":
            return np.polyval(self.coefficients, p) if self.coefficients else np.zeros_like(p)
        pts = np.array(self.points)
        slopes = np.diff(pts[:, 1]) / np.diff(pts[:, 0])
        # convex: max over the extended segments
        segs = pts[:-1, 1][:, None] + slopes[:, None] * (p[None, ...] - pts[:-1, 0][:, None])
        return segs.max(axis=0)

    def linearized(self, pmin: float, pmax: float, segments: int = 8) -> "CostCurve":
        """Convex piecewise-linear interpolation of a polynomial cost."""
        if self.kind == "piecewise_linear" or self.degree <= 1:
            return self
        if self.degree > 2 or self.coefficients[-3] < 0:
            raise NetworkError("only convex quadratic costs can be linearized")
        if not (np.isfinite(pmin) and np.isfinite(pmax)) or pmax <= pmin:
            raise NetworkError("linearization needs finite generator limits")
        p = np.linspace(pmin, pmax, segments + 1)
        return CostCurve("piecewise_linear", points=tuple(zip(p, self.evaluate(p))))


@dataclass
class Generator:
    bus: int
    p_output: float = 0.0
    q_output: float = 0.0
    p_min: float = 0.0
    p_max: float = math.inf
    q_min: float = -math.inf
    q_max: float = math.inf
    v_setpoint: float = 1.0
    cost: CostCurve | None = None
    in_service: bool = True


@dataclass
class Network:
    base_mva: float
    buses: list
    branches: list
    generators: list = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        self.injection_version = 0

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus_index(self) -> dict:
        """Bus id -> position."""
        return {b.id: i for i, b in enumerate(self.buses)}

    def bus_ids(self) -> np.ndarray:
        return np.array([b.id for b in self.buses], dtype=int)

    def branch_ends(self) -> tuple[np.ndarray, np.ndarray]:
        idx = self.bus_index()
        f = np.array([idx[br.from_bus] for br in self.branches], dtype=int)
        t = np.array([idx[br.to_bus] for br in self.branches], dtype=int)
        return f, t

    @property
    def slack(self) -> int:
        """Position of the slack bus."""
        slacks = [i for i, b in enumerate(self.buses) if b.kind == SLACK]
        if len(slacks) != 1:
            raise NetworkError(f"expected exactly one slack bus, found {len(slacks)}")
        return slacks[0]

    def validate(self) -> None:
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise NetworkError("bus ids must be unique")
        if self.base_mva <= 0:
            raise NetworkError("base MVA must be positive")
        for b in self.buses:
            if b.kind not in BUS_KINDS:
                raise NetworkError(f"bus {b.id}: unknown kind {b.kind!r}")
            if b.base_kv is not None and b.base_kv <= 0:
                raise NetworkError(f"bus {b.id}: base kV must be positive")
        _ = self.slack
        known = set(ids)
        for k, br in enumerate(self.branches, start=1):
            if br.from_bus not in known or br.to_bus not in known:
                raise NetworkError(f"branch {k} references an unknown bus")
            if br.ratio == 0:
                raise NetworkError(f"branch {k}: turns ratio is zero")
            if br.r == 0 and br.x == 0:
                raise NetworkError(f"branch {k}: zero series impedance")
            if br.from_bus == br.to_bus:
                raise NetworkError(f"branch {k}: both ends on bus {br.from_bus}")
        for k, g in enumerate(self.generators, start=1):
            if g.bus not in known:
                raise NetworkError(f"generator {k} references unknown bus {g.bus}")

    def specified_injections(self) -> tuple[np.ndarray, np.ndarray]:
        """Net scheduled injections (generation minus load) per bus, per-unit."""
        idx = self.bus_index()
        p = -np.array([b.p_load for b in self.buses])
        q = -np.array([b.q_load for b in self.buses])
        for g in self.generators:
            if g.in_service:
                p[idx[g.bus]] += g.p_output
                q[idx[g.bus]] += g.q_output
        return p, q

    def voltage_targets(self) -> np.ndarray:
        """Initial magnitudes with generator setpoints applied at PV and slack buses."""
        idx = self.bus_index()
        vm = np.array([b.vm_init for b in self.buses])
        for g in self.generators:
            i = idx[g.bus]
            if g.in_service and self.buses[i].kind != PQ:
                vm[i] = g.v_setpoint
        return vm

    def copy(self) -> "Network":
        return copy.deepcopy(self)


def impedance_to_per_unit(r_ohm, x_ohm, g_siemens, b_siemens, base_mva, base_kv_secondary):
    """Convert ohms/siemens to per-unit on the secondary-side base voltage."""
    if base_mva <= 0 or base_kv_secondary <= 0:
        raise ValueError("base values must be positive")
    z_base = base_kv_secondary ** 2 / base_mva
    return r_ohm / z_base, x_ohm / z_base, g_siemens * z_base, b_siemens * z_base


# --------------------------------------------------------------------------
# matrix models


def branch_block(br: Branch) -> tuple[complex, complex, complex, complex]:
    """(Y_ff, Y_ft, Y_tf, Y_tt) of the unified branch model; zero when out of service."""
    if not br.in_service:
        return 0j, 0j, 0j, 0j
    y = br.series_admittance
    ys = complex(br.g_shunt, br.b_shunt) / 2.0
    a = br.complex_ratio
    yff = (y + ys) * abs(a) ** 2
    return yff, -a.conjugate() * y, -a * y, y + ys


def dc_branch_terms(br: Branch) -> tuple[float, float]:
    """Susceptance 1/(tau x) and the shift injection phi/(tau x)."""
    if not br.in_service:
        return 0.0, 0.0
    b = 1.0 / (br.ratio * br.x)
    return b, br.shift * b


@dataclass
class BranchPattern:
    """Symmetric nodal pattern with per-branch slots.

    ``slots[k]`` holds the storage positions of (ff, ft, tf, tt) for branch k.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    diag: np.ndarray
    slots: np.ndarray

    @classmethod
    def build(cls, n, f, t):
        rows = np.concatenate([np.arange(n), f, t])
        cols = np.concatenate([np.arange(n), t, f])
        P = sp.csc_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        P.sum_duplicates()
        P.sort_indices()
        pat = cls(n, P.indptr.astype(np.int64), P.indices.astype(np.int64), None, None)
        pat.diag = pat.positions(np.arange(n), np.arange(n))
        pat.slots = np.column_stack([pat.positions(f, f), pat.positions(f, t),
                                     pat.positions(t, f), pat.positions(t, t)]) \
            if len(f) else np.zeros((0, 4), dtype=np.int64)
        return pat

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def positions(self, rows, cols) -> np.ndarray:
        # storage is sorted by (column, row), so global keys are sorted too
        keys = np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.indptr)) * self.n + self.indices
        want = np.asarray(cols, dtype=np.int64) * self.n + np.asarray(rows, dtype=np.int64)
        pos = np.minimum(np.searchsorted(keys, want), max(len(keys) - 1, 0))
        return np.where(keys[pos] == want, pos, -1) if len(keys) else np.full(len(want), -1)

    def has_slot(self, i, j) -> bool:
        return self.positions([i], [j])[0] >= 0

    def matrix(self, values) -> sp.csc_matrix:
        return sp.csc_matrix((values, self.indices, self.indptr), shape=(self.n, self.n))


@dataclass
class AcModel:
    """Nodal admittance matrix on a fixed pattern plus per-branch blocks."""

    pattern: BranchPattern
    values: np.ndarray  # complex, aligned with pattern storage
    blocks: np.ndarray  # (n_branch, 4) complex
    shunts: np.ndarray  # per-bus g + jb
    from_idx: np.ndarray
    to_idx: np.ndarray
    values_version: int = 0
    pattern_version: int = 0

    @property
    def Y(self) -> sp.csc_matrix:
        return self.pattern.matrix(self.values)

    def branch_currents(self, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Currents injected into each branch at its from and to ends."""
        Vf, Vt = V[self.from_idx], V[self.to_idx]
        b = self.blocks
        return b[:, 0] * Vf + b[:, 1] * Vt, b[:, 2] * Vf + b[:, 3] * Vt

    def branch_powers(self, V) -> tuple[np.ndarray, np.ndarray]:
        If, It = self.branch_currents(V)
        return V[self.from_idx] * If.conj(), V[self.to_idx] * It.conj()

    def injections(self, V) -> np.ndarray:
        return V * (self.Y @ V).conj()


@dataclass
class DcModel:
    """B matrix on a fixed pattern, shift injections and shunt constants."""

    pattern: BranchPattern
    values: np.ndarray
    susceptance: np.ndarray  # per-branch 1/(tau x)
    shift_flow: np.ndarray  # per-branch phi/(tau x)
    shunt_p: np.ndarray  # per-bus active shunt consumption
    from_idx: np.ndarray
    to_idx: np.ndarray
    values_version: int = 0
    pattern_version: int = 0
    constants_version: int = 0

    @property
    def B(self) -> sp.csc_matrix:
        return self.pattern.matrix(self.values)

    @property
    def shift_injection(self) -> np.ndarray:
        """Per-bus injection from phase shifters at zero angles."""
        n = self.pattern.n
        return (np.bincount(self.from_idx, -self.shift_flow, n)
                + np.bincount(self.to_idx, self.shift_flow, n))

    @property
    def constant_injection(self) -> np.ndarray:
        """c in P = B theta + c."""
        return self.shift_injection + self.shunt_p

    def branch_flows(self, theta) -> np.ndarray:
        """From-side active flow (to-side is its negative)."""
        return self.susceptance * (theta[self.from_idx] - theta[self.to_idx]) - self.shift_flow

    def injections(self, theta) -> np.ndarray:
        return self.B @ theta + self.constant_injection


def build_ac_model(network: Network, pattern: BranchPattern | None = None) -> AcModel:
    network.validate()
    f, t = network.branch_ends()
    pat = pattern or BranchPattern.build(network.n_bus, f, t)
    blocks = np.array([branch_block(br) for br in network.branches], dtype=complex).reshape(-1, 4)
    shunts = np.array([complex(b.g_shunt, b.b_shunt) for b in network.buses])
    values = np.zeros(pat.nnz, dtype=complex)
    np.add.at(values, pat.diag, shunts)
    for c in range(4):
        np.add.at(values, pat.slots[:, c], blocks[:, c])
    return AcModel(pat, values, blocks, shunts, f, t)


def build_dc_model(network: Network, pattern: BranchPattern | None = None) -> DcModel:
    network.validate()
    for k, br in enumerate(network.branches, start=1):
        if br.in_service and br.x == 0:
            raise NetworkError(f"branch {k}: zero reactance in service")
    f, t = network.branch_ends()
    pat = pattern or BranchPattern.build(network.n_bus, f, t)
    terms = np.array([dc_branch_terms(br) for br in network.branches], dtype=float).reshape(-1, 2)
    values = np.zeros(pat.nnz)
    _add_dc_blocks(values, pat.slots, terms[:, 0])
    shunt_p = np.array([b.g_shunt for b in network.buses])
    return DcModel(pat, values, terms[:, 0], terms[:, 1], shunt_p, f, t)


def _add_dc_blocks(values, slots, b, sign=1.0):
    b = sign * np.asarray(b)
    np.add.at(values, slots[:, 0], b)
    np.add.at(values, slots[:, 1], -b)
    np.add.at(values, slots[:, 2], -b)
    np.add.at(values, slots[:, 3], b)


# --------------------------------------------------------------------------
# incremental updates


@dataclass
class Change:
    """One edit to a network element.

    ``element`` is "bus", "branch" or "generator". Buses are addressed by id,
    branches and generators by their 1-based number. ``add=True`` appends a
    new branch or generator built from ``values``.
    """

    element: str
    label: int | None
    values: dict
    add: bool = False


@dataclass
class UpdateEffect:
    values_dirty: bool = False
    pattern_dirty: bool = False
    injections_dirty: bool = False
    voltages_dirty: bool = False


@dataclass
class ModelHandles:
    ac: AcModel | None = None
    dc: DcModel | None = None


_BRANCH_FIELDS = {f.name for f in fields(Branch)}
_BUS_FIELDS = {f.name for f in fields(Bus)} - {"id"}
_GEN_FIELDS = {f.name for f in fields(Generator)}
_MATRIX_BUS_FIELDS = {"g_shunt", "b_shunt"}


def _check_fields(values, allowed, what):
    bad = set(values) - allowed
    if bad:
        raise NetworkError(f"unknown {what} field(s): {sorted(bad)}")


def update_component(network: Network, models: ModelHandles, change: Change) -> UpdateEffect:
    """Apply a change and patch the matrix models in place.

    Old branch contributions are subtracted and new ones added on the
    existing pattern. A new branch without a pattern slot forces a rebuild
    and sets the pattern-dirty flag.
    """
    effect = UpdateEffect()
    if change.element == "bus":
        _check_fields(change.values, _BUS_FIELDS, "bus")
        idx = network.bus_index()
        if change.label not in idx:
            raise NetworkError(f"unknown bus {change.label}")
        i = idx[change.label]
        bus = network.buses[i]
        old = replace(bus)
        for k, v in change.values.items():
            setattr(bus, k, v)
        if "kind" in change.values:
            try:
                network.validate()
            except NetworkError:
                network.buses[i] = old
                raise
        if set(change.values) & _MATRIX_BUS_FIELDS:
            if models.ac is not None:
                y_new = complex(bus.g_shunt, bus.b_shunt)
                models.ac.values[models.ac.pattern.diag[i]] += y_new - models.ac.shunts[i]
                models.ac.shunts[i] = y_new
                models.ac.values_version += 1
            if models.dc is not None and bus.g_shunt != old.g_shunt:
                models.dc.shunt_p[i] = bus.g_shunt
                models.dc.constants_version += 1
            effect.values_dirty = True
        if set(change.values) & {"p_load", "q_load"}:
            effect.injections_dirty = True
            network.injection_version += 1
        if set(change.values) & {"vm_init", "va_init", "kind"}:
            effect.voltages_dirty = True
        return effect

    if change.element == "generator":
        _check_fields(change.values, _GEN_FIELDS, "generator")
        if change.add:
            gen = Generator(**change.values)
            if gen.bus not in network.bus_index():
                raise NetworkError(f"generator references unknown bus {gen.bus}")
            network.generators.append(gen)
        else:
            k = _position(change.label, len(network.generators), "generator")
            for name, v in change.values.items():
                setattr(network.generators[k], name, v)
        effect.injections_dirty = True
        effect.voltages_dirty = bool(set(change.values) & {"v_setpoint", "in_service"}) or change.add
        network.injection_version += 1
        return effect

    if change.element != "branch":
        raise NetworkError(f"unknown element type {change.element!r}")
    _check_fields(change.values, _BRANCH_FIELDS, "branch")
    if change.add:
        br = Branch(**change.values)
        idx = network.bus_index()
        if br.from_bus not in idx or br.to_bus not in idx:
            raise NetworkError("new branch references an unknown bus")
        network.branches.append(br)
        f, t = idx[br.from_bus], idx[br.to_bus]
        pat = (models.ac or models.dc).pattern if (models.ac or models.dc) else None
        if pat is not None and pat.has_slot(f, t):
            slots = np.array([[pat.positions([a], [b])[0] for a, b in ((f, f), (f, t), (t, f), (t, t))]])
            _extend_models(models, network, br, f, t, slots)
            effect.values_dirty = True
        else:
            _rebuild(models, network)
            effect.values_dirty = effect.pattern_dirty = True
        return effect

    k = _position(change.label, len(network.branches), "branch")
    br = network.branches[k]
    old = replace(br)
    for name, v in change.values.items():
        setattr(br, name, v)
    if set(change.values) & {"from_bus", "to_bus"}:
        # endpoints moved: the pattern changes
        _rebuild(models, network)
        effect.values_dirty = effect.pattern_dirty = True
        return effect
    try:
        _patch_branch(models, k, old, br)
    except NetworkError:
        network.branches[k] = old
        raise
    effect.values_dirty = (branch_block(old) != branch_block(br)
                           or dc_branch_terms(old) != dc_branch_terms(br))
    return effect


def _position(label, count, what) -> int:
    if label is None or not 1 <= int(label) <= count:
        raise NetworkError(f"unknown {what} {label}")
    return int(label) - 1


def _patch_branch(models: ModelHandles, k: int, old: Branch, new: Branch) -> None:
    if new.ratio == 0 or (new.r == 0 and new.x == 0):
        raise NetworkError(f"branch {k + 1}: invalid impedance or ratio")
    if models.ac is not None:
        ac = models.ac
        blk = np.array(branch_block(new))
        delta = blk - ac.blocks[k]
        for c in range(4):
            ac.values[ac.pattern.slots[k, c]] += delta[c]
        ac.blocks[k] = blk
        ac.values_version += 1
    if models.dc is not None:
        if new.in_service and new.x == 0:
            raise NetworkError(f"branch {k + 1}: zero reactance in service")
        dc = models.dc
        b, s = dc_branch_terms(new)
        if b != dc.susceptance[k]:
            _add_dc_blocks(dc.values, dc.pattern.slots[k:k + 1], [b - dc.susceptance[k]])
            dc.susceptance[k] = b
            dc.values_version += 1
        if s != dc.shift_flow[k]:
            dc.shift_flow[k] = s
            dc.constants_version += 1


def _extend_models(models, network, br, f, t, slots):
    if models.ac is not None:
        ac = models.ac
        blk = np.array(branch_block(br))
        for c in range(4):
            ac.values[slots[0, c]] += blk[c]
        ac.blocks = np.vstack([ac.blocks, blk[None, :]])
        ac.from_idx = np.append(ac.from_idx, f)
        ac.to_idx = np.append(ac.to_idx, t)
        ac.pattern.slots = np.vstack([ac.pattern.slots, slots])
        ac.values_version += 1
    if models.dc is not None:
        dc = models.dc
        b, s = dc_branch_terms(br)
        _add_dc_blocks(dc.values, slots, [b])
        dc.susceptance = np.append(dc.susceptance, b)
        dc.shift_flow = np.append(dc.shift_flow, s)
        dc.from_idx = np.append(dc.from_idx, f)
        dc.to_idx = np.append(dc.to_idx, t)
        if dc.pattern is not (models.ac.pattern if models.ac else None):
            dc.pattern.slots = np.vstack([dc.pattern.slots, slots])
        dc.values_version += 1
        dc.constants_version += 1


def _rebuild(models: ModelHandles, network: Network) -> None:
    f, t = network.branch_ends()
    pat = BranchPattern.build(network.n_bus, f, t)
    if models.ac is not None:
        v = models.ac
        models.ac = build_ac_model(network, pat)
        models.ac.values_version = v.values_version + 1
        models.ac.pattern_version = v.pattern_version + 1
    if models.dc is not None:
        v = models.dc
        models.dc = build_dc_model(network, pat)
        models.dc.values_version = v.values_version + 1
        models.dc.pattern_version = v.pattern_version + 1
        models.dc.constants_version = v.constants_version + 1


def build_models(network: Network, ac: bool = True, dc: bool = True) -> ModelHandles:
    """AC and DC models sharing one pattern."""
    f, t = network.branch_ends()
    pat = BranchPattern.build(network.n_bus, f, t)
    handles = ModelHandles()
    if ac:
        handles.ac = build_ac_model(network, pat)
    if dc:
        handles.dc = build_dc_model(network, pat)
    return handles
