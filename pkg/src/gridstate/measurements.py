"""Measurement sets: legacy SCADA readings and PMU phasors.

Measurements are generated from a solved state by adding zero-mean Gaussian
noise to the exact values. Phasors are stored as a magnitude row and an angle
row sharing the same element; rectangular treatment converts the pair into
real/imaginary parts with a linearized 2x2 covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .network import DcModel, Network

LEGACY_KINDS = ("vmag", "pinj", "qinj", "pflow", "qflow", "imag")
PHASOR_KINDS = ("vphasor_mag", "vphasor_ang", "iphasor_mag", "iphasor_ang")
KINDS = LEGACY_KINDS + PHASOR_KINDS
BRANCH_KINDS = ("pflow", "qflow", "imag", "iphasor_mag", "iphasor_ang")
SIDES = ("from", "to", "-")
COORDINATES = ("polar", "rect", "-")

# subsets by symbol: V, I, P, Q and the phasor sets Vbar, Ibar
SUBSETS = {
    "V": ("vmag",),
    "I": ("imag",),
    "P": ("pinj", "pflow"),
    "Q": ("qinj", "qflow"),
    "Vbar": ("vphasor_mag", "vphasor_ang"),
    "Ibar": ("iphasor_mag", "iphasor_ang"),
}

DEFAULT_VARIANCES = {"legacy": 1e-4, "phasor": 1e-6}
TANGENTIAL_FLOOR = 1e-6  # relative to the magnitude variance


class MeasurementError(ValueError):
    pass


@dataclass
class Measurement:
    id: str
    kind: str
    element: int  # bus id, or 1-based branch number
    side: str
    value: float
    variance: float
    status: int = 1
    coordinates: str = "-"
    neglect_covariance: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MeasurementError(f"{self.id}: unknown kind {self.kind!r}")
        if self.side not in SIDES:
            raise MeasurementError(f"{self.id}: invalid side {self.side!r}")
        if self.coordinates not in COORDINATES:
            raise MeasurementError(f"{self.id}: invalid coordinates {self.coordinates!r}")
        if self.is_phasor and self.coordinates == "-":
            raise MeasurementError(f"{self.id}: phasor components need polar or rect coordinates")
        if not self.is_phasor and self.coordinates != "-":
            raise MeasurementError(f"{self.id}: coordinates apply to phasors only")
        if self.on_branch and self.side == "-":
            raise MeasurementError(f"{self.id}: branch measurement needs a side")
        if not self.on_branch and self.side != "-":
            raise MeasurementError(f"{self.id}: bus measurement takes side '-'")
        if not self.variance > 0:
            raise MeasurementError(f"{self.id}: variance must be positive")
        if self.status not in (0, 1):
            raise MeasurementError(f"{self.id}: status must be 0 or 1")

    @property
    def is_phasor(self) -> bool:
        return self.kind in PHASOR_KINDS

    @property
    def on_branch(self) -> bool:
        return self.kind in BRANCH_KINDS

    @property
    def in_service(self) -> bool:
        return self.status == 1

    @property
    def phasor_key(self):
        """Elements shared by the magnitude and angle rows of one phasor."""
        return (self.kind.split("_")[0], self.element, self.side)


@dataclass
class Phasor:
    magnitude: Measurement | None
    angle: Measurement | None

    @property
    def rows(self):
        return [m for m in (self.magnitude, self.angle) if m is not None]

    @property
    def rectangular(self) -> bool:
        return self.rows[0].coordinates == "rect"


@dataclass
class MeasurementSet:
    measurements: list = field(default_factory=list)
    seed: int | None = None

    def __post_init__(self):
        self.values_version = 0
        self.weights_version = 0
        self.status_version = 0
        self.structure_version = 0
        self.reindex()

    def reindex(self):
        self._by_id = {}
        for i, m in enumerate(self.measurements):
            if m.id in self._by_id:
                raise MeasurementError(f"duplicate measurement id {m.id!r}")
            self._by_id[m.id] = i
        self._check_pairs()

    def _check_pairs(self):
        groups = {}
        for m in self.measurements:
            if m.is_phasor:
                groups.setdefault(m.phasor_key, []).append(m)
        for key, rows in groups.items():
            kinds = sorted(r.kind for r in rows)
            if len(rows) > 2 or len(set(kinds)) != len(kinds):
                raise MeasurementError(f"phasor {key} has duplicate components")
            if len({r.coordinates for r in rows}) != 1:
                raise MeasurementError(f"phasor {key} mixes coordinate systems")
            if rows[0].coordinates == "rect" and len(rows) != 2:
                raise MeasurementError(f"rectangular phasor {key} needs magnitude and angle")
            if len(rows) == 2 and rows[0].status != rows[1].status:
                raise MeasurementError(f"phasor {key} components disagree on status")

    def __len__(self):
        return len(self.measurements)

    def __iter__(self):
        return iter(self.measurements)

    def __getitem__(self, mid: str) -> Measurement:
        try:
            return self.measurements[self._by_id[mid]]
        except KeyError:
            raise MeasurementError(f"unknown measurement {mid!r}") from None

    def index_of(self, mid: str) -> int:
        return self._by_id[mid]

    def by_kind(self, *kinds) -> list:
        return [m for m in self.measurements if m.kind in kinds]

    def phasors(self) -> list:
        """Phasors in order of first appearance."""
        seen = {}
        for m in self.measurements:
            if m.is_phasor:
                p = seen.setdefault(m.phasor_key, Phasor(None, None))
                if m.kind.endswith("_mag"):
                    p.magnitude = m
                else:
                    p.angle = m
        return list(seen.values())

    def partner(self, m: Measurement) -> Measurement | None:
        for other in self.measurements:
            if other is not m and other.is_phasor and other.phasor_key == m.phasor_key:
                return other
        return None

    def copy(self) -> "MeasurementSet":
        out = MeasurementSet([Measurement(**vars(m)) for m in self.measurements], self.seed)
        return out


# --------------------------------------------------------------------------
# templates and generation


@dataclass
class TemplateEntry:
    kind: str
    element: int
    side: str = "-"
    variance: float = DEFAULT_VARIANCES["legacy"]
    coordinates: str = "-"


def default_template(network: Network, p_injection: float = 0.5, p_to_side: float = 0.5,
                     pmu_buses=(), variances=None, seed: int | None = 0,
                     coordinates: str = "rect", model: str = "ac") -> list:
    """Voltage magnitudes everywhere, from-side P/Q flows on every in-service
    branch, injections and to-side flows each with probability given, and a
    voltage phasor plus incident current phasors at every PMU bus.

    For ``model="dc"`` only active flows/injections and voltage angle phasors
    are produced.
    """
    var = dict(DEFAULT_VARIANCES, **(variances or {}))
    vl, vp = var["legacy"], var["phasor"]
    rng = np.random.default_rng(seed)
    dc = model == "dc"
    out = []
    if not dc:
        out += [TemplateEntry("vmag", b.id, "-", vl) for b in network.buses]
    for k, br in enumerate(network.branches, start=1):
        if not br.in_service:
            continue
        out.append(TemplateEntry("pflow", k, "from", vl))
        if not dc:
            out.append(TemplateEntry("qflow", k, "from", vl))
        if rng.random() < p_to_side:
            out.append(TemplateEntry("pflow", k, "to", vl))
            if not dc:
                out.append(TemplateEntry("qflow", k, "to", vl))
    for b in network.buses:
        if rng.random() < p_injection:
            out.append(TemplateEntry("pinj", b.id, "-", vl))
            if not dc:
                out.append(TemplateEntry("qinj", b.id, "-", vl))
    for bus in pmu_buses:
        out += pmu_entries(network, bus, vp, coordinates, angle_only=dc)
    return out


def pmu_entries(network: Network, bus: int, variance: float, coordinates: str = "rect",
                angle_only: bool = False) -> list:
    """A PMU at ``bus``: its voltage phasor and the current phasors of incident branches."""
    if angle_only:
        return [TemplateEntry("vphasor_ang", bus, "-", variance, "polar")]
    out = [TemplateEntry("vphasor_mag", bus, "-", variance, coordinates),
           TemplateEntry("vphasor_ang", bus, "-", variance, coordinates)]
    for k, br in enumerate(network.branches, start=1):
        if not br.in_service or bus not in (br.from_bus, br.to_bus):
            continue
        side = "from" if br.from_bus == bus else "to"
        out.append(TemplateEntry("iphasor_mag", k, side, variance, coordinates))
        out.append(TemplateEntry("iphasor_ang", k, side, variance, coordinates))
    return out


def generate_from_solution(network: Network, model, state, template, seed: int | None = None,
                           exact: bool = False, prefix: str = "m") -> MeasurementSet:
    """Sample z = e + u with u ~ N(0, v) for each template entry.

    ``model`` is an AcModel (``state`` = complex voltages) or a DcModel
    (``state`` = angles). With ``exact=True`` no noise is added; a zero
    template variance is then allowed and stored as unit variance.
    """
    rng = np.random.default_rng(seed)
    is_dc = isinstance(model, DcModel)
    state = np.asarray(state)
    if not is_dc:
        If, It = model.branch_currents(state)
        Sf, St = model.branch_powers(state)
        Sbus = model.injections(state)
    else:
        flows = model.branch_flows(state)
        pinj = model.injections(state)
    idx = network.bus_index()
    out = []
    for n, e in enumerate(template, start=1):
        if e.variance < 0 or (e.variance == 0 and not exact):
            raise MeasurementError(f"entry {n}: variance must be positive outside exact mode")
        try:
            if is_dc:
                exact_val = _dc_value(e, idx, state, flows, pinj)
            else:
                exact_val = _ac_value(e, idx, state, If, It, Sf, St, Sbus)
        except (KeyError, IndexError):
            raise MeasurementError(f"entry {n}: {e.kind} references unknown element {e.element}") from None
        noise = 0.0 if exact else math.sqrt(e.variance) * rng.standard_normal()
        out.append(Measurement(f"{prefix}{n}", e.kind, e.element, e.side, exact_val + noise,
                               e.variance if e.variance > 0 else 1.0, 1, e.coordinates))
    return MeasurementSet(out, seed)


def template_of(mset: MeasurementSet) -> list:
    """Template reproducing the layout of an existing set."""
    return [TemplateEntry(m.kind, m.element, m.side, m.variance, m.coordinates) for m in mset]


def resample_values(mset: MeasurementSet, network: Network, model, state,
                    seed: int | None = None, exact: bool = False) -> None:
    """Overwrite measurement values from a new solution, keeping ids, weights and status.

    Only the value version changes, so estimation models keep their structure.
    """
    fresh = generate_from_solution(network, model, state, template_of(mset), seed, exact)
    for m, f in zip(mset.measurements, fresh.measurements):
        m.value = f.value
    mset.values_version += 1


def _ac_value(e, idx, V, If, It, Sf, St, Sbus):
    kind = e.kind
    if kind in ("vmag", "vphasor_mag"):
        return float(abs(V[idx[e.element]]))
    if kind == "vphasor_ang":
        return float(np.angle(V[idx[e.element]]))
    if kind == "pinj":
        return float(Sbus[idx[e.element]].real)
    if kind == "qinj":
        return float(Sbus[idx[e.element]].imag)
    k = e.element - 1
    if k < 0:
        raise IndexError
    s = Sf[k] if e.side == "from" else St[k]
    cur = If[k] if e.side == "from" else It[k]
    if kind == "pflow":
        return float(s.real)
    if kind == "qflow":
        return float(s.imag)
    if kind in ("imag", "iphasor_mag"):
        return float(abs(cur))
    return float(np.angle(cur))


def _dc_value(e, idx, theta, flows, pinj):
    if e.kind == "vphasor_ang":
        return float(theta[idx[e.element]])
    if e.kind == "pinj":
        return float(pinj[idx[e.element]])
    if e.kind == "pflow":
        k = e.element - 1
        if k < 0:
            raise IndexError
        return float(flows[k] if e.side == "from" else -flows[k])
    raise MeasurementError(f"kind {e.kind!r} is not available from a DC solution")


# --------------------------------------------------------------------------
# availability and updates


def _units(mset: MeasurementSet, kinds) -> list:
    """Selectable units in a subset: single legacy rows or whole phasors."""
    units, seen = [], set()
    for m in mset.measurements:
        if m.kind not in kinds:
            continue
        if m.is_phasor:
            if m.phasor_key in seen:
                continue
            seen.add(m.phasor_key)
            units.append([r for r in mset.measurements if r.is_phasor and r.phasor_key == m.phasor_key])
        else:
            units.append([m])
    return units


def randomize_availability(mset: MeasurementSet, policy: dict, seed: int | None = None) -> None:
    """Set exactly ``count`` units in service per subset, chosen uniformly.

    ``policy`` maps a subset symbol (V, I, P, Q, Vbar, Ibar) or "all" to the
    number of in-service units; a phasor counts as one unit.
    """
    rng = np.random.default_rng(seed)
    for name, count in policy.items():
        kinds = KINDS if name == "all" else SUBSETS.get(name)
        if kinds is None:
            raise MeasurementError(f"unknown subset {name!r}")
        units = _units(mset, kinds)
        if not 0 <= count <= len(units):
            raise MeasurementError(f"cannot keep {count} of {len(units)} units in subset {name}")
        chosen = set(rng.choice(len(units), size=count, replace=False).tolist())
        for u, rows in enumerate(units):
            for m in rows:
                m.status = 1 if u in chosen else 0
    mset.status_version += 1


def update_measurement(mset: MeasurementSet, mid: str, change: dict) -> dict:
    """Edit value/variance/status/coordinates of one measurement.

    Status changes propagate to the partner row of a phasor. Returns which
    parts of an estimation model become stale.
    """
    m = mset[mid]
    allowed = {"value", "variance", "status", "coordinates", "neglect_covariance"}
    bad = set(change) - allowed
    if bad:
        raise MeasurementError(f"cannot change {sorted(bad)}")
    if "variance" in change and not change["variance"] > 0:
        raise MeasurementError(f"{mid}: variance must be positive")
    if "status" in change and change["status"] not in (0, 1):
        raise MeasurementError(f"{mid}: status must be 0 or 1")
    partner = mset.partner(m) if m.is_phasor else None
    dirty = {"values": False, "weights": False, "status": False, "structure": False}
    for key, val in change.items():
        if getattr(m, key) == val:
            continue
        setattr(m, key, val)
        if key in ("status", "coordinates", "neglect_covariance") and partner is not None:
            setattr(partner, key, val)
        if key == "value":
            dirty["values"] = True
        elif key == "variance":
            dirty["weights"] = True
        elif key == "status":
            dirty["status"] = True
        else:
            dirty["structure"] = True
    if dirty["structure"]:
        mset._check_pairs()
    mset.values_version += dirty["values"]
    mset.weights_version += dirty["weights"]
    mset.status_version += dirty["status"]
    mset.structure_version += dirty["structure"]
    return dirty


def phasor_to_rectangular(mag, ang, v_mag, v_ang, neglect_covariance: bool = False):
    """Rectangular mean and first-order covariance of a polar phasor reading."""
    c, s = math.cos(ang), math.sin(ang)
    # radial/tangential frame; the tangential variance vanishes with |mag|,
    # so it is floored to keep the block invertible
    tangential = max(mag * mag * v_ang, TANGENTIAL_FLOOR * v_mag)
    R = np.array([[c, -s], [s, c]])
    cov = R @ np.diag([v_mag, tangential]) @ R.T
    cov = 0.5 * (cov + cov.T)
    if neglect_covariance:
        cov = np.diag(np.diag(cov))
    return mag * c, mag * s, cov
