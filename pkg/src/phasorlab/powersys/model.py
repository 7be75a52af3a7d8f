"""Network model and the linear measurement matrix.

A model file (YAML) lists buses, branches, meters and the estimated states;
``docs/model.md`` has the full schema. Everything is converted to per unit on
load. Branches closed by a switch are collapsed into one electrical bus.

Rows of ``H`` are voltage meters followed by current meters::

    H = [ II ]        M = y A + y_s
        [ M  ]

A current meter whose far end is the reference bus (known voltage) gets a
constant term; ``offset`` returns it, so ``z = H x + c``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

FT_PER_MILE = 5280.0
SHUNT_CONVENTIONS = ("from_half", "from_full", "none")


class ModelError(ValueError):
    pass


class RankDeficient(ModelError):
    pass


@dataclass
class Bus:
    id: int
    name: str = ""
    kv_ll: float | None = None


@dataclass
class Branch:
    frm: int
    to: int
    y: complex          # series admittance, per unit
    b_total: float = 0.0  # total line charging, per unit
    kind: str = "line"


@dataclass
class Meter:
    id: int
    kind: str            # "voltage" or "current"
    bus: int | None = None
    frm: int | None = None
    to: int | None = None
    pmu: int | None = None
    branch: Branch | None = field(default=None, repr=False)

    @property
    def label(self) -> str:
        if self.kind == "voltage":
            return f"V{self.bus}"
        return f"I{self.frm}-{self.to}"

    @property
    def site(self) -> int:
        return self.bus if self.kind == "voltage" else self.frm


@dataclass
class NetworkModel:
    name: str
    buses: dict
    branches: list
    states: list
    meters: list
    ref_bus: int | None = None
    v_ref: complex = 1.0
    kv_ll: float = 1.0
    mva: float = 1.0
    shunt_convention: str = "from_half"
    true_state: dict = field(default_factory=dict)
    merged: dict = field(default_factory=dict)

    # -- sizes ------------------------------------------------------------

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_meters(self) -> int:
        return len(self.meters)

    @property
    def voltage_meters(self):
        return [m for m in self.meters if m.kind == "voltage"]

    @property
    def current_meters(self):
        return [m for m in self.meters if m.kind == "current"]

    def meter(self, meter_id: int) -> Meter:
        for m in self.meters:
            if m.id == meter_id:
                return m
        raise KeyError(meter_id)

    def pmu_ids(self) -> list:
        out = []
        for m in self.meters:
            if m.pmu is not None and m.pmu not in out:
                out.append(m.pmu)
        return out

    def meters_of(self, pmu: int) -> list:
        return [m for m in self.meters if m.pmu == pmu]

    # -- incidence blocks ---------------------------------------------------

    def _col(self, bus):
        bus = self.merged.get(bus, bus)
        return self.states.index(bus) if bus in self.states else None

    def incidence_II(self) -> np.ndarray:
        II = np.zeros((len(self.voltage_meters), self.n_states))
        for r, m in enumerate(self.voltage_meters):
            II[r, self._col(m.bus)] = 1.0
        return II

    def incidence_A(self) -> np.ndarray:
        A = np.zeros((len(self.current_meters), self.n_states))
        for r, m in enumerate(self.current_meters):
            for bus, sign in ((m.frm, 1.0), (m.to, -1.0)):
                c = self._col(bus)
                if c is not None:
                    A[r, c] += sign
        return A

    def branch_admittances(self) -> np.ndarray:
        return np.array([m.branch.y for m in self.current_meters], dtype=complex)

    def _shunt(self, m: Meter) -> complex:
        b = m.branch.b_total
        if self.shunt_convention == "from_half":
            return 0.5j * b
        if self.shunt_convention == "from_full":
            return 1j * b
        return 0j

    def shunt_matrix(self) -> np.ndarray:
        Ys = np.zeros((len(self.current_meters), self.n_states), dtype=complex)
        for r, m in enumerate(self.current_meters):
            c = self._col(m.frm)
            if c is not None:
                Ys[r, c] += self._shunt(m)
        return Ys

    # -- units ------------------------------------------------------------

    def bus_kv(self, bus: int) -> float:
        b = self.buses.get(bus)
        return b.kv_ll if b is not None and b.kv_ll else self.kv_ll

    def meter_base(self, m: Meter) -> float:
        """Engineering units (V or A, line-to-neutral) per unit for a meter."""
        kv = self.bus_kv(m.site)
        v_ln = kv * 1e3 / math.sqrt(3)
        if m.kind == "voltage":
            return v_ln
        return self.mva * 1e6 / (3 * v_ln)

    def meter_bases(self) -> np.ndarray:
        return np.array([self.meter_base(m) for m in self.meters])

    def true_vector(self) -> np.ndarray:
        if not self.true_state:
            raise ModelError(f"model {self.name!r} has no true_state fixture")
        return np.array([self.true_state[b] for b in self.states], dtype=complex)


def _polar(mag, deg) -> complex:
    return complex(mag * math.cos(math.radians(deg)), mag * math.sin(math.radians(deg)))


def _complex(v) -> complex:
    if isinstance(v, (list, tuple)):
        return complex(float(v[0]), float(v[1]))
    return complex(v)


def _need(d, key, where):
    if key not in d:
        raise ModelError(f"{where}: missing field {key!r}")
    return d[key]


def model_from_dict(doc: dict) -> NetworkModel:
    if not isinstance(doc, dict):
        raise ModelError("model file must be a mapping")
    base = doc.get("base", {})
    kv_ll = float(base.get("kv_ll", 1.0))
    mva = float(base.get("mva", 1.0))
    # zbase is per bus; lines in this format only join buses of equal voltage
    buses = {}
    for i, b in enumerate(doc.get("buses", [])):
        bid = int(_need(b, "id", f"buses[{i}]"))
        buses[bid] = Bus(bid, str(b.get("name", bid)), b.get("kv_ll"))
    convention = doc.get("shunt_convention", "from_half")
    if convention not in SHUNT_CONVENTIONS:
        raise ModelError(f"shunt_convention must be one of {SHUNT_CONVENTIONS}, got {convention!r}")
    configs = doc.get("line_configs", {}) or {}

    # collapse closed switches (union-find, smallest id represents)
    parent = {}

    def find(b):
        while parent.get(b, b) != b:
            b = parent[b]
        return b

    raw_branches = doc.get("branches", []) or []
    for br in raw_branches:
        if br.get("switch") == "closed":
            a, b = find(int(br["from"])), find(int(br["to"]))
            lo, hi = min(a, b), max(a, b)
            parent[hi] = lo

    def zbase_of(bus):
        kv = buses[bus].kv_ll if bus in buses and buses[bus].kv_ll else kv_ll
        return (kv * 1e3) ** 2 / (mva * 1e6)

    branches = []
    for i, br in enumerate(raw_branches):
        where = f"branches[{i}]"
        frm, to = int(_need(br, "from", where)), int(_need(br, "to", where))
        if "switch" in br:
            if br["switch"] not in ("open", "closed"):
                raise ModelError(f"{where}: switch must be 'open' or 'closed'")
            continue
        if "y" in br:
            branch = Branch(frm, to, _complex(br["y"]), float(br.get("b", 0.0)), "admittance")
        elif "transformer" in br:
            t = br["transformer"]
            z_own = complex(float(t.get("r_pct", 0)), float(t.get("x_pct", 0))) / 100.0
            z = z_own * mva / (float(_need(t, "kva", where)) / 1e3)
            branch = Branch(frm, to, 1 / z, 0.0, "transformer")
        else:
            name = str(_need(br, "config", where))
            if name not in configs:
                raise ModelError(f"{where}: unknown line config {name!r}")
            cfg = configs[name]
            miles = float(_need(br, "length_ft", where)) / FT_PER_MILE
            zb = zbase_of(frm)
            z = _complex(_need(cfg, "z", f"line_configs[{name}]")) * miles / zb
            if z == 0:
                raise ModelError(f"{where}: zero impedance; use a closed switch instead")
            b = float(cfg.get("b_us", 0.0)) * 1e-6 * miles * zb
            branch = Branch(frm, to, 1 / z, b, "line")
        branches.append(branch)

    merged = {b: find(b) for b in set(parent) | set(parent.values()) if find(b) != b}
    states = [int(s) for s in _need(doc, "states", "model")]
    if len(set(states)) != len(states):
        raise ModelError("states lists a bus twice")
    ref = doc.get("reference")
    ref_bus = int(ref["bus"]) if ref else None
    v_ref = _polar(float(ref.get("magnitude", 1.0)), float(ref.get("angle_deg", 0.0))) if ref else 1.0

    def canon(b):
        return merged.get(b, b)

    def known(b, where):
        b = canon(b)
        if b not in states and b != ref_bus:
            raise ModelError(f"{where}: bus {b} is neither an estimated state nor the reference")

    meters = []
    seen = set()
    for i, m in enumerate(_need(doc, "meters", "model")):
        where = f"meters[{i}]"
        mid = int(_need(m, "id", where))
        if mid in seen:
            raise ModelError(f"{where}: duplicate meter id {mid}")
        seen.add(mid)
        kind = _need(m, "kind", where)
        pmu = m.get("pmu")
        pmu = int(pmu) if pmu is not None else None
        if kind == "voltage":
            bus = int(_need(m, "bus", where))
            if canon(bus) not in states:
                raise ModelError(f"{where}: voltage meter on bus {bus} which is not estimated")
            meters.append(Meter(mid, kind, bus=bus, pmu=pmu))
        elif kind == "current":
            frm, to = int(_need(m, "from", where)), int(_need(m, "to", where))
            known(frm, where)
            known(to, where)
            if canon(frm) == canon(to):
                raise ModelError(f"{where}: current meter {frm}->{to} spans a closed switch (zero incidence row)")
            match = None
            for br in branches:
                ends = {canon(br.frm), canon(br.to)}
                if ends == {canon(frm), canon(to)}:
                    match = br
                    break
            if match is None:
                raise ModelError(f"{where}: no branch between buses {frm} and {to}")
            meters.append(Meter(mid, kind, frm=frm, to=to, pmu=pmu, branch=match))
        else:
            raise ModelError(f"{where}: kind must be 'voltage' or 'current', got {kind!r}")
    # voltage rows first, stable within each group
    meters.sort(key=lambda m: m.kind != "voltage")

    true_state = {}
    for bus, val in (doc.get("true_state") or {}).items():
        if isinstance(val, (list, tuple)) and len(val) == 2:
            true_state[int(bus)] = _polar(float(val[0]), float(val[1]))
        else:
            true_state[int(bus)] = _complex(val)

    return NetworkModel(
        name=str(doc.get("name", "model")),
        buses=buses,
        branches=branches,
        states=states,
        meters=meters,
        ref_bus=ref_bus,
        v_ref=v_ref,
        kv_ll=kv_ll,
        mva=mva,
        shunt_convention=convention,
        true_state=true_state,
        merged=merged,
    )


def load_model(path=None, **overrides) -> NetworkModel:
    """Load a model file; with no path the bundled phase-A feeder is used."""
    if path is None:
        text = resources.files("phasorlab.powersys").joinpath("data/ieee13_phase_a.yaml").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ModelError(f"model file is not valid YAML: {exc}") from None
    doc.update(overrides)
    return model_from_dict(doc)


def feeder_phase_a(**overrides) -> NetworkModel:
    return load_model(None, **overrides)


def build_H(model: NetworkModel, check_rank: bool = True) -> np.ndarray:
    II = model.incidence_II()
    A = model.incidence_A()
    M = model.branch_admittances()[:, None] * A + model.shunt_matrix()
    H = np.vstack([II.astype(complex), M])
    if check_rank and np.linalg.matrix_rank(H) < model.n_states:
        raise RankDeficient(f"H is {H.shape[0]}x{H.shape[1]} with rank {np.linalg.matrix_rank(H)}")
    return H


def offset(model: NetworkModel) -> np.ndarray:
    """Constant term contributed by the reference bus voltage."""
    c = np.zeros(model.n_meters, dtype=complex)
    nv = len(model.voltage_meters)
    for r, m in enumerate(model.current_meters):
        for bus, sign in ((m.frm, 1.0), (m.to, -1.0)):
            if model.merged.get(bus, bus) == model.ref_bus:
                c[nv + r] += sign * m.branch.y * model.v_ref
                if sign > 0:
                    c[nv + r] += model._shunt(m) * model.v_ref
    return c
