"""Scenario files and the end-to-end experiment runner.

A scenario describes the network, the PMUs and PDC, an optional attack,
measurement noise and the estimator settings. :func:`run_scenario` builds
the emulated network, runs it in virtual time, estimates the state for every
PDC snapshot and writes the artifacts. See ``docs/scenario.md`` for the
schema.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import attacks, codec
from .endpoints import (
    ConstantSource,
    FeederSource,
    Pdc,
    PmuConfig,
    SimPmuServer,
    channel_map_for,
    group_rows,
    measurement_set,
    pdc_export,
    write_snapshots_csv,
)
from .netsim.pcap import write_pcap
from .netsim.sim import NS, Network, ns
from .powersys.estimation import Singular, detect_and_identify
from .powersys.model import ModelError, RankDeficient, build_H, load_model, offset


class ConfigError(ValueError):
    """Invalid scenario or spec file; carries the offending field and line."""

    def __init__(self, message, field=None, line=None, source=None):
        self.message = message
        self.field = field
        self.line = line
        self.source = source
        where = []
        if source:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field '{field}'")
        super().__init__(f"{': '.join([', '.join(where), message]) if where else message}")


class ScenarioFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# YAML with positions


def _marks(node, path="", out=None):
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = f"{path}.{k.value}" if path else str(k.value)
            out[key] = k.start_mark.line + 1
            _marks(v, key, out)
            out[key] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _marks(v, f"{path}[{i}]", out)
    return out


class Doc:
    """Parsed YAML plus a lookup from dotted field path to source line."""

    def __init__(self, text: str, source=None):
        self.source = source
        try:
            node = yaml.compose(text)
            self.data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}",
                              line=mark.line + 1 if mark else None, source=source) from None
        self.lines = _marks(node) if node is not None else {}
        if not isinstance(self.data, dict):
            raise ConfigError("top level must be a mapping", line=1, source=source)

    def error(self, path, message):
        line = None
        p = path
        while p:
            if p in self.lines:
                line = self.lines[p]
                break
            p = p.rsplit(".", 1)[0] if "." in p else ""
        return ConfigError(message, field=path, line=line, source=self.source)


def _get(doc: Doc, d, path, key, kind=None, default=...):
    full = f"{path}.{key}" if path else key
    if not isinstance(d, dict) or key not in d or d[key] is None:
        if default is ...:
            raise doc.error(path or key, f"missing required field '{full}'")
        return default
    v = d[key]
    if kind is not None:
        kinds = kind if isinstance(kind, tuple) else (kind,)
        if float in kinds and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        if not isinstance(v, kinds) or isinstance(v, bool) and bool not in kinds:
            names = "/".join(k.__name__ for k in kinds)
            raise doc.error(full, f"expected {names}, got {type(v).__name__} {v!r}")
    return v


# ---------------------------------------------------------------------------
# configuration model


@dataclass
class PmuSpec:
    idcode: int
    name: str
    ip: str
    mac: str
    source: object  # "feeder" or list of complex
    fmt: codec.DataFormat
    names: list | None = None


@dataclass
class AttackSpec:
    mode: attacks.Mode
    victims: list
    start: float = 0.05
    stop: float | None = None
    refresh: float = 1.0
    mutation: dict | None = None
    fcia: list = field(default_factory=list)
    attacker: dict = field(default_factory=dict)


@dataclass
class ScenarioConfig:
    name: str
    seed: int
    duration: float
    topology: str = "lan"
    link_delay_us: float = 50.0
    warm_arp: bool = True
    epoch: int = 1_700_000_000
    data_rate: int = 30
    pdc: dict = field(default_factory=dict)
    pmus: list = field(default_factory=list)
    attack: AttackSpec | None = None
    noise_sigma: float = 0.05
    noise_mu: float = 0.0
    estimator: bool = True
    model_path: str | None = None
    est_sigma: float = 0.05
    dof: str = "complex"
    capture: str = "pdc"
    outputs: dict = field(default_factory=dict)
    source: str | None = None

    @property
    def connect_at(self) -> float:
        return float(self.pdc.get("connect_at", 0.2))


FORMATS = {
    "float_rect": codec.FLOAT_RECT,
    "int_rect": codec.INT_RECT,
    "float_polar": codec.FLOAT_POLAR,
}

DEFAULT_OUTPUTS = {
    "pcap": "trace.pcap",
    "report": "report.csv",
    "summary": "summary.json",
    "attacker_log": "attacker.jsonl",
    "snapshots": "snapshots.csv",
    "bus_plot": "plot_bus.csv",
    "meter_plot": "plot_meter_sigma.csv",
}


def _phasor_list(doc, path, value):
    if not isinstance(value, list) or not value:
        raise doc.error(path, "expected a non-empty list of [real, imag] pairs")
    out = []
    for i, v in enumerate(value):
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            out.append(complex(v))
        elif isinstance(v, list) and len(v) == 2 and all(isinstance(x, (int, float)) for x in v):
            out.append(complex(float(v[0]), float(v[1])))
        else:
            raise doc.error(f"{path}[{i}]", f"phasor must be [real, imag], got {v!r}")
    return out


def parse_scenario(text: str, source=None) -> ScenarioConfig:
    doc = Doc(text, source)
    d = doc.data
    known = {"name", "seed", "duration", "topology", "epoch", "data_rate", "pdc", "pmus", "attacker", "attack",
             "noise", "estimator", "capture", "outputs"}
    for k in d:
        if k not in known:
            raise doc.error(str(k), f"unknown field '{k}'")
    seed = _get(doc, d, "", "seed", int)
    cfg = ScenarioConfig(
        name=_get(doc, d, "", "name", str, "scenario"),
        seed=seed,
        duration=_get(doc, d, "", "duration", float),
        epoch=_get(doc, d, "", "epoch", int, 1_700_000_000),
        data_rate=_get(doc, d, "", "data_rate", int, 30),
        source=str(source) if source else None,
    )
    if cfg.duration <= 0:
        raise doc.error("duration", "duration must be positive")
    if cfg.data_rate <= 0:
        raise doc.error("data_rate", "data_rate must be positive")

    topo = _get(doc, d, "", "topology", dict, {})
    cfg.topology = _get(doc, topo, "topology", "kind", str, "lan")
    if cfg.topology not in ("lan", "routed"):
        raise doc.error("topology.kind", f"kind must be 'lan' or 'routed', got {cfg.topology!r}")
    cfg.link_delay_us = _get(doc, topo, "topology", "link_delay_us", float, 50.0)
    cfg.warm_arp = _get(doc, topo, "topology", "warm_arp", bool, True)

    pdc = _get(doc, d, "", "pdc", dict)
    cfg.pdc = {
        "name": _get(doc, pdc, "pdc", "name", str, "pdc"),
        "ip": _get(doc, pdc, "pdc", "ip", str),
        "mac": _get(doc, pdc, "pdc", "mac", str),
        "connect_at": _get(doc, pdc, "pdc", "connect_at", float, 0.2),
        "wait_window": _get(doc, pdc, "pdc", "wait_window", float, 2.0),
    }

    pmus = _get(doc, d, "", "pmus", list)
    if not pmus:
        raise doc.error("pmus", "at least one PMU is required")
    seen = set()
    for i, p in enumerate(pmus):
        path = f"pmus[{i}]"
        if not isinstance(p, dict):
            raise doc.error(path, "PMU entry must be a mapping")
        idc = _get(doc, p, path, "idcode", int)
        if idc in seen:
            raise doc.error(f"{path}.idcode", f"duplicate idcode {idc}")
        seen.add(idc)
        src = p.get("source", "feeder")
        if isinstance(src, dict) and "constant" in src:
            src = _phasor_list(doc, f"{path}.source.constant", src["constant"])
        elif src != "feeder":
            raise doc.error(f"{path}.source", "source must be 'feeder' or {constant: [...]}")
        fmt_name = _get(doc, p, path, "format", str, "float_rect")
        if fmt_name not in FORMATS:
            raise doc.error(f"{path}.format", f"format must be one of {sorted(FORMATS)}")
        names = p.get("channels")
        cfg.pmus.append(PmuSpec(idc, _get(doc, p, path, "name", str, f"pmu{idc}"), _get(doc, p, path, "ip", str),
                                _get(doc, p, path, "mac", str), src, FORMATS[fmt_name], names))

    att = d.get("attack")
    if att is not None:
        if not isinstance(att, dict):
            raise doc.error("attack", "attack must be a mapping")
        mode = _get(doc, att, "attack", "mode", str)
        try:
            mode = attacks.Mode(mode)
        except ValueError:
            raise doc.error("attack.mode", f"mode must be one of {[m.value for m in attacks.Mode]}") from None
        victims = _get(doc, att, "attack", "victims", (list, int))
        victims = [victims] if isinstance(victims, int) else victims
        for i, v in enumerate(victims):
            if v not in seen:
                raise doc.error(f"attack.victims", f"victim {v!r} is not a PMU idcode")
        attacker = _get(doc, d, "", "attacker", dict)
        spec = AttackSpec(
            mode=mode,
            victims=victims,
            start=_get(doc, att, "attack", "start", float, 0.05),
            stop=_get(doc, att, "attack", "stop", float, None),
            refresh=_get(doc, att, "attack", "refresh", float, 1.0),
            attacker={"name": _get(doc, attacker, "attacker", "name", str, "attacker"),
                      "ip": _get(doc, attacker, "attacker", "ip", str),
                      "mac": _get(doc, attacker, "attacker", "mac", str)},
        )
        if mode is attacks.Mode.FDIA:
            mut = _get(doc, att, "attack", "mutation", dict)
            spec.mutation = _mutation(doc, mut)
        for i, f in enumerate(att.get("fcia") or []):
            path = f"attack.fcia[{i}]"
            cmd = _get(doc, f, path, "cmd", str)
            try:
                cmd = codec.Command[cmd.upper()]
            except KeyError:
                raise doc.error(f"{path}.cmd", f"unknown command {cmd!r}") from None
            idc = _get(doc, f, path, "idcode", int)
            if idc not in seen:
                raise doc.error(f"{path}.idcode", f"{idc} is not a PMU idcode")
            spec.fcia.append({"at": _get(doc, f, path, "at", float), "cmd": cmd, "idcode": idc})
        if mode is attacks.Mode.FCIA and not spec.fcia:
            raise doc.error("attack.fcia", "FCIA mode needs at least one forged command")
        cfg.attack = spec

    noise = _get(doc, d, "", "noise", dict, {})
    cfg.noise_sigma = _get(doc, noise, "noise", "sigma", float, 0.05)
    cfg.noise_mu = _get(doc, noise, "noise", "mu", float, 0.0)
    if cfg.noise_sigma < 0:
        raise doc.error("noise.sigma", "sigma must be >= 0")

    est = _get(doc, d, "", "estimator", dict, {})
    cfg.estimator = _get(doc, est, "estimator", "enabled", bool, True)
    cfg.model_path = _get(doc, est, "estimator", "model", str, None)
    cfg.est_sigma = _get(doc, est, "estimator", "sigma", float, cfg.noise_sigma or 0.05)
    if cfg.est_sigma <= 0:
        raise doc.error("estimator.sigma", "sigma must be positive")
    cfg.dof = _get(doc, est, "estimator", "dof", str, "complex")
    if cfg.dof not in ("complex", "real"):
        raise doc.error("estimator.dof", "dof must be 'complex' or 'real'")

    cfg.capture = _get(doc, d, "", "capture", str, "pdc")
    if cfg.capture not in ("pdc", "all"):
        raise doc.error("capture", "capture must be 'pdc' or 'all'")
    outs = _get(doc, d, "", "outputs", dict, {})
    cfg.outputs = {**DEFAULT_OUTPUTS, **{k: v for k, v in outs.items()}}
    for k in outs:
        if k not in DEFAULT_OUTPUTS:
            raise doc.error(f"outputs.{k}", f"unknown output '{k}'")
    return cfg


def _mutation(doc, mut):
    path = "attack.mutation"
    out = {"idcode": _get(doc, mut, path, "idcode", int), "limit": _get(doc, mut, path, "limit", int, None)}
    for key in ("set", "scale", "bias"):
        table = _get(doc, mut, path, key, dict, {})
        vals = {}
        for idx, v in table.items():
            if not isinstance(idx, int):
                raise doc.error(f"{path}.{key}", f"phasor index must be an integer, got {idx!r}")
            vals[idx] = _phasor_list(doc, f"{path}.{key}.{idx}", [v])[0]
        out[key] = vals
    mb = _get(doc, mut, path, "mag_bias", dict, {})
    for idx, v in mb.items():
        if not isinstance(idx, int) or not isinstance(v, (int, float)):
            raise doc.error(f"{path}.mag_bias", "mag_bias maps phasor index to a number")
    out["mag_bias"] = {int(k): float(v) for k, v in mb.items()}
    return out


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario: {exc.strerror}", source=path) from None
    return parse_scenario(text, source=path)


def bundled_scenarios() -> dict:
    root = resources.files("phasorlab.scenarios")
    return {p.name.removesuffix(".scenario"): p for p in root.iterdir() if p.name.endswith(".scenario")}


def bundled(name: str) -> ScenarioConfig:
    p = bundled_scenarios()[name]
    return parse_scenario(p.read_text(), source=p.name)


# ---------------------------------------------------------------------------
# running


@dataclass
class RunReport:
    name: str
    series: list
    summary: dict
    pcap_path: str | None = None
    attacker_log_path: str | None = None
    artifacts: dict = field(default_factory=dict)


@dataclass
class Testbed:
    """Everything a scenario run builds; handy for tests and notebooks."""

    cfg: ScenarioConfig
    net: Network
    pdc_node: object
    pmu_nodes: dict
    servers: dict
    pdc: Pdc
    model: object = None
    attacker: object = None
    session: attacks.MitmSession | None = None
    router: object = None
    capture: object = None


def build_testbed(cfg: ScenarioConfig) -> Testbed:
    net = Network(seed=cfg.seed, link_delay_ns=int(cfg.link_delay_us * 1000))
    model = None
    feeder_ids = [p.idcode for p in cfg.pmus if p.source == "feeder"]
    if feeder_ids or cfg.estimator:
        try:
            model = load_model(cfg.model_path)
        except ModelError as exc:
            raise ConfigError(str(exc), field="estimator.model", source=cfg.source) from None
    if cfg.topology == "lan":
        pdc_node = net.add_host(cfg.pdc["name"], cfg.pdc["mac"], cfg.pdc["ip"], "lan")
        pmu_seg, gateway, router = "lan", None, None
    else:
        # PMUs on a substation segment, PDC on the control-centre segment
        pdc_node = net.add_host(cfg.pdc["name"], cfg.pdc["mac"], cfg.pdc["ip"], "control", gateway=None)
        base = cfg.pmus[0].ip.rsplit(".", 1)[0]
        ctl = cfg.pdc["ip"].rsplit(".", 1)[0]
        router = net.add_router("router", [
            ("substation", "02:00:00:00:fe:01", f"{base}.1", 24),
            ("control", "02:00:00:00:fe:02", f"{ctl}.1", 24),
        ])
        pdc_node.gateway = f"{ctl}.1"
        pmu_seg, gateway = "substation", f"{base}.1"
    horizon = ns(cfg.connect_at + cfg.duration)
    pmu_nodes, servers = {}, {}
    for p in cfg.pmus:
        node = net.add_host(p.name, p.mac, p.ip, pmu_seg, gateway=gateway)
        if p.source == "feeder":
            try:
                src = FeederSource(model, p.idcode, sigma=cfg.noise_sigma, mu=cfg.noise_mu, seed=cfg.seed)
            except ValueError as exc:
                raise ConfigError(str(exc), field="pmus", source=cfg.source) from None
        else:
            src = ConstantSource(p.source, p.names)
        pc = PmuConfig(p.idcode, src, station_name=p.name.upper(), data_rate=cfg.data_rate, fmt=p.fmt,
                       epoch=cfg.epoch)
        pmu_nodes[p.idcode] = node
        servers[p.idcode] = SimPmuServer(node, pc, stop_time=horizon)
    pdc = Pdc(pdc_node, [(p.idcode, p.ip, 4712) for p in cfg.pmus],
              wait_window=int(cfg.pdc["wait_window"] * NS / cfg.data_rate), data_rate=cfg.data_rate,
              epoch=cfg.epoch)
    tb = Testbed(cfg, net, pdc_node, pmu_nodes, servers, pdc, model=model, router=router)
    tb.capture = net.capture(None if cfg.capture == "all" else pdc_node)

    if cfg.warm_arp:
        # a real exchange per pair: the requester learns from the reply,
        # the responder from the request
        for p in cfg.pmus:
            node = pmu_nodes[p.idcode]
            net.resolve(node, gateway if router is not None else cfg.pdc["ip"])
        if router is not None:
            net.resolve(pdc_node, pdc_node.gateway)

    att = cfg.attack
    if att is not None:
        a = att.attacker
        seg = pmu_seg
        tb.attacker = net.add_host(a["name"], a["mac"], a["ip"], seg, gateway=gateway)
        spec = None
        if att.mutation is not None:
            m = att.mutation
            spec = attacks.MutationSpec(m["idcode"], set=m["set"], scale=m["scale"], bias=m["bias"],
                                        mag_bias=m["mag_bias"], limit=m["limit"])
        victims_a = [pmu_nodes[v] for v in att.victims]
        victim_b = router if router is not None else pdc_node
        sess = attacks.MitmSession(tb.attacker, victims_a, victim_b, att.mode, spec=spec, refresh=ns(att.refresh))
        tb.session = sess
        net.sched.at(ns(att.start), sess.start)
        if att.stop is not None:
            net.sched.at(ns(att.stop), sess.stop)
        for f in att.fcia:
            forged = codec.CommandFrame(idcode=f["idcode"], soc=cfg.epoch + int(f["at"]), cmd=f["cmd"])
            net.sched.at(ns(f["at"]), _safe_fcia, sess, forged)
    net.sched.at(ns(cfg.connect_at), pdc.connect)
    return tb


def _safe_fcia(sess, forged):
    try:
        sess.fcia_inject(forged)
    except codec.MissingConfig as exc:
        sess._log("inject_failed", error=str(exc))


def run_testbed(tb: Testbed, drain: float = 0.5):
    cfg = tb.cfg
    tb.net.run(ns(cfg.connect_at + cfg.duration + drain))
    return tb.pdc.collect()


def estimate_snapshots(tb: Testbed, snapshots) -> list:
    """One EstimationReport dict per snapshot, plus the exported rows."""
    cfg, model = tb.cfg, tb.model
    if not cfg.estimator or model is None:
        return [], pdc_export(snapshots, tb.pdc.configs)
    H_full = build_H(model)
    c_full = offset(model)
    cmap = channel_map_for(model, tb.pdc.configs)
    rows = pdc_export(snapshots, tb.pdc.configs, cmap)
    series = []
    for group in group_rows(rows):
        ms = measurement_set(group, model, cfg.est_sigma)
        keep = ms.available
        rec = {"soc": group[0].soc, "fraction": group[0].fraction, "timestamp": group[0].timestamp,
               "meters_available": int(keep.sum())}
        if keep.sum() <= model.n_states:
            rec["error"] = "unobservable"
            series.append(rec)
            continue
        H = H_full[keep]
        ids = [mid for mid, k in zip(ms.meter_ids, keep) if k]
        try:
            rep = detect_and_identify(H, ms.weights[keep], ms.z[keep], offset=c_full[keep], dof_mode=cfg.dof,
                                      meter_ids=ids)
        except (Singular, RankDeficient) as exc:
            rec["error"] = str(exc)
            series.append(rec)
            continue
        rec.update(rep.to_dict())
        series.append(rec)
    return series, rows


def summarize_run(tb: Testbed, snapshots, series) -> dict:
    pdc = tb.pdc
    est = [s for s in series if "j" in s]
    hist = {}
    for s in est:
        for m in s["flagged_meters"]:
            hist[str(m)] = hist.get(str(m), 0) + 1
    missing = {}
    for snap in snapshots:
        for i in snap.missing():
            missing[str(i)] = missing.get(str(i), 0) + 1
    out = {
        "scenario": tb.cfg.name,
        "seed": tb.cfg.seed,
        "snapshots": len(snapshots),
        "estimated": len(est),
        "detection_rate": (sum(s["bad_data_present"] for s in est) / len(est)) if est else None,
        "flagged_only_meter_1_rate": (sum(s["flagged_meters"] == [1] for s in est) / len(est)) if est else None,
        "flagged_histogram": dict(sorted(hist.items(), key=lambda kv: int(kv[0]))),
        "missing": missing,
        "pdc_bad_crc": pdc.bad_crc,
        "pdc_invalid_packets": tb.pdc_node.stats["invalid_dropped"],
        "pdc_errors": [str(e) for e in pdc.errors],
        "frames_received": {str(i): s.frames for i, s in pdc.streams.items()},
        "K": est[0]["K"] if est else None,
        "T_j": est[0]["T_j"] if est else None,
        "mean_j": float(np.mean([s["j"] for s in est])) if est else None,
    }
    if tb.session is not None:
        sess = tb.session
        out["attack"] = {
            "mode": sess.mode.value,
            "mutated": sess.mutated,
            "dropped": sess.dropped,
            "injected": sess.injected,
            "configs_captured": sorted(sess.configs),
        }
    return out


def _write_report_csv(path, series, meter_ids):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["soc", "fraction", "timestamp", "j", "K", "T_j", "bad_data_present", "flagged_meters"]
                   + [f"sigma_Y_{m}" for m in meter_ids])
        for s in series:
            if "j" not in s:
                w.writerow([s["soc"], s["fraction"], f"{s['timestamp']:.6f}", "", "", "", "", s.get("error", "")])
                continue
            sy = dict(zip(s["meter_ids"], s["sigma_Y"]))
            w.writerow([s["soc"], s["fraction"], f"{s['timestamp']:.6f}", repr(s["j"]), s["K"], repr(s["T_j"]),
                        int(s["bad_data_present"]), " ".join(map(str, s["flagged_meters"]))]
                       + [repr(sy[m]) if m in sy else "" for m in meter_ids])


def _write_plots(tb, series, bus_path, meter_path):
    model = tb.model
    est = [s for s in series if "j" in s]
    with open(bus_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bus", "name", "actual_mag", "estimated_mag", "actual_angle_deg", "estimated_angle_deg"])
        if est:
            xs = np.array([[complex(*v) for v in s["x_est"]] for s in est])
            mean_mag = np.abs(xs).mean(axis=0)
            mean_ang = np.degrees(np.angle(xs)).mean(axis=0)
            truth = model.true_vector()
            for i, b in enumerate(model.states):
                w.writerow([b, model.buses[b].name if b in model.buses else "", repr(float(abs(truth[i]))),
                            repr(float(mean_mag[i])), repr(float(math.degrees(np.angle(truth[i])))),
                            repr(float(mean_ang[i]))])
    with open(meter_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["meter", "label", "mean_sigma_Y", "max_sigma_Y", "flag_rate"])
        for m in model.meters:
            vals = [dict(zip(s["meter_ids"], s["sigma_Y"]))[m.id] for s in est if m.id in s["meter_ids"]]
            if not vals:
                continue
            w.writerow([m.id, m.label, repr(float(np.mean(vals))), repr(float(np.max(vals))),
                        repr(float(np.mean([v > 3 for v in vals])))])


def run_scenario(cfg: ScenarioConfig, out_dir=None, seed: int | None = None, realtime: bool = False) -> RunReport:
    if seed is not None:
        cfg.seed = seed
    tb = build_testbed(cfg)
    if realtime:
        tb.net.run(ns(cfg.connect_at + cfg.duration + 0.5), realtime=True)
        snapshots = tb.pdc.collect()
    else:
        snapshots = run_testbed(tb)
    series, rows = estimate_snapshots(tb, snapshots)
    summary = summarize_run(tb, snapshots, series)
    report = RunReport(cfg.name, series, summary)
    report.testbed = tb
    report.snapshots = snapshots
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        o = cfg.outputs
        write_pcap(out / o["pcap"], tb.capture.records)
        report.pcap_path = str(out / o["pcap"])
        write_snapshots_csv(out / o["snapshots"], rows)
        if tb.model is not None:
            _write_report_csv(out / o["report"], series, [m.id for m in tb.model.meters])
            _write_plots(tb, series, out / o["bus_plot"], out / o["meter_plot"])
        if tb.session is not None:
            tb.session.write_log(out / o["attacker_log"])
            report.attacker_log_path = str(out / o["attacker_log"])
        with open(out / o["summary"], "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        report.artifacts = {k: str(out / v) for k, v in o.items() if (out / v).exists()}
    return report
