"""Command line front end.

Exit status: 0 on success, 1 for usage or configuration errors, 2 when a
run fails at runtime.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import codec
from .codec import CodecError
from .netsim.packets import MalformedPacket, NetPacket
from .netsim.pcap import BadPcapMagic, PcapReader

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


class CliError(Exception):
    def __init__(self, message, code=EXIT_CONFIG):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# run


def _resolve_scenario(arg):
    from .scenario import bundled_scenarios, load_scenario, parse_scenario

    p = Path(arg)
    if p.exists():
        return load_scenario(p)
    table = bundled_scenarios()
    name = arg.removesuffix(".scenario")
    if name in table:
        return parse_scenario(table[name].read_text(), source=table[name].name)
    raise CliError(f"no scenario file {arg!r} (bundled: {', '.join(sorted(table))})")


def cmd_run(args, out=None):
    out = out or sys.stdout
    from .scenario import run_scenario

    cfg = _resolve_scenario(args.scenario)
    out_dir = args.out_dir or f"runs/{cfg.name}"
    try:
        report = run_scenario(cfg, out_dir, seed=args.seed, realtime=args.realtime)
    except (CodecError, MalformedPacket, RuntimeError, ArithmeticError) as exc:
        raise CliError(f"scenario {cfg.name!r} failed: {exc}", EXIT_RUNTIME) from None
    out.write(json.dumps(report.summary, indent=2, sort_keys=True) + "\n")
    for key, path in sorted(report.artifacts.items()):
        out.write(f"{key}: {path}\n")
    return report


# ---------------------------------------------------------------------------
# dissect


def _load_config_file(path) -> dict:
    data = Path(path).read_bytes()
    if data[:1] != b"\xaa":
        try:
            data = bytes.fromhex(data.decode().strip())
        except ValueError:
            raise CliError(f"{path}: not a CFG-2 frame (binary or hex)") from None
    try:
        frame = codec.parse_frame(data)
    except CodecError as exc:
        raise CliError(f"{path}: {exc}") from None
    if not isinstance(frame, codec.ConfigFrame2):
        raise CliError(f"{path}: holds a {frame.frame_type.name} frame, not CFG-2")
    return {frame.idcode: frame}


def dissect_records(records, configs=None, out=None) -> dict:
    """Reassemble TCP payloads per flow and render every C37.118.2 frame."""
    out = out or sys.stdout
    configs = dict(configs or {})
    readers = {}
    next_seq = {}
    stats = {"frames": 0, "bad_crc": 0, "undecoded": 0, "packets": 0}
    for ts, raw in records:
        try:
            pkt = NetPacket.from_bytes(raw)
        except MalformedPacket:
            continue
        if not pkt.is_tcp or not pkt.payload:
            continue
        stats["packets"] += 1
        flow = pkt.flow()
        seq = pkt.tcp.seq
        if flow in next_seq:
            ahead = (seq - next_seq[flow]) & 0xFFFFFFFF
            if ahead >= 0x80000000:  # already seen this stretch of the stream
                continue
        next_seq[flow] = (seq + len(pkt.payload)) & 0xFFFFFFFF
        reader = readers.setdefault(flow, codec.FrameReader())
        for frame_bytes in reader.feed(pkt.payload):
            stats["frames"] += 1
            t = ts / 1e9
            header = f"--- t={t:.6f} {flow[0]}:{flow[1]} > {flow[2]}:{flow[3]} len={len(frame_bytes)}"
            try:
                frame = codec.parse_frame(frame_bytes, configs)
            except codec.BadCrc as exc:
                stats["bad_crc"] += 1
                out.write(f"{header}\n!!! BadCrc: {exc}\n")
                try:
                    frame = codec.parse_frame(frame_bytes, configs, check_crc=False)
                    out.write(codec.render_frame(frame, configs) + "\n")
                except CodecError:
                    out.write(f"  raw = {frame_bytes.hex()}\n")
                continue
            except codec.MissingConfig:
                stats["undecoded"] += 1
                ftype, _, size, idc = codec.peek_header(frame_bytes)
                out.write(f"{header}\n###[ C37.118.2 {ftype.name} ]### (no configuration for stream {idc})\n")
                out.write(f"  framesize = {size}\n  idcode = {idc}\n  body = {frame_bytes[14:-2].hex()}\n")
                continue
            except CodecError as exc:
                out.write(f"{header}\n!!! {type(exc).__name__}: {exc}\n  raw = {frame_bytes.hex()}\n")
                continue
            if isinstance(frame, codec.ConfigFrame2):
                configs[frame.idcode] = frame
            out.write(f"{header}\n{codec.render_frame(frame, configs)}\n")
    return stats


def cmd_dissect(args, out=None, err=None):
    out, err = out or sys.stdout, err or sys.stderr
    try:
        data = Path(args.pcap).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {args.pcap}: {exc.strerror}") from None
    try:
        reader = PcapReader(data)
    except BadPcapMagic as exc:
        raise CliError(f"BadPcapMagic: {exc}") from None
    configs = _load_config_file(args.config) if args.config else {}
    stats = dissect_records(reader, configs, out)
    if reader.truncated:
        err.write("warning: Truncated capture, last record incomplete\n")
    err.write(f"{stats['frames']} frames, {stats['bad_crc']} BadCrc, {stats['undecoded']} without configuration\n")
    return stats


# ---------------------------------------------------------------------------
# estimate


def read_measurements(path, model, sigma):
    """Return a list of ``(label, MeasurementSet)``.

    Two layouts are accepted: ``meter,real,imag[,sigma]`` in per unit (one
    measurement set), or the PDC snapshot export (``soc,fraction,...,meter``
    in volts/amperes, one set per snapshot).
    """
    from .endpoints import ExportRow, group_rows, measurement_set
    from .powersys.noise import MeasurementSet

    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise CliError(f"{path}: no measurement rows")
    cols = set(rows[0])
    try:
        if {"soc", "fraction", "meter", "real", "imag"} <= cols:
            ex = [ExportRow(int(r["soc"]), int(r["fraction"]), float(r["timestamp"] or 0), int(r["pmu"]),
                            int(r["channel"]), r["name"], int(r["meter"]) if r["meter"] else None,
                            complex(float(r["real"]), float(r["imag"])), r["available"] == "1") for r in rows]
            return [(f"{g[0].soc}.{g[0].fraction}", measurement_set(g, model, sigma)) for g in group_rows(ex)]
        if not {"meter", "real", "imag"} <= cols:
            raise CliError(f"{path}: expected columns meter,real,imag[,sigma]")
        by_id = {}
        for n, r in enumerate(rows, start=2):
            by_id[int(r["meter"])] = (complex(float(r["real"]), float(r["imag"])),
                                      float(r["sigma"]) if r.get("sigma") else sigma)
    except (KeyError, ValueError) as exc:
        raise CliError(f"{path}: bad measurement row ({exc})") from None
    ids = [m.id for m in model.meters]
    unknown = sorted(set(by_id) - set(ids))
    if unknown:
        raise CliError(f"{path}: meter ids {unknown} not in model")
    z = np.array([by_id[i][0] if i in by_id else np.nan for i in ids], dtype=complex)
    s = np.array([by_id[i][1] if i in by_id else sigma for i in ids])
    avail = np.array([i in by_id for i in ids])
    return [("measurements", MeasurementSet(z, s, ids, [m.pmu for m in model.meters], avail))]


def estimate_report(ms, model, dof="complex"):
    from .powersys import build_H, detect_and_identify, offset

    keep = ms.available
    H = build_H(model)[keep]
    ids = [i for i, k in zip(ms.meter_ids, keep) if k]
    return detect_and_identify(H, ms.weights[keep], ms.z[keep], sigma=ms.sigma[keep], offset=offset(model)[keep],
                               dof_mode=dof, meter_ids=ids)


def cmd_estimate(args, out=None):
    out = out or sys.stdout
    from .powersys import ModelError, RankDeficient, Singular, load_model

    try:
        model = load_model(args.model)
    except (ModelError, OSError) as exc:
        raise CliError(f"model: {exc}") from None
    sets = read_measurements(args.measurements, model, args.sigma)
    results = []
    for label, ms in sets:
        try:
            rep = estimate_report(ms, model, args.dof)
        except (Singular, RankDeficient) as exc:
            results.append({"label": label, "error": str(exc)})
            continue
        results.append({"label": label, **rep.to_dict()})
    if args.format == "csv":
        w = csv.writer(out)
        w.writerow(["label", "j", "K", "T_j", "bad_data_present", "flagged_meters", "sigma_Y"])
        for r in results:
            if "error" in r:
                w.writerow([r["label"], "", "", "", "", "", r["error"]])
            else:
                w.writerow([r["label"], repr(r["j"]), r["K"], repr(r["T_j"]), int(r["bad_data_present"]),
                            " ".join(map(str, r["flagged_meters"])), " ".join(repr(s) for s in r["sigma_Y"])])
    else:
        doc = results[0] if len(results) == 1 else results
        out.write(json.dumps(doc, indent=2) + "\n")
    if all("error" in r for r in results):
        raise CliError("no measurement set could be estimated", EXIT_RUNTIME)
    return results


# ---------------------------------------------------------------------------
# buildpkt


def frame_from_spec(doc: dict):
    """Frame (and config, for data frames) described by a spec mapping."""
    from .scenario import ConfigError, FORMATS

    if not isinstance(doc, dict):
        raise ConfigError("frame spec must be a mapping")
    kind = doc.get("kind")
    common = {}
    for key in ("idcode", "soc", "fraction", "time_quality"):
        if key in doc:
            if not isinstance(doc[key], int) or isinstance(doc[key], bool):
                raise ConfigError(f"expected integer, got {doc[key]!r}", field=key)
            common[key] = doc[key]
    if "idcode" not in common:
        raise ConfigError("missing required field", field="idcode")
    if kind == "command":
        cmd = doc.get("cmd")
        try:
            cmd = codec.Command[str(cmd).upper()] if not isinstance(cmd, int) else codec.Command(cmd)
        except (KeyError, ValueError):
            raise ConfigError(f"unknown command {cmd!r}", field="cmd") from None
        ext = doc.get("extframe", "")
        return codec.CommandFrame(cmd=cmd, extframe=bytes.fromhex(ext), **common), None
    if kind == "header":
        return codec.HeaderFrame(info=str(doc.get("info", "")).encode(), **common), None
    if kind in ("config", "data"):
        cfg_doc = doc if kind == "config" else doc.get("config")
        if not isinstance(cfg_doc, dict):
            raise ConfigError("data frames need a 'config' mapping", field="config")
        blocks = []
        for i, p in enumerate(cfg_doc.get("pmus") or []):
            fmt = p.get("format", "float_rect")
            if fmt not in FORMATS:
                raise ConfigError(f"format must be one of {sorted(FORMATS)}", field=f"pmus[{i}].format")
            names = tuple(p.get("phasors", ()))
            units = p.get("units") or ["V"] * len(names)
            if len(units) != len(names):
                raise ConfigError("one unit per phasor", field=f"pmus[{i}].units")
            phunits = tuple(
                (codec.PhasorUnit.VOLTAGE if u == "V" else codec.PhasorUnit.CURRENT, int(p.get("scale", 10000)))
                for u in units
            )
            blocks.append(codec.PmuBlock(
                station_name=str(p.get("station", f"PMU{i}")), idcode=int(p.get("idcode", common["idcode"])),
                fmt=FORMATS[fmt], phasor_names=names, phunits=phunits, fnom=int(p.get("fnom", 60)),
            ))
        cfg = codec.ConfigFrame2(time_base=int(cfg_doc.get("time_base", 1_000_000)), pmus=tuple(blocks),
                                 data_rate=int(cfg_doc.get("data_rate", 30)),
                                 **({"idcode": common["idcode"]} if kind == "data" else common))
        if kind == "config":
            return cfg, None
        datas = []
        for i, d in enumerate(doc.get("pmus") or []):
            phs = []
            for v in d.get("phasors", []):
                if not (isinstance(v, list) and len(v) == 2):
                    raise ConfigError(f"phasor must be [real, imag], got {v!r}", field=f"pmus[{i}].phasors")
                phs.append(complex(v[0], v[1]))
            datas.append(codec.PmuData(stat=int(d.get("stat", 0)), phasors=tuple(phs), freq=d.get("freq", 60.0),
                                       dfreq=d.get("dfreq", 0.0)))
        return codec.DataFrame(pmus=tuple(datas), **common), cfg
    raise ConfigError(f"kind must be command, header, config or data, got {kind!r}", field="kind")


def cmd_buildpkt(args, out=None):
    out = out or sys.stdout
    import yaml

    from .scenario import ConfigError, Doc

    try:
        text = Path(args.spec).read_text()
    except OSError as exc:
        raise CliError(f"cannot read {args.spec}: {exc.strerror}") from None
    doc = Doc(text, source=args.spec)
    try:
        frame, cfg = frame_from_spec(doc.data)
        data = codec.build_frame(frame, cfg)
    except ConfigError as exc:
        raise doc.error(exc.field or "kind", exc.message) from None
    except (CodecError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc), source=args.spec) from None
    if args.out:
        Path(args.out).write_bytes(data)
        if cfg is not None and args.config_out:
            Path(args.config_out).write_bytes(codec.build_frame(cfg))
    out.write(data.hex() + "\n")
    return data


# ---------------------------------------------------------------------------
# serve


def cmd_serve(args, out=None):
    out = out or sys.stdout
    import asyncio

    from .endpoints import ConstantSource, FeederSource, PmuConfig, serve_host
    from .powersys import load_model

    if args.feeder:
        src = FeederSource(load_model(args.model), args.idcode, sigma=args.sigma, seed=args.seed or 0)
    else:
        vals = [complex(v.replace(" ", "")) for v in args.constant] if args.constant else [2401.78 + 0j]
        src = ConstantSource(vals)
    cfg = PmuConfig(args.idcode, src, data_rate=args.rate, port=args.port)

    def ready(addr):
        out.write(f"PMU {args.idcode} listening on {addr[0]}:{addr[1]}\n")
        out.flush()

    try:
        asyncio.run(serve_host(cfg, args.host, args.port, duration=args.duration, ready=ready))
    except OSError as exc:
        raise CliError(f"cannot serve: {exc}", EXIT_RUNTIME) from None
    except KeyboardInterrupt:
        pass


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="phasorlab", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--out-dir", default=None, help="directory for run artifacts")
    p.add_argument("--realtime", action="store_true", help="pace the scheduler with the wall clock")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario end to end")
    r.add_argument("scenario", help="scenario file or bundled name")
    r.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    r.add_argument("--out-dir", default=argparse.SUPPRESS)
    r.add_argument("--realtime", action="store_true", default=argparse.SUPPRESS)

    d = sub.add_parser("dissect", help="render C37.118.2 frames found in a pcap")
    d.add_argument("pcap")
    d.add_argument("--config", help="CFG-2 frame file (binary or hex) for data frames")

    e = sub.add_parser("estimate", help="state estimation and bad-data report")
    e.add_argument("measurements", help="CSV: meter,real,imag[,sigma] or a snapshot export")
    e.add_argument("--model", default=None, help="model file (default: bundled phase-A feeder)")
    e.add_argument("--sigma", type=float, default=0.05)
    e.add_argument("--dof", choices=["complex", "real"], default="complex")
    e.add_argument("--format", choices=["json", "csv"], default="json")

    b = sub.add_parser("buildpkt", help="build a frame from a YAML spec")
    b.add_argument("spec")
    b.add_argument("--out", help="write the frame bytes here")
    b.add_argument("--config-out", help="for data frames, also write the CFG-2 frame")

    s = sub.add_parser("serve", help="serve a PMU on a real TCP socket")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=4712)
    s.add_argument("--idcode", type=int, default=1)
    s.add_argument("--rate", type=int, default=30)
    s.add_argument("--duration", type=float, default=None)
    s.add_argument("--constant", nargs="*", help="constant phasors, e.g. 2453+2444j")
    s.add_argument("--feeder", action="store_true", help="stream this PMU's feeder meters")
    s.add_argument("--model", default=None)
    s.add_argument("--sigma", type=float, default=0.05)
    return p


COMMANDS = {"run": cmd_run, "dissect": cmd_dissect, "estimate": cmd_estimate, "buildpkt": cmd_buildpkt,
            "serve": cmd_serve}


def main(argv=None) -> int:
    from .scenario import ConfigError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"ConfigError: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
