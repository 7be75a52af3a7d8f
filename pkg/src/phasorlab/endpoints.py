"""PMU server and PDC client.

The PMU side is a transport-free state machine (:class:`PmuSession`) driven
either by the in-process network (:class:`SimPmuServer`) or by a real asyncio
socket (:func:`serve_host`). The PDC connects to each PMU over its own TCP
stream, asks for CFG-2, turns data on and groups the decoded data frames by
timestamp.
"""

from __future__ import annotations

import asyncio
import csv
import logging
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import codec
from .codec import (
    BadCrc,
    CodecError,
    Command,
    CommandFrame,
    ConfigFrame2,
    DataFormat,
    DataFrame,
    FLOAT_RECT,
    FrameReader,
    HeaderFrame,
    PhasorUnit,
    PmuBlock,
    PmuData,
    build_frame,
    parse_frame,
)
from .netsim.sim import NS, ConnReset, NetError

log = logging.getLogger(__name__)

DEFAULT_PORT = 4712
DEFAULT_EPOCH = 1_700_000_000


class HandshakeTimeout(Exception):
    pass


class PmuState(Enum):
    IDLE = "Idle"
    CONFIG_SENT = "ConfigSent"
    STREAMING = "Streaming"


# ---------------------------------------------------------------------------
# signal sources


class ConstantSource:
    def __init__(self, phasors, names=None):
        self.phasors = [complex(p) for p in phasors]
        self.names = list(names) if names else [f"PH{i + 1}" for i in range(len(self.phasors))]
        self.units = [PhasorUnit.VOLTAGE] * len(self.phasors)

    @property
    def width(self):
        return len(self.phasors)

    def sample(self, k: int) -> list:
        return list(self.phasors)


class FeederSource:
    """The meters of one PMU evaluated on the feeder model, in volts/amperes.

    Noise is drawn in per unit from a generator keyed on ``(seed, idcode, k)``
    so a given frame index always carries the same sample regardless of when
    it is produced.
    """

    def __init__(self, model, idcode, sigma=0.05, mu=0.0, seed=0, x_true=None):
        from .powersys.model import build_H, offset

        self.model = model
        self.idcode = idcode
        self.sigma = sigma
        self.mu = mu
        self.seed = seed
        rows = [i for i, m in enumerate(model.meters) if m.pmu == idcode]
        if not rows:
            raise ValueError(f"no meter of model {model.name!r} belongs to PMU {idcode}")
        x = model.true_vector() if x_true is None else np.asarray(x_true, dtype=complex)
        z = build_H(model) @ x + offset(model)
        self.meters = [model.meters[i] for i in rows]
        self.z_pu = z[rows]
        self.base = model.meter_bases()[rows]
        self.names = [m.label for m in self.meters]
        self.units = [PhasorUnit.VOLTAGE if m.kind == "voltage" else PhasorUnit.CURRENT for m in self.meters]

    @property
    def width(self):
        return len(self.names)

    def sample(self, k: int) -> list:
        z = self.z_pu
        if self.sigma or self.mu:
            rng = np.random.default_rng([self.seed, self.idcode, k])
            n = len(z)
            z = z + (self.sigma * rng.standard_normal(n) + self.mu) + 1j * (self.sigma * rng.standard_normal(n) + self.mu)
        return [complex(v) for v in z * self.base]


# ---------------------------------------------------------------------------
# PMU


@dataclass
class PmuConfig:
    idcode: int
    source: object
    station_name: str = ""
    data_rate: int = 30
    time_base: int = 1_000_000
    fmt: DataFormat = FLOAT_RECT
    phunit_scale: dict = field(default_factory=lambda: {PhasorUnit.VOLTAGE: 10000, PhasorUnit.CURRENT: 2000})
    fnom: int = 60
    port: int = DEFAULT_PORT
    epoch: int = DEFAULT_EPOCH
    freq: float = 60.0

    def __post_init__(self):
        if self.data_rate <= 0:
            raise ValueError("data_rate must be positive")
        if not self.station_name:
            self.station_name = f"PMU{self.idcode}"

    def block(self) -> PmuBlock:
        src = self.source
        return PmuBlock(
            station_name=self.station_name,
            idcode=self.idcode,
            fmt=self.fmt,
            phasor_names=tuple(src.names),
            phunits=tuple((u, self.phunit_scale[u]) for u in src.units),
            fnom=self.fnom,
        )

    def config_frame(self, soc=0, fraction=0) -> ConfigFrame2:
        return ConfigFrame2(
            idcode=self.idcode, soc=soc, fraction=fraction, time_base=self.time_base,
            pmus=(self.block(),), data_rate=self.data_rate,
        )


def tick_index(now_ns: int, rate: int) -> int:
    """Index of the first reporting instant at or after ``now_ns``."""
    # smallest k with tick_time(k) >= now_ns
    return (now_ns - 1) * rate // NS + 1


def tick_time(k: int, rate: int) -> int:
    return -(-k * NS // rate)


class PmuSession:
    """PMU protocol state for one client connection."""

    def __init__(self, config: PmuConfig):
        self.config = config
        self.state = PmuState.IDLE
        self.reader = FrameReader()
        self.bad_crc = 0
        self.malformed = 0
        self.commands = []
        self.frames_sent = 0
        self._cfg = config.config_frame()
        self._block = self._cfg.pmus[0]

    @property
    def streaming(self):
        return self.state is PmuState.STREAMING

    def on_bytes(self, data: bytes, now_ns: int = 0) -> list:
        """Feed received bytes; returns frames (bytes) to send back."""
        out = []
        for raw in self.reader.feed(data):
            try:
                frame = parse_frame(raw)
            except BadCrc as exc:
                self.bad_crc += 1
                log.info("PMU %d ignored frame: %s", self.config.idcode, exc)
                continue
            except CodecError as exc:
                self.malformed += 1
                log.info("PMU %d ignored frame: %s", self.config.idcode, exc)
                continue
            if isinstance(frame, CommandFrame):
                out.extend(self.on_command(frame.cmd, now_ns))
        return out

    def on_command(self, cmd, now_ns: int = 0) -> list:
        self.commands.append(Command(cmd))
        cfg = self.config
        if cmd == Command.SEND_CFG2:
            if self.state is PmuState.IDLE:
                self.state = PmuState.CONFIG_SENT
            frame = cfg.config_frame(soc=cfg.epoch + now_ns // NS)
            return [build_frame(frame)]
        if cmd == Command.SEND_HDR:
            info = f"{cfg.station_name} idcode={cfg.idcode} rate={cfg.data_rate}".encode()
            return [build_frame(HeaderFrame(idcode=cfg.idcode, soc=cfg.epoch + now_ns // NS, info=info))]
        if cmd == Command.DATA_ON:
            self.state = PmuState.STREAMING
        elif cmd == Command.DATA_OFF:
            if self.state is PmuState.STREAMING:
                self.state = PmuState.IDLE
        return []

    def data_frame(self, k: int) -> bytes:
        cfg = self.config
        values = cfg.source.sample(k)
        if not cfg.fmt.phasor_float:
            scales = [codec.phasor_scale(u) for u in self._block.phunits]
            values = [complex(round(v.real / s), round(v.imag / s)) for v, s in zip(values, scales)]
        if cfg.fmt.freq_float:
            freq, dfreq = cfg.freq, 0.0
        else:
            freq, dfreq = int(round((cfg.freq - cfg.fnom) * 1000)), 0
        frame = DataFrame(
            idcode=cfg.idcode,
            soc=cfg.epoch + k // cfg.data_rate,
            fraction=(k % cfg.data_rate) * cfg.time_base // cfg.data_rate,
            pmus=(PmuData(stat=0, phasors=tuple(values), freq=freq, dfreq=dfreq),),
        )
        self.frames_sent += 1
        return build_frame(frame, self._cfg)


class SimPmuServer:
    """Runs a PMU on a netsim node: one session per accepted connection."""

    def __init__(self, node, config: PmuConfig, stop_time: int | None = None):
        self.node = node
        self.config = config
        self.stop_time = stop_time
        self.sessions = []
        node.listen(config.port, self._accept)

    def _accept(self, conn):
        session = PmuSession(self.config)
        self.sessions.append(session)
        conn.on_data = lambda c, data: self._on_data(c, session, data)

    @property
    def sched(self):
        return self.node.net.sched

    def _on_data(self, conn, session, data):
        was_streaming = session.streaming
        for reply in session.on_bytes(data, self.sched.now):
            self._send(conn, session, reply)
        if session.streaming and not was_streaming:
            k = tick_index(self.sched.now, self.config.data_rate)
            session._run_id = getattr(session, "_run_id", 0) + 1
            self.sched.at(tick_time(k, self.config.data_rate), self._tick, conn, session, k, session._run_id)

    def _send(self, conn, session, raw):
        try:
            conn.send(raw)
        except (ConnReset, NetError) as exc:
            log.info("PMU %d: %s", self.config.idcode, exc)
            session.state = PmuState.IDLE

    def _tick(self, conn, session, k, run_id):
        if not session.streaming or run_id != session._run_id:
            return
        now = self.sched.now
        if self.stop_time is not None and now > self.stop_time:
            return
        self._send(conn, session, session.data_frame(k))
        rate = self.config.data_rate
        self.sched.at(tick_time(k + 1, rate), self._tick, conn, session, k + 1, run_id)


def pmu_serve(config: PmuConfig, transport, **kw):
    """Start a PMU on ``transport``: a netsim node, or ``(host, port)`` for real TCP."""
    if isinstance(transport, tuple):
        return asyncio.run(serve_host(config, *transport, **kw))
    return SimPmuServer(transport, config, **kw)


async def serve_host(config: PmuConfig, host="127.0.0.1", port=DEFAULT_PORT, duration=None, ready=None):
    """Serve the PMU on a real TCP socket with wall-clock frame timing."""
    t0 = time.monotonic()

    def now_ns():
        return int((time.monotonic() - t0) * NS)

    async def handle(reader, writer):
        session = PmuSession(config)
        streamer = None

        async def stream():
            k = tick_index(now_ns(), config.data_rate)
            while session.streaming:
                delay = tick_time(k, config.data_rate) - now_ns()
                if delay > 0:
                    await asyncio.sleep(delay / NS)
                if not session.streaming:
                    break
                writer.write(session.data_frame(k))
                await writer.drain()
                k += 1

        try:
            while True:
                data = await reader.read(4096)
                if not data:
                    break
                for reply in session.on_bytes(data, now_ns()):
                    writer.write(reply)
                await writer.drain()
                if session.streaming and (streamer is None or streamer.done()):
                    streamer = asyncio.ensure_future(stream())
        except (ConnectionError, asyncio.CancelledError):
            pass
        finally:
            session.state = PmuState.IDLE
            if streamer is not None:
                streamer.cancel()
            writer.close()

    server = await asyncio.start_server(handle, host, port)
    if ready is not None:
        ready(server.sockets[0].getsockname())
    async with server:
        if duration is None:
            await server.serve_forever()
        else:
            await asyncio.sleep(duration)


# ---------------------------------------------------------------------------
# PDC


MISSING = None


@dataclass
class Snapshot:
    soc: int
    fraction: int
    time_base: int
    entries: dict  # stream idcode -> DataFrame or MISSING

    @property
    def key(self):
        return (self.soc, self.fraction)

    @property
    def timestamp(self) -> float:
        return self.soc + self.fraction / self.time_base

    def missing(self) -> list:
        return [i for i, f in self.entries.items() if f is MISSING]


class SnapshotAssembler:
    """Groups frames by (soc, fraction); single owner, driven by the PDC."""

    def __init__(self, expected, wait_window: int, time_base: int = 1_000_000):
        self.expected = list(expected)
        self.wait_window = wait_window
        self.time_base = time_base
        self.pending = {}
        self.deadlines = {}
        self.emitted = []
        self.late = 0
        self._done = set()

    def add(self, idcode, frame: DataFrame, now: int) -> list:
        key = (frame.soc, frame.fraction)
        if key in self._done:
            self.late += 1
            return []
        slot = self.pending.setdefault(key, {})
        if key not in self.deadlines:
            self.deadlines[key] = now + self.wait_window
        slot[idcode] = frame
        if all(i in slot for i in self.expected):
            return [self._emit(key)]
        return []

    def expire(self, now: int) -> list:
        out = []
        for key in sorted(k for k, d in self.deadlines.items() if d <= now):
            out.append(self._emit(key))
        return out

    def flush(self) -> list:
        return [self._emit(k) for k in sorted(self.pending)]

    def _emit(self, key):
        slot = self.pending.pop(key)
        del self.deadlines[key]
        self._done.add(key)
        snap = Snapshot(key[0], key[1], self.time_base, {i: slot.get(i, MISSING) for i in self.expected})
        self.emitted.append(snap)
        return snap


class PdcStream:
    def __init__(self, idcode, ip, port):
        self.idcode = idcode
        self.ip = ip
        self.port = port
        self.conn = None
        self.config = None
        self.state = "init"
        self.reader = FrameReader()
        self.bad_crc = 0
        self.malformed = 0
        self.error = None
        self.frames = 0
        self.received = bytearray()


class Pdc:
    """PDC on a netsim node. ``pmus`` is a list of ``(idcode, ip, port)``."""

    def __init__(self, node, pmus, wait_window: int | None = None, handshake_timeout: int = NS,
                 data_rate: int = 30, time_base: int = 1_000_000, on_snapshot=None, epoch: int = DEFAULT_EPOCH):
        self.node = node
        self.epoch = epoch
        self.streams = {idc: PdcStream(idc, ip, port) for idc, ip, port in pmus}
        ww = wait_window if wait_window is not None else 2 * NS // data_rate
        self.assembler = SnapshotAssembler(self.streams, ww, time_base)
        self.handshake_timeout = handshake_timeout
        self.on_snapshot = on_snapshot
        self.snapshots = self.assembler.emitted
        self.errors = []
        self._ticking = False

    @property
    def sched(self):
        return self.node.net.sched

    @property
    def configs(self) -> dict:
        return {i: s.config for i, s in self.streams.items() if s.config is not None}

    def connect(self):
        """pdc_connect: open every stream and start the CFG-2 / DataOn handshake."""
        for st in self.streams.values():
            st.state = "connecting"
            try:
                st.conn = self.node.connect(st.ip, st.port, on_established=lambda c, st=st: self._established(st))
            except NetError as exc:
                self._fail(st, exc)
                continue
            st.conn.on_data = lambda c, data, st=st: self._on_data(st, data)
            st.conn.on_close = lambda c, st=st: self._closed(st)
            self.sched.after(self.handshake_timeout, self._check_handshake, st)

    def _established(self, st):
        st.state = "wait_cfg"
        self._command(st, Command.SEND_CFG2)

    def _command(self, st, cmd):
        soc = self.epoch + self.sched.now // NS
        st.conn.send(build_frame(CommandFrame(idcode=st.idcode, soc=soc, cmd=cmd)))

    def send_command(self, idcode, cmd):
        self._command(self.streams[idcode], cmd)

    def _check_handshake(self, st):
        if st.config is None and st.state not in ("failed",):
            self._fail(st, HandshakeTimeout(f"PMU {st.idcode} at {st.ip}:{st.port} sent no CFG-2"))

    def _fail(self, st, exc):
        st.state = "failed"
        st.error = exc
        self.errors.append(exc)
        log.info("PDC: %s", exc)

    def _closed(self, st):
        if st.state != "failed":
            self._fail(st, ConnReset(f"stream to PMU {st.idcode} reset"))

    def _on_data(self, st, data):
        st.received += data
        now = self.sched.now
        for raw in st.reader.feed(data):
            try:
                frame = parse_frame(raw, st.config)
            except BadCrc:
                st.bad_crc += 1
                continue
            except CodecError as exc:
                st.malformed += 1
                log.debug("PDC dropped frame from %d: %s", st.idcode, exc)
                continue
            if isinstance(frame, ConfigFrame2):
                first = st.config is None
                st.config = frame
                if first:
                    st.state = "streaming"
                    self._command(st, Command.DATA_ON)
            elif isinstance(frame, DataFrame):
                st.frames += 1
                for snap in self.assembler.add(st.idcode, frame, now):
                    self._deliver(snap)
                self._arm()

    def _arm(self):
        if not self._ticking and self.assembler.deadlines:
            self._ticking = True
            self.sched.at(min(self.assembler.deadlines.values()), self._expire)

    def _expire(self):
        self._ticking = False
        for snap in self.assembler.expire(self.sched.now):
            self._deliver(snap)
        self._arm()

    def _deliver(self, snap):
        if self.on_snapshot:
            self.on_snapshot(snap)

    def collect(self) -> list:
        """pdc_collect: snapshots so far, plus any still pending once the window is over."""
        for snap in self.assembler.expire(self.sched.now):
            self._deliver(snap)
        return list(self.snapshots)

    @property
    def bad_crc(self) -> int:
        return sum(s.bad_crc for s in self.streams.values())


def pdc_connect(node, pmu_addresses, **kw) -> Pdc:
    pdc = Pdc(node, pmu_addresses, **kw)
    pdc.connect()
    return pdc


def pdc_collect(pdc: Pdc, until: int | None = None) -> list:
    if until is not None:
        pdc.node.net.run(until)
    return pdc.collect()


# ---------------------------------------------------------------------------
# export


@dataclass
class ExportRow:
    soc: int
    fraction: int
    timestamp: float
    pmu: int
    channel: int
    name: str
    meter: int | None
    value: complex
    available: bool


def channel_map_for(model, configs=None) -> dict:
    """``(pmu idcode, channel index) -> meter id`` matched on channel names."""
    out = {}
    for m in model.meters:
        if m.pmu is None:
            continue
        names = None
        if configs and m.pmu in configs:
            for block in configs[m.pmu].pmus:
                if block.idcode == m.pmu:
                    names = list(block.phasor_names)
        if names is None:
            names = [x.label for x in model.meters_of(m.pmu)]
        if m.label in names:
            out[(m.pmu, names.index(m.label))] = m.id
    return out


def pdc_export(snapshots, configs, channel_map=None) -> list:
    """Decoded phasors in engineering units, one row per channel per snapshot.

    Integer phasors are scaled by their PHUNIT factor; float phasors pass
    through. Channels of missing PMUs are emitted with ``available=False``.
    """
    channel_map = channel_map or {}
    rows = []
    for snap in snapshots:
        for stream_id, frame in snap.entries.items():
            cfg = configs.get(stream_id)
            if frame is MISSING:
                if cfg is not None:
                    for block in cfg.pmus:
                        for ch, nm in enumerate(block.phasor_names):
                            rows.append(ExportRow(snap.soc, snap.fraction, snap.timestamp, block.idcode, ch, nm,
                                                  channel_map.get((block.idcode, ch)), complex("nan+nanj"), False))
                else:
                    for (pmu, ch), meter in sorted(channel_map.items()):
                        if pmu == stream_id:
                            rows.append(ExportRow(snap.soc, snap.fraction, snap.timestamp, pmu, ch, "",
                                                  meter, complex("nan+nanj"), False))
                continue
            for block, data in zip(cfg.pmus, frame.pmus):
                for ch, (nm, unit, ph) in enumerate(zip(block.phasor_names, block.phunits, data.phasors)):
                    value = complex(ph)
                    if not block.fmt.phasor_float:
                        value = value * codec.phasor_scale(unit)
                    rows.append(ExportRow(snap.soc, snap.fraction, snap.timestamp, block.idcode, ch, nm,
                                          channel_map.get((block.idcode, ch)), value, True))
    return rows


def measurement_set(rows, model, sigma: float = 0.05):
    """Rows of one snapshot converted to a per-unit MeasurementSet in model order."""
    from .powersys.noise import MeasurementSet

    by_meter = {r.meter: r for r in rows if r.meter is not None}
    z = np.full(model.n_meters, np.nan + 0j)
    avail = np.zeros(model.n_meters, dtype=bool)
    bases = model.meter_bases()
    for i, m in enumerate(model.meters):
        r = by_meter.get(m.id)
        if r is not None and r.available:
            z[i] = r.value / bases[i]
            avail[i] = True
    return MeasurementSet(z=z, sigma=np.full(model.n_meters, sigma), meter_ids=[m.id for m in model.meters],
                          pmu_of=[m.pmu for m in model.meters], available=avail)


def group_rows(rows) -> list:
    """Split export rows into per-snapshot lists, preserving order."""
    groups = {}
    for r in rows:
        groups.setdefault((r.soc, r.fraction), []).append(r)
    return [groups[k] for k in sorted(groups)]


def write_snapshots_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["soc", "fraction", "timestamp", "pmu", "channel", "name", "meter", "real", "imag", "available"])
        for r in rows:
            w.writerow([r.soc, r.fraction, f"{r.timestamp:.6f}", r.pmu, r.channel, r.name,
                        "" if r.meter is None else r.meter, repr(r.value.real), repr(r.value.imag), int(r.available)])
