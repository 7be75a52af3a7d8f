"""Deterministic in-process Ethernet/IPv4/TCP network.

Everything advances on one virtual clock (integer nanoseconds) owned by a
``Scheduler``. Hosts resolve next hops with ARP, exchange simplified TCP
segments (handshake, in-order delivery, real seq/ack/checksums, no
retransmission) and can forward transit traffic. A node with an attached
``InterceptQueue`` hands forwarded packets to user code for a verdict
before they continue, which is how the attack layer sits in the path.
"""

from __future__ import annotations

import heapq
import ipaddress
import itertools
import logging
import random
import time
from collections import deque
from dataclasses import dataclass, field

from .packets import (
    ARP_REPLY,
    ARP_REQUEST,
    BROADCAST,
    ETH_ARP,
    TCP_ACK,
    TCP_FIN,
    TCP_PSH,
    TCP_RST,
    TCP_SYN,
    MalformedPacket,
    NetPacket,
    build_arp,
    build_tcp_packet,
    ipv4_checksum,
    mac_bytes,
    mac_str,
    validate_packet,
)

log = logging.getLogger(__name__)

NS = 1_000_000_000
MSS = 1460
ARP_TIMEOUT_NS = NS
ZERO_MAC = b"\x00" * 6


class NetError(Exception):
    pass


class NoSuchIp(NetError):
    pass


class ConnReset(NetError):
    pass


def seconds(t_ns: int) -> float:
    return t_ns / NS


def ns(t_seconds: float) -> int:
    return int(round(t_seconds * NS))


class Scheduler:
    """Virtual-time event queue. Ties are broken by submission order."""

    def __init__(self):
        self.now = 0
        self._queue = []
        self._counter = itertools.count()

    def at(self, when: int, fn, *args):
        if when < self.now:
            when = self.now
        heapq.heappush(self._queue, (when, next(self._counter), fn, args))

    def after(self, delay: int, fn, *args):
        self.at(self.now + delay, fn, *args)

    def pending(self) -> int:
        return len(self._queue)

    def run(self, until: int | None = None, realtime: bool = False) -> int:
        """Process events up to ``until`` (inclusive); returns the event count."""
        count = 0
        wall0 = time.monotonic() - self.now / NS
        while self._queue:
            when = self._queue[0][0]
            if until is not None and when > until:
                break
            when, _, fn, args = heapq.heappop(self._queue)
            if realtime:
                delay = wall0 + when / NS - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
            self.now = when
            fn(*args)
            count += 1
        if until is not None and until > self.now:
            self.now = until
        return count


# ---------------------------------------------------------------------------
# Layer 2


class Segment:
    """One broadcast domain (an Ethernet switch)."""

    def __init__(self, net: "Network", name: str):
        self.net = net
        self.name = name
        self.interfaces = []

    def transmit(self, iface: "Interface", raw: bytes):
        net = self.net
        net._record(raw, sender=iface.node)
        dst = raw[:6]
        for other in self.interfaces:
            if other is iface:
                continue
            if dst == BROADCAST or dst == other.mac:
                net.sched.after(net.link_delay, other.node._receive, other, raw)


@dataclass
class Interface:
    node: "Node"
    name: str
    mac: bytes
    ip: str
    prefix: int
    segment: Segment

    @property
    def network(self):
        return ipaddress.IPv4Network(f"{self.ip}/{self.prefix}", strict=False)

    def on_link(self, ip: str) -> bool:
        return ipaddress.IPv4Address(ip) in self.network


# ---------------------------------------------------------------------------
# Interception (the NetfilterQueue analogue)


class Verdict:
    ACCEPT = "accept"
    DROP = "drop"


@dataclass
class MutateAndAccept:
    packet: NetPacket


@dataclass
class Queued:
    id: int
    packet: NetPacket
    raw: bytes
    arrived: int


class InterceptQueue:
    """FIFO of forwarded packets waiting for a verdict.

    With a handler installed every packet is handed to it in arrival order
    and released with the returned verdict. Without one, packets wait until
    :meth:`release` is called.
    """

    def __init__(self, node: "Node", processing_delay: int = 20_000):
        self.node = node
        self.processing_delay = processing_delay
        self.pending = deque()
        self.handler = None
        self.seen = 0
        self.released = []
        self._ids = itertools.count(1)

    def set_handler(self, handler):
        self.handler = handler
        if handler is not None:
            while self.pending:
                self._process()

    def _enqueue(self, packet: NetPacket, raw: bytes):
        self.seen += 1
        self.pending.append(Queued(next(self._ids), packet, raw, self.node.net.sched.now))
        if self.handler is not None:
            self.node.net.sched.after(self.processing_delay, self._process)

    def _process(self):
        if self.pending and self.handler is not None:
            item = self.pending[0]
            self.release(self.handler(item.packet.copy()))

    def release(self, verdict=Verdict.ACCEPT):
        item = self.pending.popleft()
        self.released.append((item.id, verdict if isinstance(verdict, str) else "mutate"))
        if verdict == Verdict.DROP:
            self.node.stats["intercept_dropped"] += 1
            return
        packet = verdict.packet if isinstance(verdict, MutateAndAccept) else item.packet
        self.node._forward_out(packet)


# ---------------------------------------------------------------------------
# TCP


class StreamConn:
    """One endpoint of a simplified TCP connection."""

    def __init__(self, node, local_port, remote_ip, remote_port, isn):
        self.node = node
        self.local_port = local_port
        self.remote_ip = remote_ip
        self.remote_port = remote_port
        self.iss = isn
        self.snd_nxt = isn
        self.rcv_nxt = None
        self.state = "CLOSED"
        self.on_data = None
        self.on_established = None
        self.on_close = None
        self.received = bytearray()
        self.sent = bytearray()
        self._ooo = {}

    @property
    def key(self):
        return (self.local_port, self.remote_ip, self.remote_port)

    @property
    def local_ip(self):
        return self.node.route(self.remote_ip)[0].ip

    def _segment(self, flags, payload=b""):
        iface, _ = self.node.route(self.remote_ip)
        pkt = build_tcp_packet(
            iface.mac, ZERO_MAC, iface.ip, self.remote_ip, self.local_port, self.remote_port,
            self.snd_nxt, self.rcv_nxt or 0, flags, payload, ident=self.node._next_ident(),
        )
        self.node.ip_output(pkt)

    def send(self, data: bytes):
        if self.state == "RESET":
            raise ConnReset(f"{self.node.name}:{self.local_port} connection was reset")
        if self.state != "ESTABLISHED":
            raise NetError(f"connection {self.key} not established ({self.state})")
        data = bytes(data)
        self.sent += data
        for off in range(0, len(data), MSS):
            chunk = data[off:off + MSS]
            self._segment(TCP_PSH | TCP_ACK, chunk)
            self.snd_nxt = (self.snd_nxt + len(chunk)) & 0xFFFFFFFF

    def reset(self):
        if self.state == "ESTABLISHED":
            self._segment(TCP_RST | TCP_ACK)
        self._closed("RESET")

    def _closed(self, state):
        self.state = state
        self.node.conns.pop(self.key, None)
        if self.on_close:
            self.on_close(self)

    def _input(self, pkt: NetPacket):
        tcp = pkt.tcp
        if tcp.flags & TCP_RST:
            self._closed("RESET")
            return
        if self.state == "SYN_SENT":
            if tcp.flags & TCP_SYN and tcp.flags & TCP_ACK:
                self.rcv_nxt = (tcp.seq + 1) & 0xFFFFFFFF
                self.snd_nxt = (self.iss + 1) & 0xFFFFFFFF
                self.state = "ESTABLISHED"
                self._segment(TCP_ACK)
                if self.on_established:
                    self.on_established(self)
            return
        if self.state == "SYN_RCVD":
            if tcp.flags & TCP_ACK and not tcp.flags & TCP_SYN:
                self.state = "ESTABLISHED"
                self.snd_nxt = (self.iss + 1) & 0xFFFFFFFF
                listener = self.node.listeners.get(self.local_port)
                if listener:
                    listener(self)
            else:
                return
        if self.state != "ESTABLISHED" or not pkt.payload:
            if tcp.flags & TCP_FIN and self.state == "ESTABLISHED":
                self._closed("CLOSED")
            return
        self._ooo[tcp.seq] = pkt.payload
        self._drain()

    def _drain(self):
        while True:
            data = None
            for seq in list(self._ooo):
                delta = (self.rcv_nxt - seq) & 0xFFFFFFFF
                if delta == 0:
                    data = self._ooo.pop(seq)
                    break
                if delta < 0x80000000:  # starts before rcv_nxt
                    payload = self._ooo.pop(seq)
                    if delta < len(payload):
                        data = payload[delta:]
                        break
            if data is None:
                return
            self.rcv_nxt = (self.rcv_nxt + len(data)) & 0xFFFFFFFF
            self.received += data
            self.node.net._stream_event(self, data)
            if self.on_data:
                self.on_data(self, data)


# ---------------------------------------------------------------------------
# Nodes


class Node:
    def __init__(self, net: "Network", name: str, ip_forward: bool = False):
        self.net = net
        self.name = name
        self.interfaces = []
        self.arp_table = {}
        self.static_arp = set()
        self.ip_forward = ip_forward
        self.gateway = None
        self.interceptor = None
        self.listeners = {}
        self.conns = {}
        self.up = True
        self.errors = []
        self.stats = {
            "rx": 0, "tx": 0, "malformed": 0, "invalid_dropped": 0, "forward_disabled_dropped": 0,
            "forwarded": 0, "intercept_dropped": 0, "ttl_expired": 0, "arp_timeouts": 0, "no_conn": 0,
        }
        self._pending_arp = {}
        self._ident = 0
        self._ports = itertools.count(49152)

    def __repr__(self):
        return f"<Node {self.name} {self.ip}>"

    @property
    def ip(self) -> str:
        return self.interfaces[0].ip

    @property
    def mac(self) -> bytes:
        return self.interfaces[0].mac

    def owns_ip(self, ip: str) -> bool:
        return any(i.ip == ip for i in self.interfaces)

    def _next_ident(self):
        self._ident = (self._ident + 1) & 0xFFFF
        return self._ident

    # -- routing / output -------------------------------------------------

    def route(self, dst_ip: str):
        for iface in self.interfaces:
            if iface.on_link(dst_ip):
                return iface, dst_ip
        if self.gateway is not None:
            for iface in self.interfaces:
                if iface.on_link(self.gateway):
                    return iface, self.gateway
        raise NoSuchIp(f"{self.name}: no route to {dst_ip}")

    def _send_raw(self, iface: Interface, raw: bytes):
        if not self.up:
            return
        self.stats["tx"] += 1
        iface.segment.transmit(iface, raw)

    def ip_output(self, pkt: NetPacket):
        iface, nexthop = self.route(pkt.ip.dst)
        pkt.src_mac = iface.mac
        mac = self.arp_table.get(nexthop)
        if mac is not None:
            pkt.dst_mac = mac
            self._send_raw(iface, pkt.to_bytes())
            return
        waiting = self._pending_arp.get(nexthop)
        if waiting is None:
            self._pending_arp[nexthop] = [pkt]
            arp_request(self, nexthop)
            self.net.sched.after(ARP_TIMEOUT_NS, self._arp_expire, nexthop)
        else:
            waiting.append(pkt)

    def _arp_expire(self, ip):
        if ip in self._pending_arp:
            dropped = self._pending_arp.pop(ip)
            self.stats["arp_timeouts"] += 1
            self.errors.append(NoSuchIp(f"{self.name}: {ip} did not answer ARP ({len(dropped)} packets dropped)"))

    def _arp_learned(self, ip):
        for pkt in self._pending_arp.pop(ip, []):
            self.ip_output(pkt)

    # -- input ------------------------------------------------------------

    def _receive(self, iface: Interface, raw: bytes):
        if not self.up:
            return
        self.stats["rx"] += 1
        self.net._record_rx(raw, self)
        try:
            pkt = NetPacket.from_bytes(raw)
        except MalformedPacket:
            self.stats["malformed"] += 1
            return
        if pkt.dst_mac != iface.mac and pkt.dst_mac != BROADCAST:
            return
        if pkt.ethertype == ETH_ARP:
            process_arp(self, pkt, iface)
            return
        if pkt.ip is None:
            return
        if self.owns_ip(pkt.ip.dst):
            problems = validate_packet(pkt)
            if problems:
                self.stats["invalid_dropped"] += 1
                log.debug("%s dropped %s: %s", self.name, pkt.summary(), problems)
                return
            if pkt.tcp is not None:
                self._tcp_input(pkt)
            return
        # transit traffic
        if not self.ip_forward:
            self.stats["forward_disabled_dropped"] += 1
            return
        if pkt.ip.ttl <= 1:
            self.stats["ttl_expired"] += 1
            return
        pkt.ip.ttl -= 1
        pkt.ip.checksum = ipv4_checksum(pkt.ip.to_bytes(checksum=0))
        if self.interceptor is not None:
            self.interceptor._enqueue(pkt, raw)
        else:
            self._forward_out(pkt)

    def _forward_out(self, pkt: NetPacket):
        self.stats["forwarded"] += 1
        try:
            self.ip_output(pkt)
        except NoSuchIp as exc:
            self.errors.append(exc)

    def _tcp_input(self, pkt: NetPacket):
        tcp = pkt.tcp
        key = (tcp.dst_port, pkt.ip.src, tcp.src_port)
        conn = self.conns.get(key)
        if conn is None:
            if tcp.flags & TCP_SYN and not tcp.flags & TCP_ACK and tcp.dst_port in self.listeners:
                conn = StreamConn(self, tcp.dst_port, pkt.ip.src, tcp.src_port, self.net._isn())
                conn.rcv_nxt = (tcp.seq + 1) & 0xFFFFFFFF
                conn.state = "SYN_RCVD"
                self.conns[key] = conn
                conn._segment(TCP_SYN | TCP_ACK)
            else:
                self.stats["no_conn"] += 1
            return
        conn._input(pkt)

    # -- TCP API ----------------------------------------------------------

    def listen(self, port: int, on_accept):
        self.listeners[port] = on_accept

    def connect(self, dst_ip: str, dst_port: int, on_established=None, src_port=None) -> StreamConn:
        if not self.up:
            raise ConnReset(f"{self.name} is down")
        port = src_port or next(self._ports)
        conn = StreamConn(self, port, dst_ip, dst_port, self.net._isn())
        conn.state = "SYN_SENT"
        conn.on_established = on_established
        self.conns[conn.key] = conn
        conn._segment(TCP_SYN)
        return conn

    def shutdown(self):
        """Take the node off the network; its peers see their streams reset."""
        for conn in list(self.conns.values()):
            conn.reset()
        self.up = False


def set_ip_forwarding(node: Node, enabled: bool):
    node.ip_forward = enabled


def attach_interceptor(node: Node, processing_delay: int = 20_000) -> InterceptQueue:
    node.interceptor = InterceptQueue(node, processing_delay)
    return node.interceptor


def detach_interceptor(node: Node):
    node.interceptor = None


# ---------------------------------------------------------------------------
# ARP


def _iface_for(node: Node, ip: str) -> Interface:
    return node.route(ip)[0]


def arp_request(node: Node, target_ip: str) -> NetPacket:
    """Broadcast a who-has for ``target_ip`` from the facing interface."""
    iface = _iface_for(node, target_ip)
    pkt = build_arp(ARP_REQUEST, iface.mac, iface.mac, iface.ip, ZERO_MAC, target_ip, BROADCAST)
    node._send_raw(iface, pkt.to_bytes())
    return pkt


def arp_reply(node: Node, request: NetPacket) -> NetPacket:
    """Answer ``request`` with our MAC, unicast to the requester."""
    req = request.arp
    iface = _iface_for(node, req.sender_ip)
    pkt = build_arp(ARP_REPLY, iface.mac, iface.mac, req.target_ip, req.sender_mac, req.sender_ip, req.sender_mac)
    node._send_raw(iface, pkt.to_bytes())
    return pkt


def send_unsolicited_reply(node: Node, victim_ip: str, victim_mac: bytes, claimed_ip: str, claimed_mac=None):
    """Gratuitous reply telling ``victim_ip`` that ``claimed_ip`` lives at ``claimed_mac``."""
    iface = _iface_for(node, victim_ip)
    claimed_mac = mac_bytes(claimed_mac) if claimed_mac is not None else iface.mac
    pkt = build_arp(ARP_REPLY, iface.mac, claimed_mac, claimed_ip, victim_mac, victim_ip, victim_mac)
    node._send_raw(iface, pkt.to_bytes())
    return pkt


def process_arp(node: Node, packet: NetPacket, iface: Interface | None = None):
    """Update ``node``'s table from an ARP packet.

    Replies are cached without checking for a matching request. A request
    aimed at one of our addresses caches the requester and is answered.
    """
    arp = packet.arp
    if arp is None:
        return
    learned = False
    if arp.op == ARP_REPLY:
        if arp.sender_ip not in node.static_arp:
            node.arp_table[arp.sender_ip] = arp.sender_mac
            learned = True
    elif arp.op == ARP_REQUEST and node.owns_ip(arp.target_ip):
        if arp.sender_ip not in node.static_arp:
            node.arp_table[arp.sender_ip] = arp.sender_mac
            learned = True
        arp_reply(node, packet)
    if learned:
        node._arp_learned(arp.sender_ip)


# ---------------------------------------------------------------------------
# Network


@dataclass
class StreamEvent:
    time: int
    node: str
    local_port: int
    remote: tuple
    data: bytes


@dataclass
class Capture:
    node: Node | None
    records: list = field(default_factory=list)


class Network:
    def __init__(self, seed: int = 0, link_delay_ns: int = 50_000):
        self.sched = Scheduler()
        self.link_delay = link_delay_ns
        self._rng = random.Random(f"netsim:{seed}")
        self.segments = {}
        self.nodes = {}
        self.captures = []
        self._events = []
        self._macs = set()

    # -- construction -----------------------------------------------------

    def add_segment(self, name: str) -> Segment:
        seg = Segment(self, name)
        self.segments[name] = seg
        return seg

    def _add_iface(self, node, segment, mac, ip, prefix):
        mac = mac_bytes(mac)
        if mac in self._macs:
            raise ValueError(f"duplicate MAC {mac_str(mac)}")
        self._macs.add(mac)
        if isinstance(segment, str):
            segment = self.segments.get(segment) or self.add_segment(segment)
        iface = Interface(node, f"eth{len(node.interfaces)}", mac, ip, prefix, segment)
        node.interfaces.append(iface)
        segment.interfaces.append(iface)
        return iface

    def add_host(self, name, mac, ip, segment="lan", prefix=24, gateway=None) -> Node:
        if name in self.nodes:
            raise ValueError(f"duplicate node name {name!r}")
        node = Node(self, name)
        self._add_iface(node, segment, mac, ip, prefix)
        node.gateway = gateway
        self.nodes[name] = node
        return node

    def add_router(self, name, interfaces) -> Node:
        """``interfaces`` is a list of ``(segment, mac, ip, prefix)``."""
        node = Node(self, name, ip_forward=True)
        for segment, mac, ip, prefix in interfaces:
            self._add_iface(node, segment, mac, ip, prefix)
        self.nodes[name] = node
        return node

    def node(self, name: str) -> Node:
        return self.nodes[name]

    def find_ip(self, ip: str) -> Node | None:
        for node in self.nodes.values():
            if node.owns_ip(ip):
                return node
        return None

    # -- tracing ----------------------------------------------------------

    def capture(self, node: Node | None = None) -> Capture:
        cap = Capture(node)
        self.captures.append(cap)
        return cap

    def _record(self, raw, sender):
        for cap in self.captures:
            if cap.node is None or cap.node is sender:
                cap.records.append((self.sched.now, raw))

    def _record_rx(self, raw, receiver):
        for cap in self.captures:
            if cap.node is receiver:
                cap.records.append((self.sched.now, raw))

    def _stream_event(self, conn, data):
        self._events.append(
            StreamEvent(self.sched.now, conn.node.name, conn.local_port, (conn.remote_ip, conn.remote_port), data)
        )

    def _isn(self) -> int:
        return self._rng.getrandbits(32)

    # -- running ----------------------------------------------------------

    def run(self, until: int | None = None, realtime: bool = False) -> int:
        return self.sched.run(until, realtime)

    def run_for(self, seconds_: float) -> int:
        return self.sched.run(self.sched.now + ns(seconds_))

    def resolve(self, node: Node, ip: str) -> bytes:
        """Resolve ``ip`` from ``node`` synchronously, driving the clock."""
        node.arp_table.pop(ip, None)
        arp_request(node, ip)
        deadline = self.sched.now + ARP_TIMEOUT_NS
        while self.sched.pending() and ip not in node.arp_table:
            if self.sched._queue[0][0] > deadline:
                break
            self.sched.run(self.sched._queue[0][0])
        if ip not in node.arp_table:
            raise NoSuchIp(f"{node.name}: nobody answered ARP for {ip}")
        return node.arp_table[ip]

    def warm_arp(self, pairs):
        """Real request/reply exchanges so each ``(a, b)`` pair knows the other."""
        for a, b in pairs:
            self.resolve(a, b.ip if a.route(b.ip)[0].on_link(b.ip) else a.gateway)


def send_stream(conn: StreamConn, data: bytes):
    conn.send(data)


def deliver(net: Network, until: int | None = None) -> list:
    """Run the network and return the stream deliveries that happened."""
    start = len(net._events)
    net.run(until)
    return net._events[start:]
