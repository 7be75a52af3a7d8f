"""Byte-exact Ethernet II / ARP / IPv4 / TCP packets.

``NetPacket.to_bytes`` writes header fields exactly as stored, so a packet
can carry stale lengths or checksums after a mutation. ``finalize`` repairs
them and ``validate_packet`` reports what a receiving stack would reject.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass, field, replace
from enum import Enum

from ..kernels import ones_complement_sum

ETH_IPV4 = 0x0800
ETH_ARP = 0x0806
IPPROTO_TCP = 6
BROADCAST = b"\xff" * 6

ARP_REQUEST = 1
ARP_REPLY = 2

TCP_FIN = 0x01
TCP_SYN = 0x02
TCP_RST = 0x04
TCP_PSH = 0x08
TCP_ACK = 0x10


class BadLength(ValueError):
    pass


class MalformedPacket(ValueError):
    pass


class Violation(str, Enum):
    IP_CHECKSUM = "IpChecksumMismatch"
    IP_LENGTH = "IpLengthMismatch"
    TCP_CHECKSUM = "TcpChecksumMismatch"

    def __repr__(self):
        return self.value


def mac_bytes(mac) -> bytes:
    if isinstance(mac, (bytes, bytearray)):
        if len(mac) != 6:
            raise ValueError(f"MAC must be 6 bytes, got {len(mac)}")
        return bytes(mac)
    parts = mac.replace("-", ":").split(":")
    if len(parts) != 6:
        raise ValueError(f"bad MAC address {mac!r}")
    return bytes(int(p, 16) for p in parts)


def mac_str(mac: bytes) -> str:
    return ":".join(f"{b:02x}" for b in mac)


def ip_bytes(ip) -> bytes:
    return ipaddress.IPv4Address(ip).packed


def ip_str(raw: bytes) -> str:
    return str(ipaddress.IPv4Address(raw))


# ---------------------------------------------------------------------------
# Checksums


def ipv4_checksum(header_bytes) -> int:
    """Internet checksum of an IPv4 header whose checksum field is zeroed."""
    if len(header_bytes) % 2:
        raise BadLength(f"header length {len(header_bytes)} is not a multiple of 2")
    return ~ones_complement_sum(bytes(header_bytes)) & 0xFFFF


def tcp_checksum(src_ip, dst_ip, segment) -> int:
    """Checksum over the TCP pseudo-header and ``segment`` (checksum field zeroed)."""
    segment = bytes(segment)
    pseudo = ip_bytes(src_ip) + ip_bytes(dst_ip) + struct.pack(">BBH", 0, IPPROTO_TCP, len(segment))
    total = ones_complement_sum(pseudo)
    return ~ones_complement_sum(segment, total) & 0xFFFF


# ---------------------------------------------------------------------------
# Headers


@dataclass
class ArpBody:
    op: int
    sender_mac: bytes
    sender_ip: str
    target_mac: bytes
    target_ip: str

    def to_bytes(self) -> bytes:
        return struct.pack(">HHBBH", 1, ETH_IPV4, 6, 4, self.op) + (
            self.sender_mac + ip_bytes(self.sender_ip) + self.target_mac + ip_bytes(self.target_ip)
        )

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ArpBody":
        if len(raw) < 28:
            raise MalformedPacket("ARP body shorter than 28 bytes")
        htype, ptype, hlen, plen, op = struct.unpack_from(">HHBBH", raw)
        if (htype, ptype, hlen, plen) != (1, ETH_IPV4, 6, 4) or op not in (ARP_REQUEST, ARP_REPLY):
            raise MalformedPacket("not an Ethernet/IPv4 ARP request or reply")
        return cls(op, raw[8:14], ip_str(raw[14:18]), raw[18:24], ip_str(raw[24:28]))


@dataclass
class IPv4Header:
    src: str
    dst: str
    total_length: int = 0
    ttl: int = 64
    protocol: int = IPPROTO_TCP
    ident: int = 0
    flags_frag: int = 0x4000  # DF
    tos: int = 0
    checksum: int = 0
    version: int = 4
    ihl: int = 5
    options: bytes = b""

    def to_bytes(self, checksum=None) -> bytes:
        csum = self.checksum if checksum is None else checksum
        return (
            struct.pack(
                ">BBHHHBBH4s4s",
                (self.version << 4) | self.ihl,
                self.tos,
                self.total_length,
                self.ident,
                self.flags_frag,
                self.ttl,
                self.protocol,
                csum,
                ip_bytes(self.src),
                ip_bytes(self.dst),
            )
            + self.options
        )

    @classmethod
    def from_bytes(cls, raw: bytes) -> "IPv4Header":
        if len(raw) < 20:
            raise MalformedPacket("IPv4 header shorter than 20 bytes")
        vihl, tos, total, ident, ff, ttl, proto, csum, src, dst = struct.unpack_from(">BBHHHBBH4s4s", raw)
        ihl = vihl & 0xF
        if vihl >> 4 != 4 or ihl < 5 or len(raw) < ihl * 4:
            raise MalformedPacket("bad IPv4 version/IHL")
        return cls(
            src=ip_str(src), dst=ip_str(dst), total_length=total, ttl=ttl, protocol=proto, ident=ident,
            flags_frag=ff, tos=tos, checksum=csum, version=4, ihl=ihl, options=raw[20:ihl * 4],
        )


@dataclass
class TcpHeader:
    src_port: int
    dst_port: int
    seq: int = 0
    ack: int = 0
    flags: int = TCP_ACK
    window: int = 65535
    checksum: int = 0
    urgent: int = 0
    data_offset: int = 5
    options: bytes = b""

    def to_bytes(self, checksum=None) -> bytes:
        csum = self.checksum if checksum is None else checksum
        return (
            struct.pack(
                ">HHIIBBHHH",
                self.src_port,
                self.dst_port,
                self.seq & 0xFFFFFFFF,
                self.ack & 0xFFFFFFFF,
                self.data_offset << 4,
                self.flags,
                self.window,
                csum,
                self.urgent,
            )
            + self.options
        )

    @classmethod
    def from_bytes(cls, raw: bytes) -> "TcpHeader":
        if len(raw) < 20:
            raise MalformedPacket("TCP header shorter than 20 bytes")
        sp, dp, seq, ack, off, flags, win, csum, urg = struct.unpack_from(">HHIIBBHHH", raw)
        data_offset = off >> 4
        if data_offset < 5 or len(raw) < data_offset * 4:
            raise MalformedPacket("bad TCP data offset")
        return cls(sp, dp, seq, ack, flags, win, csum, urg, data_offset, raw[20:data_offset * 4])

    @property
    def length(self) -> int:
        return self.data_offset * 4


@dataclass
class NetPacket:
    """One Ethernet frame carrying either an ARP body or IPv4/TCP."""

    dst_mac: bytes
    src_mac: bytes
    ethertype: int = ETH_IPV4
    arp: ArpBody | None = None
    ip: IPv4Header | None = None
    tcp: TcpHeader | None = None
    payload: bytes = b""
    trailer: bytes = field(default=b"", repr=False)

    def to_bytes(self) -> bytes:
        head = struct.pack(">6s6sH", self.dst_mac, self.src_mac, self.ethertype)
        if self.arp is not None:
            return head + self.arp.to_bytes() + self.trailer
        out = head
        if self.ip is not None:
            out += self.ip.to_bytes()
        if self.tcp is not None:
            out += self.tcp.to_bytes()
        return out + self.payload + self.trailer

    @classmethod
    def from_bytes(cls, raw) -> "NetPacket":
        raw = bytes(raw)
        if len(raw) < 14:
            raise MalformedPacket("Ethernet frame shorter than 14 bytes")
        dst, src, etype = struct.unpack_from(">6s6sH", raw)
        body = raw[14:]
        if etype == ETH_ARP:
            return cls(dst, src, etype, arp=ArpBody.from_bytes(body), trailer=body[28:])
        if etype != ETH_IPV4:
            return cls(dst, src, etype, payload=body)
        ip = IPv4Header.from_bytes(body)
        rest = body[ip.ihl * 4:]
        if ip.protocol != IPPROTO_TCP:
            return cls(dst, src, etype, ip=ip, payload=rest)
        tcp = TcpHeader.from_bytes(rest)
        return cls(dst, src, etype, ip=ip, tcp=tcp, payload=rest[tcp.length:])

    @property
    def is_tcp(self) -> bool:
        return self.ip is not None and self.tcp is not None

    def flow(self) -> tuple:
        return (self.ip.src, self.tcp.src_port, self.ip.dst, self.tcp.dst_port)

    def copy(self) -> "NetPacket":
        return replace(
            self,
            arp=replace(self.arp) if self.arp else None,
            ip=replace(self.ip) if self.ip else None,
            tcp=replace(self.tcp) if self.tcp else None,
        )

    def summary(self) -> str:
        if self.arp is not None:
            a = self.arp
            kind = "who-has" if a.op == ARP_REQUEST else "is-at"
            return f"ARP {kind} {a.target_ip if a.op == ARP_REQUEST else a.sender_ip} {mac_str(a.sender_mac)}"
        if self.is_tcp:
            return (
                f"TCP {self.ip.src}:{self.tcp.src_port} > {self.ip.dst}:{self.tcp.dst_port} "
                f"seq={self.tcp.seq} ack={self.tcp.ack} len={len(self.payload)}"
            )
        return f"ethertype=0x{self.ethertype:04x}"


def tcp_segment_bytes(packet: NetPacket, checksum=None) -> bytes:
    return packet.tcp.to_bytes(checksum) + packet.payload


def finalize(packet: NetPacket) -> NetPacket:
    """Recompute IP total_length, IP checksum and TCP checksum in place."""
    if packet.ip is None:
        return packet
    ip = packet.ip
    seg_len = (packet.tcp.length if packet.tcp else 0) + len(packet.payload)
    ip.total_length = ip.ihl * 4 + seg_len
    ip.checksum = ipv4_checksum(ip.to_bytes(checksum=0))
    if packet.tcp is not None:
        packet.tcp.checksum = tcp_checksum(ip.src, ip.dst, tcp_segment_bytes(packet, checksum=0))
    return packet


def build_tcp_packet(src_mac, dst_mac, src_ip, dst_ip, src_port, dst_port, seq, ack, flags, payload=b"",
                     ident=0, ttl=64, window=65535) -> NetPacket:
    pkt = NetPacket(
        dst_mac=mac_bytes(dst_mac),
        src_mac=mac_bytes(src_mac),
        ip=IPv4Header(src=src_ip, dst=dst_ip, ident=ident, ttl=ttl),
        tcp=TcpHeader(src_port, dst_port, seq & 0xFFFFFFFF, ack & 0xFFFFFFFF, flags, window),
        payload=bytes(payload),
    )
    return finalize(pkt)


def build_arp(op, src_mac, sender_mac, sender_ip, target_mac, target_ip, dst_mac) -> NetPacket:
    return NetPacket(
        dst_mac=mac_bytes(dst_mac),
        src_mac=mac_bytes(src_mac),
        ethertype=ETH_ARP,
        arp=ArpBody(op, mac_bytes(sender_mac), sender_ip, mac_bytes(target_mac), target_ip),
    )


def validate_packet(packet) -> list:
    """Transport-level violations a receiver would drop the packet for."""
    if isinstance(packet, (bytes, bytearray)):
        packet = NetPacket.from_bytes(packet)
    if packet.ip is None:
        return []
    ip = packet.ip
    out = []
    if ones_complement_sum(ip.to_bytes()) != 0xFFFF:
        out.append(Violation.IP_CHECKSUM)
    actual = ip.ihl * 4 + (packet.tcp.length if packet.tcp else 0) + len(packet.payload)
    if ip.total_length != actual:
        out.append(Violation.IP_LENGTH)
    if packet.tcp is not None:
        segment = tcp_segment_bytes(packet)
        pseudo = ip_bytes(ip.src) + ip_bytes(ip.dst) + struct.pack(">BBH", 0, IPPROTO_TCP, len(segment))
        if ones_complement_sum(segment, ones_complement_sum(pseudo)) != 0xFFFF:
            out.append(Violation.TCP_CHECKSUM)
    return out
