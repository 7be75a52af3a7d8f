"""Classic libpcap files (magic 0xa1b2c3d4, LINKTYPE_ETHERNET)."""

import struct

PCAP_MAGIC = 0xA1B2C3D4
PCAP_MAGIC_NS = 0xA1B23C4D
LINKTYPE_ETHERNET = 1


class BadPcapMagic(ValueError):
    pass


class PcapWriter:
    """Writes records to a binary stream; timestamps are integer nanoseconds."""

    def __init__(self, stream, snaplen=65535):
        self.stream = stream
        self.snaplen = snaplen
        stream.write(struct.pack("<IHHiIII", PCAP_MAGIC, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET))

    def write(self, ts_ns: int, frame: bytes):
        sec, rem = divmod(ts_ns, 1_000_000_000)
        data = frame[: self.snaplen]
        self.stream.write(struct.pack("<IIII", sec, rem // 1000, len(data), len(frame)))
        self.stream.write(data)


def write_pcap(path, records):
    """``records`` is an iterable of ``(ts_ns, frame_bytes)``."""
    with open(path, "wb") as fh:
        w = PcapWriter(fh)
        for ts, frame in records:
            w.write(ts, frame)


def pcap_bytes(records) -> bytes:
    import io

    buf = io.BytesIO()
    w = PcapWriter(buf)
    for ts, frame in records:
        w.write(ts, frame)
    return buf.getvalue()


class PcapReader:
    """Iterates ``(ts_ns, frame)`` records.

    A short final record stops iteration and sets ``truncated``.
    """

    def __init__(self, data: bytes):
        if len(data) < 24:
            raise BadPcapMagic("file shorter than the 24-byte pcap global header")
        magic_le = struct.unpack_from("<I", data)[0]
        magic_be = struct.unpack_from(">I", data)[0]
        if magic_le in (PCAP_MAGIC, PCAP_MAGIC_NS):
            self.endian, magic = "<", magic_le
        elif magic_be in (PCAP_MAGIC, PCAP_MAGIC_NS):
            self.endian, magic = ">", magic_be
        else:
            raise BadPcapMagic(f"unrecognised pcap magic 0x{magic_le:08x}")
        self.nanos = magic == PCAP_MAGIC_NS
        _, vmaj, vmin, _, _, self.snaplen, self.linktype = struct.unpack_from(self.endian + "IHHiIII", data)
        self.data = data
        self.truncated = False

    @classmethod
    def open(cls, path):
        with open(path, "rb") as fh:
            return cls(fh.read())

    def __iter__(self):
        pos = 24
        data = self.data
        while pos < len(data):
            if pos + 16 > len(data):
                self.truncated = True
                return
            sec, frac, incl, _orig = struct.unpack_from(self.endian + "IIII", data, pos)
            pos += 16
            if pos + incl > len(data):
                self.truncated = True
                return
            ts = sec * 1_000_000_000 + (frac if self.nanos else frac * 1000)
            yield ts, data[pos:pos + incl]
            pos += incl


def read_pcap(path) -> list:
    return list(PcapReader.open(path))
