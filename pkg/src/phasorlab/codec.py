"""IEEE C37.118.2 frame codec.

Builds and dissects the four message kinds (data, CFG-2 configuration,
header, command) byte for byte. Every frame shares the common header::

    SYNC(2) FRAMESIZE(2) IDCODE(2) SOC(4) FRACSEC(4) <body> CHK(2)

All integers are big-endian and floats are big-endian IEEE-754 singles.
CHK is CRC-CCITT (poly 0x1021, init 0xFFFF) over everything before it.

Frames are immutable dataclasses. ``framesize`` and ``CHK`` are never stored
on a frame; ``build_frame`` derives them from the content.
"""

from __future__ import annotations

import cmath
import math
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Mapping, Sequence, Union

from .kernels import crc16_ccitt

SYNC_LEAD = 0xAA
VERSION = 1
HEADER_LEN = 14
CHK_LEN = 2
MIN_FRAME_LEN = HEADER_LEN + CHK_LEN
MAX_FRACTION = (1 << 24) - 1

_F32_MAX = struct.unpack(">f", b"\x7f\x7f\xff\xff")[0]
# largest single-precision angle not above pi; keeps decode/encode stable
_ANGLE_MAX = struct.unpack(">f", struct.pack(">I", 0x40490FDA))[0]


class CodecError(Exception):
    """Base class for frame encoding/decoding failures."""


class BadSync(CodecError):
    pass


class BadCrc(CodecError):
    def __init__(self, expected, found):
        super().__init__(f"CHK mismatch: computed 0x{expected:04X}, frame carries 0x{found:04X}")
        self.expected = expected
        self.found = found


class Truncated(CodecError):
    pass


class MissingConfig(CodecError):
    pass


class InvalidFrame(CodecError):
    pass


class UnsupportedFrameKind(CodecError):
    pass


class FrameType(IntEnum):
    DATA = 0
    HEADER = 1
    CFG1 = 2
    CFG2 = 3
    CMD = 4
    CFG3 = 5


class Command(IntEnum):
    DATA_OFF = 1
    DATA_ON = 2
    SEND_HDR = 3
    SEND_CFG1 = 4
    SEND_CFG2 = 5


class PhasorUnit(IntEnum):
    VOLTAGE = 0
    CURRENT = 1


def compute_crc(payload) -> int:
    """CRC-CCITT of ``payload`` (frame bytes without the trailing CHK)."""
    return crc16_ccitt(bytes(payload))


# ---------------------------------------------------------------------------
# Frame types


@dataclass(frozen=True)
class DataFormat:
    """The four FORMAT bits of a PMU block."""

    polar: bool = False
    phasor_float: bool = False
    analog_float: bool = False
    freq_float: bool = False

    @property
    def word(self) -> int:
        return (self.polar << 0) | (self.phasor_float << 1) | (self.analog_float << 2) | (self.freq_float << 3)

    @classmethod
    def from_word(cls, word: int) -> "DataFormat":
        if word & ~0xF:
            raise InvalidFrame(f"reserved FORMAT bits set: 0x{word:04X}")
        return cls(bool(word & 1), bool(word & 2), bool(word & 4), bool(word & 8))

    @property
    def phasor_width(self) -> int:
        return 8 if self.phasor_float else 4

    @property
    def analog_width(self) -> int:
        return 4 if self.analog_float else 2

    @property
    def freq_width(self) -> int:
        return 4 if self.freq_float else 2


FLOAT_RECT = DataFormat(polar=False, phasor_float=True, analog_float=True, freq_float=True)
INT_RECT = DataFormat()
FLOAT_POLAR = DataFormat(polar=True, phasor_float=True, analog_float=True, freq_float=True)


@dataclass(frozen=True)
class PmuBlock:
    """Per-PMU section of a CFG-2 frame.

    ``phunits`` holds ``(PhasorUnit, scale)`` pairs where ``scale`` is the
    unsigned 24-bit conversion factor in 1e-5 V (or A) per bit. ``anunits``
    holds ``(kind, scale)`` with a signed 24-bit scale. ``digital_names`` has
    one 16-tuple of labels per digital status word and ``digunits`` one
    ``(normal_mask, valid_mask)`` pair per word.
    """

    station_name: str
    idcode: int
    fmt: DataFormat = FLOAT_RECT
    phasor_names: tuple = ()
    analog_names: tuple = ()
    digital_names: tuple = ()
    phunits: tuple = ()
    anunits: tuple = ()
    digunits: tuple = ()
    fnom: int = 60
    cfgcnt: int = 0

    @property
    def phnmr(self) -> int:
        return len(self.phasor_names)

    @property
    def annmr(self) -> int:
        return len(self.analog_names)

    @property
    def dgnmr(self) -> int:
        return len(self.digital_names)

    def data_length(self) -> int:
        f = self.fmt
        return 2 + self.phnmr * f.phasor_width + 2 * f.freq_width + self.annmr * f.analog_width + 2 * self.dgnmr


@dataclass(frozen=True, kw_only=True)
class _Frame:
    idcode: int
    soc: int = 0
    fraction: int = 0
    time_quality: int = 0
    version: int = VERSION

    @property
    def fracsec(self) -> int:
        return (self.time_quality << 24) | self.fraction


@dataclass(frozen=True, kw_only=True)
class CommandFrame(_Frame):
    cmd: Command
    extframe: bytes = b""

    frame_type = FrameType.CMD


@dataclass(frozen=True, kw_only=True)
class HeaderFrame(_Frame):
    info: bytes = b""

    frame_type = FrameType.HEADER


@dataclass(frozen=True, kw_only=True)
class ConfigFrame2(_Frame):
    time_base: int = 1_000_000
    pmus: tuple = ()
    data_rate: int = 30

    frame_type = FrameType.CFG2

    @property
    def num_pmu(self) -> int:
        return len(self.pmus)

    def data_length(self) -> int:
        return sum(p.data_length() for p in self.pmus)


@dataclass(frozen=True)
class PmuData:
    """Measurements of one PMU inside a data frame.

    Values keep their wire representation: integer formats hold the raw
    integer counts (phasors as complex numbers with integral parts), float
    formats hold single-precision values. ``freq`` is the deviation in mHz
    for the integer format and the frequency in Hz for the float format;
    ``dfreq`` is ROCOF x 100 or ROCOF respectively.
    """

    stat: int = 0
    phasors: tuple = ()
    freq: float = 0
    dfreq: float = 0
    analogs: tuple = ()
    digitals: tuple = ()


@dataclass(frozen=True, kw_only=True)
class DataFrame(_Frame):
    pmus: tuple = field(default_factory=tuple)

    frame_type = FrameType.DATA


Frame = Union[CommandFrame, HeaderFrame, ConfigFrame2, DataFrame]
ConfigSource = Union[ConfigFrame2, Mapping[int, ConfigFrame2], None]


# ---------------------------------------------------------------------------
# Building


def _u(value, bits, what):
    if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value < (1 << bits):
        raise InvalidFrame(f"{what}={value!r} is not an unsigned {bits}-bit integer")
    return value


def _s16(value, what):
    if isinstance(value, float):
        if not value.is_integer():
            raise InvalidFrame(f"{what}={value!r} is not integral (integer format)")
        value = int(value)
    if not isinstance(value, int) or not -32768 <= value <= 32767:
        raise InvalidFrame(f"{what}={value!r} does not fit a signed 16-bit integer")
    return value


def _f32(value, what):
    value = float(value)
    if not math.isfinite(value) or abs(value) > _F32_MAX:
        raise InvalidFrame(f"{what}={value!r} is not a finite single-precision value")
    return value


def _name(text, what):
    raw = text.encode("ascii") if isinstance(text, str) else bytes(text)
    if len(raw) > 16:
        raise InvalidFrame(f"{what} {text!r} longer than 16 bytes")
    return raw.ljust(16, b" ")


def _encode_phasor(value, fmt, what):
    value = complex(value)
    if not fmt.phasor_float:
        if fmt.polar:
            raise InvalidFrame("integer polar phasor format is not supported")
        return struct.pack(">hh", _s16(value.real, what), _s16(value.imag, what))
    if fmt.polar:
        mag = _f32(abs(value), what)
        ang = struct.unpack(">f", struct.pack(">f", cmath.phase(value)))[0]
        if ang > math.pi:
            ang = _ANGLE_MAX
        elif ang < -math.pi:
            ang = -_ANGLE_MAX
        return struct.pack(">ff", mag, ang)
    return struct.pack(">ff", _f32(value.real, what), _f32(value.imag, what))


def _header(frame_type, frame, body_len):
    framesize = HEADER_LEN + body_len + CHK_LEN
    if framesize > 0xFFFF:
        raise InvalidFrame(f"frame of {framesize} bytes exceeds FRAMESIZE range")
    _u(frame.version, 4, "version")
    _u(frame.idcode, 16, "idcode")
    _u(frame.soc, 32, "soc")
    _u(frame.fraction, 24, "fraction")
    _u(frame.time_quality, 8, "time_quality")
    return struct.pack(
        ">BBHHII", SYNC_LEAD, (int(frame_type) << 4) | frame.version, framesize, frame.idcode, frame.soc, frame.fracsec
    )


def _seal(head_and_body: bytes) -> bytes:
    return head_and_body + struct.pack(">H", compute_crc(head_and_body))


def _build_command(frame: CommandFrame) -> bytes:
    try:
        cmd = Command(frame.cmd)
    except ValueError:
        raise InvalidFrame(f"unknown command {frame.cmd!r}") from None
    body = struct.pack(">H", cmd) + bytes(frame.extframe)
    return _seal(_header(FrameType.CMD, frame, len(body)) + body)


def _build_header(frame: HeaderFrame) -> bytes:
    body = frame.info.encode() if isinstance(frame.info, str) else bytes(frame.info)
    return _seal(_header(FrameType.HEADER, frame, len(body)) + body)


def _build_config(frame: ConfigFrame2) -> bytes:
    if not 0 < _u(frame.time_base, 24, "time_base"):
        raise InvalidFrame("time_base must be positive")
    if frame.fraction >= frame.time_base:
        raise InvalidFrame("fraction count must be below time_base")
    parts = [struct.pack(">IH", frame.time_base, _u(frame.num_pmu, 16, "num_pmu"))]
    for pmu in frame.pmus:
        fmt = pmu.fmt
        if fmt.polar and not fmt.phasor_float:
            raise InvalidFrame("integer polar phasor format is not supported")
        if len(pmu.phunits) != pmu.phnmr or len(pmu.anunits) != pmu.annmr or len(pmu.digunits) != pmu.dgnmr:
            raise InvalidFrame(f"unit words do not match channel counts for station {pmu.station_name!r}")
        parts.append(_name(pmu.station_name, "station name"))
        parts.append(
            struct.pack(">HHHHH", _u(pmu.idcode, 16, "pmu idcode"), fmt.word, pmu.phnmr, pmu.annmr, pmu.dgnmr)
        )
        for nm in pmu.phasor_names:
            parts.append(_name(nm, "phasor name"))
        for nm in pmu.analog_names:
            parts.append(_name(nm, "analog name"))
        for labels in pmu.digital_names:
            if len(labels) != 16:
                raise InvalidFrame("each digital word needs 16 channel names")
            for nm in labels:
                parts.append(_name(nm, "digital name"))
        for kind, scale in pmu.phunits:
            parts.append(struct.pack(">B", _u(int(kind), 8, "phunit kind")) + _u(scale, 24, "phunit scale").to_bytes(3, "big"))
        for kind, scale in pmu.anunits:
            if not -(1 << 23) <= scale < (1 << 23):
                raise InvalidFrame(f"anunit scale {scale} outside signed 24-bit range")
            parts.append(struct.pack(">B", _u(kind, 8, "anunit kind")) + scale.to_bytes(3, "big", signed=True))
        for normal, valid in pmu.digunits:
            parts.append(struct.pack(">HH", _u(normal, 16, "digunit"), _u(valid, 16, "digunit")))
        if pmu.fnom not in (50, 60):
            raise InvalidFrame(f"fnom must be 50 or 60, got {pmu.fnom}")
        parts.append(struct.pack(">HH", 1 if pmu.fnom == 50 else 0, _u(pmu.cfgcnt, 16, "cfgcnt")))
    if not -32768 <= frame.data_rate <= 32767 or frame.data_rate == 0:
        raise InvalidFrame(f"data_rate {frame.data_rate} invalid")
    parts.append(struct.pack(">h", frame.data_rate))
    body = b"".join(parts)
    return _seal(_header(FrameType.CFG2, frame, len(body)) + body)


def _resolve_config(idcode: int, config: ConfigSource) -> ConfigFrame2:
    if config is None:
        raise MissingConfig(f"data frame for stream {idcode} needs its CFG-2 configuration")
    if isinstance(config, ConfigFrame2):
        if config.idcode != idcode:
            raise MissingConfig(f"configuration is for stream {config.idcode}, data frame is stream {idcode}")
        return config
    try:
        return config[idcode]
    except KeyError:
        raise MissingConfig(f"no configuration known for stream {idcode}") from None


def _build_data(frame: DataFrame, config: ConfigSource) -> bytes:
    cfg = _resolve_config(frame.idcode, config)
    if len(frame.pmus) != cfg.num_pmu:
        raise InvalidFrame(f"data frame carries {len(frame.pmus)} PMU blocks, configuration declares {cfg.num_pmu}")
    if frame.fraction >= cfg.time_base:
        raise InvalidFrame("fraction count must be below time_base")
    parts = []
    for block, data in zip(cfg.pmus, frame.pmus):
        fmt = block.fmt
        if len(data.phasors) != block.phnmr:
            raise InvalidFrame(f"{block.station_name!r}: {len(data.phasors)} phasors, configuration has {block.phnmr}")
        if len(data.analogs) != block.annmr:
            raise InvalidFrame(f"{block.station_name!r}: {len(data.analogs)} analogs, configuration has {block.annmr}")
        if len(data.digitals) != block.dgnmr:
            raise InvalidFrame(f"{block.station_name!r}: {len(data.digitals)} digitals, configuration has {block.dgnmr}")
        parts.append(struct.pack(">H", _u(data.stat, 16, "stat")))
        for i, ph in enumerate(data.phasors):
            parts.append(_encode_phasor(ph, fmt, f"phasor[{i}]"))
        if fmt.freq_float:
            parts.append(struct.pack(">ff", _f32(data.freq, "freq"), _f32(data.dfreq, "dfreq")))
        else:
            parts.append(struct.pack(">hh", _s16(data.freq, "freq"), _s16(data.dfreq, "dfreq")))
        for i, an in enumerate(data.analogs):
            if fmt.analog_float:
                parts.append(struct.pack(">f", _f32(an, f"analog[{i}]")))
            else:
                parts.append(struct.pack(">h", _s16(an, f"analog[{i}]")))
        for dg in data.digitals:
            parts.append(struct.pack(">H", _u(dg, 16, "digital")))
    body = b"".join(parts)
    return _seal(_header(FrameType.DATA, frame, len(body)) + body)


def build_frame(frame: Frame, config: ConfigSource = None) -> bytes:
    """Serialize ``frame``; data frames need the governing CFG-2 ``config``."""
    if isinstance(frame, CommandFrame):
        return _build_command(frame)
    if isinstance(frame, HeaderFrame):
        return _build_header(frame)
    if isinstance(frame, ConfigFrame2):
        return _build_config(frame)
    if isinstance(frame, DataFrame):
        return _build_data(frame, config)
    raise InvalidFrame(f"cannot build {type(frame).__name__}")


# ---------------------------------------------------------------------------
# Parsing


def peek_header(data) -> tuple:
    """Return ``(frame_type, version, framesize, idcode)`` without CRC checks."""
    if len(data) < 4:
        raise Truncated(f"need 4 bytes for SYNC/FRAMESIZE, have {len(data)}")
    if data[0] != SYNC_LEAD:
        raise BadSync(f"first byte 0x{data[0]:02X} is not 0xAA")
    if data[1] & 0x80:
        raise BadSync(f"reserved SYNC bit set in 0x{data[1]:02X}")
    ftype = (data[1] >> 4) & 0x7
    if ftype > FrameType.CFG3:
        raise BadSync(f"unknown frame type code {ftype}")
    framesize = (data[2] << 8) | data[3]
    idcode = (data[4] << 8) | data[5] if len(data) >= 6 else None
    return FrameType(ftype), data[1] & 0xF, framesize, idcode


class _Cursor:
    __slots__ = ("buf", "pos", "end")

    def __init__(self, buf, pos, end):
        self.buf = buf
        self.pos = pos
        self.end = end

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > self.end:
            raise InvalidFrame("frame body shorter than its declared content")
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def raw(self, n):
        if self.pos + n > self.end:
            raise InvalidFrame("frame body shorter than its declared content")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out


def _text(raw: bytes) -> str:
    return raw.rstrip(b" \x00").decode("ascii", errors="replace")


def _parse_config(cur: _Cursor, common: dict) -> ConfigFrame2:
    time_base_word, num_pmu = cur.take(">IH")
    time_base = time_base_word & MAX_FRACTION
    pmus = []
    for _ in range(num_pmu):
        station = _text(cur.raw(16))
        idcode, word, phnmr, annmr, dgnmr = cur.take(">HHHHH")
        fmt = DataFormat.from_word(word)
        if fmt.polar and not fmt.phasor_float:
            raise InvalidFrame("integer polar phasor format is not supported")
        ph_names = tuple(_text(cur.raw(16)) for _ in range(phnmr))
        an_names = tuple(_text(cur.raw(16)) for _ in range(annmr))
        dg_names = tuple(tuple(_text(cur.raw(16)) for _ in range(16)) for _ in range(dgnmr))
        phunits = []
        for _ in range(phnmr):
            raw = cur.raw(4)
            try:
                kind = PhasorUnit(raw[0])
            except ValueError:
                raise InvalidFrame(f"unknown phasor unit type {raw[0]}") from None
            phunits.append((kind, int.from_bytes(raw[1:], "big")))
        anunits = []
        for _ in range(annmr):
            raw = cur.raw(4)
            anunits.append((raw[0], int.from_bytes(raw[1:], "big", signed=True)))
        digunits = tuple(cur.take(">HH") for _ in range(dgnmr))
        fnom_word, cfgcnt = cur.take(">HH")
        pmus.append(
            PmuBlock(
                station_name=station,
                idcode=idcode,
                fmt=fmt,
                phasor_names=ph_names,
                analog_names=an_names,
                digital_names=dg_names,
                phunits=tuple(phunits),
                anunits=tuple(anunits),
                digunits=digunits,
                fnom=50 if fnom_word & 1 else 60,
                cfgcnt=cfgcnt,
            )
        )
    (data_rate,) = cur.take(">h")
    if time_base == 0:
        raise InvalidFrame("time_base of zero")
    return ConfigFrame2(time_base=time_base, pmus=tuple(pmus), data_rate=data_rate, **common)


def _decode_phasor(cur, fmt):
    if fmt.phasor_float:
        a, b = cur.take(">ff")
        if fmt.polar:
            return complex(a * math.cos(b), a * math.sin(b))
        return complex(a, b)
    re, im = cur.take(">hh")
    return complex(re, im)


def _parse_data(cur: _Cursor, common: dict, config: ConfigSource) -> DataFrame:
    cfg = _resolve_config(common["idcode"], config)
    if cur.end - cur.pos != cfg.data_length():
        raise InvalidFrame(
            f"data body is {cur.end - cur.pos} bytes, configuration implies {cfg.data_length()}"
        )
    pmus = []
    for block in cfg.pmus:
        fmt = block.fmt
        (stat,) = cur.take(">H")
        phasors = tuple(_decode_phasor(cur, fmt) for _ in range(block.phnmr))
        freq, dfreq = cur.take(">ff" if fmt.freq_float else ">hh")
        analogs = tuple(cur.take(">f" if fmt.analog_float else ">h")[0] for _ in range(block.annmr))
        digitals = tuple(cur.take(">H")[0] for _ in range(block.dgnmr))
        pmus.append(PmuData(stat=stat, phasors=phasors, freq=freq, dfreq=dfreq, analogs=analogs, digitals=digitals))
    return DataFrame(pmus=tuple(pmus), **common)


def parse_frame(data, config: ConfigSource = None, *, check_crc: bool = True) -> Frame:
    """Dissect one complete frame.

    ``data`` must hold exactly one frame starting at the SYNC byte. Data
    frames are decoded with ``config`` (a CFG-2 frame or a mapping of
    idcode to CFG-2).
    """
    data = bytes(data)
    ftype, version, framesize, _ = peek_header(data)
    if framesize < MIN_FRAME_LEN:
        raise InvalidFrame(f"FRAMESIZE {framesize} below the {MIN_FRAME_LEN}-byte minimum")
    if framesize > len(data):
        raise Truncated(f"FRAMESIZE {framesize} exceeds the {len(data)} bytes available")
    if framesize < len(data):
        raise InvalidFrame(f"{len(data) - framesize} bytes trail the frame")
    if check_crc:
        expected = compute_crc(data[:-CHK_LEN])
        found = (data[-2] << 8) | data[-1]
        if expected != found:
            raise BadCrc(expected, found)
    if version == 0:
        raise InvalidFrame("version 0 is not defined")
    _, _, _, idcode, soc, fracsec = struct.unpack_from(">BBHHII", data)
    common = dict(
        idcode=idcode, soc=soc, fraction=fracsec & MAX_FRACTION, time_quality=fracsec >> 24, version=version
    )
    cur = _Cursor(data, HEADER_LEN, framesize - CHK_LEN)
    if ftype == FrameType.CMD:
        (cmd,) = cur.take(">H")
        try:
            cmd = Command(cmd)
        except ValueError:
            raise InvalidFrame(f"unknown command code {cmd}") from None
        return CommandFrame(cmd=cmd, extframe=cur.raw(cur.end - cur.pos), **common)
    if ftype == FrameType.HEADER:
        return HeaderFrame(info=cur.raw(cur.end - cur.pos), **common)
    if ftype == FrameType.CFG2:
        frame = _parse_config(cur, common)
    elif ftype == FrameType.DATA:
        frame = _parse_data(cur, common, config)
    else:
        raise UnsupportedFrameKind(f"{ftype.name} bodies are not decoded")
    if cur.pos != cur.end:
        raise InvalidFrame(f"{cur.end - cur.pos} unexpected bytes at end of {ftype.name} body")
    return frame


class FrameReader:
    """Splits a byte stream into raw frames.

    Bytes that cannot start a frame are skipped until the next 0xAA lead;
    the count is kept in ``skipped``. Frames are yielded whole and unchecked;
    callers run :func:`parse_frame` on them.
    """

    def __init__(self):
        self._buf = bytearray()
        self.skipped = 0

    def feed(self, data) -> list:
        self._buf += data
        out = []
        buf = self._buf
        while True:
            if not buf:
                break
            if buf[0] != SYNC_LEAD:
                nxt = buf.find(SYNC_LEAD, 1)
                drop = len(buf) if nxt < 0 else nxt
                del buf[:drop]
                self.skipped += drop
                continue
            if len(buf) < 4:
                break
            try:
                _, version, framesize, _ = peek_header(buf)
            except BadSync:
                version, framesize = 0, 0
            if framesize < MIN_FRAME_LEN or version == 0:
                del buf[:1]
                self.skipped += 1
                continue
            if len(buf) < framesize:
                break
            out.append(bytes(buf[:framesize]))
            del buf[:framesize]
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


# ---------------------------------------------------------------------------
# Rendering


def _fmt_complex(z: complex) -> str:
    def num(v):
        return str(int(v)) if float(v).is_integer() and abs(v) < 1e15 else repr(float(v))

    sign = "-" if math.copysign(1.0, z.imag) < 0 else "+"
    return f"({num(z.real)}{sign}{num(abs(z.imag))}j)"


def render_frame(frame: Frame, config: ConfigSource = None) -> str:
    """Field-per-line text rendering of a frame, one section per layer."""
    ftype = frame.frame_type
    lines = ["###[ C37.118.2 Common ]###"]
    try:
        raw = build_frame(frame, config)
        framesize = len(raw)
        chk = f"0x{int.from_bytes(raw[-2:], 'big'):04x}"
    except CodecError:
        framesize, chk = "?", "?"
    lines += [
        f"  sync = 0x{SYNC_LEAD:02x}{(int(ftype) << 4) | frame.version:02x}",
        f"  frame_type = {ftype.name}",
        f"  version = {frame.version}",
        f"  framesize = {framesize}",
        f"  idcode = {frame.idcode}",
        f"  soc = {frame.soc}",
        f"  fracsec = {frame.fraction}",
        f"  time_quality = 0x{frame.time_quality:02x}",
    ]
    if isinstance(frame, CommandFrame):
        lines.append("###[ Command ]###")
        lines.append(f"  cmd = {Command(frame.cmd).name}")
        if frame.extframe:
            lines.append(f"  extframe = {bytes(frame.extframe).hex()}")
    elif isinstance(frame, HeaderFrame):
        lines.append("###[ Header ]###")
        info = frame.info if isinstance(frame.info, bytes) else str(frame.info).encode()
        lines.append(f"  info = {info.decode('utf-8', errors='replace')}")
    elif isinstance(frame, ConfigFrame2):
        lines.append("###[ Configuration (CFG-2) ]###")
        lines.append(f"  time_base = {frame.time_base}")
        lines.append(f"  num_pmu = {frame.num_pmu}")
        for pmu in frame.pmus:
            lines.append(f"  ###[ PMU {pmu.idcode} ]###")
            lines.append(f"    stn = {pmu.station_name}")
            lines.append(f"    idcode = {pmu.idcode}")
            f = pmu.fmt
            lines.append(
                "    format = 0x%04x (%s, %s phasors, %s analogs, %s freq)"
                % (
                    f.word,
                    "polar" if f.polar else "rectangular",
                    "float" if f.phasor_float else "int",
                    "float" if f.analog_float else "int",
                    "float" if f.freq_float else "int",
                )
            )
            lines.append(f"    phnmr = {pmu.phnmr}")
            lines.append(f"    annmr = {pmu.annmr}")
            lines.append(f"    dgnmr = {pmu.dgnmr}")
            for nm, (kind, scale) in zip(pmu.phasor_names, pmu.phunits):
                lines.append(f"    chnam = {nm} ({PhasorUnit(kind).name}, scale={scale})")
            for nm, (kind, scale) in zip(pmu.analog_names, pmu.anunits):
                lines.append(f"    chnam = {nm} (analog kind={kind}, scale={scale})")
            for labels, (normal, valid) in zip(pmu.digital_names, pmu.digunits):
                lines.append(f"    digital = {', '.join(labels)} (mask 0x{normal:04x}/0x{valid:04x})")
            lines.append(f"    fnom = {pmu.fnom}")
            lines.append(f"    cfgcnt = {pmu.cfgcnt}")
        lines.append(f"  data_rate = {frame.data_rate}")
    elif isinstance(frame, DataFrame):
        lines.append("###[ Data ]###")
        blocks = None
        try:
            blocks = _resolve_config(frame.idcode, config).pmus
        except CodecError:
            pass
        for n, data in enumerate(frame.pmus):
            block = blocks[n] if blocks and n < len(blocks) else None
            title = f"PMU {block.idcode}" if block else f"PMU #{n}"
            lines.append(f"  ###[ {title} ]###")
            lines.append(f"    stat = 0x{data.stat:04x}")
            lines.append("    phasors = [%s]" % ", ".join(_fmt_complex(p) for p in data.phasors))
            lines.append(f"    freq = {data.freq}")
            lines.append(f"    dfreq = {data.dfreq}")
            if data.analogs:
                lines.append(f"    analog = {list(data.analogs)}")
            if data.digitals:
                lines.append("    digital = [%s]" % ", ".join(f"0x{d:04x}" for d in data.digitals))
    lines.append(f"  chk = {chk}")
    return "\n".join(lines)


def summarize(frame: Frame) -> dict:
    """Compact JSON-friendly description used in attack logs."""
    out = {"type": frame.frame_type.name, "idcode": frame.idcode, "soc": frame.soc, "fracsec": frame.fraction}
    if isinstance(frame, CommandFrame):
        out["cmd"] = Command(frame.cmd).name
    elif isinstance(frame, DataFrame):
        out["phasors"] = [[[p.real, p.imag] for p in d.phasors] for d in frame.pmus]
    elif isinstance(frame, ConfigFrame2):
        out["pmus"] = [p.idcode for p in frame.pmus]
        out["data_rate"] = frame.data_rate
    return out


def phasor_scale(kind_scale: Sequence) -> float:
    """Engineering units per integer count for a PHUNIT word (1e-5 per bit)."""
    return kind_scale[1] * 1e-5
