import random
import struct

import pytest
from hypothesis import given, settings, strategies as st

from phasorlab import codec
from phasorlab.codec import (
    BadCrc, BadSync, CodecError, Command, CommandFrame, ConfigFrame2, DataFrame, FrameReader,
    HeaderFrame, InvalidFrame, MissingConfig, PmuBlock, PmuData, PhasorUnit, Truncated,
    UnsupportedFrameKind, build_frame, parse_frame, peek_header, render_frame,
)

import framegen
from oracles import crc_bitwise

DATA_ON_HEAD = bytes.fromhex("aa410012000100000000000000000002")


def test_command_vector_hand_assembled():
    b = build_frame(CommandFrame(idcode=1, cmd=Command.DATA_ON))
    assert len(b) == 18
    assert b[:16] == DATA_ON_HEAD
    assert int.from_bytes(b[16:], "big") == crc_bitwise(DATA_ON_HEAD)
    assert b.hex() == "aa410012000100000000000000000002950f"


def test_command_vector_parses():
    f = parse_frame(DATA_ON_HEAD + crc_bitwise(DATA_ON_HEAD).to_bytes(2, "big"))
    assert f == CommandFrame(idcode=1, cmd=Command.DATA_ON)


def _fig_config(fmt=codec.FLOAT_RECT, idcode=7):
    block = PmuBlock(
        station_name="PMU7", idcode=idcode, fmt=fmt, phasor_names=("VA", "IA", "IB"),
        phunits=((PhasorUnit.VOLTAGE, 1), (PhasorUnit.CURRENT, 1), (PhasorUnit.CURRENT, 1)),
    )
    return ConfigFrame2(idcode=idcode, pmus=(block,))


@pytest.mark.parametrize("fmt", [codec.FLOAT_RECT, codec.INT_RECT])
def test_known_phasors_round_trip(fmt):
    cfg = _fig_config(fmt)
    values = (2453 + 2444j, 2954 + 2780j, 2922 + 2079j)
    f = DataFrame(idcode=7, soc=1_700_000_000, fraction=33333, pmus=(PmuData(phasors=values, freq=60.0 if fmt.freq_float else 0),))
    back = parse_frame(build_frame(f, cfg), cfg)
    assert back.pmus[0].phasors == values
    assert back == f


def test_polar_known_values_close():
    cfg = _fig_config(codec.FLOAT_POLAR)
    values = (2453 + 2444j, 2954 + 2780j, 2922 + 2079j)
    f = DataFrame(idcode=7, pmus=(PmuData(phasors=values),))
    back = parse_frame(build_frame(f, cfg), cfg)
    for a, b in zip(values, back.pmus[0].phasors):
        assert abs(a - b) <= 1e-6 * abs(a)


def test_config_mapping_lookup():
    cfg = _fig_config()
    f = DataFrame(idcode=7, pmus=(PmuData(phasors=(1j, 2, 3)),))
    b = build_frame(f, {7: cfg})
    assert parse_frame(b, {7: cfg}) == f
    with pytest.raises(MissingConfig):
        parse_frame(b, {8: cfg})
    with pytest.raises(MissingConfig):
        parse_frame(b)
    with pytest.raises(MissingConfig):
        build_frame(f)


def test_render_command():
    text = render_frame(CommandFrame(idcode=1, cmd=Command.DATA_ON))
    assert "frame_type = CMD" in text
    assert "cmd = DATA_ON" in text


def test_render_header_and_data():
    assert "hi" in render_frame(HeaderFrame(idcode=1, info=b"hi"))
    cfg = _fig_config()
    text = render_frame(DataFrame(idcode=7, pmus=(PmuData(phasors=(2402 + 0j, 58218 + 2860j, 58218 - 12675j)),)), cfg)
    assert "phasors = [(2402+0j), (58218+2860j), (58218-12675j)]" in text


def test_render_config_lists_channels():
    text = render_frame(_fig_config())
    for needle in ("time_base = 1000000", "num_pmu = 1", "stn = PMU7", "chnam = IA (CURRENT", "data_rate = 30"):
        assert needle in text


# -- error cases ----------------------------------------------------------

def _valid():
    return build_frame(CommandFrame(idcode=1, cmd=Command.DATA_ON))


def test_bad_sync():
    b = bytearray(_valid())
    b[0] = 0xAB
    with pytest.raises(BadSync):
        parse_frame(bytes(b))


def test_last_byte_xor_gives_bad_crc():
    b = bytearray(_valid())
    b[-1] ^= 0x01
    with pytest.raises(BadCrc) as exc:
        parse_frame(bytes(b))
    assert exc.value.expected != exc.value.found


def test_truncated():
    with pytest.raises(Truncated):
        parse_frame(_valid()[:-3])
    with pytest.raises(Truncated):
        peek_header(b"\xaa")


def test_trailing_bytes_rejected():
    with pytest.raises(InvalidFrame):
        parse_frame(_valid() + b"\0")


def test_cfg1_unsupported():
    head = bytes([0xAA, 0x21]) + (18).to_bytes(2, "big") + bytes(12)
    b = head + codec.compute_crc(head).to_bytes(2, "big")
    with pytest.raises(UnsupportedFrameKind):
        parse_frame(b)


def test_unknown_command_rejected():
    with pytest.raises(InvalidFrame):
        build_frame(CommandFrame(idcode=1, cmd=9))
    head = bytes.fromhex("aa410012000100000000000000000009")
    with pytest.raises(InvalidFrame):
        parse_frame(head + codec.compute_crc(head).to_bytes(2, "big"))


def test_integer_polar_rejected():
    fmt = codec.DataFormat(polar=True, phasor_float=False, analog_float=False, freq_float=False)
    with pytest.raises(InvalidFrame):
        build_frame(_fig_config(fmt))


def test_phasor_count_mismatch():
    cfg = _fig_config()
    with pytest.raises(InvalidFrame):
        build_frame(DataFrame(idcode=7, pmus=(PmuData(phasors=(1, 2)),)), cfg)


def test_int_overflow_rejected():
    cfg = _fig_config(codec.INT_RECT)
    with pytest.raises(InvalidFrame):
        build_frame(DataFrame(idcode=7, pmus=(PmuData(phasors=(40000, 0, 0)),)), cfg)
    with pytest.raises(InvalidFrame):
        build_frame(DataFrame(idcode=7, pmus=(PmuData(phasors=(1.5, 0, 0)),)), cfg)


def test_fraction_must_be_below_time_base():
    cfg = _fig_config()
    with pytest.raises(InvalidFrame):
        build_frame(DataFrame(idcode=7, fraction=1_000_000, pmus=(PmuData(phasors=(0, 0, 0)),)), cfg)


def test_data_length_mismatch_with_config():
    cfg = _fig_config()
    b = build_frame(DataFrame(idcode=7, pmus=(PmuData(phasors=(0, 0, 0)),)), cfg)
    other = _fig_config(codec.INT_RECT)
    with pytest.raises(InvalidFrame):
        parse_frame(b, other)


def test_framesize_from_output_not_input():
    b = build_frame(HeaderFrame(idcode=3, info=b"x" * 100))
    assert peek_header(b)[2] == len(b) == 116


# -- frame reader ---------------------------------------------------------

def test_frame_reader_resyncs_over_garbage_and_splits():
    frames = [build_frame(CommandFrame(idcode=i, cmd=Command.DATA_OFF)) for i in range(5)]
    stream = b"\x00\x11\xaa\x00" + b"".join(frames[:2]) + b"junk" + b"".join(frames[2:])
    reader = FrameReader()
    out = []
    for i in range(0, len(stream), 7):
        out += reader.feed(stream[i:i + 7])
    assert out == frames
    assert reader.skipped == 8
    assert reader.pending == 0


# -- properties -----------------------------------------------------------

ENCODINGS = list(framegen.ENCODINGS)


@settings(max_examples=300, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), kind=st.sampled_from(framegen.KINDS), enc=st.sampled_from(ENCODINGS))
def test_round_trip_property(seed, kind, enc):
    frame, cfg = framegen.rand_frame(random.Random(seed), kind, enc)
    b = build_frame(frame, cfg)
    back = parse_frame(b, cfg)
    assert back == frame
    assert build_frame(back, cfg) == b
    assert peek_header(b)[2] == len(b)
    assert b[0] == 0xAA


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), kind=st.sampled_from(framegen.KINDS), enc=st.sampled_from(ENCODINGS), data=st.data())
def test_single_bit_mutation_never_silent(seed, kind, enc, data):
    frame, cfg = framegen.rand_frame(random.Random(seed), kind, enc)
    b = bytearray(build_frame(frame, cfg))
    bit = data.draw(st.integers(0, len(b) * 8 - 1))
    b[bit // 8] ^= 1 << (bit % 8)
    with pytest.raises(CodecError):
        parse_frame(bytes(b), cfg)


@settings(max_examples=200, deadline=None)
@given(
    mag=st.floats(0, 1e6, width=32),
    ang=st.floats(-3.140625, 3.140625, width=32),
)
def test_polar_canonical_values_round_trip(mag, ang):
    cfg = ConfigFrame2(idcode=1, pmus=(PmuBlock(station_name="P", idcode=1, fmt=codec.FLOAT_POLAR,
                                                 phasor_names=("V",), phunits=((PhasorUnit.VOLTAGE, 1),)),))
    raw = struct.pack(">ff", mag, ang)
    body = struct.pack(">H", 0) + raw + struct.pack(">ff", 60.0, 0.0)
    head = struct.pack(">BBHHII", 0xAA, 0x01, 14 + len(body) + 2, 1, 0, 0)
    b = head + body + codec.compute_crc(head + body).to_bytes(2, "big")
    f = parse_frame(b, cfg)
    if mag > 0:
        assert build_frame(f, cfg) == b
    again = parse_frame(build_frame(f, cfg), cfg)
    assert again == f


@settings(max_examples=200, deadline=None)
@given(noise=st.binary(max_size=200))
def test_random_bytes_never_crash(noise):
    try:
        parse_frame(noise)
    except CodecError:
        pass
    reader = FrameReader()
    for raw in reader.feed(noise):
        try:
            parse_frame(raw)
        except CodecError:
            pass


def test_summarize_shapes():
    s = codec.summarize(CommandFrame(idcode=2, cmd=Command.SEND_CFG2))
    assert s == {"type": "CMD", "idcode": 2, "soc": 0, "fracsec": 0, "cmd": "SEND_CFG2"}


def test_phasor_scale():
    assert codec.phasor_scale((PhasorUnit.VOLTAGE, 100000)) == 1.0
