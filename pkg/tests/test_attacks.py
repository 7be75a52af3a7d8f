import json

import pytest

from phasorlab import attacks, codec
from phasorlab.attacks import InvalidMutation, MitmSession, Mode, MutationSpec, arp_poison, fdia_inject, split_frames
from phasorlab.codec import Command, CommandFrame, build_frame, parse_frame
from phasorlab.endpoints import ConstantSource, PmuConfig, PmuState, SimPmuServer, pdc_connect
from phasorlab.netsim import packets as P
from phasorlab.netsim.sim import NS, Network
from phasorlab.scenario import build_testbed, bundled, run_scenario, run_testbed

PMU_VALUES = [2453 + 2444j, 2954 + 2780j, 2922 + 2079j]
FORGED_SET = {0: 2402 + 0j, 1: 58218 + 2860j, 2: 58218 + 12675j}


def sec(x):
    return int(x * NS)


class Bed:
    """PDC, attacker and constant PMUs on one LAN."""

    def __init__(self, idcodes=(7,), fmt=codec.FLOAT_RECT, seed=0):
        self.net = Network(seed)
        self.pdc_node = self.net.add_host("pdc", "08:00:27:69:58:64", "10.0.2.7")
        self.attacker = self.net.add_host("attacker", "08:00:27:a7:1b:c3", "10.0.2.6")
        self.pmus, self.servers = {}, {}
        for n, i in enumerate(idcodes):
            node = self.net.add_host(f"pmu{i}", f"02:00:00:00:00:{n + 1:02x}", f"10.0.2.{15 + n}")
            self.pmus[i] = node
            self.servers[i] = SimPmuServer(node, PmuConfig(i, ConstantSource(PMU_VALUES, ["VA", "VB", "VC"]), fmt=fmt))
            self.net.resolve(node, self.pdc_node.ip)
        self.pdc = None

    def connect(self, at=0.2):
        addrs = [(i, n.ip, 4712) for i, n in self.pmus.items()]
        self.net.sched.at(sec(at), lambda: setattr(self, "pdc", pdc_connect(self.pdc_node, addrs)))

    def session(self, mode, start=0.05, **kw):
        sess = MitmSession(self.attacker, list(self.pmus.values()), self.pdc_node, mode, **kw)
        self.net.sched.at(sec(start), sess.start)
        return sess


# -- mutation spec --------------------------------------------------------

def test_mutation_rules():
    spec = MutationSpec(1, set={0: [1, 1]}, scale={1: 2}, bias={2: 1j}, mag_bias={3: 1.0})
    out = spec.apply([0, 1 + 1j, 2, 3 + 4j])
    assert out[:3] == (1 + 1j, 2 + 2j, 2 + 1j)
    assert out[3] == pytest.approx((3 + 4j) * 6 / 5)


def test_mutation_validation():
    with pytest.raises(InvalidMutation):
        MutationSpec(1, set={5: 0}, phnmr=3)
    with pytest.raises(InvalidMutation):
        MutationSpec(1, limit=-1)
    with pytest.raises(InvalidMutation):
        MitmSession(None, None, None, Mode.FDIA)


def test_split_frames():
    a = build_frame(CommandFrame(idcode=1, cmd=Command.DATA_ON))
    b = build_frame(codec.HeaderFrame(idcode=1, info=b"x"))
    assert split_frames(a + b) == [a, b]
    assert split_frames(a[:-1]) is None
    assert split_frames(b"GET /") is None


def _data_packet(cfg, phasors):
    raw = build_frame(codec.DataFrame(idcode=cfg.idcode, pmus=(codec.PmuData(phasors=tuple(phasors)),)), cfg)
    return P.build_tcp_packet("02:00:00:00:00:01", "02:00:00:00:00:02", "10.0.0.1", "10.0.0.2",
                              4712, 50000, 10, 20, P.TCP_PSH | P.TCP_ACK, raw)


def _cfg(fmt=codec.FLOAT_RECT, idcode=7):
    return PmuConfig(idcode, ConstantSource(PMU_VALUES), fmt=fmt).config_frame()


@pytest.mark.parametrize("fmt", [codec.FLOAT_RECT, codec.FLOAT_POLAR, codec.INT_RECT])
def test_fdia_inject_is_width_preserving_and_valid(fmt):
    cfg = _cfg(fmt)
    vals = [complex(round(v.real / 0.1), round(v.imag / 0.1)) for v in PMU_VALUES] if not fmt.phasor_float else PMU_VALUES
    pkt = _data_packet(cfg, vals)
    new = fdia_inject(pkt, MutationSpec(7, set={0: 2402}), cfg)
    assert new is not pkt
    assert len(new.payload) == len(pkt.payload)
    assert new.ip.total_length == pkt.ip.total_length
    assert P.validate_packet(new) == []
    frame = parse_frame(new.payload, cfg)
    assert frame.pmus[0].phasors[0] * (0.1 if not fmt.phasor_float else 1) == pytest.approx(2402, abs=1e-3)
    assert frame.pmus[0].phasors[1:] == parse_frame(pkt.payload, cfg).pmus[0].phasors[1:]


def test_fdia_inject_no_match_returns_same_object():
    cfg = _cfg()
    pkt = _data_packet(cfg, PMU_VALUES)
    assert fdia_inject(pkt, MutationSpec(99, set={0: 0}), cfg) is pkt
    assert fdia_inject(pkt, MutationSpec(7), cfg) is pkt
    cmd = P.build_tcp_packet("02:00:00:00:00:01", "02:00:00:00:00:02", "10.0.0.1", "10.0.0.2", 1, 2, 0, 0,
                             P.TCP_ACK, build_frame(CommandFrame(idcode=7, cmd=Command.DATA_ON)))
    assert fdia_inject(cmd, MutationSpec(7, set={0: 0}), cfg) is cmd


def test_fdia_inject_needs_config():
    pkt = _data_packet(_cfg(), PMU_VALUES)
    with pytest.raises(codec.MissingConfig):
        fdia_inject(pkt, MutationSpec(7, set={0: 0}), {})


def test_fdia_limit():
    cfg = _cfg()
    spec = MutationSpec(7, set={0: 0}, limit=1)
    pkt = _data_packet(cfg, PMU_VALUES)
    assert fdia_inject(pkt, spec, cfg) is not pkt
    assert spec.exhausted
    assert fdia_inject(pkt, spec, cfg) is pkt


# -- poisoning ------------------------------------------------------------

def test_poisoning_tables_and_revert():
    bed = Bed()
    pmu, pdc, att = bed.pmus[7], bed.pdc_node, bed.attacker
    assert pmu.arp_table[pdc.ip] == pdc.mac
    p = arp_poison(att, pmu, pdc, interval=sec(0.5))
    bed.net.run(sec(0.1))
    assert pmu.arp_table[pdc.ip] == att.mac
    assert pdc.arp_table[pmu.ip] == att.mac
    bed.net.run(sec(1.2))
    assert p.rounds == 3
    p.stop()
    bed.net.run(sec(2.0))
    assert bed.net.resolve(pmu, pdc.ip) == pdc.mac
    assert bed.net.resolve(pdc, pmu.ip) == pmu.mac


def test_poison_without_forwarding_blackholes():
    bed = Bed()
    arp_poison(bed.attacker, bed.pmus[7], bed.pdc_node)
    bed.connect()
    bed.net.run(sec(1))
    assert bed.pdc.configs == {}
    assert bed.attacker.stats["forward_disabled_dropped"] > 0


# -- MITM modes ------------------------------------------------------------

def _stream_bytes(attack):
    bed = Bed(seed=3)
    if attack:
        sess = bed.session(Mode.EAVESDROP)
    bed.connect()
    bed.net.run(sec(1.5))
    if attack:
        assert sess.queue.seen > 0
    return bytes(bed.pdc.streams[7].received), bytes(bed.pmus[7].conns[next(iter(bed.pmus[7].conns))].received)


def test_eavesdrop_is_transparent():
    assert _stream_bytes(True) == _stream_bytes(False)


def test_fdia_stealth_at_receiver():
    bed = Bed()
    sess = bed.session(Mode.FDIA, spec=MutationSpec(7, set=FORGED_SET))
    cap = bed.net.capture(bed.pdc_node)
    bed.connect()
    bed.net.run(sec(1.2))
    assert sess.mutated >= 29
    snaps = bed.pdc.collect()
    assert {s.entries[7].pmus[0].phasors for s in snaps} == {tuple(FORGED_SET[i] for i in range(3))}
    assert bed.pdc.bad_crc == 0 and bed.pdc_node.stats["invalid_dropped"] == 0
    for _, raw in cap.records:
        assert P.validate_packet(raw) == []
    assert sess.capture_config(7).idcode == 7


def test_blackhole_drops_everything():
    bed = Bed()
    sess = bed.session(Mode.BLACKHOLE)
    bed.connect()
    bed.net.run(sec(1.5))
    assert bed.pdc.configs == {} and sess.dropped > 0
    assert bed.pdc.errors


def test_fcia_data_off_then_pdc_can_resume():
    bed = Bed()
    sess = bed.session(Mode.EAVESDROP)
    bed.connect()
    bed.net.run(sec(0.6))
    server = bed.servers[7].sessions[0]
    assert server.state is PmuState.STREAMING
    sess.fcia_inject(CommandFrame(idcode=7, cmd=Command.DATA_OFF))
    bed.net.run(sec(1.0))
    assert server.state is PmuState.IDLE
    n = bed.pdc.streams[7].frames
    bed.net.run(sec(1.3))
    assert bed.pdc.streams[7].frames == n
    # the PDC's own later command still lands despite the extra bytes
    bed.pdc.send_command(7, Command.DATA_ON)
    bed.net.run(sec(1.6))
    assert server.state is PmuState.STREAMING
    assert bed.pdc.streams[7].frames > n
    assert bed.pdc.bad_crc == 0 and bed.pdc.errors == []


def test_fcia_bad_crc_is_ignored():
    bed = Bed()
    sess = bed.session(Mode.EAVESDROP)
    bed.connect()
    bed.net.run(sec(0.6))
    raw = bytearray(build_frame(CommandFrame(idcode=7, cmd=Command.DATA_OFF)))
    raw[-1] ^= 0xFF
    sess.fcia_inject(bytes(raw))
    bed.net.run(sec(0.8))
    server = bed.servers[7].sessions[0]
    assert server.bad_crc == 1 and server.state is PmuState.STREAMING


def test_mid_stream_session_harvests_config():
    bed = Bed()
    bed.connect()
    bed.net.run(sec(0.5))
    sess = MitmSession(bed.attacker, bed.pmus[7], bed.pdc_node, Mode.EAVESDROP).start()
    bed.net.run(sec(0.7))
    assert sess.flows
    with pytest.raises(codec.MissingConfig):
        sess.capture_config(7)
    sess.fcia_inject(CommandFrame(idcode=7, cmd=Command.SEND_CFG2))
    bed.net.run(sec(1.0))
    assert sess.capture_config(7).pmus[0].phasor_names == ("VA", "VB", "VC")
    # the solicited reply never reached the PDC and the stream carried on
    assert any(r["action"] == "harvest_drop" for r in sess.log)
    frames = bed.pdc.streams[7].frames
    bed.net.run(sec(1.3))
    assert bed.pdc.streams[7].frames > frames
    assert bed.pdc.bad_crc == 0 and bed.pdc.streams[7].malformed == 0 and bed.pdc.errors == []


def test_two_pmus_configs_per_idcode(tmp_path):
    bed = Bed(idcodes=(7, 8))
    sess = bed.session(Mode.EAVESDROP)
    bed.connect()
    bed.net.run(sec(0.8))
    assert sorted(sess.configs) == [7, 8]
    with pytest.raises(codec.MissingConfig):
        sess.capture_config(9)
    sess.write_log(tmp_path / "log.jsonl")
    recs = [json.loads(line) for line in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert {r["action"] for r in recs} >= {"start", "config_captured", "forward"}
    assert all("t" in r for r in recs)


def test_fcia_without_observed_stream():
    bed = Bed()
    sess = MitmSession(bed.attacker, bed.pmus[7], bed.pdc_node).start()
    with pytest.raises(codec.MissingConfig):
        sess.fcia_inject(CommandFrame(idcode=7, cmd=Command.DATA_OFF))


# -- end to end through scenarios -------------------------------------------

def test_overwrite_scenario_values():
    rep = run_scenario(bundled("overwrite_fdia"))
    snaps = rep.snapshots
    assert {s.entries[7].pmus[0].phasors for s in snaps} == {(2402 + 0j, 58218 + 2860j, 58218 + 12675j)}
    assert rep.summary["pdc_invalid_packets"] == 0 and rep.summary["pdc_bad_crc"] == 0


@pytest.mark.parametrize("idcode,meter", [(2, 1), (3, 2), (9, 3), (10, 4)])
def test_detectability_closure(idcode, meter):
    cfg = bundled("fdia_meter1")
    cfg.duration = 33.4
    cfg.attack.victims = [idcode]
    cfg.attack.mutation = dict(cfg.attack.mutation, idcode=idcode)
    rep = run_scenario(cfg)
    est = [s for s in rep.series if "j" in s]
    assert len(est) >= 1000
    rate = sum(s["flagged_meters"] == [meter] for s in est) / len(est)
    assert rate >= 0.95
