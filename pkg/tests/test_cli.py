import csv
import io
import json

import numpy as np
import pytest

from phasorlab import cli, codec
from phasorlab.netsim.pcap import pcap_bytes, read_pcap
from phasorlab.powersys import NoiseSpec, add_noise, build_H, detect_and_identify, feeder_phase_a, measurements_from_state, offset


def run(capsys, *argv):
    rc = cli.main(list(argv))
    out, err = capsys.readouterr()
    return rc, out, err


@pytest.fixture(scope="module")
def overwrite_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("overwrite")
    assert cli.main(["run", "overwrite_fdia", "--out-dir", str(out)]) == 0
    return out


# -- buildpkt ---------------------------------------------------------------

def test_buildpkt_command_vector(tmp_path, capsys):
    spec = tmp_path / "cmd.yaml"
    spec.write_text("kind: command\nidcode: 1\ncmd: data_on\n")
    rc, out, _ = run(capsys, "buildpkt", str(spec), "--out", str(tmp_path / "f.bin"))
    assert rc == 0
    assert out.strip() == "aa410012000100000000000000000002950f"
    assert (tmp_path / "f.bin").read_bytes().hex() == out.strip()


def test_buildpkt_data_round_trips_through_dissect(tmp_path, capsys):
    spec = tmp_path / "data.yaml"
    spec.write_text(
        "kind: data\nidcode: 7\nsoc: 1700000000\n"
        "config: {pmus: [{station: PMU, phasors: [VA, VB, VC]}]}\n"
        "pmus: [{phasors: [[2402, 0], [58218, 2860], [58218, 12675]]}]\n"
    )
    rc, out, _ = run(capsys, "buildpkt", str(spec), "--out", str(tmp_path / "d.bin"),
                     "--config-out", str(tmp_path / "c.bin"))
    assert rc == 0
    from phasorlab.netsim import packets as P
    pkt = P.build_tcp_packet("02:00:00:00:00:01", "02:00:00:00:00:02", "10.0.0.1", "10.0.0.2", 4712, 5000, 1, 1,
                             P.TCP_PSH | P.TCP_ACK, (tmp_path / "d.bin").read_bytes())
    (tmp_path / "t.pcap").write_bytes(pcap_bytes([(0, pkt.to_bytes())]))
    rc, out, err = run(capsys, "dissect", str(tmp_path / "t.pcap"), "--config", str(tmp_path / "c.bin"))
    assert rc == 0
    assert "phasors = [(2402+0j), (58218+2860j), (58218+12675j)]" in out


@pytest.mark.parametrize("text,field", [
    ("kind: command\nidcode: 1\ncmd: explode\n", "cmd"),
    ("kind: teapot\nidcode: 1\n", "kind"),
    ("kind: command\ncmd: data_on\n", "idcode"),
    ("kind: data\nidcode: 1\nconfig: {pmus: [{phasors: [A], format: int_polar}]}\n", "pmus[0].format"),
])
def test_buildpkt_invalid_spec(tmp_path, capsys, text, field):
    spec = tmp_path / "bad.yaml"
    spec.write_text(text)
    rc, _, err = run(capsys, "buildpkt", str(spec))
    assert rc == 1
    assert f"field '{field}'" in err and err.startswith("ConfigError")


# -- run / dissect --------------------------------------------------------------

def test_run_outputs(overwrite_run):
    summary = json.loads((overwrite_run / "summary.json").read_text())
    assert summary["attack"]["mutated"] >= 29
    assert summary["pdc_bad_crc"] == 0
    log = [json.loads(l) for l in (overwrite_run / "attacker.jsonl").read_text().splitlines()]
    assert any(r["action"] == "mutate" for r in log)


def test_dissect_run_trace(overwrite_run, capsys):
    rc, out, err = run(capsys, "dissect", str(overwrite_run / "trace.pcap"))
    assert rc == 0
    assert "BadCrc" not in out
    assert "0 BadCrc, 0 without configuration" in err
    assert out.count("phasors = [(2402+0j), (58218+2860j), (58218+12675j)]") >= 29


def test_dissect_without_config_falls_back_to_hex(overwrite_run, capsys, tmp_path):
    records = [(t, r) for t, r in read_pcap(overwrite_run / "trace.pcap")]
    # drop the packets that carry the CFG-2 frame
    kept = [(t, r) for t, r in records if b"\xaa\x31" not in r]
    (tmp_path / "nocfg.pcap").write_bytes(pcap_bytes(kept))
    rc, out, err = run(capsys, "dissect", str(tmp_path / "nocfg.pcap"))
    assert rc == 0
    assert "no configuration for stream 7" in out and "body = " in out


def test_dissect_truncated(overwrite_run, capsys, tmp_path):
    data = (overwrite_run / "trace.pcap").read_bytes()
    (tmp_path / "cut.pcap").write_bytes(data[:len(data) // 2])
    rc, out, err = run(capsys, "dissect", str(tmp_path / "cut.pcap"))
    assert rc == 0
    assert "Truncated" in err and "###[" in out


def test_dissect_bad_crc_banner(capsys, tmp_path):
    from phasorlab.netsim import packets as P
    raw = bytearray(codec.build_frame(codec.CommandFrame(idcode=1, cmd=codec.Command.DATA_ON)))
    raw[-1] ^= 1
    pkt = P.build_tcp_packet("02:00:00:00:00:01", "02:00:00:00:00:02", "10.0.0.1", "10.0.0.2", 1, 2, 0, 0,
                             P.TCP_ACK, bytes(raw))
    (tmp_path / "b.pcap").write_bytes(pcap_bytes([(0, pkt.to_bytes())]))
    rc, out, _ = run(capsys, "dissect", str(tmp_path / "b.pcap"))
    assert "!!! BadCrc" in out and "cmd = DATA_ON" in out


def test_dissect_bad_magic(capsys, tmp_path):
    (tmp_path / "x.pcap").write_bytes(b"not a pcap file at all....")
    rc, _, err = run(capsys, "dissect", str(tmp_path / "x.pcap"))
    assert rc == 1 and "BadPcapMagic" in err


def test_run_unknown_scenario(capsys):
    rc, _, err = run(capsys, "run", "no_such_scenario")
    assert rc == 1


def test_run_bad_scenario_file(capsys, tmp_path):
    p = tmp_path / "bad.scenario"
    p.write_text("name: x\nduration: 1\n")
    rc, _, err = run(capsys, "run", str(p))
    assert rc == 1 and "seed" in err


def test_usage_error(capsys):
    assert run(capsys, "frobnicate")[0] == 1


def test_global_flags(capsys, tmp_path):
    rc, out, _ = run(capsys, "--seed", "5", "--out-dir", str(tmp_path / "o"), "run", "overwrite_fdia")
    assert rc == 0
    assert json.loads(out[:out.rindex("}") + 1])["seed"] == 5
    assert (tmp_path / "o" / "trace.pcap").exists()


# -- estimate ---------------------------------------------------------------------

def _write_meas(path, z, sigma=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["meter", "real", "imag"] + (["sigma"] if sigma else []))
        for i, v in enumerate(z, start=1):
            w.writerow([i, repr(float(v.real)), repr(float(v.imag))] + ([sigma] if sigma else []))


def test_estimate_noise_free(capsys, tmp_path):
    m = feeder_phase_a()
    _write_meas(tmp_path / "m.csv", measurements_from_state(m).z)
    rc, out, _ = run(capsys, "estimate", str(tmp_path / "m.csv"))
    assert rc == 0
    doc = json.loads(out)
    x = np.array([complex(*v) for v in doc["x_est"]])
    assert np.allclose(x, m.true_vector(), atol=1e-12)
    assert doc["j"] == pytest.approx(0, abs=1e-18) and doc["flagged_meters"] == []


def test_estimate_matches_library(capsys, tmp_path):
    m = feeder_phase_a()
    z = add_noise(measurements_from_state(m).z, NoiseSpec(0.05, seed=4))
    _write_meas(tmp_path / "m.csv", z)
    rc, out, _ = run(capsys, "estimate", str(tmp_path / "m.csv"), "--dof", "real")
    lib = detect_and_identify(build_H(m), np.full(11, 400.0), z, offset=offset(m), dof_mode="real")
    doc = json.loads(out)
    assert doc.pop("label") == "measurements"
    assert doc == json.loads(json.dumps(lib.to_dict()))


def test_estimate_poisoned_meter1(capsys, tmp_path):
    m = feeder_phase_a()
    z = add_noise(measurements_from_state(m).z, NoiseSpec(0.05, seed=8))
    z[0] += z[0] / abs(z[0])
    _write_meas(tmp_path / "m.csv", z)
    rc, out, _ = run(capsys, "estimate", str(tmp_path / "m.csv"), "--format", "csv")
    row = list(csv.DictReader(io.StringIO(out)))[0]
    assert row["flagged_meters"] == "1" and row["bad_data_present"] == "1"


def test_estimate_snapshot_export(capsys, overwrite_run, tmp_path):
    out_dir = tmp_path / "fm"
    assert cli.main(["run", "fdia_meter1", "--out-dir", str(out_dir)]) == 0
    capsys.readouterr()
    rc, out, _ = run(capsys, "estimate", str(out_dir / "snapshots.csv"), "--dof", "real")
    assert rc == 0
    docs = json.loads(out)
    assert len(docs) >= 290
    assert np.mean([d["flagged_meters"] == [1] for d in docs]) >= 0.9


def test_estimate_bad_inputs(capsys, tmp_path):
    (tmp_path / "e.csv").write_text("a,b\n1,2\n")
    assert run(capsys, "estimate", str(tmp_path / "e.csv"))[0] == 1
    (tmp_path / "u.csv").write_text("meter,real,imag\n99,1,0\n")
    assert run(capsys, "estimate", str(tmp_path / "u.csv"))[0] == 1
    (tmp_path / "few.csv").write_text("meter,real,imag\n1,1,0\n")
    assert run(capsys, "estimate", str(tmp_path / "few.csv"))[0] == 2
