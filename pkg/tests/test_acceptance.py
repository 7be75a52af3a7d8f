"""Acceptance criteria, one test each.

Every test records a single ``CRITERION n: PASS|FAIL`` line (shown in the
terminal summary) and then asserts the criterion at its stated tolerance.
"""

import filecmp
import random
import time

import numpy as np
import pytest
import scipy.stats

import framegen
from conftest import ACCEPTANCE_LINES
from oracles import crc_bitwise, normal_equations
from phasorlab import codec
from phasorlab.codec import build_frame, compute_crc, parse_frame
from phasorlab.netsim.packets import NetPacket, mac_str, validate_packet
from phasorlab.powersys import (
    NoiseSpec, add_noise, build_H, chi_square_threshold, detect_and_identify, estimate, feeder_phase_a,
    measurements_from_state, offset,
)
from phasorlab.scenario import build_testbed, bundled, bundled_scenarios, run_scenario, run_testbed
from phasorlab.netsim.sim import ns

SIGMA = 0.05
PAYLOAD = (2453 + 2444j, 2954 + 2780j, 2922 + 2079j)
DELIVERED = (2402 + 0j, 58218 + 2860j, 58218 + 12675j)


def verdict(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def _noisy_trials(n, seed, dof_mode, bias_meter=None, bias=0.0):
    model = feeder_phase_a()
    H, c = build_H(model), offset(model)
    clean = measurements_from_state(model).z
    w = np.full(len(clean), 1 / SIGMA ** 2)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        z = add_noise(clean, NoiseSpec(SIGMA), rng)
        if bias_meter is not None:
            i = bias_meter - 1
            z[i] += bias * z[i] / abs(z[i])
        out.append(detect_and_identify(H, w, z, offset=c, dof_mode=dof_mode))
    return out


def test_criterion_1_codec_round_trip():
    t0 = time.perf_counter()
    n, failures, seen = 12_000, [], set()
    for i, (kind, enc, (frame, cfg)) in enumerate(framegen.frame_stream(1, n)):
        seen.add((kind, enc))
        b = build_frame(frame, cfg)
        back = parse_frame(b, cfg)
        if back != frame or build_frame(back, cfg) != b:
            failures.append(i)
    elapsed = time.perf_counter() - t0
    ok = not failures and len(seen) == 12 and elapsed < 30
    verdict(1, ok, f"{n} frames over {len(seen)} kind/encoding pairs, {len(failures)} failures, {elapsed:.1f} s")
    assert ok


def test_criterion_2_crc_oracle():
    rng = random.Random(2)
    payloads = [bytes(rng.getrandbits(8) for _ in range(rng.randint(0, 300))) for _ in range(10_000)]
    mismatches = sum(compute_crc(p) != crc_bitwise(p) for p in payloads)
    vector = compute_crc(b"123456789")
    ok = vector == 0x29B1 and mismatches == 0
    verdict(2, ok, f"check value 0x{vector:04X}, {mismatches} mismatches on 10^4 payloads")
    assert ok


def test_criterion_3_chi_square_threshold():
    t4 = chi_square_threshold(4)
    worst = max(abs(chi_square_threshold(k) - scipy.stats.chi2.ppf(0.95, k)) for k in range(1, 31))
    ok = abs(t4 - 9.49) <= 0.01 and worst < 1e-3
    verdict(3, ok, f"T(K=4) = {t4:.4f}, max deviation over K=1..30 = {worst:.2e}")
    assert ok


def test_criterion_4_null_calibration():
    t0 = time.perf_counter()
    reps = _noisy_trials(1000, 4, "complex")
    elapsed = time.perf_counter() - t0
    js = np.array([r.j for r in reps])
    mean_j = js.mean()
    rate = np.mean(js >= reps[0].T_j)
    sy_ok = np.mean([max(r.sigma_Y) <= 3 for r in reps])
    parts = {
        "mean": abs(mean_j - 4) <= 0.3,
        "rate": abs(rate - 0.05) <= 0.02,
        "sigma_Y": sy_ok >= 0.90,
        "time": elapsed < 10,
    }
    ok = all(parts.values())
    failed = [k for k, v in parts.items() if not v]
    verdict(4, ok, f"K={reps[0].K} mean(j)={mean_j:.3f} P(j>=T_j)={rate:.3f} sigma_Y<=3 in {sy_ok:.1%} "
                   f"{elapsed:.1f} s" + (f" (failed: {', '.join(failed)})" if failed else ""))
    assert ok


def test_criterion_5_attack_detection():
    reps = _noisy_trials(1000, 5, "complex", bias_meter=1, bias=20 * SIGMA)
    hits = np.mean([r.j >= r.T_j and r.flagged_meters == [1] for r in reps])
    ok = hits >= 0.95
    verdict(5, ok, f"j >= T_j and flagged == [1] in {hits:.1%} of 1000 trials")
    assert ok


def test_criterion_6_end_to_end_fdia():
    tb = build_testbed(bundled("overwrite_fdia"))
    pmu = tb.pmu_nodes[7]
    pmu_cap = tb.net.capture(pmu)
    snaps = run_testbed(tb)

    # what the PMU put on the wire
    reader, configs, sent = codec.FrameReader(), {}, set()
    for _, raw in pmu_cap.records:
        pkt = NetPacket.from_bytes(raw)
        if pkt.is_tcp and pkt.ip.src == pmu.ip and pkt.payload:
            for fb in reader.feed(pkt.payload):
                f = parse_frame(fb, configs)
                if isinstance(f, codec.ConfigFrame2):
                    configs[f.idcode] = f
                elif isinstance(f, codec.DataFrame):
                    sent.add(f.pmus[0].phasors)

    delivered = {s.entries[7].pmus[0].phasors for s in snaps}
    invalid = sum(validate_packet(raw) != [] for _, raw in tb.capture.records)
    invalid += tb.pdc_node.stats.get("invalid_dropped", 0) + tb.pdc.bad_crc
    ok = sent == {PAYLOAD} and delivered == {DELIVERED} and invalid == 0 and tb.session.mutated > 0
    verdict(6, ok, f"sent {sorted(sent)} delivered {sorted(delivered)} over {len(snaps)} snapshots, "
                   f"{tb.session.mutated} mutated, {invalid} validation failures")
    assert ok


def _macs(pair):
    return "/".join("-" if m is None else mac_str(m) for m in pair)


def test_criterion_7_arp_poisoning():
    cfg = bundled("arp_poison")
    tb = build_testbed(cfg)
    pmu, pdc, att = tb.pmu_nodes[2], tb.pdc_node, tb.attacker
    seen = {}

    def probe(label):
        seen[label] = (pmu.arp_table.get(pdc.ip), pdc.arp_table.get(pmu.ip))

    probe("before")
    tb.net.sched.at(ns(0.5), probe, "during")
    run_testbed(tb)
    after = (tb.net.resolve(pmu, pdc.ip), tb.net.resolve(pdc, pmu.ip))
    ok = (seen["before"] == (pdc.mac, pmu.mac) and seen["during"] == (att.mac, att.mac)
          and after == (pdc.mac, pmu.mac))
    verdict(7, ok, f"PMU->PDC / PDC->PMU entries before {_macs(seen['before'])}, during {_macs(seen['during'])}, "
                   f"after stop {_macs(after)}")
    assert ok


def _pdc_streams(cfg):
    tb = build_testbed(cfg)
    run_testbed(tb)
    return tb, {i: bytes(s.received) for i, s in tb.pdc.streams.items()}


def test_criterion_8_eavesdrop_transparency():
    attacked_tb, attacked = _pdc_streams(bundled("eavesdrop"))
    base_cfg = bundled("eavesdrop")
    base_cfg.attack = None
    _, baseline = _pdc_streams(base_cfg)
    diffs = [i for i in baseline if attacked.get(i) != baseline[i]]
    relayed = attacked_tb.session.queue.seen
    ok = set(attacked) == set(baseline) and not diffs and relayed > 0 and all(baseline.values())
    total = sum(map(len, baseline.values()))
    verdict(8, ok, f"{total} bytes over {len(baseline)} streams, {len(diffs)} differing, "
                   f"{relayed} packets relayed by the attacker")
    assert ok


def test_criterion_9_estimator_oracle():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 9))
        m = int(rng.integers(n, 13))
        H = rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))
        w = rng.uniform(0.5, 400, m)
        z = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        ref = normal_equations(H, w, z)
        worst = max(worst, np.max(np.abs(estimate(H, w, z) - ref)) / np.max(np.abs(ref)))
    ok = worst < 1e-9
    verdict(9, ok, f"max relative error {worst:.2e} over 100 instances")
    assert ok


def test_criterion_10_determinism(tmp_path):
    bad = []
    names = sorted(bundled_scenarios())
    for name in names:
        a, b = tmp_path / name / "a", tmp_path / name / "b"
        run_scenario(bundled(name), a)
        run_scenario(bundled(name), b)
        files = sorted(p.name for p in a.iterdir())
        _, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
        if mismatch or errors or "trace.pcap" not in files:
            bad.append(name)
    ok = not bad
    verdict(10, ok, f"{len(names) - len(bad)}/{len(names)} bundled scenarios byte-identical"
                    + (f" (differ: {', '.join(bad)})" if bad else ""))
    assert ok
