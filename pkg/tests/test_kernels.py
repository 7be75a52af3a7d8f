import os
import random
import subprocess
import sys

import pytest

from phasorlab import _fallback, kernels
from phasorlab.codec import compute_crc

from oracles import crc_bitwise, internet_checksum


def test_oracle_check_value():
    assert crc_bitwise(b"123456789") == 0x29B1
    assert crc_bitwise(b"") == 0xFFFF


@pytest.mark.parametrize("impl", [kernels.crc16_ccitt, _fallback.crc16_ccitt])
def test_crc_against_oracle(impl):
    rng = random.Random(7)
    for _ in range(500):
        p = bytes(rng.randrange(256) for _ in range(rng.randrange(0, 80)))
        assert impl(p) == crc_bitwise(p)


def test_compute_crc_vectors():
    assert compute_crc(b"123456789") == 0x29B1
    assert compute_crc(b"") == 0xFFFF


def test_crc_detects_single_bit_flips():
    rng = random.Random(3)
    for _ in range(50):
        p = bytearray(rng.randrange(256) for _ in range(rng.randrange(1, 40)))
        ref = compute_crc(p)
        for bit in range(len(p) * 8):
            q = bytearray(p)
            q[bit // 8] ^= 1 << (bit % 8)
            assert compute_crc(q) != ref


IP_HEADER = bytes.fromhex("450000730000400040110000c0a80001c0a800c7")


@pytest.mark.parametrize("impl", [kernels.ones_complement_sum, _fallback.ones_complement_sum])
def test_ones_complement_vector(impl):
    assert internet_checksum(IP_HEADER) == 0xB861
    assert (~impl(IP_HEADER)) & 0xFFFF == 0xB861


@pytest.mark.parametrize("impl", [kernels.ones_complement_sum, _fallback.ones_complement_sum])
def test_ones_complement_random(impl):
    rng = random.Random(11)
    for _ in range(500):
        p = bytes(rng.randrange(256) for _ in range(rng.randrange(0, 101)))
        assert (~impl(p)) & 0xFFFF == internet_checksum(p)


def test_backends_agree_with_start_value():
    rng = random.Random(5)
    for _ in range(200):
        p = bytes(rng.randrange(256) for _ in range(rng.randrange(0, 64)))
        start = rng.randrange(0x10000)
        assert kernels.ones_complement_sum(p, start) == _fallback.ones_complement_sum(p, start)
        init = rng.randrange(0x10000)
        assert kernels.crc16_ccitt(p, init) == _fallback.crc16_ccitt(p, init)


def test_pure_env_forces_fallback():
    code = "from phasorlab import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, PHASORLAB_PURE="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_backend_name():
    assert kernels.BACKEND in ("cython", "python")
