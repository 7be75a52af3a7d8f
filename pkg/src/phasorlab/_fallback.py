"""Pure-Python versions of the compiled kernels in ``_kernels.pyx``."""

import sys


def _make_table():
    table = []
    for i in range(256):
        crc = i << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) if crc & 0x8000 else (crc << 1)
        table.append(crc & 0xFFFF)
    return tuple(table)


_CRC_TABLE = _make_table()


def crc16_ccitt(data, init=0xFFFF):
    crc = init & 0xFFFF
    table = _CRC_TABLE
    for byte in bytes(data):
        crc = ((crc << 8) & 0xFFFF) ^ table[(crc >> 8) ^ byte]
    return crc


def ones_complement_sum(data, start=0):
    data = bytes(data)
    if len(data) & 1:
        data += b"\x00"
    # native-order word sum; byte order independence of the
    # ones-complement sum lets us swap once at the end
    total = _fold(sum(memoryview(data).cast("H")))
    if sys.byteorder == "little":
        total = _swap(total)
    return _fold(total + start)


def _fold(total):
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return total


def _swap(word):
    return ((word & 0xFF) << 8) | (word >> 8)
