# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled byte-loop kernels: CRC-CCITT and the Internet ones-complement sum."""

from libc.stdint cimport uint8_t, uint16_t, uint32_t, uint64_t

cdef uint16_t _CRC_TABLE[256]


cdef void _init_table():
    cdef int i, bit
    cdef uint16_t crc
    for i in range(256):
        crc = <uint16_t>(i << 8)
        for bit in range(8):
            if crc & 0x8000:
                crc = <uint16_t>((crc << 1) ^ 0x1021)
            else:
                crc = <uint16_t>(crc << 1)
        _CRC_TABLE[i] = crc


_init_table()


def crc16_ccitt(const uint8_t[:] data, unsigned int init=0xFFFF):
    cdef Py_ssize_t i, n = data.shape[0]
    cdef uint16_t crc = <uint16_t>init
    with nogil:
        for i in range(n):
            crc = <uint16_t>((crc << 8) ^ _CRC_TABLE[((crc >> 8) ^ data[i]) & 0xFF])
    return crc


def ones_complement_sum(const uint8_t[:] data, unsigned int start=0):
    """Folded 16-bit ones-complement sum of big-endian words; odd tail is zero-padded."""
    cdef Py_ssize_t i, n = data.shape[0]
    cdef uint64_t total = start
    with nogil:
        i = 0
        while i + 1 < n:
            total += (<uint32_t>data[i] << 8) | data[i + 1]
            i += 2
        if n & 1:
            total += <uint32_t>data[n - 1] << 8
        while total >> 16:
            total = (total & 0xFFFF) + (total >> 16)
    return <unsigned int>total
