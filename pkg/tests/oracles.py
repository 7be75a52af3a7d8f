"""Independent reference implementations used to pin library values."""

import numpy as np


def crc_bitwise(data, init=0xFFFF):
    """Shift-register CRC-16, polynomial 0x1021, MSB first."""
    crc = init
    for byte in bytes(data):
        for bit in range(7, -1, -1):
            fb = ((crc >> 15) & 1) ^ ((byte >> bit) & 1)
            crc = (crc << 1) & 0xFFFF
            if fb:
                crc ^= 0x1021
    return crc


def internet_checksum(data):
    """RFC 1071 checksum by explicit 16-bit big-endian words."""
    data = bytes(data)
    if len(data) % 2:
        data += b"\0"
    total = 0
    for i in range(0, len(data), 2):
        total += (data[i] << 8) | data[i + 1]
        total = (total & 0xFFFF) + (total >> 16)
    return (~total) & 0xFFFF


def normal_equations(H, w, z):
    """x = (H^H W H)^-1 H^H W z with an explicit inverse."""
    H = np.asarray(H, dtype=complex)
    W = np.diag(np.asarray(w, dtype=float))
    G = H.conj().T @ W @ H
    return np.linalg.inv(G) @ (H.conj().T @ W @ np.asarray(z, dtype=complex))
