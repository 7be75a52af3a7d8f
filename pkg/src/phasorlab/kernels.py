"""Backend selection for the byte-loop kernels.

The compiled extension is used when it was built; otherwise the pure-Python
fallback is imported. Set ``PHASORLAB_PURE=1`` to force the fallback.
"""

import os

from . import _fallback

if os.environ.get("PHASORLAB_PURE"):
    crc16_ccitt = _fallback.crc16_ccitt
    ones_complement_sum = _fallback.ones_complement_sum
    BACKEND = "python"
else:
    try:
        from ._kernels import crc16_ccitt, ones_complement_sum
        BACKEND = "cython"
    except ImportError:
        crc16_ccitt = _fallback.crc16_ccitt
        ones_complement_sum = _fallback.ones_complement_sum
        BACKEND = "python"

__all__ = ["BACKEND", "crc16_ccitt", "ones_complement_sum"]
