"""Synchrophasor protocol, network emulation, attack scenarios and state estimation."""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: F401
