"""Measurement noise and measurement-set generation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import NetworkModel, build_H, offset


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.05
    mu: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


def add_noise(S, spec: NoiseSpec, rng=None) -> np.ndarray:
    """S + (sigma*N(0,1) + mu) on the real part and independently on the imaginary part."""
    S = np.asarray(S, dtype=complex)
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    re = spec.sigma * rng.standard_normal(S.shape) + spec.mu
    im = spec.sigma * rng.standard_normal(S.shape) + spec.mu
    return S + re + 1j * im


@dataclass
class MeasurementSet:
    """Measurements in per unit, one row per meter of the model."""

    z: np.ndarray
    sigma: np.ndarray
    meter_ids: list
    pmu_of: list
    available: np.ndarray | None = None

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=complex)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.available is None:
            self.available = np.ones(len(self.z), dtype=bool)
        if not len(self.z) == len(self.sigma) == len(self.meter_ids):
            raise ValueError("z, sigma and meter_ids must have equal length")
        if np.any(self.sigma <= 0):
            raise ValueError("all sigma must be positive")

    @property
    def weights(self) -> np.ndarray:
        return 1.0 / self.sigma ** 2

    def by_pmu(self) -> dict:
        out = {}
        for mid, pmu in zip(self.meter_ids, self.pmu_of):
            out.setdefault(pmu, []).append(mid)
        return out


def measurements_from_state(model: NetworkModel, x_true=None, sigma: float = 0.05) -> MeasurementSet:
    """Noise-free z = H x + c, tagged with owning PMUs."""
    x = model.true_vector() if x_true is None else np.asarray(x_true, dtype=complex)
    z = build_H(model) @ x + offset(model)
    return MeasurementSet(
        z=z,
        sigma=np.full(model.n_meters, sigma),
        meter_ids=[m.id for m in model.meters],
        pmu_of=[m.pmu for m in model.meters],
    )
