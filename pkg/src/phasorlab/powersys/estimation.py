"""Weighted least squares state estimation and bad-data tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class Singular(ArithmeticError):
    pass


def _weights(W, n):
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        if W.shape != (n,):
            raise ValueError(f"weight vector has {W.shape[0]} entries, H has {n} rows")
        if np.any(W <= 0):
            raise Singular("weights must be positive")
        return np.diag(np.sqrt(W))
    if W.shape != (n, n):
        raise ValueError(f"W is {W.shape}, expected {(n, n)}")
    try:
        L = np.linalg.cholesky(W)
    except np.linalg.LinAlgError:
        raise Singular("W is not positive definite") from None
    return L.conj().T


def estimate(H, W, z) -> np.ndarray:
    """Minimise (z - Hx)^H W (z - Hx).

    Solved by QR on the whitened system rather than by forming the normal
    matrix, which keeps the condition number at cond(H) instead of its square.
    ``W`` may be a full matrix or the vector of its diagonal.
    """
    H = np.asarray(H, dtype=complex)
    z = np.asarray(z, dtype=complex)
    m, n = H.shape
    if m < n:
        raise Singular(f"{m} measurements cannot determine {n} states")
    S = _weights(W, m)
    Q, R = np.linalg.qr(S @ H)
    d = np.abs(np.diag(R))
    if d.min() <= 1e-12 * max(d.max(), 1e-300):
        raise Singular("normal matrix is singular (unobservable state)")
    return np.linalg.solve(R, Q.conj().T @ (S @ z))


def residual(H, z, x) -> np.ndarray:
    return np.asarray(z, dtype=complex) - np.asarray(H, dtype=complex) @ x


def objective_j(H, W, z, x_est) -> float:
    r = residual(H, z, x_est)
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        return float(np.sum(W * np.abs(r) ** 2))
    return float(np.real(r.conj() @ W @ r))


# ---------------------------------------------------------------------------
# chi-square quantiles


def _gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if x <= 0:
        return 0.0
    log_pre = a * math.log(x) - x - math.lgamma(a)
    if x < a + 1:
        term = 1.0 / a
        total = term
        ap = a
        for _ in range(1000):
            ap += 1
            term *= x / ap
            total += term
            if abs(term) < abs(total) * 1e-16:
                break
        return total * math.exp(log_pre)
    # continued fraction for Q(a, x), modified Lentz
    tiny = 1e-300
    b = x + 1 - a
    c = 1 / tiny
    d = 1 / b
    h = d
    for i in range(1, 1000):
        an = -i * (i - a)
        b += 2
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1 / d
        delta = d * c
        h *= delta
        if abs(delta - 1) < 1e-16:
            break
    return 1.0 - math.exp(log_pre) * h


def chi2_cdf(x: float, k: float) -> float:
    return _gamma_p(k / 2.0, x / 2.0)


def chi_square_threshold(K: int, confidence: float = 0.95) -> float:
    """Inverse CDF of chi-square with K degrees of freedom."""
    if K < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {K}")
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    lo, hi = 0.0, max(2.0 * K, 10.0)
    while chi2_cdf(hi, K) < confidence:
        lo, hi = hi, hi * 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, K) < confidence:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12 * hi:
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# detection


DOF_MODES = ("complex", "real")


def degrees_of_freedom(n_meters: int, n_states: int, mode: str = "complex") -> int:
    """K = N_m - N_s; ``mode='real'`` counts real and imaginary parts apart."""
    if mode not in DOF_MODES:
        raise ValueError(f"dof mode must be one of {DOF_MODES}")
    k = n_meters - n_states
    return 2 * k if mode == "real" else k


@dataclass
class EstimationReport:
    x_est: np.ndarray
    j: float
    K: int
    T_j: float
    bad_data_present: bool
    sigma_Y: np.ndarray
    flagged_meters: list
    meter_ids: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "x_est": [[float(v.real), float(v.imag)] for v in self.x_est],
            "j": self.j,
            "K": self.K,
            "T_j": self.T_j,
            "bad_data_present": self.bad_data_present,
            "sigma_Y": [float(s) for s in self.sigma_Y],
            "flagged_meters": list(self.flagged_meters),
            "meter_ids": list(self.meter_ids),
        }


def detect_and_identify(H, W, z, sigma=None, *, offset=None, confidence=0.95, dof_mode="complex",
                        meter_ids=None, flag_level=3.0) -> EstimationReport:
    """Estimate, run the chi-square test and the per-meter sigma_Y test.

    ``sigma`` defaults to ``1/sqrt(diag(W))``. ``offset`` is subtracted from
    ``z`` first (known reference-bus terms). Flagged meters are reported by
    id, 1-based row numbers unless ``meter_ids`` is given.
    """
    H = np.asarray(H, dtype=complex)
    z = np.asarray(z, dtype=complex)
    if offset is not None:
        z = z - offset
    Wa = np.asarray(W, dtype=float)
    diagW = Wa if Wa.ndim == 1 else np.diag(Wa)
    sigma = 1 / np.sqrt(diagW) if sigma is None else np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("all sigma must be positive")
    x = estimate(H, W, z)
    j = objective_j(H, W, z, x)
    K = degrees_of_freedom(H.shape[0], H.shape[1], dof_mode)
    T = chi_square_threshold(K, confidence) if K >= 1 else math.inf
    sy = np.abs(residual(H, z, x)) / sigma
    ids = list(meter_ids) if meter_ids is not None else list(range(1, H.shape[0] + 1))
    flagged = [ids[i] for i in np.nonzero(sy > flag_level)[0]]
    return EstimationReport(x, j, K, T, bool(j >= T), sy, flagged, ids)
