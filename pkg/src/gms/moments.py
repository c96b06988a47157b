"""Diagonal moments of the reverse kernel ``q(x_s | x_t)`` from noise moments.

Given ``x_0 = (x_t - sigma_t eps) / alpha_t``, the posterior mean of
``q(x_s | x_t, x_0)`` is affine in ``eps``::

    mu(x_t, x_0) = A x_t + B x_0 = x_t / a_ts - c * eps,  c = beta_ts / (a_ts sigma_t)

so the kernel moments follow from ``E[eps^n | x_t]`` by expanding powers of
``mu`` and adding the Gaussian noise of ``q(x_s | x_t, x_0)`` (variance
``lambda2``).  Everything is element-wise per data dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .mixture import NoiseMoments
from .schedule import TransitionCoeffs

DEVIATION_FLOOR = 1e-20


@dataclass(frozen=True)
class MomentTriple:
    """Raw diagonal moments ``E[x_s]``, ``E[x_s^2]``, ``E[x_s^3]``."""

    M1: np.ndarray
    M2: np.ndarray
    M3: np.ndarray

    @property
    def var(self) -> np.ndarray:
        return self.M2 - self.M1**2

    @classmethod
    def from_central(cls, mean, var, m3) -> "MomentTriple":
        mean = np.asarray(mean, dtype=np.float64)
        return cls(mean, var + mean**2, np.asarray(m3, dtype=np.float64))


def _eps_coeff(co: TransitionCoeffs) -> float:
    if co.beta_ts == 0.0:
        return 0.0
    return co.beta_ts / (co.a_ts * co.sigma_t)


def reverse_m1(co: TransitionCoeffs, x_t, nm: NoiseMoments) -> np.ndarray:
    return np.asarray(x_t) / co.a_ts - _eps_coeff(co) * nm.m1


def reverse_var(co: TransitionCoeffs, x_t, nm: NoiseMoments) -> np.ndarray:
    """Central diagonal variance ``lambda2 + c^2 (E[eps^2] - E[eps]^2)``."""
    if nm.order < 2:
        raise ValueError("reverse_var needs second-order noise moments")
    c = _eps_coeff(co)
    cond_var = nm.m2 - nm.m1**2
    var = co.lambda2 + c**2 * cond_var
    scale = 1e-12 * (1.0 + c**2 * (nm.m2 + nm.m1**2))
    bad = var < -scale
    if np.any(bad):
        raise NumericalError("negative reverse-kernel variance", index=np.argwhere(bad)[0].tolist())
    return np.maximum(var, 0.0)


def reverse_m2(co: TransitionCoeffs, x_t, nm: NoiseMoments) -> np.ndarray:
    return reverse_var(co, x_t, nm) + reverse_m1(co, x_t, nm) ** 2


def reverse_m3(co: TransitionCoeffs, x_t, nm: NoiseMoments) -> np.ndarray:
    """``E[mu^3] + 3 lambda2 E[mu]`` with ``mu = x_t / a_ts - c eps``."""
    if nm.order < 3:
        raise ValueError("reverse_m3 needs third-order noise moments")
    x = np.asarray(x_t)
    c = _eps_coeff(co)
    b = x / co.a_ts
    mu3 = b**3 - 3 * b**2 * c * nm.m1 + 3 * b * c**2 * nm.m2 - c**3 * nm.m3
    return mu3 + 3 * co.lambda2 * reverse_m1(co, x, nm)


def reverse_moments(co: TransitionCoeffs, x_t, nm: NoiseMoments) -> MomentTriple:
    """The map ``h``: noise moments of order 3 to the kernel's ``(M1, M2, M3)``."""
    m1 = reverse_m1(co, x_t, nm)
    return MomentTriple(m1, reverse_var(co, x_t, nm) + m1**2, reverse_m3(co, x_t, nm))


def gaussian_implied_m3(M1, var) -> np.ndarray:
    """Third raw moment of a Gaussian with the given mean and variance."""
    M1 = np.asarray(M1)
    return M1**3 + 3 * M1 * np.asarray(var)


def moment_deviation(triple: MomentTriple) -> np.ndarray:
    """Per-dimension ``log((M_G - M3)^2)``, floored to stay finite."""
    gap = gaussian_implied_m3(triple.M1, triple.var) - triple.M3
    return np.log(gap**2 + DEVIATION_FLOOR)


def third_central_gap(co: TransitionCoeffs, nm: NoiseMoments) -> np.ndarray:
    """``M3 - M_G`` computed from central noise moments.

    Algebraically equal to ``reverse_m3 - gaussian_implied_m3`` (it is
    ``-c^3`` times the third central moment of ``eps | x_t``) but free of
    the cancellation between large raw moments.
    """
    c = _eps_coeff(co)
    m1, m2, m3 = nm.m1, nm.m2, nm.m3
    k3 = m3 - 3 * m1 * m2 + 2 * m1**3
    return -(c**3) * k3
