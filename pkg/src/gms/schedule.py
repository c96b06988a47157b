"""Discrete variance-preserving noise schedules and transition coefficients.

The forward process is ``q(x_t | x_0) = N(alpha_t x_0, sigma_t^2 I)`` on the
integer grid ``t = 0..T`` with ``alpha_0 = 1`` and ``alpha_t^2 + sigma_t^2 = 1``.
``alpha`` is always the *amplitude* (not the cumulative product of
``1 - beta``, which is ``alpha**2`` here).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LINEAR_BETA_START = 1e-4
LINEAR_BETA_END = 0.02
COSINE_OFFSET = 0.008
COSINE_MAX_BETA = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str
    T: int
    alpha: np.ndarray
    sigma: np.ndarray
    # log(alpha_t^2), kept separately so ratios of tiny alphas stay accurate
    log_alpha2: np.ndarray

    def log_snr(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return self.log_alpha2 - np.log(self.sigma**2)


@dataclass(frozen=True)
class TransitionCoeffs:
    """Coefficients of the pair ``s <= t``.

    ``q(x_t | x_s) = N(a_ts x_s, beta_ts I)`` and
    ``q(x_s | x_t, x_0) = N(A x_t + B x_0, lambda2 I)``.
    """

    s: int
    t: int
    a_ts: float
    beta_ts: float
    lambda2: float
    A: float
    B: float
    alpha_s: float
    alpha_t: float
    sigma_s: float
    sigma_t: float


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[int, ...]

    @property
    def K(self) -> int:
        return len(self.steps) - 1

    @property
    def T(self) -> int:
        return self.steps[0]

    def pairs(self):
        """Yield ``(t, s)`` for each sampling step, from noisy to clean."""
        return zip(self.steps[:-1], self.steps[1:])


def make_schedule(kind: str, T: int) -> NoiseSchedule:
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    T = int(T)
    if kind == "linear":
        betas = np.linspace(LINEAR_BETA_START, LINEAR_BETA_END, T, dtype=np.float64)
    elif kind == "cosine":
        def f(u):
            return math.cos((u / T + COSINE_OFFSET) / (1 + COSINE_OFFSET) * math.pi / 2) ** 2

        betas = np.array(
            [min(1.0 - f(i) / f(i - 1), COSINE_MAX_BETA) for i in range(1, T + 1)]
        )
    else:
        raise ValueError(f"unknown schedule kind {kind!r}; expected 'linear' or 'cosine'")

    log_alpha2 = np.concatenate([[0.0], np.cumsum(np.log1p(-betas))])
    alpha = np.exp(0.5 * log_alpha2)
    sigma = np.sqrt(-np.expm1(log_alpha2))
    return NoiseSchedule(kind=kind, T=T, alpha=alpha, sigma=sigma, log_alpha2=log_alpha2)


def coeffs(sched: NoiseSchedule, s: int, t: int) -> TransitionCoeffs:
    if s > t:
        raise ValueError(f"need s <= t, got s={s}, t={t}")
    if s < 0 or t > sched.T:
        raise ValueError(f"timesteps out of range [0, {sched.T}]: s={s}, t={t}")
    alpha_s, alpha_t = float(sched.alpha[s]), float(sched.alpha[t])
    sigma_s, sigma_t = float(sched.sigma[s]), float(sched.sigma[t])
    if s == t:
        return TransitionCoeffs(s, t, 1.0, 0.0, 0.0, 1.0, 0.0,
                                alpha_s, alpha_t, sigma_s, sigma_t)

    log_a2 = float(sched.log_alpha2[t] - sched.log_alpha2[s])
    a_ts = math.exp(0.5 * log_a2)
    # sigma_t^2 - a_ts^2 sigma_s^2 reduces to 1 - a_ts^2 under the VP convention
    beta_ts = -math.expm1(log_a2)
    var_t = sigma_t**2
    return TransitionCoeffs(
        s=s,
        t=t,
        a_ts=a_ts,
        beta_ts=beta_ts,
        lambda2=sigma_s**2 * beta_ts / var_t,
        A=a_ts * sigma_s**2 / var_t,
        B=alpha_s * beta_ts / var_t,
        alpha_s=alpha_s,
        alpha_t=alpha_t,
        sigma_s=sigma_s,
        sigma_t=sigma_t,
    )


def build_trajectory(T: int, K: int) -> Trajectory:
    """Even trajectory of ``K`` steps from ``T`` down to 0.

    Indices are ``round_half_up(i * T / K)``; a collision is resolved by
    decrementing the later (smaller) index.
    """
    if K < 1 or T < 1:
        raise ValueError(f"need K >= 1 and T >= 1, got K={K}, T={T}")
    if K > T:
        raise ValueError(f"K={K} exceeds T={T}")
    steps = [int(math.floor(i * T / K + 0.5)) for i in range(K, -1, -1)]
    for j in range(1, len(steps)):
        if steps[j] >= steps[j - 1]:
            steps[j] = steps[j - 1] - 1
    if steps[-1] != 0 or steps[0] != T:
        raise ValueError(f"cannot build a {K}-step trajectory over T={T}")
    return Trajectory(tuple(steps))


def trajectory_from(steps) -> Trajectory:
    """Validate an explicit, strictly decreasing list of timesteps ending at 0."""
    steps = tuple(int(s) for s in steps)
    if len(steps) < 2 or steps[-1] != 0 or any(a <= b for a, b in zip(steps, steps[1:])):
        raise ValueError(f"trajectory must be strictly decreasing and end at 0: {steps}")
    return Trajectory(steps)

