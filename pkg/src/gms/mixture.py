"""Diagonal Gaussian mixture data and the exact oracle for its diffusion.

For mixture data every quantity a sampler needs has a closed form: the
posterior ``q(x_0 | x_t)``, the conditional noise moments
``E[eps^n | x_t]`` and the true reverse kernel ``q(x_s | x_t)``, which is
itself a Gaussian mixture. Zero-variance components are Dirac masses and go
through the same formulas.

Batched functions take ``x_t`` of shape ``(n, D)`` (or ``(D,)``) and return
arrays with the same leading shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .schedule import NoiseSchedule, coeffs

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class MixtureDistribution:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    vars: np.ndarray  # (K, D); zero rows are Dirac components

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        var = np.atleast_2d(np.asarray(self.vars, dtype=np.float64))
        if mu.shape[0] != w.shape[0] and mu.shape[1] == w.shape[0] and mu.shape[0] == 1:
            # 1-D data given as a flat list of component means
            mu, var = mu.T, var.T
        if mu.shape[0] != w.shape[0] or var.shape != mu.shape:
            raise ValueError(
                f"inconsistent mixture shapes: weights {w.shape}, means {mu.shape}, vars {var.shape}"
            )
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must be positive and sum to 1, got {w}")
        if np.any(var < 0) or not (np.all(np.isfinite(mu)) and np.all(np.isfinite(var))):
            raise ValueError("variances must be finite and nonnegative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "vars", var)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def variance(self) -> np.ndarray:
        m = self.mean()
        return self.weights @ (self.vars + self.means**2) - m**2

    def raw_moments(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-dimension ``E[x]``, ``E[x^2]``, ``E[x^3]``."""
        return mixture_raw_moments(self.weights, self.means, self.vars)

    def log_density(self, x: np.ndarray) -> np.ndarray:
        """Log density at ``x`` (n, D). Requires all variances positive."""
        if np.any(self.vars <= 0):
            raise ValueError("log_density is undefined for Dirac components")
        x = np.atleast_2d(x)
        diff = x[:, None, :] - self.means[None]
        comp = -0.5 * np.sum(diff**2 / self.vars + np.log(self.vars) + _LOG_2PI, axis=-1)
        return logsumexp(comp + np.log(self.weights), axis=1)


@dataclass(frozen=True)
class NoiseMoments:
    """Conditional raw moments ``E[eps^n | x_t]`` for ``n = 1..order``."""

    m1: np.ndarray
    m2: np.ndarray | None = None
    m3: np.ndarray | None = None

    @property
    def order(self) -> int:
        if self.m2 is None:
            return 1
        return 2 if self.m3 is None else 3


def mixture_raw_moments(weights, means, vars):
    """First three raw moments of a (possibly batched) diagonal mixture.

    ``weights`` has shape ``(..., K)``; ``means``/``vars`` ``(..., K, D)``.
    """
    w = np.asarray(weights)[..., None]
    m1 = np.sum(w * means, axis=-2)
    m2 = np.sum(w * (means**2 + vars), axis=-2)
    m3 = np.sum(w * (means**3 + 3.0 * means * vars), axis=-2)
    return m1, m2, m3


# -- presets -----------------------------------------------------------------


def toy1d() -> MixtureDistribution:
    """``0.4 N(-0.4, 0.12^2) + 0.6 N(0.3, 0.05^2)``."""
    return MixtureDistribution(
        weights=np.array([0.4, 0.6]),
        means=np.array([[-0.4], [0.3]]),
        vars=np.array([[0.12**2], [0.05**2]]),
    )


def gauss8(radius: float = 2.0, std: float = 0.01) -> MixtureDistribution:
    """Eight equal-weight modes evenly spaced on a circle."""
    angles = np.arange(8) * (2 * np.pi / 8)
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return MixtureDistribution(
        weights=np.full(8, 1 / 8),
        means=means,
        vars=np.full((8, 2), std**2),
    )


def single_gauss() -> MixtureDistribution:
    return MixtureDistribution(
        weights=np.array([1.0]),
        means=np.array([[0.3, -0.2]]),
        vars=np.array([[0.25**2, 0.5**2]]),
    )


def two_dirac(locs=(-1.0, 1.0), weights=(1 / 3, 2 / 3)) -> MixtureDistribution:
    locs = np.asarray(locs, dtype=np.float64).reshape(len(weights), -1)
    return MixtureDistribution(weights=np.asarray(weights), means=locs, vars=np.zeros_like(locs))


PRESETS = {
    "toy1d": toy1d,
    "gauss8": gauss8,
    "single_gauss": single_gauss,
    "two_dirac": two_dirac,
}


def preset(name: str) -> MixtureDistribution:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown data preset {name!r}; known: {sorted(PRESETS)}") from None


# -- sampling ----------------------------------------------------------------


def sample_data(dist: MixtureDistribution, n: int, seed) -> np.ndarray:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(dist.n_components, size=n, p=dist.weights)
    z = rng.standard_normal((n, dist.dim))
    return dist.means[idx] + np.sqrt(dist.vars[idx]) * z


def forward_sample(sched: NoiseSchedule, x0: np.ndarray, t: int, seed) -> np.ndarray:
    if not 0 <= t <= sched.T:
        raise ValueError(f"t={t} outside [0, {sched.T}]")
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.random.default_rng(seed).standard_normal(x0.shape)
    return sched.alpha[t] * x0 + sched.sigma[t] * eps


# -- exact posterior quantities ------------------------------------------------


def _check_t(t: int, sched: NoiseSchedule):
    if t < 1 or t > sched.T:
        raise ValueError(f"posterior needs 1 <= t <= {sched.T}, got t={t}")


def posterior_components(dist: MixtureDistribution, sched: NoiseSchedule, x_t, t: int):
    """Vectorised ``q(x_0 | x_t)``.

    Returns ``(weights (n, K), means (n, K, D), vars (n, K, D))``.
    """
    _check_t(t, sched)
    x = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    a, s2 = sched.alpha[t], sched.sigma[t] ** 2
    tot = a**2 * dist.vars + s2  # (K, D) marginal variance of x_t per component
    diff = x[:, None, :] - a * dist.means[None]  # (n, K, D)
    loglik = -0.5 * np.sum(diff**2 / tot + np.log(tot) + _LOG_2PI, axis=-1)
    logw = np.log(dist.weights) + loglik
    w = np.exp(logw - logsumexp(logw, axis=1, keepdims=True))
    means = (a * dist.vars * x[:, None, :] + s2 * dist.means) / tot
    var = np.broadcast_to(dist.vars * s2 / tot, means.shape)
    return w, means, var


def posterior_mixture(dist: MixtureDistribution, sched: NoiseSchedule, x_t, t: int) -> MixtureDistribution:
    w, mu, var = posterior_components(dist, sched, np.reshape(x_t, (1, -1)), t)
    keep = w[0] > 0
    w0 = w[0][keep]
    return MixtureDistribution(weights=w0 / w0.sum(), means=mu[0][keep], vars=var[0][keep])


def oracle_noise_moments(dist: MixtureDistribution, sched: NoiseSchedule, x_t, t: int,
                         order: int = 3) -> NoiseMoments:
    """Exact ``E[eps^n | x_t]``, ``eps = (x_t - alpha_t x_0) / sigma_t``."""
    if order not in (1, 2, 3):
        raise ValueError(f"order must be 1, 2 or 3, got {order}")
    _check_t(t, sched)
    x = np.asarray(x_t, dtype=np.float64)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    w, _, _ = posterior_components(dist, sched, x, t)
    a, sig = sched.alpha[t], sched.sigma[t]
    tot = a**2 * dist.vars + sig**2
    # per-component Gaussian law of eps given x_t, written without dividing by sigma_t
    e = sig * (x[:, None, :] - a * dist.means[None]) / tot
    ev = np.broadcast_to(a**2 * dist.vars / tot, e.shape)
    w3 = w[..., None]
    m1 = np.sum(w3 * e, axis=1)
    m2 = np.sum(w3 * (e**2 + ev), axis=1) if order >= 2 else None
    m3 = np.sum(w3 * (e**3 + 3 * e * ev), axis=1) if order >= 3 else None
    if squeeze:
        m1, m2, m3 = (None if m is None else m[0] for m in (m1, m2, m3))
    return NoiseMoments(m1, m2, m3)


def reverse_kernel_components(dist: MixtureDistribution, sched: NoiseSchedule, x_t, s: int, t: int):
    """Vectorised exact ``q(x_s | x_t)`` as ``(weights, means, vars)``."""
    if not 0 <= s < t:
        raise ValueError(f"need 0 <= s < t, got s={s}, t={t}")
    co = coeffs(sched, s, t)
    x = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    w, pm, pv = posterior_components(dist, sched, x, t)
    means = co.A * x[:, None, :] + co.B * pm
    var = co.lambda2 + co.B**2 * pv
    return w, means, var


def true_reverse_kernel(dist: MixtureDistribution, sched: NoiseSchedule, x_t, s: int, t: int) -> MixtureDistribution:
    w, mu, var = reverse_kernel_components(dist, sched, np.reshape(x_t, (1, -1)), s, t)
    keep = w[0] > 0
    w0 = w[0][keep]
    return MixtureDistribution(weights=w0 / w0.sum(), means=mu[0][keep], vars=var[0][keep])


def true_reverse_moments(dist: MixtureDistribution, sched: NoiseSchedule, x_t, s: int, t: int):
    """Raw moments ``(M1, M2, M3)`` of the exact reverse kernel, batched."""
    return mixture_raw_moments(*reverse_kernel_components(dist, sched, x_t, s, t))
