"""Sample-quality metrics and the non-Gaussianity diagnostic along trajectories."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .mixture import MixtureDistribution, sample_data
from .moments import DEVIATION_FLOOR, third_central_gap
from .schedule import NoiseSchedule, build_trajectory, coeffs

_LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class EvalReport:
    kde_loglik: float
    l2: float | None
    n_samples: int
    n_reference: int
    bandwidth: np.ndarray


def kde_bandwidth(sigma, L: int) -> np.ndarray:
    """``1.05 sigma L^(-1/4)`` per dimension."""
    return 1.05 * np.asarray(sigma, dtype=np.float64) * float(L) ** -0.25


def kde_loglik(samples, reference, L: int | None = None, sigma=None, chunk: int = 2048,
               return_bandwidth: bool = False):
    """Mean log density of ``samples`` under a Gaussian product-kernel KDE on ``reference``.

    ``sigma`` defaults to the per-dimension standard deviation of the
    reference points; ``L`` (default: all) selects the first ``L`` of them.
    """
    ref = np.asarray(reference, dtype=np.float64)
    ref = ref.reshape(ref.shape[0], -1)
    if L is not None:
        if L > ref.shape[0]:
            raise ValueError(f"L={L} exceeds the {ref.shape[0]} reference points")
        ref = ref[:L]
    L = ref.shape[0]
    if L < 2:
        raise ValueError("kde_loglik needs at least 2 reference points")
    x = np.asarray(samples, dtype=np.float64)
    x = x.reshape(x.shape[0], -1) if x.ndim > 1 else x.reshape(-1, ref.shape[1])
    if x.shape[0] == 0:
        raise ValueError("no samples")
    if x.shape[1] != ref.shape[1]:
        raise ValueError(f"dimension mismatch: samples {x.shape[1]}, reference {ref.shape[1]}")
    sig = ref.std(axis=0, ddof=1) if sigma is None else np.broadcast_to(np.asarray(sigma, float), ref.shape[1:])
    if np.any(sig <= 0):
        raise ValueError("degenerate reference: zero standard deviation")
    h = kde_bandwidth(sig, L)
    norm = -np.log(L) - np.sum(np.log(h)) - 0.5 * ref.shape[1] * _LOG_2PI
    rs = ref / h
    out = np.empty(x.shape[0])
    for i in range(0, x.shape[0], chunk):
        xs = x[i:i + chunk] / h
        # squared distances via the expansion, clipped at 0 against round-off
        d2 = np.sum(xs**2, 1)[:, None] + np.sum(rs**2, 1)[None] - 2 * xs @ rs.T
        out[i:i + chunk] = logsumexp(-0.5 * np.maximum(d2, 0.0), axis=1) + norm
    value = float(out.mean())
    return (value, h) if return_bandwidth else value


def l2_faithfulness(outputs, guides) -> float:
    """Mean over the batch of the summed squared difference."""
    out = np.asarray(outputs, dtype=np.float64)
    g = np.asarray(guides, dtype=np.float64)
    if out.shape != g.shape:
        raise ValueError(f"shape mismatch: outputs {out.shape}, guides {g.shape}")
    diff = (out - g).reshape(out.shape[0], -1) if out.ndim > 1 else (out - g)[:, None]
    return float(np.mean(np.sum(diff**2, axis=1)))


def evaluate(samples, reference, guides=None, L: int | None = None, sigma=None) -> EvalReport:
    ll, h = kde_loglik(samples, reference, L=L, sigma=sigma, return_bandwidth=True)
    l2 = None if guides is None else l2_faithfulness(samples, guides)
    n_ref = np.shape(reference)[0] if L is None else L
    return EvalReport(kde_loglik=ll, l2=l2, n_samples=int(np.shape(samples)[0]), n_reference=int(n_ref),
                      bandwidth=np.atleast_1d(h))


def mmd_rbf(x, y, bandwidth: float = 1.0) -> float:
    """Biased squared maximum mean discrepancy with a Gaussian kernel."""
    x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    y = np.asarray(y, dtype=np.float64).reshape(len(y), -1)

    def k(a, b):
        d2 = np.sum(a**2, 1)[:, None] + np.sum(b**2, 1)[None] - 2 * a @ b.T
        return np.exp(-0.5 * np.maximum(d2, 0) / bandwidth**2)

    return float(k(x, x).mean() + k(y, y).mean() - 2 * k(x, y).mean())


# -- non-Gaussianity diagnostic ---------------------------------------------------


def trajectory_deviation(provider, data: MixtureDistribution, K: int, n: int = 1000, seed: int = 0,
                         sched: NoiseSchedule | None = None):
    """Per-step ``log((M_G - M3)^2)`` statistics on an even trajectory.

    ``x_t`` is drawn from the forward marginal of ``data``; the gap is
    computed from central noise moments to avoid cancellation.  Returns
    rows ``(t, s, K, mean_dev, median_dev)``.
    """
    sched = sched or provider.sched
    rows = []
    for t, s in build_trajectory(sched.T, K).pairs():
        rng = np.random.default_rng([seed, t])
        x0 = sample_data(data, n, rng)
        x_t = sched.alpha[t] * x0 + sched.sigma[t] * rng.standard_normal(x0.shape)
        gap = third_central_gap(coeffs(sched, s, t), provider(x_t, t, 3))
        dev = np.log(gap**2 + DEVIATION_FLOOR)
        rows.append((t, s, K, float(np.mean(dev)), float(np.median(dev))))
    return rows
