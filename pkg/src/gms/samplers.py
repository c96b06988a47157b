"""Reverse-process samplers and the SDEdit procedure.

A *provider* is any callable ``provider(x_t, t, order) -> NoiseMoments``
with ``sched`` and ``max_order`` attributes (see ``noisenet.OracleProvider``
and ``noisenet.NetProvider``).

Randomness is drawn per block of ``BLOCK`` batch elements from
``default_rng([seed, step, block])`` so results do not depend on how many
workers process the blocks.
"""

from __future__ import annotations

import hashlib
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, PreconditionError
from .gmmfit import W1, FitReport, OptimizerConfig, fit_closed_form, fit_gradient
from .mixture import MixtureDistribution, sample_data
from .moments import reverse_m1, reverse_moments, reverse_var
from .schedule import NoiseSchedule, TransitionCoeffs, Trajectory, coeffs

SAMPLER_KINDS = ("ddpm_beta", "ddpm_beta_tilde", "analytic_dpm", "sn_ddpm", "gms", "ddim")
REQUIRED_ORDER = {"ddpm_beta": 1, "ddpm_beta_tilde": 1, "analytic_dpm": 1, "sn_ddpm": 2, "gms": 3, "ddim": 1}
CLI_SOLVERS = {
    "ddpm-beta": "ddpm_beta",
    "ddpm-beta-tilde": "ddpm_beta_tilde",
    "analytic": "analytic_dpm",
    "sn": "sn_ddpm",
    "gms": "gms",
    "ddim": "ddim",
}
BLOCK = 1024
GAMMA_DRAWS = 100_000
SEPARATION_TOL = 1e-2


@dataclass(frozen=True)
class SamplerConfig:
    fit: OptimizerConfig = field(default_factory=OptimizerConfig)
    fit_method: str = "gradient"  # or "closed_form"
    last_step_noise: bool = True
    clip: float | None = None  # clip the x_0 estimate to [-clip, clip]


@dataclass(frozen=True)
class FitSummary:
    t: int
    s: int
    objective_value: float
    degenerate_frac: float
    infeasible_frac: float
    separated_frac: float  # fraction of entries with |mu1 - mu2| > SEPARATION_TOL


@dataclass(frozen=True)
class SampleRun:
    kind: str
    trajectory: Trajectory
    seed: int
    samples: np.ndarray
    step_times: np.ndarray
    fit_summaries: tuple[FitSummary, ...] = ()
    guide: np.ndarray | None = None


def worker_count() -> int:
    """Number of worker threads, capped by ``GMS_THREADS`` (default 1)."""
    raw = os.environ.get("GMS_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"GMS_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


# -- single steps --------------------------------------------------------------


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _mean(co: TransitionCoeffs, x_t, nm, clip):
    if clip is None:
        return reverse_m1(co, x_t, nm)
    x0 = np.clip((x_t - co.sigma_t * nm.m1) / co.alpha_t, -clip, clip)
    return co.A * x_t + co.B * x0


def _gaussian(mean, var, rng, noise: bool):
    if not noise:
        return mean
    return mean + np.sqrt(var) * rng.standard_normal(mean.shape)


def step_ddpm(co: TransitionCoeffs, x_t, provider, variance: str = "beta_tilde", seed=None,
              noise: bool = True, clip=None):
    """Ancestral step with variance ``beta_ts`` (``"beta"``) or ``lambda2`` (``"beta_tilde"``)."""
    if variance not in ("beta", "beta_tilde"):
        raise ValueError(f"variance must be 'beta' or 'beta_tilde', got {variance!r}")
    x_t = np.asarray(x_t, dtype=np.float64)
    if co.s == co.t:
        return x_t.copy()
    nm = provider(x_t, co.t, 1)
    v = co.beta_ts if variance == "beta" else co.lambda2
    return _gaussian(_mean(co, x_t, nm, clip), v, _rng(seed), noise)


def step_gaussian_optimal(co: TransitionCoeffs, x_t, provider, mode: str = "diagonal_sn", seed=None,
                          gamma: "GammaTable | None" = None, noise: bool = True, clip=None):
    """Gaussian step with the optimal scalar (``scalar_analytic``) or diagonal (``diagonal_sn``) variance."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if mode == "scalar_analytic":
        if gamma is None:
            raise PreconditionError("scalar_analytic mode needs a precomputed GammaTable")
        var = gamma.variance(co)
        if co.s == co.t:
            return x_t.copy()
        nm = provider(x_t, co.t, 1)
    elif mode == "diagonal_sn":
        if co.s == co.t:
            return x_t.copy()
        nm = provider(x_t, co.t, 2)
        var = reverse_var(co, x_t, nm)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return _gaussian(_mean(co, x_t, nm, clip), var, _rng(seed), noise)


def fit_kernel(triple, cfg: SamplerConfig) -> FitReport:
    if cfg.fit_method == "closed_form":
        return fit_closed_form(triple)
    if cfg.fit_method == "gradient":
        return fit_gradient(triple, opt=cfg.fit)
    raise ValueError(f"unknown fit method {cfg.fit_method!r}")


def sample_gm_kernel(params, rng, noise: bool = True):
    """Pick component 1 w.p. 1/3 (else 2) per batch row, then add the shared noise."""
    rng = _rng(rng)
    mu1, mu2 = np.atleast_2d(params.mu1), np.atleast_2d(params.mu2)
    first = rng.random(mu1.shape[0]) < W1
    mean = np.where(first[:, None], mu1, mu2)
    return _gaussian(mean, np.atleast_2d(params.var), rng, noise)


def step_gms(co: TransitionCoeffs, x_t, provider, fitcfg: SamplerConfig | OptimizerConfig | None = None,
             seed=None, noise: bool = True):
    """Moment estimation, two-component GMM fit and a draw from the fitted kernel."""
    if isinstance(fitcfg, OptimizerConfig):
        fitcfg = SamplerConfig(fit=fitcfg)
    fitcfg = fitcfg or SamplerConfig()
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    if co.s == co.t:
        return x_t.copy(), None
    nm = provider(x_t, co.t, 3)
    if fitcfg.clip is not None:
        nm = _clipped_moments(co, x_t, nm, fitcfg.clip)
    report = fit_kernel(reverse_moments(co, x_t, nm), fitcfg)
    return sample_gm_kernel(report.params, seed, noise), report


def _clipped_moments(co, x_t, nm, clip):
    # shift the noise moments so the implied x_0 mean lands inside the box
    x0 = (x_t - co.sigma_t * nm.m1) / co.alpha_t
    shift = (x0 - np.clip(x0, -clip, clip)) * co.alpha_t / co.sigma_t
    m1 = nm.m1 + shift
    m2 = nm.m2 + 2 * shift * nm.m1 + shift**2
    m3 = nm.m3 + 3 * shift * nm.m2 + 3 * shift**2 * nm.m1 + shift**3
    return type(nm)(m1, m2, m3)


def step_ddim(sched: NoiseSchedule, x_t, provider, s: int, t: int, clip=None):
    """Deterministic (eta = 0) update through the predicted ``x_0``."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if not 0 <= s <= t <= sched.T:
        raise ValueError(f"need 0 <= s <= t <= {sched.T}, got s={s}, t={t}")
    if s == t:
        return x_t.copy()
    eps = provider(x_t, t, 1).m1
    x0 = (x_t - sched.sigma[t] * eps) / sched.alpha[t]
    if clip is not None:
        x0 = np.clip(x0, -clip, clip)
    return sched.alpha[s] * x0 + sched.sigma[s] * eps


# -- optimal scalar variance table ---------------------------------------------


@dataclass(frozen=True)
class GammaTable:
    """Per-timestep ``E ||E[eps | x_t]||^2 / D`` estimated from data draws."""

    sq_norm: dict
    sq_norm_se: dict
    n_draws: int

    def variance(self, co: TransitionCoeffs) -> float:
        if co.s == co.t:
            return 0.0
        if co.t not in self.sq_norm:
            raise PreconditionError(f"no optimal-variance entry for t={co.t}")
        # lambda2 + B^2 E[tr Cov(x_0 | x_t)] / D with Cov(x_0 | x_t) = sigma^2/alpha^2 Cov(eps | x_t)
        post = (co.sigma_t / co.alpha_t) ** 2 * max(1.0 - self.sq_norm[co.t], 0.0)
        return co.lambda2 + co.B**2 * post


_GAMMA_CACHE: dict = {}


def _data_key(data: MixtureDistribution) -> str:
    h = hashlib.sha256()
    for a in (data.weights, data.means, data.vars):
        h.update(a.tobytes())
    return h.hexdigest()


def estimate_gamma(provider, data: MixtureDistribution, timesteps, n_draws: int = GAMMA_DRAWS,
                   seed: int = 0, chunk: int = 20_000) -> GammaTable:
    """Monte-Carlo table for the optimal scalar variance, cached per inputs."""
    sched = provider.sched
    ts = tuple(sorted({int(t) for t in timesteps if t >= 1}))
    key_fn = getattr(provider, "cache_key", None)
    key = None
    if key_fn is not None:
        key = (sched.kind, sched.T, ts, _data_key(data), key_fn(), n_draws, seed)
        if key in _GAMMA_CACHE:
            return _GAMMA_CACHE[key]
    sq, se = {}, {}
    for t in ts:
        rng = np.random.default_rng([seed, t])
        vals = []
        for start in range(0, n_draws, chunk):
            m = min(chunk, n_draws - start)
            x0 = sample_data(data, m, rng)
            x_t = sched.alpha[t] * x0 + sched.sigma[t] * rng.standard_normal(x0.shape)
            vals.append(np.mean(provider(x_t, t, 1).m1 ** 2, axis=1))
        vals = np.concatenate(vals)
        sq[t] = float(vals.mean())
        se[t] = float(vals.std(ddof=1) / np.sqrt(vals.size))
    table = GammaTable(sq, se, n_draws)
    if key is not None:
        _GAMMA_CACHE[key] = table
    return table


# -- trajectories ----------------------------------------------------------------


def _check_kind(kind: str, provider):
    if kind not in SAMPLER_KINDS:
        raise ValueError(f"unknown sampler kind {kind!r}; expected one of {SAMPLER_KINDS}")
    need = REQUIRED_ORDER[kind]
    have = getattr(provider, "max_order", 3)
    if have < need:
        raise ValueError(f"sampler {kind} needs noise moments of order {need}, provider has {have}")


def _run_block(kind, trajectory, provider, sched, x, seed, block, cfg, gamma):
    n_steps = trajectory.K
    times = np.zeros(n_steps)
    stats = np.zeros((n_steps, 5))  # objective, degenerate, infeasible, separated, entries
    for i, (t, s) in enumerate(trajectory.pairs()):
        t0 = time.perf_counter()
        rng = np.random.default_rng([seed, i + 1, block])
        noise = s > 0 or cfg.last_step_noise
        co = coeffs(sched, s, t)
        if kind == "ddpm_beta":
            x = step_ddpm(co, x, provider, "beta", rng, noise, cfg.clip)
        elif kind == "ddpm_beta_tilde":
            x = step_ddpm(co, x, provider, "beta_tilde", rng, noise, cfg.clip)
        elif kind == "analytic_dpm":
            x = step_gaussian_optimal(co, x, provider, "scalar_analytic", rng, gamma, noise, cfg.clip)
        elif kind == "sn_ddpm":
            x = step_gaussian_optimal(co, x, provider, "diagonal_sn", rng, None, noise, cfg.clip)
        elif kind == "gms":
            x, rep = step_gms(co, x, provider, cfg, rng, noise)
            p = rep.params
            stats[i] = (rep.objective_value, rep.degenerate_mask.sum(), rep.infeasible_mask.sum(),
                        np.sum(np.abs(p.mu1 - p.mu2) > SEPARATION_TOL), p.mu1.size)
        else:
            x = step_ddim(sched, x, provider, s, t, cfg.clip)
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"non-finite samples after step t={t} -> s={s}")
        times[i] = time.perf_counter() - t0
    return x, times, stats


def _run_chain(kind, trajectory: Trajectory, provider, x_init, seed, cfg, gamma, guide=None):
    sched = provider.sched
    nblocks = -(-x_init.shape[0] // BLOCK)
    jobs = [(b, x_init[b * BLOCK:(b + 1) * BLOCK]) for b in range(nblocks)]

    def work(job):
        b, x = job
        return _run_block(kind, trajectory, provider, sched, x, seed, b, cfg, gamma)

    workers = min(worker_count(), nblocks)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]
    samples = np.concatenate([r[0] for r in results], axis=0)
    times = np.sum([r[1] for r in results], axis=0)
    summaries = ()
    if kind == "gms":
        st = np.sum([r[2] for r in results], axis=0)
        summaries = tuple(
            FitSummary(t=t, s=s, objective_value=float(row[0]), degenerate_frac=row[1] / row[4],
                       infeasible_frac=row[2] / row[4], separated_frac=row[3] / row[4])
            for (t, s), row in zip(trajectory.pairs(), st)
        )
    return SampleRun(kind=kind, trajectory=trajectory, seed=seed, samples=samples,
                     step_times=np.asarray(times), fit_summaries=summaries, guide=guide)


def _prepare(kind, trajectory, provider, config, gamma, data):
    _check_kind(kind, provider)
    if trajectory.T > provider.sched.T:
        raise ValueError(f"trajectory starts at {trajectory.T} > T={provider.sched.T}")
    config = config or SamplerConfig()
    if kind == "analytic_dpm" and gamma is None:
        if data is None:
            raise PreconditionError("analytic_dpm needs a GammaTable or the data to estimate one")
        gamma = estimate_gamma(provider, data, trajectory.steps)
    return config, gamma


def _initial_noise(shape, seed):
    n = shape[0]
    return np.concatenate([
        np.random.default_rng([seed, 0, b]).standard_normal((min(BLOCK, n - b * BLOCK),) + shape[1:])
        for b in range(-(-n // BLOCK))
    ], axis=0)


def run_sampler(kind: str, trajectory: Trajectory, provider, n: int, seed: int,
                config: SamplerConfig | None = None, gamma: GammaTable | None = None,
                data: MixtureDistribution | None = None, dim: int | None = None) -> SampleRun:
    """Draw ``x_T ~ N(0, I)`` and apply ``kind`` steps along ``trajectory``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    config, gamma = _prepare(kind, trajectory, provider, config, gamma, data)
    if dim is None:
        dim = _provider_dim(provider, data)
    x = _initial_noise((n, dim), seed)
    return _run_chain(kind, trajectory, provider, x, seed, config, gamma)


def _provider_dim(provider, data):
    if data is not None:
        return data.dim
    for attr in ("data", "net"):
        obj = getattr(provider, attr, None)
        if obj is not None:
            return obj.dim
    raise ValueError("cannot infer the data dimension; pass dim=")


def run_sdedit(guide, t0: int, kind: str, trajectory: Trajectory, provider, seed: int,
               config: SamplerConfig | None = None, gamma: GammaTable | None = None,
               data: MixtureDistribution | None = None) -> SampleRun:
    """Perturb ``guide`` to time ``t0`` with forward noise, then denoise to 0."""
    sched = provider.sched
    if not 1 <= t0 <= sched.T:
        raise ValueError(f"t0 must lie in [1, {sched.T}], got {t0}")
    if trajectory.steps[0] != t0 or trajectory.steps[-1] != 0:
        raise ValueError(f"trajectory must run from t0={t0} to 0, got {trajectory.steps[0]}..{trajectory.steps[-1]}")
    guide = np.atleast_2d(np.asarray(guide, dtype=np.float64))
    config, gamma = _prepare(kind, trajectory, provider, config, gamma, data)
    x = sched.alpha[t0] * guide + sched.sigma[t0] * _initial_noise(guide.shape, seed)
    return _run_chain(kind, trajectory, provider, x, seed, config, gamma, guide=guide)
