"""Generalized-method-of-moments fit of the two-component transition kernel.

The kernel is ``1/3 N(mu1, var) + 2/3 N(mu2, var)`` per data dimension.
With three parameters and three moment conditions the system is exactly
identified, so the closed-form solution below is the GMM argmin whenever
it exists.  ``fit_gradient`` reaches the same point by ADAN descent on
``g^T W g`` and is what the sampler runs by default.

All functions are element-wise: targets may have any array shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adan import Adan, cosine_warmup_lr
from .errors import NumericalError
from .moments import MomentTriple

W1, W2 = 1.0 / 3.0, 2.0 / 3.0
VAR_MIN = 1e-12
DEGENERATE_C3 = 1e-10
_SIGMA_FLOOR = np.sqrt(VAR_MIN)


@dataclass(frozen=True)
class GmKernelParams:
    mu1: np.ndarray
    mu2: np.ndarray
    var: np.ndarray

    weights = (W1, W2)

    def __post_init__(self):
        for name in ("mu1", "mu2", "var"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if not all(np.all(np.isfinite(a)) for a in (self.mu1, self.mu2, self.var)):
            raise NumericalError("non-finite kernel parameters")
        if np.any(self.var < VAR_MIN * (1 - 1e-9)):
            raise ValueError(f"kernel variance below {VAR_MIN}")

    def stacked(self) -> np.ndarray:
        return np.stack([self.mu1, self.mu2, self.var], axis=-1)


@dataclass(frozen=True)
class OptimizerConfig:
    steps: int = 25
    lr: float = 0.1
    warmup: int = 18
    min_lr: float = 0.01
    schedule: str = "cosine"
    init: str = "closed_form"

    def lr_at(self, i: int) -> float:
        if self.schedule == "constant":
            return self.lr
        if self.schedule != "cosine":
            raise ValueError(f"unknown lr schedule {self.schedule!r}")
        return cosine_warmup_lr(i, self.steps, self.lr, self.warmup, self.min_lr)


@dataclass(frozen=True)
class FitReport:
    params: GmKernelParams
    objective_value: float
    iterations: int
    degenerate_mask: np.ndarray
    infeasible_mask: np.ndarray
    objective: np.ndarray = field(repr=False, default=None)  # per element
    history: np.ndarray = field(repr=False, default=None)  # best total objective per iteration
    lr: float | None = None


def gm_moments(params: GmKernelParams) -> MomentTriple:
    mu1, mu2, var = params.mu1, params.mu2, params.var
    return MomentTriple(
        M1=W1 * mu1 + W2 * mu2,
        M2=W1 * (mu1**2 + var) + W2 * (mu2**2 + var),
        M3=W1 * (mu1**3 + 3 * mu1 * var) + W2 * (mu2**3 + 3 * mu2 * var),
    )


def _residual(params: GmKernelParams, target: MomentTriple) -> np.ndarray:
    m = gm_moments(params)
    return np.stack([target.M1 - m.M1, target.M2 - m.M2, target.M3 - m.M3], axis=-1)


def _check_weight(W):
    if W is None:
        return None
    W = np.asarray(W, dtype=np.float64)
    if W.shape[-2:] != (3, 3):
        raise ValueError(f"weight matrix must be 3x3, got shape {W.shape}")
    if not np.allclose(W, np.swapaxes(W, -1, -2)):
        raise ValueError("weight matrix must be symmetric")
    try:
        np.linalg.cholesky(W)
    except np.linalg.LinAlgError:
        raise ValueError("weight matrix must be positive definite") from None
    return W


def _quadratic(g: np.ndarray, W) -> np.ndarray:
    if W is None:
        return np.sum(g**2, axis=-1)
    return np.einsum("...i,...ij,...j->...", g, W, g)


def elementwise_objective(params: GmKernelParams, target: MomentTriple, W=None) -> np.ndarray:
    return _quadratic(_residual(params, target), _check_weight(W))


def gmm_objective(params: GmKernelParams, target: MomentTriple, W=None) -> float:
    """``sum over dims of g^T W g`` with ``g = target - model moments``; ``W=None`` is the identity."""
    return float(np.sum(elementwise_objective(params, target, W)))


def _central(target: MomentTriple):
    M1, M2, M3 = (np.asarray(a, dtype=np.float64) for a in (target.M1, target.M2, target.M3))
    c2 = M2 - M1**2
    c3 = M3 - 3 * M1 * M2 + 2 * M1**3
    tol = 1e-12 * (1.0 + M2)
    if np.any(c2 < -tol):
        raise ValueError("moment triple has negative variance (M2 < M1^2)")
    return M1, np.maximum(c2, 0.0), c3


def fit_closed_form(target: MomentTriple) -> FitReport:
    """Exact per-dimension solution of the three moment equations.

    With weights (1/3, 2/3) and offsets ``d1 = -2 d2`` from the mean, the
    central moments give ``c3 = -2 d2^3`` and ``c2 = var + 2 d2^2``.
    """
    M1, c2, c3 = _central(target)
    d2 = -np.cbrt(c3 / 2)
    var = c2 - 2 * d2**2
    infeasible = var < VAR_MIN
    if np.any(infeasible):
        # closest representable triple: keep sign of d2, shrink it so var = VAR_MIN
        shrunk = np.sign(d2) * np.sqrt(np.maximum(c2 - VAR_MIN, 0.0) / 2)
        d2 = np.where(infeasible, shrunk, d2)
        var = np.where(infeasible, VAR_MIN, var)
    degenerate = np.abs(c3) < DEGENERATE_C3
    d2 = np.where(degenerate, 0.0, d2)
    var = np.where(degenerate, np.maximum(c2, VAR_MIN), var)
    infeasible = infeasible & ~degenerate
    params = GmKernelParams(mu1=M1 - 2 * d2, mu2=M1 + d2, var=var)
    obj = elementwise_objective(params, target)
    return FitReport(
        params=params,
        objective_value=float(np.sum(obj)),
        iterations=0,
        degenerate_mask=degenerate,
        infeasible_mask=infeasible,
        objective=obj,
    )


def _softplus(x):
    return np.logaddexp(0.0, x)


def _softplus_inv(y):
    y = np.maximum(y, 1e-300)
    return np.where(y > 30, y, np.log(np.expm1(np.minimum(y, 30))))


def _sigmoid(x):
    return 0.5 * (1 + np.tanh(0.5 * x))


def _gaussian_perturbed(M1, c2, c3):
    # offsets -s/2, +s/4 (or mirrored) keep the mean; var makes c2 exact
    spread = np.sqrt(c2)
    sign = np.where(c3 < 0, -1.0, 1.0)
    mu1 = M1 + sign * spread / 2
    mu2 = M1 - sign * spread / 4
    return mu1, mu2, np.maximum(7 * c2 / 8, VAR_MIN)


def fit_gradient(target: MomentTriple, init: str | GmKernelParams | None = None,
                 opt: OptimizerConfig | None = None, W=None, standardize: bool = True) -> FitReport:
    """ADAN descent on the GMM objective; returns the best iterate per element.

    ``init`` is ``"closed_form"`` (the exact solution, or its projection
    for infeasible targets), ``"gaussian_perturbed"`` or explicit starting
    parameters.  The standard deviation is parameterized as
    ``sqrt(VAR_MIN) + softplus(rho)`` so every iterate is a valid kernel.

    With ``standardize`` the moment conditions are written for
    ``(x - M1) / sqrt(c2)``.  That is an invertible linear map of the raw
    residuals, i.e. GMM with another positive-definite weight, so the
    argmin is unchanged while the learning rate becomes scale-free.
    ``W`` weights whichever residuals are optimized; ``objective`` and
    ``objective_value`` always report the raw-frame ``W``-weighted value.
    """
    opt = opt or OptimizerConfig()
    init = init or opt.init
    W = _check_weight(W)
    closed = fit_closed_form(target)
    M1, c2, c3 = _central(target)
    if isinstance(init, GmKernelParams):
        mu1, mu2, var = (np.broadcast_to(a, M1.shape) for a in (init.mu1, init.mu2, init.var))
    elif init == "closed_form":
        mu1, mu2, var = closed.params.mu1, closed.params.mu2, closed.params.var
    elif init == "gaussian_perturbed":
        mu1, mu2, var = _gaussian_perturbed(M1, c2, c3)
    else:
        raise ValueError(f"unknown init {init!r}")

    if standardize:
        shift = M1
        scale = np.where(c2 > 0, np.sqrt(c2), 1.0)
        frame = MomentTriple(np.zeros_like(M1), c2 / scale**2, c3 / scale**3)
    else:
        shift = np.zeros_like(M1)
        scale = np.ones_like(M1)
        frame = target
    start = ((mu1 - shift) / scale, (mu2 - shift) / scale, var / scale**2)
    var_floor = VAR_MIN / scale**2
    (b1, b2, bv), best_q, history = _descend(frame, start, opt, W, var_floor)

    params = GmKernelParams(
        mu1=shift + scale * b1,
        mu2=shift + scale * b2,
        var=np.maximum(scale**2 * bv, VAR_MIN),
    )
    raw = elementwise_objective(params, target, W)
    return FitReport(
        params=params,
        objective_value=float(np.sum(raw)),
        iterations=opt.steps,
        degenerate_mask=closed.degenerate_mask,
        infeasible_mask=closed.infeasible_mask,
        objective=raw,
        history=history,
        lr=opt.lr,
    )


def _descend(target: MomentTriple, start, opt: OptimizerConfig, W, var_floor):
    T1, T2, T3 = (np.asarray(a, dtype=np.float64) for a in (target.M1, target.M2, target.M3))
    floor = np.sqrt(var_floor)
    mu1, mu2, var = (np.array(a, dtype=np.float64) for a in start)
    rho = _softplus_inv(np.sqrt(np.maximum(var, var_floor)) - floor)

    def evaluate(mu1, mu2, rho):
        sig = floor + _softplus(rho)
        v = sig**2
        g = (
            T1 - (W1 * mu1 + W2 * mu2),
            T2 - (W1 * mu1**2 + W2 * mu2**2 + v),
            T3 - (W1 * mu1**3 + W2 * mu2**3 + v * (mu1 + 2 * mu2)),
        )
        if W is None:
            Wg = g
        else:
            Wg = tuple(W[..., i, 0] * g[0] + W[..., i, 1] * g[1] + W[..., i, 2] * g[2] for i in range(3))
        q = g[0] * Wg[0] + g[1] * Wg[1] + g[2] * Wg[2]
        # dQ/dtheta = -2 J^T W g with J the Jacobian of the model moments
        d_mu1 = -2 * (W1 * Wg[0] + 2 * W1 * mu1 * Wg[1] + (mu1**2 + v) * Wg[2])
        d_mu2 = -2 * (W2 * Wg[0] + 2 * W2 * mu2 * Wg[1] + 2 * (mu2**2 + v) * Wg[2])
        d_v = -2 * (Wg[1] + (mu1 + 2 * mu2) * Wg[2])
        d_rho = d_v * 2 * sig * _sigmoid(rho)
        return q, (d_mu1, d_mu2, d_rho), v

    q, grads, v = evaluate(mu1, mu2, rho)
    _raise_if_nonfinite(q)
    best_q = q.copy()
    best = [mu1.copy(), mu2.copy(), v.copy()]
    history = [float(np.sum(best_q))]
    params = [mu1, mu2, rho]
    adan = Adan(params)
    for i in range(1, opt.steps + 1):
        adan.step(params, grads, opt.lr_at(i))
        q, grads, v = evaluate(*params)
        _raise_if_nonfinite(q)
        improved = q < best_q
        best_q = np.where(improved, q, best_q)
        best[0] = np.where(improved, params[0], best[0])
        best[1] = np.where(improved, params[1], best[1])
        best[2] = np.where(improved, v, best[2])
        history.append(float(np.sum(best_q)))
    return best, best_q, np.array(history)


def _raise_if_nonfinite(q):
    bad = ~np.isfinite(q)
    if np.any(bad):
        raise NumericalError("non-finite GMM objective", index=np.argwhere(bad)[0].tolist())
