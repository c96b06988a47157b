"""Multi-head noise network: an MLP predicting ``E[eps^n | x_t]`` for n = 1..3.

The backbone maps ``(x_t, t)`` to ``eps_theta``.  Heads for orders 2 and 3
read the backbone's last hidden features together with ``eps_theta`` and
regress ``eps**n``; they are trained with the backbone frozen.

Inputs are preconditioned by ``1 / sqrt(alpha_t^2 var_data + sigma_t^2)``,
the marginal standard deviation of ``x_t``, so the network sees unit-scale
inputs at every noise level.

Everything is plain numpy with hand-written backprop.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .adan import Adan
from .errors import NumericalError, TrainingDivergedError
from .mixture import MixtureDistribution, NoiseMoments, oracle_noise_moments, sample_data
from .schedule import NoiseSchedule, make_schedule

log = logging.getLogger(__name__)

M2_CLAMP_MARGIN = 1e-8
MAGIC = b"GMSNOISE"
FORMAT_VERSION = 1
_SCHED_CODES = {"linear": 0, "cosine": 1}
_HEADER = struct.Struct("<8sIIIIIIIBB")


@dataclass(frozen=True)
class TrainHyper:
    width: int = 128
    depth: int = 3
    emb_dim: int = 32
    head_width: int = 128
    iterations: int = 5000
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0


# -- layers ------------------------------------------------------------------


def _swish(z):
    s = 0.5 * (1 + np.tanh(0.5 * z))
    return z * s, s


def _swish_grad(z, s):
    return s * (1 + z * (1 - s))


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps, shape ``(n, dim)``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _init_dense(rng, sizes):
    layers = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        W = rng.standard_normal((n_in, n_out)) * np.sqrt(1.0 / n_in)
        layers.append([W, np.zeros(n_out)])
    # small output layer so initial predictions are near zero
    layers[-1][0] *= 0.1
    return layers


def _mlp_forward(layers, x):
    """Swish MLP with a linear last layer.  Returns ``(out, cache)``."""
    cache = []
    h = x
    for i, (W, b) in enumerate(layers):
        z = h @ W + b
        if i == len(layers) - 1:
            cache.append((h, None, None))
            return z, cache
        a, s = _swish(z)
        cache.append((h, z, s))
        h = a
    raise AssertionError("empty network")


def _mlp_backward(layers, cache, d_out):
    """Gradients for every ``(W, b)`` plus the gradient w.r.t. the input."""
    grads = [None] * len(layers)
    d = d_out
    for i in range(len(layers) - 1, -1, -1):
        h, z, s = cache[i]
        if z is not None:
            d = d * _swish_grad(z, s)
        grads[i] = [h.T @ d, d.sum(axis=0)]
        d = d @ layers[i][0].T
    return grads, d


# -- network -----------------------------------------------------------------


@dataclass
class NoiseHeads:
    dim: int
    sched: NoiseSchedule
    data_var: np.ndarray  # (D,) used for input preconditioning
    backbone: list  # [[W, b], ...]
    heads: dict = field(default_factory=dict)  # order -> [[W, b], [W, b]]
    emb_dim: int = 32

    @property
    def orders(self) -> tuple[int, ...]:
        return (1,) + tuple(sorted(self.heads))

    @property
    def width(self) -> int:
        return self.backbone[0][0].shape[1]

    @property
    def depth(self) -> int:
        return len(self.backbone) - 1

    def input_scale(self, t) -> np.ndarray:
        t = np.atleast_1d(t)
        a2 = self.sched.alpha[t] ** 2
        s2 = self.sched.sigma[t] ** 2
        return 1.0 / np.sqrt(a2[:, None] * self.data_var[None] + s2[:, None])

    def backbone_digest(self) -> str:
        h = hashlib.sha256()
        for W, b in self.backbone:
            h.update(W.tobytes())
            h.update(b.tobytes())
        return h.hexdigest()

    def parameters(self) -> list[np.ndarray]:
        """All arrays in persistence order."""
        out = [self.data_var]
        for layer in self.backbone:
            out.extend(layer)
        for n in sorted(self.heads):
            for layer in self.heads[n]:
                out.extend(layer)
        return out


def init_net(dim: int, sched: NoiseSchedule, hyper: TrainHyper | None = None, data_var=None) -> NoiseHeads:
    hyper = hyper or TrainHyper()
    rng = np.random.default_rng(hyper.seed)
    sizes = [dim + hyper.emb_dim] + [hyper.width] * hyper.depth + [dim]
    dv = np.ones(dim) if data_var is None else np.asarray(data_var, dtype=np.float64).reshape(dim)
    return NoiseHeads(dim=dim, sched=sched, data_var=dv.copy(), backbone=_init_dense(rng, sizes),
                      emb_dim=hyper.emb_dim)


def _init_head(net: NoiseHeads, order: int, hyper: TrainHyper):
    rng = np.random.default_rng([hyper.seed, order])
    return _init_dense(rng, [net.width + net.dim, hyper.head_width, net.dim])


def _backbone_forward(net: NoiseHeads, x_t, t):
    x = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    t = np.broadcast_to(np.asarray(t), (x.shape[0],))
    inp = np.concatenate([x * net.input_scale(t), time_embedding(t, net.emb_dim)], axis=1)
    eps, cache = _mlp_forward(net.backbone, inp)
    feats = cache[-1][0]  # input of the output layer = last hidden activations
    return eps, feats, cache


def _head_forward(layers, feats, eps):
    return _mlp_forward(layers, np.concatenate([feats, eps], axis=1))


def predict(net: NoiseHeads, x_t, t, order: int = 1) -> NoiseMoments:
    """Noise-moment estimates up to ``order`` for ``x_t`` of shape ``(n, D)`` or ``(D,)``."""
    if order not in (1, 2, 3):
        raise ValueError(f"order must be 1, 2 or 3, got {order}")
    for n in range(2, order + 1):
        if n not in net.heads:
            raise ValueError(f"network has no order-{n} head")
    if np.any(np.asarray(t) < 1) or np.any(np.asarray(t) > net.sched.T):
        raise ValueError(f"t must lie in [1, {net.sched.T}]")
    squeeze = np.ndim(x_t) == 1
    eps, feats, _ = _backbone_forward(net, x_t, t)
    out = [eps]
    for n in range(2, order + 1):
        y, _ = _head_forward(net.heads[n], feats, eps)
        if n == 2:
            floor = eps**2 + M2_CLAMP_MARGIN
            active = y < floor
            if np.any(active):
                log.debug("order-2 clamp active on %d of %d entries", int(active.sum()), active.size)
                y = np.where(active, floor, y)
        out.append(y)
    if not all(np.all(np.isfinite(o)) for o in out):
        raise NumericalError("non-finite network output")
    if squeeze:
        out = [o[0] for o in out]
    out += [None] * (3 - len(out))
    return NoiseMoments(*out)


# -- losses and gradients ----------------------------------------------------


def backbone_loss_and_grad(net: NoiseHeads, x_t, t, eps):
    pred, _, cache = _backbone_forward(net, x_t, t)
    r = pred - eps
    loss = float(np.mean(np.sum(r**2, axis=1)))
    d_out = 2 * r / r.shape[0]
    grads, _ = _mlp_backward(net.backbone, cache, d_out)
    return loss, grads


def head_loss_and_grad(net: NoiseHeads, order: int, x_t, t, eps):
    """Loss ``mean ||eps**n - head(x_t, t)||^2`` and its gradient w.r.t. the head only."""
    eps_out, feats, _ = _backbone_forward(net, x_t, t)
    pred, cache = _head_forward(net.heads[order], feats, eps_out)
    r = pred - head_target(eps, order)
    loss = float(np.mean(np.sum(r**2, axis=1)))
    grads, _ = _mlp_backward(net.heads[order], cache, 2 * r / r.shape[0])
    return loss, grads


def head_target(eps, order: int) -> np.ndarray:
    """Regression target ``eps`` multiplied elementwise by itself ``order - 1`` times."""
    return np.asarray(eps) ** order


# -- training ----------------------------------------------------------------


def _batch(rng, data: MixtureDistribution, sched: NoiseSchedule, n: int):
    x0 = sample_data(data, n, rng)
    t = rng.integers(1, sched.T + 1, size=n)
    eps = rng.standard_normal(x0.shape)
    x_t = sched.alpha[t][:, None] * x0 + sched.sigma[t][:, None] * eps
    return x_t, t, eps


def validation_batch(data: MixtureDistribution, sched: NoiseSchedule, n: int = 2048, seed: int = 12345):
    return _batch(np.random.default_rng(seed), data, sched, n)


def _check_loss(loss: float, it: int):
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss at iteration {it}", index=it)


def _flatten(layers):
    return [a for layer in layers for a in layer]


def train_stage1(data: MixtureDistribution, sched: NoiseSchedule, hyper: TrainHyper | None = None,
                 callback=None) -> NoiseHeads:
    """Fit the backbone ``eps_theta`` by denoising score matching."""
    hyper = hyper or TrainHyper()
    net = init_net(data.dim, sched, hyper, data_var=data.variance())
    rng = np.random.default_rng([hyper.seed, 1])
    params = _flatten(net.backbone)
    opt = Adan(params)
    for it in range(hyper.iterations):
        x_t, t, eps = _batch(rng, data, sched, hyper.batch_size)
        loss, grads = backbone_loss_and_grad(net, x_t, t, eps)
        _check_loss(loss, it)
        opt.step(params, _flatten(grads), hyper.lr)
        if callback is not None:
            callback(it, loss)
    return net


def train_heads(net: NoiseHeads, order: int, data: MixtureDistribution, sched: NoiseSchedule,
                hyper: TrainHyper | None = None, callback=None) -> NoiseHeads:
    """Fit the order-``order`` head with the backbone frozen; returns a new network."""
    if order not in (2, 3):
        raise ValueError(f"head order must be 2 or 3, got {order}")
    hyper = hyper or TrainHyper()
    heads = {n: [[W.copy(), b.copy()] for W, b in layers] for n, layers in net.heads.items()}
    heads[order] = _init_head(net, order, hyper)
    out = replace(net, heads=heads)
    rng = np.random.default_rng([hyper.seed, order])
    params = _flatten(heads[order])
    opt = Adan(params)
    for it in range(hyper.iterations):
        x_t, t, eps = _batch(rng, data, sched, hyper.batch_size)
        loss, grads = head_loss_and_grad(out, order, x_t, t, eps)
        _check_loss(loss, it)
        opt.step(params, _flatten(grads), hyper.lr)
        if callback is not None:
            callback(it, loss)
    return out


def train(data: MixtureDistribution, sched: NoiseSchedule, order: int = 3,
          hyper: TrainHyper | None = None) -> NoiseHeads:
    """Stage-one backbone training followed by heads up to ``order``."""
    net = train_stage1(data, sched, hyper)
    for n in range(2, order + 1):
        net = train_heads(net, n, data, sched, hyper)
    return net


def oracle_mse(net: NoiseHeads, data: MixtureDistribution, order: int = 1, n_t: int = 20,
               n_x: int = 256, seed: int = 0) -> float:
    """Mean squared gap between the order-``order`` prediction and the exact moment."""
    sched = net.sched
    rng = np.random.default_rng(seed)
    ts = np.unique(np.linspace(1, sched.T, n_t).round().astype(int))
    errs = []
    for t in ts:
        x0 = sample_data(data, n_x, rng)
        x_t = sched.alpha[t] * x0 + sched.sigma[t] * rng.standard_normal(x0.shape)
        want = oracle_noise_moments(data, sched, x_t, int(t), order=order)
        got = predict(net, x_t, int(t), order=order)
        m = {1: "m1", 2: "m2", 3: "m3"}[order]
        errs.append(np.mean((getattr(got, m) - getattr(want, m)) ** 2))
    return float(np.mean(errs))


# -- persistence -------------------------------------------------------------


def save(net: NoiseHeads, path) -> None:
    """Header, then every parameter as little-endian float64 in declaration order."""
    flags = sum(1 << (n - 1) for n in net.orders)
    head_width = next(iter(net.heads.values()))[0][0].shape[1] if net.heads else 0
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, net.dim, net.emb_dim, net.width, net.depth,
                          head_width, net.sched.T, _SCHED_CODES[net.sched.kind], flags)
    with open(path, "wb") as fh:
        fh.write(header)
        for a in net.parameters():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load(path) -> NoiseHeads:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: file too short for a network header")
    magic, version, dim, emb_dim, width, depth, head_width, T, kind, flags = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a noise-network file")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    kinds = {v: k for k, v in _SCHED_CODES.items()}
    if kind not in kinds:
        raise ValueError(f"{path}: unknown schedule code {kind}")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    pos = 0

    def take(*shape):
        nonlocal pos
        n = int(np.prod(shape))
        if pos + n > values.size:
            raise ValueError(f"{path}: truncated parameter block")
        out = values[pos:pos + n].reshape(shape).astype(np.float64)
        pos += n
        return out

    def dense(sizes):
        return [[take(a, b), take(b)] for a, b in zip(sizes[:-1], sizes[1:])]

    data_var = take(dim)
    backbone = dense([dim + emb_dim] + [width] * depth + [dim])
    heads = {}
    for n in (2, 3):
        if flags & (1 << (n - 1)):
            heads[n] = dense([width + dim, head_width, dim])
    if pos != values.size:
        raise ValueError(f"{path}: {values.size - pos} trailing values")
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"{path}: non-finite parameters")
    return NoiseHeads(dim=dim, sched=make_schedule(kinds[kind], T), data_var=data_var,
                      backbone=backbone, heads=heads, emb_dim=emb_dim)


# -- moment providers ----------------------------------------------------------


class OracleProvider:
    """Exact noise moments of mixture data."""

    max_order = 3

    def __init__(self, data: MixtureDistribution, sched: NoiseSchedule):
        self.data = data
        self.sched = sched

    def __call__(self, x_t, t: int, order: int) -> NoiseMoments:
        return oracle_noise_moments(self.data, self.sched, x_t, t, order=order)

    def cache_key(self) -> str:
        h = hashlib.sha256(b"oracle")
        for a in (self.data.weights, self.data.means, self.data.vars):
            h.update(a.tobytes())
        return h.hexdigest()


class NetProvider:
    """Noise moments predicted by a trained :class:`NoiseHeads`."""

    def __init__(self, net: NoiseHeads):
        self.net = net
        self.sched = net.sched

    @property
    def max_order(self) -> int:
        return max(self.net.orders)

    def __call__(self, x_t, t: int, order: int) -> NoiseMoments:
        return predict(self.net, x_t, t, order)

    def cache_key(self) -> str:
        h = hashlib.sha256(b"net")
        for a in self.net.parameters():
            h.update(a.tobytes())
        return h.hexdigest()
