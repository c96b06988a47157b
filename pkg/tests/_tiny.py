"""A fixed tiny network and finite-difference helpers for gradient checks."""

import numpy as np

from gms.noisenet import TrainHyper, _init_head, init_net
from gms.schedule import make_schedule

TINY = TrainHyper(width=5, depth=2, emb_dim=4, head_width=3, iterations=0, seed=3)


def tiny_net(dim=2, orders=(2, 3)):
    sch = make_schedule("linear", 50)
    net = init_net(dim, sch, TINY, data_var=np.full(dim, 0.4))
    for n in orders:
        net.heads[n] = _init_head(net, n, TINY)
    # spread the output layers so no gradient is near zero
    rng = np.random.default_rng(1)
    for layers in [net.backbone, *net.heads.values()]:
        for W, b in layers:
            W += 0.3 * rng.standard_normal(W.shape)
            b += 0.3 * rng.standard_normal(b.shape)
    return net


def tiny_batch(net, n=6, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, net.dim)), rng.integers(1, net.sched.T + 1, n), rng.normal(size=(n, net.dim))


def numeric_grad(loss_fn, arrays, h=1e-3):
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + h
            up = loss_fn()
            a[idx] = old - h
            down = loss_fn()
            a[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def rel_error(a, b):
    a, b = np.concatenate([x.ravel() for x in a]), np.concatenate([x.ravel() for x in b])
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b))
