"""Command-line interface: ``gms {train,sample,sdedit,eval,diagnose,sweep}``.

Exit codes: 0 ok, 2 configuration or argument error, 3 numerical error,
4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .config import load_config, parse_config_text
from .errors import ConfigError, NumericalError, PreconditionError
from .gmmfit import OptimizerConfig
from .harness import StageError, read_samples, run_experiment, write_csv, write_samples
from .metrics import evaluate, trajectory_deviation
from .mixture import PRESETS, MixtureDistribution, preset, sample_data
from .noisenet import NetProvider, OracleProvider, TrainHyper, load, save, train
from .samplers import CLI_SOLVERS, SamplerConfig, run_sampler, run_sdedit
from .schedule import build_trajectory, make_schedule

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
log = logging.getLogger("gms")


def _data(arg: str) -> MixtureDistribution:
    """A preset name or a config file with a ``[data]`` section."""
    if arg in PRESETS:
        return preset(arg)
    if os.path.exists(arg):
        with open(arg, encoding="utf-8") as fh:
            text = fh.read()
        return parse_config_text(text, source=arg).data
    raise ConfigError(f"--data: {arg!r} is neither a preset {sorted(PRESETS)} nor a file", key="data")


def _provider(arg: str, data: MixtureDistribution, sched):
    if arg == "oracle":
        return OracleProvider(data, sched)
    if arg.startswith("net:"):
        net = load(arg[4:])
        return NetProvider(net)
    raise ConfigError(f"--provider must be 'oracle' or 'net:<path>', got {arg!r}", key="provider")


def _ints(s: str):
    return [int(v) for v in s.split(",") if v.strip()]


def _add_schedule(p):
    p.add_argument("--schedule", default="linear", choices=["linear", "cosine"])
    p.add_argument("--T", type=int, default=1000)


def _add_sampling(p):
    p.add_argument("--solver", required=True, choices=sorted(CLI_SOLVERS))
    p.add_argument("--steps", type=int, default=10, help="number of sampling steps K")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--provider", default="oracle", help="oracle | net:<path>")
    p.add_argument("--data", default="toy1d", help="preset name or config file (needed by the oracle)")
    p.add_argument("--out", required=True)
    p.add_argument("--last-step-noise", choices=["on", "off"], default="on")
    p.add_argument("--fit-method", choices=["gradient", "closed_form"], default="gradient")
    p.add_argument("--gmm-steps", type=int, default=25)
    _add_schedule(p)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gms", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the multi-head noise network")
    p.add_argument("--data", required=True)
    p.add_argument("--order", type=int, choices=[1, 2, 3], default=3)
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int, default=TrainHyper.iterations)
    p.add_argument("--batch-size", type=int, default=TrainHyper.batch_size)
    p.add_argument("--lr", type=float, default=TrainHyper.lr)
    p.add_argument("--width", type=int, default=TrainHyper.width)
    p.add_argument("--depth", type=int, default=TrainHyper.depth)
    p.add_argument("--seed", type=int, default=0)
    _add_schedule(p)

    p = sub.add_parser("sample", help="draw samples with one solver")
    _add_sampling(p)

    p = sub.add_parser("sdedit", help="perturb guides to t0 and denoise")
    _add_sampling(p)
    p.add_argument("--t0", type=int, required=True)
    p.add_argument("--guide", help="CSV of guide points (default: n draws from --data)")

    p = sub.add_parser("eval", help="KDE log-likelihood (and L2 to guides) of a samples CSV")
    p.add_argument("--samples", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--L", type=int, default=10000)
    p.add_argument("--seed", type=int, default=999, help="seed of the reference draws")
    p.add_argument("--guide")
    p.add_argument("--out", required=True)

    p = sub.add_parser("diagnose", help="non-Gaussianity of the reverse kernel along even trajectories")
    p.add_argument("--data", default="toy1d")
    p.add_argument("--K", default="1000,100,10")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--provider", default="oracle")
    p.add_argument("--out", required=True)
    _add_schedule(p)

    p = sub.add_parser("sweep", help="run a configured experiment over several K")
    p.add_argument("--config", required=True)
    p.add_argument("--K", help="comma-separated step counts (default: sweep.K, else 5,10,20,40)")
    p.add_argument("--out-dir")
    return ap


def _sampler_cfg(args) -> SamplerConfig:
    return SamplerConfig(fit=OptimizerConfig(steps=args.gmm_steps), fit_method=args.fit_method,
                         last_step_noise=args.last_step_noise == "on")


def cmd_train(args):
    data = _data(args.data)
    sched = make_schedule(args.schedule, args.T)
    hyper = TrainHyper(width=args.width, depth=args.depth, iterations=args.iterations,
                       batch_size=args.batch_size, lr=args.lr, seed=args.seed)
    net = train(data, sched, order=args.order, hyper=hyper)
    save(net, args.out)
    print(f"wrote {args.out} (orders {net.orders})")


def cmd_sample(args):
    data = _data(args.data)
    sched = make_schedule(args.schedule, args.T)
    provider = _provider(args.provider, data, sched)
    traj = build_trajectory(provider.sched.T, args.steps)
    run = run_sampler(CLI_SOLVERS[args.solver], traj, provider, args.n, args.seed, _sampler_cfg(args),
                      data=data)
    write_samples(args.out, run.samples)
    print(f"wrote {args.n} samples to {args.out}")


def cmd_sdedit(args):
    data = _data(args.data)
    sched = make_schedule(args.schedule, args.T)
    provider = _provider(args.provider, data, sched)
    guide = read_samples(args.guide) if args.guide else sample_data(data, args.n, args.seed + 1)
    if not 1 <= args.t0 <= provider.sched.T:
        raise ConfigError(f"--t0 must lie in [1, {provider.sched.T}]", key="t0")
    traj = build_trajectory(args.t0, min(args.steps, args.t0))
    run = run_sdedit(guide, args.t0, CLI_SOLVERS[args.solver], traj, provider, args.seed, _sampler_cfg(args),
                     data=data)
    write_samples(args.out, run.samples)
    if not args.guide:
        base, ext = os.path.splitext(args.out)
        write_samples(f"{base}.guide{ext or '.csv'}", guide)
    print(f"wrote {run.samples.shape[0]} samples to {args.out}")


def cmd_eval(args):
    data = _data(args.data)
    samples = read_samples(args.samples)
    ref = sample_data(data, args.L, args.seed)
    guides = read_samples(args.guide) if args.guide else None
    rep = evaluate(samples, ref, guides=guides)
    write_csv(args.out, ["n_samples", "L", "kde_loglik", "l2", "bandwidth"],
              [(rep.n_samples, rep.n_reference, rep.kde_loglik, rep.l2, " ".join(repr(float(h)) for h in rep.bandwidth))])
    print(f"kde_loglik = {rep.kde_loglik:.6g}" + ("" if rep.l2 is None else f", l2 = {rep.l2:.6g}"))


def cmd_diagnose(args):
    data = _data(args.data)
    sched = make_schedule(args.schedule, args.T)
    provider = _provider(args.provider, data, sched)
    rows = []
    for K in _ints(args.K):
        rows += trajectory_deviation(provider, data, K, n=args.n, seed=args.seed)
    write_csv(args.out, ["t", "s", "K", "mean_dev", "median_dev"], rows)
    print(f"wrote {len(rows)} rows to {args.out}")


def cmd_sweep(args):
    cfg = load_config(args.config)
    Ks = _ints(args.K) if args.K else (cfg.sweep_K or (5, 10, 20, 40))
    bad = [k for k in Ks if not 1 <= k <= cfg.T]
    if bad:
        raise ConfigError(f"--K: {bad[0]} outside [1, {cfg.T}]", key="sweep.K")
    res = run_experiment(cfg, out_dir=args.out_dir, Ks=Ks)
    for row in res["report"]:
        print(f"{row[0]} K={row[1]}: median kde_loglik {row[5]:.6g} (se {row[7]:.3g})")
    print(f"artifacts in {res['out_dir']}")


COMMANDS = {"train": cmd_train, "sample": cmd_sample, "sdedit": cmd_sdedit, "eval": cmd_eval,
            "diagnose": cmd_diagnose, "sweep": cmd_sweep}


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.error
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, (ConfigError, PreconditionError, ValueError)):
        return EXIT_CONFIG
    raise exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="raise", invalid="raise", divide="ignore")
    try:
        COMMANDS[args.command](args)
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except Exception as exc:
        code = _exit_code(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK
