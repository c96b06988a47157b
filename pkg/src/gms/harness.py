"""Experiment orchestration: provider -> sampling -> evaluation -> diagnostics.

All outputs are CSV with a header row and ``repr`` float formatting, so a
rerun with the same configuration reproduces ``samples.csv`` byte for byte.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import platform
import sys
import time
from contextlib import contextmanager
from dataclasses import asdict

import numpy as np
import scipy

from . import __version__
from .config import ExperimentConfig, dump_config
from .metrics import kde_loglik, l2_faithfulness, trajectory_deviation
from .mixture import MixtureDistribution, sample_data
from .noisenet import NetProvider, OracleProvider, TrainHyper, load, save, train
from .samplers import run_sampler, run_sdedit
from .schedule import build_trajectory

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """Wraps the error that aborted an experiment stage."""

    def __init__(self, stage: str, error: BaseException):
        super().__init__(f"stage {stage!r} failed: {error}")
        self.stage = stage
        self.error = error


@contextmanager
def stage(name: str, timings: dict):
    t0 = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0


# -- CSV helpers ---------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_samples(path, samples, prefix_cols=None) -> None:
    """One row per sample; columns ``x0..x{D-1}``, optionally preceded by labels."""
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    header = [f"x{i}" for i in range(x.shape[1])]
    if prefix_cols:
        names = list(prefix_cols)
        header = names + header
        rows = ([*labels, *row] for labels, row in zip(zip(*prefix_cols.values()), x))
    else:
        rows = iter(x)
    write_csv(path, header, rows)


def read_samples(path) -> np.ndarray:
    """Read the ``x*`` columns of a samples file."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        cols = [i for i, h in enumerate(header) if h.startswith("x") and h[1:].isdigit()]
        if not cols:
            raise ValueError(f"{path}: no x0.. columns in header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append([float(row[i]) for i in cols])
            except (ValueError, IndexError):
                raise ValueError(f"{path}:{lineno}: malformed row") from None
    if not rows:
        raise ValueError(f"{path}: no samples")
    return np.array(rows)


# -- providers -------------------------------------------------------------------


def train_hyper(cfg: ExperimentConfig) -> TrainHyper:
    return TrainHyper(**cfg.train)


def build_provider(cfg: ExperimentConfig, out_dir: str | None = None):
    sched = cfg.sched
    if cfg.provider_kind == "oracle":
        return OracleProvider(cfg.data, sched)
    if cfg.provider_kind == "net":
        net = load(cfg.provider_path)
        if net.sched.T != sched.T or net.sched.kind != sched.kind:
            raise ValueError(f"network was trained on {net.sched.kind}/{net.sched.T}, config uses {sched.kind}/{sched.T}")
        return NetProvider(net)
    net = train(cfg.data, sched, order=cfg.provider_order, hyper=train_hyper(cfg))
    if out_dir is not None:
        save(net, os.path.join(out_dir, "net.bin"))
    return NetProvider(net)


def reference_data(data: MixtureDistribution, L: int, seed: int) -> np.ndarray:
    return sample_data(data, L, seed)


# -- experiment ------------------------------------------------------------------


def _versions():
    return {
        "gms": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None, Ks=None) -> dict:
    """Run the configured pipeline and write its artifacts.

    ``Ks`` overrides the step counts (default: ``sweep.K`` if set, else
    ``solver.K``).  Returns a summary dict; raises :class:`StageError`.
    """
    out_dir = out_dir or cfg.out_dir
    timings: dict = {}
    with stage("setup", timings):
        os.makedirs(out_dir, exist_ok=True)
    Ks = tuple(Ks or cfg.sweep_K or (cfg.K,))
    for K in Ks:
        if not 1 <= K <= cfg.T:
            raise StageError("setup", ValueError(f"K={K} outside [1, {cfg.T}]"))
    with stage("provider", timings):
        provider = build_provider(cfg, out_dir)
    with stage("reference", timings):
        ref = reference_data(cfg.data, cfg.L, cfg.reference_seed)

    per_seed, report, fits, labels_K, labels_seed, chunks = [], [], [], [], [], []
    for K in Ks:
        traj = build_trajectory(cfg.T, K)
        scores = []
        for seed in cfg.seeds:
            with stage("sample", timings):
                t0 = time.perf_counter()
                run = run_sampler(cfg.solver, traj, provider, cfg.batch, seed, cfg.sampler, data=cfg.data)
                elapsed = time.perf_counter() - t0
            with stage("eval", timings):
                ll = kde_loglik(run.samples, ref) if "kde_loglik" in cfg.metrics else None
            scores.append(ll)
            per_seed.append((cfg.solver, K, seed, cfg.batch, ll, elapsed))
            chunks.append(run.samples)
            labels_K += [K] * run.samples.shape[0]
            labels_seed += [seed] * run.samples.shape[0]
            for f in run.fit_summaries:
                fits.append((K, seed, f.t, f.s, f.objective_value, f.degenerate_frac, f.infeasible_frac,
                             f.separated_frac))
        if scores[0] is not None:
            v = np.asarray(scores)
            se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
            report.append((cfg.solver, K, len(v), cfg.batch, cfg.L, float(np.median(v)), float(v.mean()), se))

    sdedit_rows = []
    if cfg.sdedit_t0 is not None:
        with stage("sdedit", timings):
            guides = sample_data(cfg.data, cfg.batch, cfg.reference_seed + 1)
            traj = build_trajectory(cfg.sdedit_t0, cfg.sdedit_K)
            for seed in cfg.seeds:
                run = run_sdedit(guides, cfg.sdedit_t0, cfg.solver, traj, provider, seed, cfg.sampler, data=cfg.data)
                sdedit_rows.append((cfg.solver, cfg.sdedit_t0, cfg.sdedit_K, seed, kde_loglik(run.samples, ref),
                                    l2_faithfulness(run.samples, guides)))

    diag = []
    with stage("diagnose", timings):
        if getattr(provider, "max_order", 3) >= 3:
            for K in Ks:
                diag += trajectory_deviation(provider, cfg.data, K, n=cfg.diagnose_n, seed=cfg.reference_seed)

    with stage("write", timings):
        write_samples(os.path.join(out_dir, "samples.csv"), np.concatenate(chunks),
                      {"K": labels_K, "seed": labels_seed})
        write_csv(os.path.join(out_dir, "report.csv"),
                  ["solver", "K", "n_seeds", "n", "L", "kde_loglik_median", "kde_loglik_mean", "kde_loglik_se"],
                  report)
        write_csv(os.path.join(out_dir, "per_seed.csv"),
                  ["solver", "K", "seed", "n", "kde_loglik", "seconds"], per_seed)
        write_csv(os.path.join(out_dir, "diagnostics.csv"), ["t", "s", "K", "mean_dev", "median_dev"], diag)
        if fits:
            write_csv(os.path.join(out_dir, "fits.csv"),
                      ["K", "seed", "t", "s", "objective", "degenerate_frac", "infeasible_frac", "separated_frac"],
                      fits)
        if sdedit_rows:
            write_csv(os.path.join(out_dir, "sdedit.csv"), ["solver", "t0", "K", "seed", "kde_loglik", "l2"],
                      sdedit_rows)
        manifest = {
            "config": dump_config(cfg),
            "seeds": list(cfg.seeds),
            "K": list(Ks),
            "reference_seed": cfg.reference_seed,
            "sampler": {**asdict(cfg.sampler), "fit": asdict(cfg.sampler.fit)},
            "versions": _versions(),
            "timings_seconds": timings,
            "command": sys.argv,
        }
        with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, default=str)
    return {"report": report, "per_seed": per_seed, "diagnostics": diag, "sdedit": sdedit_rows,
            "out_dir": out_dir}
