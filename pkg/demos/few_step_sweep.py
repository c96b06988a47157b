"""KDE log-likelihood of each sampler as the number of steps K shrinks.

Uses the exact noise moments of the data (oracle provider), so differences
come from the reverse kernel each sampler assumes and not from a network.

    python demos/few_step_sweep.py            # toy1d
    python demos/few_step_sweep.py gauss8
"""

import sys

import numpy as np

from gms.metrics import kde_loglik
from gms.mixture import preset, sample_data
from gms.noisenet import OracleProvider
from gms.samplers import run_sampler
from gms.schedule import build_trajectory, make_schedule

SOLVERS = ("ddpm_beta", "ddpm_beta_tilde", "analytic_dpm", "sn_ddpm", "gms")


def main(name="toy1d", Ks=(5, 10, 20, 40), seeds=range(3), n=2000):
    sched = make_schedule("linear", 1000)
    data = preset(name)
    provider = OracleProvider(data, sched)
    ref = sample_data(data, 10_000, 999)
    print(f"{name}: median kde_loglik over {len(seeds)} seeds (data itself: "
          f"{kde_loglik(sample_data(data, n, 1), ref):.3f})")
    print("K    " + "".join(f"{s:>17}" for s in SOLVERS))
    for K in Ks:
        traj = build_trajectory(sched.T, K)
        row = []
        for kind in SOLVERS:
            scores = [kde_loglik(run_sampler(kind, traj, provider, n, seed, data=data).samples, ref)
                      for seed in seeds]
            row.append(np.median(scores))
        print(f"{K:<5}" + "".join(f"{v:>17.3f}" for v in row))


if __name__ == "__main__":
    main(*sys.argv[1:2])
