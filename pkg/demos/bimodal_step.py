"""One large reverse step on two-point data: Gaussian kernel vs two-component kernel.

Data sit at -1 and +1 with weights 1/3 and 2/3.  From x_t = 0 the exact
reverse kernel q(x_s | x_t) is itself a two-component mixture, so a Gaussian
step (SN-DDPM) smears it into one bump while the GMS step recovers both modes.

    python demos/bimodal_step.py
"""

import numpy as np

from gms.mixture import preset, true_reverse_kernel
from gms.noisenet import OracleProvider
from gms.samplers import step_gaussian_optimal, step_gms
from gms.schedule import coeffs, make_schedule


def text_histogram(x, lo=-2.0, hi=2.0, bins=32, width=50):
    counts, edges = np.histogram(x, bins=bins, range=(lo, hi))
    for c, left in zip(counts, edges):
        print(f"{left:+.2f} {'#' * int(width * c / counts.max())}")


def main():
    sched = make_schedule("linear", 1000)
    data = preset("two_dirac")
    s, t = 100, 600
    co = coeffs(sched, s, t)
    provider = OracleProvider(data, sched)
    x_t = np.zeros((50_000, 1))

    kernel = true_reverse_kernel(data, sched, x_t[0], s, t)
    print(f"exact kernel: weights {kernel.weights.round(3)}, means {kernel.means[:, 0].round(3)}, "
          f"std {np.sqrt(kernel.vars[:, 0]).round(3)}")

    gms_x, fit = step_gms(co, x_t, provider, seed=0)
    p = fit.params
    print(f"GMS fit: mu1 {p.mu1[0, 0]:.3f}, mu2 {p.mu2[0, 0]:.3f}, std {np.sqrt(p.var[0, 0]):.3f}")
    sn_x = step_gaussian_optimal(co, x_t, provider, "diagonal_sn", seed=0)

    print("\nGMS step")
    text_histogram(gms_x[:, 0])
    print("\nSN-DDPM step")
    text_histogram(sn_x[:, 0])


if __name__ == "__main__":
    main()
