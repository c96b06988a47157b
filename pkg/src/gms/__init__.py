"""Gaussian-mixture reverse kernels for diffusion sampling, on toy mixture data."""

__version__ = "0.1.0"

from .errors import ConfigError, NumericalError, PreconditionError, TrainingDivergedError
from .gmmfit import FitReport, GmKernelParams, OptimizerConfig, fit_closed_form, fit_gradient, gm_moments, gmm_objective
from .metrics import EvalReport, kde_loglik, l2_faithfulness
from .mixture import (
    MixtureDistribution,
    NoiseMoments,
    forward_sample,
    oracle_noise_moments,
    posterior_mixture,
    preset,
    sample_data,
    true_reverse_kernel,
)
from .moments import (
    MomentTriple,
    gaussian_implied_m3,
    moment_deviation,
    reverse_m1,
    reverse_m2,
    reverse_m3,
    reverse_moments,
)
from .noisenet import NetProvider, NoiseHeads, OracleProvider, TrainHyper, predict, train_heads, train_stage1
from .samplers import SampleRun, SamplerConfig, run_sampler, run_sdedit
from .schedule import NoiseSchedule, TransitionCoeffs, Trajectory, build_trajectory, coeffs, make_schedule
