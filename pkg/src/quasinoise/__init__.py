"""Quasiprobabilities of observation sequences, classical noise, and positivity tests."""

from .core import (
    ConvergenceError,
    DensityState,
    HermitianObservable,
    ResourceError,
    Superoperator,
    ValidationError,
    evolve_observable,
    hermitian_eig,
    superop_c,
    superop_q,
)
from .moments import (
    MomentTable,
    calibrate_gaussian_noise,
    cauchy_schwarz_check,
    combine_independent,
    cumulants_to_moments,
    expectation_of_polynomial,
    moment_matrix,
    moments_of_quasi,
    moments_to_cumulants,
    psd_check,
)
from .noise import (
    ConvolvedDensity,
    NoiseModel,
    PositivityReport,
    delta_correlated_failure,
    density_eval,
    long_sequence_failure,
    noise_floor_estimate,
    positivity_decide,
)
from .quasiprob import MemoryKernel, QuasiDistribution, Schedule, marginalize, q_correlator, quasi_distribution, spectral_delta
from .weakmeas import BranchMixture, ExtrapolationReport, joint_moments, kraus_step, weak_limit

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
