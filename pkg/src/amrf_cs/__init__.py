"""Compressive sensing recovery with an adaptively learned Markov random field prior."""
from .adaptive import (OuterOptions, OuterTrace, adaptive_mrf_recover, fixed_mrf_recover, oracle_estimate,
                       threshold_support, train_fixed_prior)
from .baselines import omp
from .bench import ExperimentConfig, TrialResult, psnr, run_experiment
from .errors import (AmrfError, CapacityError, ConfigError, InvalidBasisError, InvalidDimensionError,
                     NumericError, UndefinedSNRError)
from .mrf import (BoltzmannMachine, Graph, Neighborhood, bm_log_score, learn_pseudolikelihood, map_inference,
                  update_graph)
from .recovery import InnerOptions, RecoveryState, estimate_sparse_signal, latent_cost, woodbury_inverse
from .sensing import NOISELESS, SensingMatrix, add_noise_snr, gen_bernoulli_matrix, measure
from .synthetic import gen_synthetic_structured

__version__ = "0.1.0"

__all__ = [
    "OuterOptions", "OuterTrace", "adaptive_mrf_recover", "fixed_mrf_recover", "oracle_estimate",
    "threshold_support", "train_fixed_prior", "omp", "ExperimentConfig", "TrialResult", "psnr",
    "run_experiment", "AmrfError", "CapacityError", "ConfigError", "InvalidBasisError",
    "InvalidDimensionError", "NumericError", "UndefinedSNRError", "BoltzmannMachine", "Graph",
    "Neighborhood", "bm_log_score", "learn_pseudolikelihood", "map_inference", "update_graph",
    "InnerOptions", "RecoveryState", "estimate_sparse_signal", "latent_cost", "woodbury_inverse",
    "NOISELESS", "SensingMatrix", "add_noise_snr", "gen_bernoulli_matrix", "measure",
    "gen_synthetic_structured",
]
