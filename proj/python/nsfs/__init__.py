"""Python access to the sampler library: configs, end-to-end runs and a few oracles."""

from ._core import (
    Config,
    ConfigError,
    ConjugateGaussianModel,
    IoError,
    NumericError,
    ParseError,
    ece,
    euler_linear_covariance,
    linear_sde_covariance,
    load_samples,
    run_method,
    sample,
    sample_gaussian_observations,
    train,
)

__all__ = [
    "Config",
    "ConfigError",
    "ConjugateGaussianModel",
    "IoError",
    "NumericError",
    "ParseError",
    "ece",
    "euler_linear_covariance",
    "linear_sde_covariance",
    "load_samples",
    "run_method",
    "sample",
    "sample_gaussian_observations",
    "train",
]
