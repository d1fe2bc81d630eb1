"""Adaptive estimation of a parameter set from anonymized (shuffled) observations.

Submodules
----------
symcore   permutation-invariant transforms and their inversion
simgen    simulation of shuffled linear observations
filters   online estimators (symmetric-transform LMS, baselines, EM)
analysis  asymptotic covariance, anonymity and tracking analysis
cli       command-line runner
"""

from .errors import ConfigError, Diverged, IllConditioned, RepeatedRoot, SymLMSError
from .filters import MODES, FilterConfig, FilterRun, run_filter, run_filters
from .simgen import (
    CategoricalIID,
    DiscretePMF,
    Gaussian,
    HyperChain,
    Laplacian,
    MarkovPerm,
    Schedule,
    SystemSpec,
    UniformIID,
    generate_trajectory,
)
from .symcore import (
    ParameterSet,
    elementary_convolution,
    invert_scalar,
    invert_vector,
    monomial_transform,
    set_distance,
)

__version__ = "0.1.0"

__all__ = [
    "SymLMSError",
    "ConfigError",
    "Diverged",
    "IllConditioned",
    "RepeatedRoot",
    "MODES",
    "FilterConfig",
    "FilterRun",
    "run_filter",
    "run_filters",
    "Gaussian",
    "Laplacian",
    "DiscretePMF",
    "UniformIID",
    "CategoricalIID",
    "MarkovPerm",
    "HyperChain",
    "Schedule",
    "SystemSpec",
    "generate_trajectory",
    "ParameterSet",
    "elementary_convolution",
    "monomial_transform",
    "invert_scalar",
    "invert_vector",
    "set_distance",
]
