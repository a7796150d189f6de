"""Learning measurement models with unrepresented (impure) latent confounding."""

from .errors import ConfigError, IdentificationError, InputError
from .fit import bic, chi_square, degrees_of_freedom, fit_ml, greedy_bidirected
from .graphs import MeasurementPattern, SingleLatentGraph, TrueDag, UndirectedGraph, d_separated
from .search import DiscoveryConfig, discover, recovery_metrics
from .sem import CovMatrix, DataMatrix, LinearSem, implied_covariance, random_sem, sample, sample_covariance
from .tetrad import PopulationSource, SampleSource

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CovMatrix",
    "DataMatrix",
    "DiscoveryConfig",
    "IdentificationError",
    "InputError",
    "LinearSem",
    "MeasurementPattern",
    "PopulationSource",
    "SampleSource",
    "SingleLatentGraph",
    "TrueDag",
    "UndirectedGraph",
    "bic",
    "chi_square",
    "d_separated",
    "degrees_of_freedom",
    "discover",
    "fit_ml",
    "greedy_bidirected",
    "implied_covariance",
    "random_sem",
    "recovery_metrics",
    "sample",
    "sample_covariance",
]
