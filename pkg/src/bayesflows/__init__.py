"""Geometric convexity, Wasserstein-type gradient flows and samplers for Bayesian posteriors."""
from . import catalog, errors
from .errors import BayesFlowError, ConfigError, InputError, NumericError
from .functionals import BayesModel
from .geometry import Box, MetricField, PotentialField, drift_lipschitz, lambda_G
from .grid import Grid, GridDensity

__version__ = "0.1.0"

__all__ = ["BayesFlowError", "BayesModel", "Box", "ConfigError", "Grid", "GridDensity",
           "InputError", "MetricField", "NumericError", "PotentialField", "catalog",
           "drift_lipschitz", "errors", "lambda_G", "__version__"]
