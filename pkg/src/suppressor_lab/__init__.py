"""Closed-form and Monte Carlo feature attributions for a two-feature suppressor model."""

from .analytic import METHODS, Attribution, attribute
from .empirical import DEFAULT_SEED, EstimatorConfig
from .errors import DegeneratePathError, NumericalError, ParameterError, SingularCovarianceError
from .model import BayesLinearRule, GenParams, LabeledDataset, bayes_rule, sample_dataset

__version__ = "0.1.0"

__all__ = [
    "METHODS",
    "Attribution",
    "attribute",
    "DEFAULT_SEED",
    "EstimatorConfig",
    "DegeneratePathError",
    "NumericalError",
    "ParameterError",
    "SingularCovarianceError",
    "BayesLinearRule",
    "GenParams",
    "LabeledDataset",
    "bayes_rule",
    "sample_dataset",
]
