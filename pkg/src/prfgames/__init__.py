"""Simulation and verification of publishers' games under proportional ranking."""

from .errors import AbortedRunError, InvalidInputError, SamplingError, UnsupportedOperationError
from .model import (
    Activation,
    DemandDistribution,
    PublishersGame,
    SemiMetric,
    activation_eval,
    distance,
    expected_exposure,
    publishers_welfare,
    rank,
    social_objective,
    users_welfare,
    utility,
    utility_gradient,
)

__version__ = "0.1.0"
