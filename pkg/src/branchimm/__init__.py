"""branchimm: simulation and verification toolkit for birth-death processes
with immigration, on a single site, a finite site set, a periodic lattice,
and in random environments.  An exact event simulator is paired with the
analytic moment curves, invariant distributions, scaling limits and spectral
covariance formulas it is checked against."""

__version__ = "0.1.0"

from .models import (ByPopulationLevel, EnvironmentSpec, FiniteSet,
                     LatticeKernel, MarkovChainEnv, MomentSeries,
                     PopulationState, RateDistribution, RateParams, SingleSite,
                     SiteSpace, SpatialField, Torus, ValidationReport, validate,
                     validate_environment)

__all__ = [
    "ByPopulationLevel", "EnvironmentSpec", "FiniteSet", "LatticeKernel",
    "MarkovChainEnv", "MomentSeries", "PopulationState", "RateDistribution",
    "RateParams", "SingleSite", "SiteSpace", "SpatialField", "Torus",
    "ValidationReport", "validate", "validate_environment", "__version__",
]
