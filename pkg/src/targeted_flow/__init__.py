"""Conditional sampling from flow-matching models by sequential importance sampling."""

from .flows import MixtureVelocity, Schedule, ScheduleFn, TimeGrid
from .gmm import GaussianMixture, posterior_mixture
from .likelihood import GaussianLikelihood, LikelihoodGuards
from .nested import NestedConfig, run_nested
from .problems import synthetic_problem, toy_problem
from .tftf import ConfigError, TftfConfig, run_tftf

__version__ = "0.1.0"
