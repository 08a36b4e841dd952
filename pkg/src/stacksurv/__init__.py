"""Bayesian stacked survival regression for interval-censored dose data."""

__version__ = "0.1.0"

from . import families, loo, curves  # noqa: F401
from .data import IntervalObservation, StudyDataset, load_csv, write_csv  # noqa: F401
from .posterior import LogPosterior, ParamVector, PosteriorDraws  # noqa: F401
from .sampler import SamplerConfig, sample_posterior, check_convergence  # noqa: F401
from .loo import psis_loo, stack  # noqa: F401
from .curves import study_survival, population_survival, ed_quantile, default_grid  # noqa: F401
