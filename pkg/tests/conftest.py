import math

import numpy as np
import pytest

from stacksurv import families
from stacksurv.data import IntervalObservation, StudyDataset


def random_params(fam, rng, spread=1.0):
    """A valid (mu, lam) pair for a family."""
    mu = math.exp(rng.normal(0, spread)) if fam.mu_positive else rng.normal(0, spread)
    lam = math.exp(rng.normal(0, 0.5 * spread))
    return mu, lam


def make_weibull_dataset(rng, b0=0.3, z=0.04, lam=2.0, n_studies=5,
                         n_per_study=50, n_doses=8):
    """Interval-censored data simulated from the Weibull random-effects model.

    The dose ladder tops out at 1.0 so normalization is the identity and the
    generating parameters stay interpretable after fitting.
    """
    obs = []
    doses = np.linspace(1.0 / n_doses, 1.0, n_doses)
    for j in range(n_studies):
        bj = rng.normal(b0, math.sqrt(z))
        mu = math.exp(-(b0 + bj))
        times = families.sample("weibull", mu, lam, rng, n_per_study)
        for t in times:
            k = int(np.searchsorted(doses, t))
            t1 = 0.0 if k == 0 else float(doses[k - 1])
            t2 = math.inf if k == n_doses else float(doses[k])
            obs.append(IntervalObservation("S%d" % j, t1, t2))
    return StudyDataset(tuple(obs))


@pytest.fixture(scope="session")
def small_dataset():
    """A small normalized multi-study dataset shared by fast tests."""
    rng = np.random.default_rng(77)
    return make_weibull_dataset(rng, n_studies=4, n_per_study=10).normalize()
