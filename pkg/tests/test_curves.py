import math

import numpy as np
import pytest

from stacksurv import curves
from stacksurv.data import IntervalObservation, StudyDataset
from stacksurv.loo import StackingWeights
from stacksurv.posterior import PosteriorDraws


def _dataset(scale=1.0):
    return StudyDataset(
        (
            IntervalObservation("A", 0.0, 0.5 * scale),
            IntervalObservation("A", 0.5 * scale, 1.0 * scale),
            IntervalObservation("B", 0.25 * scale, 1.0 * scale),
        )
    ).normalize()


def _degenerate_draws(family, b0, b, z, lam, s=400):
    """All posterior mass at one point: curve oracles become analytic."""
    row = np.concatenate([[b0], np.atleast_1d(b), [z, lam]])
    return PosteriorDraws(
        family=family,
        params_by_chain=np.tile(row, (1, s, 1)),
        loglik=np.zeros((s, 1)),
        diagnostics={},
    )


def _spread_draws(family, rng, j=2, s=400):
    b0 = rng.normal(0.3, 0.1, size=s)
    b = rng.normal(0.0, 0.15, size=(s, j))
    z = rng.uniform(0.05, 0.3, size=s)
    lam = rng.uniform(1.5, 2.5, size=s)
    params = np.column_stack([b0, b, z, lam])
    return PosteriorDraws(
        family=family,
        params_by_chain=params[None],
        loglik=np.zeros((s, 1)),
        diagnostics={},
    )


def test_study_survival_degenerate_matches_family_sf():
    from stacksurv import families

    ds = _dataset()
    b0, bj, lam = 0.4, np.array([0.2, -0.1]), 2.0
    draws = _degenerate_draws("weibull", b0, bj, 0.1, lam)
    grid = np.linspace(0.05, 1.5, 30)
    curve = curves.study_survival([draws], np.array([1.0]), "B", grid, ds)
    mu = math.exp(-(b0 + bj[1]))
    expected = families.sf("weibull", mu, lam, grid)
    assert curve.mean_survival == pytest.approx(expected, abs=1e-12)
    assert curve.lower == pytest.approx(expected, abs=1e-12)
    assert curve.upper == pytest.approx(expected, abs=1e-12)


def test_study_survival_validates_inputs():
    ds = _dataset()
    draws = _degenerate_draws("weibull", 0.3, np.zeros(2), 0.1, 2.0)
    with pytest.raises(ValueError, match="unknown study"):
        curves.study_survival([draws], np.array([1.0]), "Z", np.linspace(0.1, 1, 5), ds)
    with pytest.raises(ValueError, match="increasing"):
        curves.study_survival([draws], np.array([1.0]), "A", np.array([1.0, 0.5]), ds)


def test_curves_monotone_and_banded():
    rng = np.random.default_rng(1)
    ds = _dataset()
    draws = [_spread_draws("weibull", rng), _spread_draws("loglogistic", rng)]
    w = np.array([0.6, 0.4])
    grid = np.linspace(0.02, 2.5, 60)
    for curve in (
        curves.study_survival(draws, w, "A", grid, ds, rng=np.random.default_rng(2)),
        curves.population_survival(draws, w, grid, ds, np.random.default_rng(3)),
    ):
        assert np.all(np.diff(curve.mean_survival) <= 1e-12)
        assert np.all(curve.lower <= curve.mean_survival + 1e-12)
        assert np.all(curve.upper >= curve.mean_survival - 1e-12)
        assert np.all((curve.mean_survival >= 0) & (curve.mean_survival <= 1))


def test_population_survival_brute_force_oracle():
    """Composite MC agrees with direct integration of the frailty mixture."""
    b0, z, lam = 0.3, 0.09, 2.0
    ds = _dataset()
    draws = _degenerate_draws("weibull", b0, np.zeros(2), z, lam)
    grid = np.linspace(0.05, 1.5, 25)
    curve = curves.population_survival(
        [draws], np.array([1.0]), grid, ds, np.random.default_rng(4),
        n_composite=100000,
    )
    rng = np.random.default_rng(5)
    b_star = rng.normal(b0, math.sqrt(z), size=500000)
    mu = np.exp(-(b0 + b_star))
    brute = np.exp(-np.power(grid[None, :] / mu[:, None], lam)).mean(axis=0)
    assert np.max(np.abs(curve.mean_survival - brute)) < 0.01


def test_ed_quantile_degenerate_weibull_is_exact():
    from stacksurv import families

    ds = _dataset()
    b0, lam = 0.4, 2.0
    draws = _degenerate_draws("weibull", b0, np.zeros(2), 1e-12, lam)
    grid = np.exp(np.linspace(np.log(0.001), np.log(3.0), 300))
    curve = curves.population_survival(
        [draws], np.array([1.0]), grid, ds, np.random.default_rng(6), n_composite=2000
    )
    mu = math.exp(-2 * b0)  # b* ~ N(b0, ~0), so eta = 2 b0
    for y in (0.01, 0.05, 0.10):
        est = curves.ed_quantile(curve, y)
        expected = families.quantile("weibull", mu, lam, y)
        assert est.dose_mean == pytest.approx(expected, rel=1e-6)
        assert est.dose_ci[0] <= est.dose_mean <= est.dose_ci[1]
    est01, est05, est10 = (curves.ed_quantile(curve, y) for y in (0.01, 0.05, 0.10))
    assert est01.dose_mean <= est05.dose_mean <= est10.dose_mean


def test_ed_quantile_unbracketed_raises():
    ds = _dataset()
    draws = _degenerate_draws("weibull", 0.4, np.zeros(2), 0.05, 2.0)
    grid = np.linspace(0.5, 1.5, 20)  # survival at 0.5 is already below 0.99
    curve = curves.population_survival(
        [draws], np.array([1.0]), grid, ds, np.random.default_rng(7), n_composite=1000
    )
    with pytest.raises(ValueError, match="widen the grid"):
        curves.ed_quantile(curve, 0.001)
    with pytest.raises(ValueError):
        curves.ed_quantile(curve, 0.0)


def test_dose_scale_equivariance():
    """A x1000 unit change moves curves and EDs by exactly the unit factor."""
    rng_params = np.random.default_rng(8)
    draws = [_spread_draws("weibull", rng_params)]
    w = np.array([1.0])
    grid = np.linspace(0.02, 2.0, 40)

    ds1 = _dataset(scale=1.0)
    ds2 = _dataset(scale=1000.0)
    assert ds2.scale_factor == pytest.approx(1000.0 * ds1.scale_factor)

    c1 = curves.population_survival(draws, w, grid, ds1, np.random.default_rng(9))
    c2 = curves.population_survival(draws, w, 1000.0 * grid, ds2, np.random.default_rng(9))
    assert c2.mean_survival == pytest.approx(c1.mean_survival, abs=1e-12)

    e1 = curves.ed_quantile(c1, 0.05)
    e2 = curves.ed_quantile(c2, 0.05)
    assert e2.dose_mean / e1.dose_mean == pytest.approx(1000.0, rel=1e-9)
    assert e2.dose_ci[0] / e1.dose_ci[0] == pytest.approx(1000.0, rel=1e-9)


def test_default_grid_spans_predictive():
    rng = np.random.default_rng(10)
    draws = [_spread_draws("weibull", rng)]
    ds = _dataset()
    grid = curves.default_grid(draws, np.array([1.0]), ds, np.random.default_rng(11))
    assert len(grid) == 200
    assert np.all(np.diff(grid) > 0)
    # log spacing
    ratios = np.diff(np.log(grid))
    assert ratios == pytest.approx(np.full(199, ratios[0]), rel=1e-8)
    # the grid must bracket the central EDs
    curve = curves.population_survival(draws, np.array([1.0]), grid, ds,
                                       np.random.default_rng(12))
    for y in (0.01, 0.05, 0.10, 0.5):
        curves.ed_quantile(curve, y)  # should not raise


def test_export_csv(tmp_path):
    ds = _dataset()
    draws = _degenerate_draws("weibull", 0.3, np.zeros(2), 0.05, 2.0)
    grid = np.linspace(0.1, 1.0, 10)
    curve = curves.population_survival(
        [draws], np.array([1.0]), grid, ds, np.random.default_rng(13), n_composite=500
    )
    path = tmp_path / "curve.csv"
    curve.export_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "dose,mean_survival,lower,upper"
    assert len(lines) == 11
    first = [float(x) for x in lines[1].split(",")]
    assert first[0] == pytest.approx(0.1)


def test_weights_object_accepted():
    ds = _dataset()
    draws = _degenerate_draws("weibull", 0.3, np.zeros(2), 0.05, 2.0)
    w = StackingWeights(w=np.array([1.0]), objective=0.0, per_model_elpd=np.array([0.0]))
    grid = np.linspace(0.1, 1.0, 10)
    c1 = curves.population_survival([draws], w, grid, ds, np.random.default_rng(14))
    c2 = curves.population_survival([draws], np.array([1.0]), grid, ds,
                                    np.random.default_rng(14))
    assert np.array_equal(c1.mean_survival, c2.mean_survival)
