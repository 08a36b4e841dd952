import math

import numpy as np
import pytest
from scipy import stats

from stacksurv.sampler import SamplerConfig
from stacksurv.simulate import (
    IG_SKEWT,
    WEIBULL_IG,
    StudyDesignSpec,
    TruthSpec,
    draw_truth_sample,
    generate_study_data,
    run_mse_study,
    true_population_eds,
    truth_cdf,
)


def test_truth_spec_validation():
    with pytest.raises(ValueError):
        TruthSpec("bad", ("weibull",), (0.7, 0.3))
    with pytest.raises(ValueError):
        TruthSpec("bad", ("weibull", "invgauss"), (0.8, 0.3))
    assert WEIBULL_IG.weights == (0.7, 0.3)
    assert IG_SKEWT.weights == (0.5, 0.5)


def test_design_spec_defaults():
    d = StudyDesignSpec()
    assert (d.n_centers, d.n_doses, d.replications) == (5, 10, 50)
    with pytest.raises(ValueError):
        StudyDesignSpec(replications=0)


@pytest.mark.parametrize("spec", [WEIBULL_IG, IG_SKEWT])
def test_truth_sample_matches_cdf(spec):
    rng = np.random.default_rng(1)
    mus = {"weibull": math.e, "invgauss": math.exp(7.0), "logskewt": math.exp(-0.8)}
    draws = np.sort(draw_truth_sample(spec, mus, rng, n=50000))
    emp = np.arange(1, len(draws) + 1) / len(draws)
    ks = np.max(np.abs(truth_cdf(spec, mus, draws) - emp))
    assert ks < 0.01


def test_truth_cdf_limits():
    mus = {"weibull": 2.0, "invgauss": 3.0}
    assert truth_cdf(WEIBULL_IG, mus, 0.0) == 0.0
    assert truth_cdf(WEIBULL_IG, mus, np.inf) == pytest.approx(1.0)
    grid = np.linspace(0.01, 50, 500)
    vals = truth_cdf(WEIBULL_IG, mus, grid)
    assert np.all(np.diff(vals) >= 0)


def test_mixture_cdf_closed_form():
    # 0.7 * Weibull(mu_w, 10) + 0.3 * InvGauss(mean mu_ig, variance 0.25)
    mus = {"weibull": 2.0, "invgauss": 3.0}
    lam = 3.0 ** 3 / 0.25  # inverse-Gaussian shape for variance 0.25
    for t in (0.5, 1.5, 2.5, 6.0):
        expected = 0.7 * (1 - math.exp(-((t / 2.0) ** 10)))
        expected += 0.3 * stats.invgauss.cdf(t / lam, 3.0 / lam)
        assert truth_cdf(WEIBULL_IG, mus, t) == pytest.approx(expected, rel=1e-12)


def test_invgauss_component_mean():
    rng = np.random.default_rng(2)
    mus = {"invgauss": 3.0, "weibull": 3.0}
    spec = TruthSpec("ig_only", ("invgauss",), (1.0,))
    draws = draw_truth_sample(spec, mus, rng, n=200000)
    # InvGauss(mu, shape) parameterized to have mean mu
    assert draws.mean() == pytest.approx(3.0, rel=0.05)


def test_generate_study_data_structure():
    design = StudyDesignSpec(n_centers=4, subjects_mean=8.0)
    data = generate_study_data(design, WEIBULL_IG, np.random.default_rng(3))
    assert data.n_studies == 4
    assert set(data.studies) == {"C1", "C2", "C3", "C4"}
    t1, t2 = data.endpoints()
    assert np.all(t1 >= 0)
    assert np.all(t2 > t1)
    # doses are shifted by 0.75, so no finite endpoint falls below it
    finite = t2[np.isfinite(t2)]
    assert np.all(finite > design.dose_shift)
    assert np.all(t1[t1 > 0] > design.dose_shift)
    assert min(data.n_per_study.values()) >= 1


def test_generate_study_data_deterministic():
    design = StudyDesignSpec(n_centers=3)
    d1 = generate_study_data(design, IG_SKEWT, np.random.default_rng(4))
    d2 = generate_study_data(design, IG_SKEWT, np.random.default_rng(4))
    assert d1.observations == d2.observations


def test_true_population_eds_monotone_and_stable():
    rng = np.random.default_rng(5)
    eds = true_population_eds(IG_SKEWT, (0.01, 0.05, 0.10), rng, n=200000)
    assert eds[0.01] < eds[0.05] < eds[0.10]
    again = true_population_eds(IG_SKEWT, (0.01, 0.05, 0.10),
                                np.random.default_rng(6), n=200000)
    for y in (0.01, 0.05, 0.10):
        assert eds[y] == pytest.approx(again[y], rel=0.05)


def test_true_eds_match_quantile_of_marginal():
    """ED_y is the y-quantile of the center-marginalized failure mixture."""
    rng = np.random.default_rng(7)
    eds = true_population_eds(WEIBULL_IG, (0.5,), rng, n=400000)
    # cross-check via an independent sample
    rng2 = np.random.default_rng(8)
    n = 400000
    comp = rng2.uniform(size=n) < 0.7
    mu_w = np.exp(rng2.normal(1.0, 0.25, n))
    mu_ig = np.exp(rng2.normal(7.0, 0.25, n))
    w_draws = mu_w * np.power(-np.log1p(-rng2.uniform(size=n)), 0.1)
    lam = mu_ig ** 3 / 0.25
    ig_draws = stats.invgauss.rvs(mu_ig / lam, scale=lam, size=n, random_state=rng2)
    samples = np.where(comp, w_draws, ig_draws)
    assert eds[0.5] == pytest.approx(float(np.quantile(samples, 0.5)), rel=0.02)


@pytest.mark.slow
def test_run_mse_study_smoke():
    """Tiny end-to-end run: bookkeeping, determinism of the result row schema."""
    design = StudyDesignSpec(n_centers=3, subjects_mean=8.0, replications=3)
    cfg = SamplerConfig(chains=2, warmup=300, samples=300)
    res = run_mse_study(design, WEIBULL_IG, cfg=cfg, seed=5,
                        ed_targets=(0.05, 0.10), n_bootstrap=200)
    assert res.n_completed + res.n_excluded == 3
    assert res.n_completed >= 2
    for y in (0.05, 0.10):
        assert res.ratios[y] > 0
        lo, hi = res.ratio_ci[y]
        assert lo <= hi
    rows = res.to_rows()
    assert len(rows) == 2
    assert set(rows[0]) == {"failure_probability", "mse_ratio", "ci_low",
                            "ci_high", "stacked_mse", "weibull_mse"}


def test_run_mse_study_validation():
    with pytest.raises(ValueError):
        run_mse_study(StudyDesignSpec(replications=1), WEIBULL_IG)
