"""Simulation study: mixture truths, multi-center data generation, MSE ratios.

Two data-generating truths, neither inside the fitted model suite:

    F1 = 0.7 * Weibull(mu_w, 10) + 0.3 * InvGauss(mu_ig, 0.25)
    F2 = 0.5 * InvGauss(mu_ig, 0.25) + 0.5 * logSkewT(mu_st, 1, 3)

InvGauss(mu, 0.25) is the inverse-Gaussian with mean mu and variance 0.25
(shape mu^3 / 0.25);
logSkewT(mu, 1, 3) exponentiates an Azzalini skew-t draw with center mu,
dispersion 1, skew parameter 3 and 3 degrees of freedom.
Center effects multiply the component locations log-normally (log-sd 0.25,
component log-means 1 / 7 / -0.8 for Weibull, inverse-Gaussian, skew-T).
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import curves
from .data import IntervalObservation, StudyDataset
from .loo import StackingWeights
from .pipeline import fit_models, stacked_population_eds
from .sampler import SamplerConfig

__all__ = ["TruthSpec", "StudyDesignSpec", "WEIBULL_IG", "IG_SKEWT",
           "draw_truth_sample", "truth_cdf", "generate_study_data",
           "true_population_eds", "run_mse_study"]

CENTER_LOG_SD = 0.25
COMPONENT_LOG_MEANS = {"weibull": 1.0, "invgauss": 7.0, "logskewt": -0.8}
IG_VARIANCE = 0.25
SKEW_ALPHA = 3.0
SKEW_DOF = 3.0
_CHI2_NODES = None


def _ig_shape(mu):
    # inverse-Gaussian with mean mu and variance v has shape mu^3 / v
    return np.asarray(mu, float) ** 3 / IG_VARIANCE


def _skewt_cdf(x, loc):
    """Azzalini skew-t CDF: X = loc + Z / sqrt(W), Z ~ SN(alpha),
    W ~ chi2(dof)/dof, integrated over W by a quantile-midpoint rule."""
    global _CHI2_NODES
    if _CHI2_NODES is None:
        q = (np.arange(512) + 0.5) / 512.0
        _CHI2_NODES = np.sqrt(stats.chi2.ppf(q, SKEW_DOF) / SKEW_DOF)
    x = np.asarray(x, float)
    z = (x[..., None] - loc) * _CHI2_NODES
    return stats.skewnorm.cdf(z, SKEW_ALPHA).mean(axis=-1)


def _skewt_rvs(loc, rng, n):
    z = stats.skewnorm.rvs(SKEW_ALPHA, size=n, random_state=rng)
    w = rng.chisquare(SKEW_DOF, size=n) / SKEW_DOF
    return loc + z / np.sqrt(w)


@dataclass(frozen=True)
class TruthSpec:
    kind: str
    components: tuple   # component names, in order
    weights: tuple

    def __post_init__(self):
        if len(self.components) != len(self.weights):
            raise ValueError("components and weights must align")
        if abs(sum(self.weights) - 1.0) > 1e-12 or min(self.weights) < 0:
            raise ValueError("weights must form a simplex vector")


WEIBULL_IG = TruthSpec("weibull_ig", ("weibull", "invgauss"), (0.7, 0.3))
IG_SKEWT = TruthSpec("ig_skewt", ("invgauss", "logskewt"), (0.5, 0.5))


@dataclass(frozen=True)
class StudyDesignSpec:
    n_centers: int = 5
    subjects_mean: float = 10.0
    n_doses: int = 10
    dose_log_mean: float = 1.0
    dose_log_sd: float = 1.4
    dose_shift: float = 0.75
    replications: int = 50

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")


def _component_cdf(name, mu, t):
    t = np.asarray(t, float)
    if name == "weibull":
        return np.where(t > 0, -np.expm1(-np.power(np.maximum(t, 1e-300) / mu, 10.0)), 0.0)
    if name == "invgauss":
        lam = _ig_shape(mu)
        return np.where(t > 0, stats.invgauss.cdf(np.maximum(t, 1e-300) / lam,
                                                  mu / lam), 0.0)
    if name == "logskewt":
        return np.where(t > 0, _skewt_cdf(np.log(np.maximum(t, 1e-300)), mu), 0.0)
    raise ValueError("unknown truth component %r" % name)


def _component_sample(name, mu, rng, n):
    if name == "weibull":
        return mu * np.power(-np.log1p(-rng.uniform(size=n)), 0.1)
    if name == "invgauss":
        lam = _ig_shape(mu)
        return stats.invgauss.rvs(mu / lam, scale=lam, size=n, random_state=rng)
    if name == "logskewt":
        return np.exp(_skewt_rvs(mu, rng, n))
    raise ValueError("unknown truth component %r" % name)


def draw_truth_sample(spec, mu_by_component, rng, n=1):
    """Sample n failure times from the mixture truth at the given locations."""
    comp_idx = rng.choice(len(spec.components), size=n, p=spec.weights)
    out = np.empty(n)
    for c, name in enumerate(spec.components):
        mask = comp_idx == c
        if np.any(mask):
            out[mask] = _component_sample(name, mu_by_component[name], rng, int(mask.sum()))
    return out


def truth_cdf(spec, mu_by_component, t):
    """Analytic mixture CDF at fixed component locations."""
    acc = 0.0
    for w, name in zip(spec.weights, spec.components):
        acc = acc + w * _component_cdf(name, mu_by_component[name], t)
    return acc


def _draw_center_mus(spec, rng):
    return {
        name: math.exp(rng.normal(COMPONENT_LOG_MEANS[name], CENTER_LOG_SD))
        for name in spec.components
    }


def generate_study_data(design, truth, rng):
    """Interval-censored multi-center dataset from the mixture truth."""
    observations = []
    for j in range(design.n_centers):
        mus = _draw_center_mus(truth, rng)
        n_subj = 0
        while n_subj == 0:  # an empty center is meaningless; redraw
            n_subj = int(rng.poisson(design.subjects_mean))
        doses = np.sort(
            np.exp(rng.normal(design.dose_log_mean, design.dose_log_sd, design.n_doses))
            + design.dose_shift
        )
        times = draw_truth_sample(truth, mus, rng, n_subj)
        for t in times:
            k = int(np.searchsorted(doses, t))
            t1 = 0.0 if k == 0 else float(doses[k - 1])
            t2 = math.inf if k == design.n_doses else float(doses[k])
            observations.append(IntervalObservation("C%d" % (j + 1), t1, t2))
    return StudyDataset(tuple(observations))


def true_population_eds(truth, ed_targets, rng, n=10**6):
    """Monte Carlo EDy of the truth marginalized over the center effects."""
    comp_idx = rng.choice(len(truth.components), size=n, p=truth.weights)
    samples = np.empty(n)
    for c, name in enumerate(truth.components):
        mask = comp_idx == c
        k = int(mask.sum())
        if k == 0:
            continue
        mus = np.exp(rng.normal(COMPONENT_LOG_MEANS[name], CENTER_LOG_SD, k))
        if name == "weibull":
            samples[mask] = mus * np.power(-np.log1p(-rng.uniform(size=k)), 0.1)
        elif name == "invgauss":
            lam = _ig_shape(mus)
            samples[mask] = stats.invgauss.rvs(mus / lam, scale=lam,
                                               size=k, random_state=rng)
        else:
            samples[mask] = np.exp(_skewt_rvs(mus, rng, k))
    return {y: float(np.quantile(samples, y)) for y in ed_targets}


@dataclass
class MseStudyResult:
    truth: str
    ed_targets: tuple
    true_eds: dict
    ratios: dict                 # y -> MSE(stacked) / MSE(weibull)
    ratio_ci: dict               # y -> bootstrap (lo, hi)
    stacked_mse: dict
    weibull_mse: dict
    n_completed: int
    n_excluded: int
    exclusions: list = field(default_factory=list)
    per_replication: list = field(default_factory=list)

    def to_rows(self):
        rows = []
        for y in self.ed_targets:
            rows.append(
                dict(
                    failure_probability=y,
                    mse_ratio=self.ratios[y],
                    ci_low=self.ratio_ci[y][0],
                    ci_high=self.ratio_ci[y][1],
                    stacked_mse=self.stacked_mse[y],
                    weibull_mse=self.weibull_mse[y],
                )
            )
        return rows


def _fit_and_eds(data, family_names, cfg, ed_targets, rng, rhat_exclude):
    fit = fit_models(data, family_names, cfg)
    worst = 0.0
    for d in fit.draws:
        rhat = d.diagnostics.get("rhat")
        if rhat is not None and np.all(np.isfinite(rhat)):
            worst = max(worst, float(np.max(rhat)))
        if d.diagnostics.get("divergence_warning"):
            raise _ConvergenceFailure("excess divergences in %s" % d.family)
    if worst > rhat_exclude:
        raise _ConvergenceFailure("max split R-hat %.3f > %.3f" % (worst, rhat_exclude))
    _, eds = stacked_population_eds(fit, ed_targets, rng, n_composite=2000)
    stacked = {y: eds[y].dose_mean for y in ed_targets}

    # single Weibull random-effects comparator reuses the Weibull fit
    wi = fit.families.index("weibull")
    w_only = StackingWeights(
        w=np.array([1.0]), objective=0.0,
        per_model_elpd=np.array([fit.loos[wi].elpd_total / fit.dataset.n]),
    )
    grid = curves.default_grid([fit.draws[wi]], w_only, fit.dataset, rng)
    curve = curves.population_survival(
        [fit.draws[wi]], w_only, grid, fit.dataset, rng, n_composite=2000
    )
    weib = {y: curves.ed_quantile(curve, y).dose_mean for y in ed_targets}
    return stacked, weib


class _ConvergenceFailure(RuntimeError):
    pass


def run_mse_study(design, truth, cfg=None, seed=0, ed_targets=(0.01, 0.05, 0.10),
                  family_names=None, rhat_exclude=1.05, n_bootstrap=2000,
                  progress=None):
    """Replicate generate -> fit (stacked and Weibull-only) -> squared ED errors.

    Returns the per-target ratio mean-SE(stacked) / mean-SE(Weibull) with a
    percentile bootstrap interval over replications.  Replications whose
    samplers fail convergence screening (split R-hat above rhat_exclude or
    a divergence warning) or whose ED is not bracketed are excluded and
    counted.
    """
    if design.replications < 2:
        raise ValueError("need at least 2 replications")
    cfg = cfg or SamplerConfig(chains=2, warmup=500, samples=500)
    root = np.random.SeedSequence(seed)
    truth_seq, boot_seq, *rep_seqs = root.spawn(2 + design.replications)
    true_eds = true_population_eds(truth, ed_targets, np.random.default_rng(truth_seq))

    se_stacked = {y: [] for y in ed_targets}
    se_weibull = {y: [] for y in ed_targets}
    exclusions = []
    per_rep = []
    for r, seq in enumerate(rep_seqs):
        rng = np.random.default_rng(seq)
        data = generate_study_data(design, truth, rng)
        rep_cfg = SamplerConfig(
            chains=cfg.chains, warmup=cfg.warmup, samples=cfg.samples,
            target_accept=cfg.target_accept, max_tree_depth=cfg.max_tree_depth,
            seed=seed * 100003 + r,
        )
        try:
            stacked, weib = _fit_and_eds(
                data, family_names, rep_cfg, ed_targets, rng, rhat_exclude
            )
        except (_ConvergenceFailure, ValueError) as exc:
            exclusions.append("replication %d: %s" % (r, exc))
            continue
        for y in ed_targets:
            se_stacked[y].append((stacked[y] - true_eds[y]) ** 2)
            se_weibull[y].append((weib[y] - true_eds[y]) ** 2)
        per_rep.append(dict(replication=r, stacked=stacked, weibull=weib))
        if progress is not None:
            progress(r, design.replications)

    n_done = len(per_rep)
    if n_done < 2:
        raise RuntimeError("fewer than 2 replications completed; cannot form ratios")
    ratios, cis, mse_s, mse_w = {}, {}, {}, {}
    brng = np.random.default_rng(boot_seq)
    for y in ed_targets:
        s = np.asarray(se_stacked[y])
        w = np.asarray(se_weibull[y])
        mse_s[y] = float(s.mean())
        mse_w[y] = float(w.mean())
        ratios[y] = mse_s[y] / mse_w[y]
        idx = brng.integers(0, n_done, size=(n_bootstrap, n_done))
        boot = s[idx].mean(axis=1) / w[idx].mean(axis=1)
        cis[y] = (float(np.quantile(boot, 0.025)), float(np.quantile(boot, 0.975)))
    return MseStudyResult(
        truth=truth.kind,
        ed_targets=tuple(ed_targets),
        true_eds=true_eds,
        ratios=ratios,
        ratio_ci=cis,
        stacked_mse=mse_s,
        weibull_mse=mse_w,
        n_completed=n_done,
        n_excluded=len(exclusions),
        exclusions=exclusions,
        per_replication=per_rep,
    )
