"""Stacked posterior-predictive survival curves and eliciting doses.

Per-study curves condition on the fitted study effect; population-average
curves integrate the study random effect out by Monte Carlo, drawing a new
study effect per posterior draw.  Model uncertainty enters the credible
bands by sampling a model index per composite draw with the stacking
weights; EDy values come from a shape-preserving monotone cubic spline of
the survival curve against log dose.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from . import families
from .posterior import PRIORS

__all__ = ["SurvivalCurveEstimate", "EdEstimate", "study_survival",
           "population_survival", "ed_quantile", "default_grid"]


@dataclass
class SurvivalCurveEstimate:
    grid: np.ndarray           # original dose scale
    mean_survival: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    draw_curves: np.ndarray    # composite draws x grid, for ED quantiles
    level: float

    def export_csv(self, path):
        header = "dose,mean_survival,lower,upper"
        table = np.column_stack([self.grid, self.mean_survival, self.lower, self.upper])
        np.savetxt(path, table, delimiter=",", header=header, comments="")


@dataclass
class EdEstimate:
    y: float
    dose_mean: float
    dose_ci: tuple
    level: float
    n_unbracketed: int = 0


def _composite_assignments(weights, n_composite, rng):
    """Model index per composite draw, sampled with the stacking weights."""
    w = np.asarray(weights, float)
    return rng.choice(len(w), size=n_composite, p=w / w.sum())


def _survival_matrix(fam, mu, lam, grid_norm):
    """Survival of each (mu, lam) draw on the grid; shape (draws, grid)."""
    mu = np.asarray(mu, float)
    lam = np.asarray(lam, float)
    out = np.ones((len(mu), len(grid_norm)))
    pos = grid_norm > 0
    out[:, pos] = fam._sf(grid_norm[None, pos], mu[:, None], lam[:, None])
    return out


def _finalize(grid, draw_curves, mean_survival, level):
    alpha = 1.0 - level
    # parametric curves are monotone already; guard against roundoff
    mean_survival = np.minimum.accumulate(np.clip(mean_survival, 0.0, 1.0))
    lower = np.quantile(draw_curves, alpha / 2.0, axis=0)
    upper = np.quantile(draw_curves, 1.0 - alpha / 2.0, axis=0)
    lower = np.minimum(lower, mean_survival)
    upper = np.maximum(upper, mean_survival)
    return SurvivalCurveEstimate(
        grid=np.asarray(grid, float),
        mean_survival=mean_survival,
        lower=lower,
        upper=upper,
        draw_curves=draw_curves,
        level=level,
    )


def study_survival(draws_all, weights, study, grid, dataset, level=0.9,
                   n_composite=4000, rng=None):
    """Stacked conditional survival curve for one study.

    The mean curve is the weight-averaged per-model posterior mean; the
    bands come from composite draws that sample a model per draw.
    """
    if study not in dataset.studies:
        raise ValueError("unknown study %r" % (study,))
    j = dataset.studies.index(study)
    grid = np.asarray(grid, float)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    grid_norm = dataset.normalize_dose(grid)
    rng = rng if rng is not None else np.random.default_rng(0)
    w = np.asarray(weights.w if hasattr(weights, "w") else weights, float)

    per_model = []
    mean_curve = np.zeros(len(grid))
    for m, draws in enumerate(draws_all):
        fam = families.get_family(draws.family)
        p = draws.params
        b0, bj, lam = p[:, 0], p[:, 1 + j], p[:, -1]
        mu, _ = families.link_mu(fam, b0 + bj)
        curves = _survival_matrix(fam, mu, lam, grid_norm)
        per_model.append(curves)
        mean_curve += w[m] * curves.mean(axis=0)

    assign = _composite_assignments(w, n_composite, rng)
    draw_curves = np.empty((n_composite, len(grid)))
    for m in range(len(draws_all)):
        mask = assign == m
        if not np.any(mask):
            continue
        take = rng.integers(0, per_model[m].shape[0], size=int(mask.sum()))
        draw_curves[mask] = per_model[m][take]
    return _finalize(grid, draw_curves, mean_curve, level)


def population_survival(draws_all, weights, grid, dataset, rng, level=0.9,
                        n_composite=10000):
    """Population-average stacked survival curve.

    Every posterior draw of every model is paired with a fresh study effect
    b* ~ N(center, sqrt(z)); the mean curve is the weight-averaged per-model
    mean over those draws, and the bands come from composite draws that
    sample a model per draw with the stacking weights.
    """
    grid = np.asarray(grid, float)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    grid_norm = dataset.normalize_dose(grid)
    w = np.asarray(weights.w if hasattr(weights, "w") else weights, float)

    per_model = []
    mean_curve = np.zeros(len(grid))
    for m, draws in enumerate(draws_all):
        fam = families.get_family(draws.family)
        p = draws.params
        b0, z, lam = p[:, 0], p[:, -2], p[:, -1]
        center = b0 if PRIORS[fam.name]["center"] == "b0" else np.zeros(len(b0))
        b_star = rng.normal(center, np.sqrt(z))
        mu, _ = families.link_mu(fam, b0 + b_star)
        curves = _survival_matrix(fam, mu, lam, grid_norm)
        per_model.append(curves)
        mean_curve += w[m] * curves.mean(axis=0)

    assign = _composite_assignments(w, n_composite, rng)
    draw_curves = np.empty((n_composite, len(grid)))
    for m in range(len(draws_all)):
        mask = assign == m
        if not np.any(mask):
            continue
        take = rng.integers(0, per_model[m].shape[0], size=int(mask.sum()))
        draw_curves[mask] = per_model[m][take]
    return _finalize(grid, draw_curves, mean_curve, level)


def _invert_curve(grid_log, surv, target):
    """Dose (log scale) where the monotone spline of surv crosses target."""
    s = np.minimum.accumulate(surv)
    if not (s[0] >= target >= s[-1]):
        return None
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        spline = PchipInterpolator(grid_log, s, extrapolate=False)
    idx = int(np.searchsorted(-s, -target))
    lo = grid_log[max(idx - 1, 0)]
    hi = grid_log[min(idx, len(grid_log) - 1)]
    if lo == hi:
        return float(lo)
    f_lo, f_hi = float(spline(lo)) - target, float(spline(hi)) - target
    if f_lo == 0.0:
        return float(lo)
    if f_hi == 0.0:
        return float(hi)
    if f_lo * f_hi > 0:  # flat stretch at roundoff level
        return float(0.5 * (lo + hi))
    return brentq(lambda x: float(spline(x)) - target, lo, hi, xtol=1e-14)


def ed_quantile(curve, y, level=None):
    """Eliciting dose at failure fraction y, with a credible interval.

    The mean dose inverts the stacked mean curve at survival 1-y; the
    interval holds the per-composite-draw ED quantiles.  Raises if the mean
    curve does not bracket survival level 1-y (widen the grid).
    """
    if not 0.0 < y < 1.0:
        raise ValueError("y must lie in (0, 1)")
    level = curve.level if level is None else level
    target = 1.0 - y
    grid_log = np.log(curve.grid)
    center = _invert_curve(grid_log, curve.mean_survival, target)
    if center is None:
        raise ValueError(
            "ED%02d is not bracketed by the dose grid [%g, %g]; widen the grid"
            % (round(100 * y), curve.grid[0], curve.grid[-1])
        )
    draws = np.full(curve.draw_curves.shape[0], np.nan)
    for s in range(curve.draw_curves.shape[0]):
        d = _invert_curve(grid_log, curve.draw_curves[s], target)
        if d is not None:
            draws[s] = d
    n_bad = int(np.sum(np.isnan(draws)))
    alpha = 1.0 - level
    if n_bad == len(draws):
        ci = (float("nan"), float("nan"))
    else:
        ci = (
            float(np.exp(np.nanquantile(draws, alpha / 2.0))),
            float(np.exp(np.nanquantile(draws, 1.0 - alpha / 2.0))),
        )
    return EdEstimate(
        y=y,
        dose_mean=float(np.exp(center)),
        dose_ci=ci,
        level=level,
        n_unbracketed=n_bad,
    )


def default_grid(draws_all, weights, dataset, rng, n_points=200,
                 p_low=1e-4, p_high=1.0 - 1e-3, n_probe=1000):
    """Log-spaced dose grid spanning the pooled stacked predictive.

    The endpoints are the p_low / p_high quantiles of the stacked
    population predictive (pooled CDF over a probe of composite draws),
    found by bisection on the log dose and mapped to the original scale.
    """
    w = np.asarray(weights.w if hasattr(weights, "w") else weights, float)
    assign = _composite_assignments(w, n_probe, rng)
    probe = []
    for m, draws in enumerate(draws_all):
        k = int(np.sum(assign == m))
        if k == 0:
            continue
        fam = families.get_family(draws.family)
        p = draws.params
        take = rng.integers(0, p.shape[0], size=k)
        b0, z, lam = p[take, 0], p[take, -2], p[take, -1]
        center = b0 if PRIORS[fam.name]["center"] == "b0" else np.zeros(k)
        b_star = rng.normal(center, np.sqrt(z))
        mu, _ = families.link_mu(fam, b0 + b_star)
        probe.append((fam, mu, lam, k))

    def pooled_cdf(log_t):
        t = math.exp(log_t)
        acc = 0.0
        for fam, mu, lam, k in probe:
            acc += float(np.sum(fam._cdf(t, mu, lam)))
        return acc / n_probe

    def pooled_quantile(p):
        lo, hi = -60.0, 60.0  # log scale, normalized doses
        while pooled_cdf(lo) > p:
            lo -= 30.0
        while pooled_cdf(hi) < p:
            hi += 30.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if pooled_cdf(mid) < p:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    lo = pooled_quantile(p_low)
    hi = max(pooled_quantile(p_high), lo + 1.0)
    grid_norm = np.exp(np.linspace(lo, hi, n_points))
    return dataset.denormalize_dose(grid_norm)
