"""PSIS-LOO pointwise predictive densities and stacking weights.

psis_loo smooths the leave-one-out importance ratios of each observation by
replacing the largest ceil(min(0.2*S, 3*sqrt(S))) ratios with quantiles of a
generalized Pareto distribution fitted to the tail excesses
(probability-weighted-moments fit), truncated at the raw maximum.

stack maximizes the mean log score of the weighted mixture of LOO
predictive densities over the simplex with exponentiated-gradient ascent.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

__all__ = ["LooResult", "StackingWeights", "fit_gpd_pwm", "psis_loo", "stack"]

KHAT_WARN = 0.7


@dataclass
class LooResult:
    elpd_pointwise: np.ndarray
    k_hat: np.ndarray
    warnings: list = field(default_factory=list)

    @property
    def elpd_total(self):
        return float(np.sum(self.elpd_pointwise))

    @property
    def n(self):
        return len(self.elpd_pointwise)


@dataclass
class StackingWeights:
    w: np.ndarray
    objective: float
    per_model_elpd: np.ndarray
    iterations: int = 0


def fit_gpd_pwm(x):
    """Probability-weighted-moments fit of the generalized Pareto distribution.

    x are exceedances above the threshold (positive, any order).  Returns
    (k, sigma) for F(y) = 1 - (1 + k*y/sigma)^(-1/k), exponential at k=0.
    """
    x = np.sort(np.asarray(x, float))
    n = len(x)
    if n < 2:
        return float("nan"), float("nan")
    a0 = x.mean()
    a1 = float(np.sum((n - np.arange(1, n + 1)) * x)) / (n * (n - 1))
    denom = a0 - 2.0 * a1
    if denom <= 0 or a0 <= 0:
        return float("nan"), float("nan")
    k = 2.0 - a0 / denom
    sigma = 2.0 * a0 * a1 / denom
    return k, sigma


def _gpd_quantile(p, k, sigma):
    if abs(k) < 1e-12:
        return -sigma * np.log1p(-p)
    return sigma / k * (np.power(1.0 - p, -k) - 1.0)


def psis_smooth(log_ratios):
    """Pareto-smooth one vector of log importance ratios.

    Returns (smoothed log weights, k_hat); k_hat is NaN when the tail is
    degenerate (e.g. constant ratios), in which case the input is returned
    unchanged.
    """
    lr = np.asarray(log_ratios, float)
    s = len(lr)
    m_tail = int(math.ceil(min(0.2 * s, 3.0 * math.sqrt(s))))
    if m_tail < 5 or not np.all(np.isfinite(lr)):
        return lr, float("nan")
    shift = lr.max()
    r = np.exp(lr - shift)
    order = np.argsort(r)
    tail_idx = order[-m_tail:]
    cutoff = r[order[-m_tail - 1]]
    excess = r[tail_idx] - cutoff
    if np.max(excess) <= 0:
        return lr, float("nan")
    k, sigma = fit_gpd_pwm(excess)
    if not np.isfinite(k):
        return lr, float("nan")
    probs = (np.arange(1, m_tail + 1) - 0.5) / m_tail
    smoothed = cutoff + _gpd_quantile(probs, k, sigma)
    smoothed = np.minimum(smoothed, r.max())
    out = r.copy()
    # tail order statistics replaced in ascending order
    out[tail_idx[np.argsort(r[tail_idx], kind="stable")]] = np.sort(smoothed)
    with np.errstate(divide="ignore"):
        return np.log(out) + shift, float(k)


def psis_loo(loglik):
    """PSIS-LOO from an S x n pointwise log-likelihood matrix."""
    loglik = np.asarray(loglik, float)
    if loglik.ndim != 2:
        raise ValueError("loglik must be an S x n matrix")
    s, n = loglik.shape
    elpd = np.empty(n)
    khat = np.empty(n)
    warnings = []
    for i in range(n):
        col = loglik[:, i]
        if np.all(np.isneginf(col)):
            raise ValueError(
                "observation %d is impossible under every posterior draw" % i
            )
        lw, k = psis_smooth(-col)
        khat[i] = k
        if np.isfinite(k) and k > KHAT_WARN:
            warnings.append("observation %d: k_hat %.2f exceeds %.1f" % (i, k, KHAT_WARN))
        # log of the self-normalized importance-weighted predictive density
        elpd[i] = logsumexp(lw + col) - logsumexp(lw)
    return LooResult(elpd_pointwise=elpd, k_hat=khat, warnings=warnings)


def _objective_grad(lpd, w):
    """Mean log score of the mixture and its gradient; lpd is n x M."""
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    a = lpd + logw
    shift = a.max(axis=1, keepdims=True)
    mix = np.exp(a - shift)
    total = mix.sum(axis=1)
    f = float(np.mean(np.log(total) + shift[:, 0]))
    # d f / d w_m = mean_i p_mi / sum_m w_m p_mi
    grad = np.mean(np.exp(lpd - shift) / total[:, None], axis=0)
    return f, grad


def stack(loos, tol=1e-10, max_iter=100000):
    """Simplex weights maximizing the stacked LOO log score.

    Exponentiated-gradient ascent from the uniform initialization with
    backtracking; stops when the KKT residual max_m g_m - w.g drops below
    tol (relative to the gradient scale) or after max_iter iterations.
    """
    if len(loos) == 0:
        raise ValueError("need at least one model")
    n = loos[0].n
    for l in loos:
        if l.n != n:
            raise ValueError("all LooResults must cover the same observations")
    m = len(loos)
    per_model = np.array([l.elpd_total / n for l in loos])
    if m == 1:
        return StackingWeights(
            w=np.array([1.0]), objective=float(per_model[0]), per_model_elpd=per_model
        )
    lpd = np.column_stack([l.elpd_pointwise for l in loos])
    w = np.full(m, 1.0 / m)
    f, g = _objective_grad(lpd, w)
    step = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        residual = float(np.max(g) - np.dot(w, g))
        if residual <= tol * max(1.0, float(np.max(np.abs(g)))):
            break
        while True:
            w_new = w * np.exp(step * (g - np.max(g)))
            w_new /= w_new.sum()
            f_new, g_new = _objective_grad(lpd, w_new)
            if f_new >= f or step < 1e-16:
                break
            step *= 0.5
        w, f, g = w_new, f_new, g_new
        step = min(step * 2.0, 1e6)
    return StackingWeights(w=w, objective=f, per_model_elpd=per_model, iterations=it)
