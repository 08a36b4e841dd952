"""Adaptive Hamiltonian Monte Carlo with dynamic trajectory length (NUTS).

Multinomial sampling over the trajectory, dual-averaging step-size
adaptation, and diagonal mass-matrix estimation in expanding warmup
windows (75 initial / doubling slow windows / 50 terminal iterations).
Divergences are flagged when the Hamiltonian error exceeds 1000.
"""

import math
from dataclasses import dataclass

import numpy as np

from .posterior import LogPosterior, PosteriorDraws

__all__ = ["SamplerConfig", "NutsTarget", "nuts_sample", "sample_posterior",
           "split_rhat", "ess_bulk", "check_convergence"]

DIVERGENCE_THRESHOLD = 1000.0
MAX_INIT_ATTEMPTS = 100


@dataclass
class SamplerConfig:
    chains: int = 4
    warmup: int = 1000
    samples: int = 1000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.warmup < 100 or self.samples < 100:
            raise ValueError("warmup and samples must each be >= 100")
        if not 0.5 <= self.target_accept < 1.0:
            raise ValueError("target_accept must lie in [0.5, 1)")


class NutsTarget:
    """Generic target: a dimension plus value_and_grad(q)."""

    def __init__(self, dim, value_and_grad):
        self.dim = dim
        self.value_and_grad = value_and_grad


def _leapfrog(vag, q, p, grad, eps, inv_mass):
    p_half = p + 0.5 * eps * grad
    q_new = q + eps * inv_mass * p_half
    value, grad_new = vag(q_new)
    p_new = p_half + 0.5 * eps * grad_new
    return q_new, p_new, grad_new, value


def _kinetic(p, inv_mass):
    return 0.5 * float(np.dot(p, inv_mass * p))


def _find_reasonable_epsilon(vag, q, value, grad, inv_mass, rng):
    eps = 1.0
    p = rng.standard_normal(q.shape) / np.sqrt(inv_mass)
    h0 = value - _kinetic(p, inv_mass)
    _, p1, _, v1 = _leapfrog(vag, q, p, grad, eps, inv_mass)
    h1 = v1 - _kinetic(p1, inv_mass) if np.isfinite(v1) else -np.inf
    log_ratio = h1 - h0
    direction = 1.0 if log_ratio > math.log(0.5) else -1.0
    for _ in range(50):
        eps *= 2.0 ** direction
        _, p1, _, v1 = _leapfrog(vag, q, p, grad, eps, inv_mass)
        h1 = v1 - _kinetic(p1, inv_mass) if np.isfinite(v1) else -np.inf
        if direction * (h1 - h0) <= direction * math.log(0.5):
            break
    return eps


class _Tree:
    __slots__ = (
        "q_minus", "p_minus", "grad_minus", "q_plus", "p_plus", "grad_plus",
        "q_prop", "grad_prop", "value_prop", "log_weight", "sum_alpha",
        "n_alpha", "turning", "diverged",
    )


def _build_tree(vag, tree_in, direction, depth, eps, inv_mass, h0, rng):
    """Recursively double the trajectory; multinomial proposal within."""
    if depth == 0:
        if direction == 1:
            q, p, grad = tree_in.q_plus, tree_in.p_plus, tree_in.grad_plus
        else:
            q, p, grad = tree_in.q_minus, tree_in.p_minus, tree_in.grad_minus
        q1, p1, grad1, v1 = _leapfrog(vag, q, p, grad, direction * eps, inv_mass)
        h1 = v1 - _kinetic(p1, inv_mass) if np.isfinite(v1) else -np.inf
        delta_h = h1 - h0
        t = _Tree()
        t.q_minus = t.q_plus = t.q_prop = q1
        t.p_minus = t.p_plus = p1
        t.grad_minus = t.grad_plus = t.grad_prop = grad1
        t.value_prop = v1
        t.log_weight = delta_h
        t.sum_alpha = min(1.0, math.exp(min(delta_h, 0.0)))
        t.n_alpha = 1
        t.diverged = delta_h < -DIVERGENCE_THRESHOLD
        t.turning = t.diverged
        return t

    first = _build_tree(vag, tree_in, direction, depth - 1, eps, inv_mass, h0, rng)
    if first.turning:
        return first
    second = _build_tree(vag, first, direction, depth - 1, eps, inv_mass, h0, rng)

    total = np.logaddexp(first.log_weight, second.log_weight)
    t = _Tree()
    if math.log(rng.uniform()) < second.log_weight - total:
        t.q_prop, t.grad_prop, t.value_prop = second.q_prop, second.grad_prop, second.value_prop
    else:
        t.q_prop, t.grad_prop, t.value_prop = first.q_prop, first.grad_prop, first.value_prop
    t.log_weight = total
    if direction == 1:
        t.q_minus, t.p_minus, t.grad_minus = first.q_minus, first.p_minus, first.grad_minus
        t.q_plus, t.p_plus, t.grad_plus = second.q_plus, second.p_plus, second.grad_plus
    else:
        t.q_minus, t.p_minus, t.grad_minus = second.q_minus, second.p_minus, second.grad_minus
        t.q_plus, t.p_plus, t.grad_plus = first.q_plus, first.p_plus, first.grad_plus
    t.sum_alpha = first.sum_alpha + second.sum_alpha
    t.n_alpha = first.n_alpha + second.n_alpha
    t.diverged = first.diverged or second.diverged
    dq = t.q_plus - t.q_minus
    t.turning = (
        t.diverged
        or second.turning
        or float(np.dot(dq, inv_mass * t.p_minus)) < 0
        or float(np.dot(dq, inv_mass * t.p_plus)) < 0
    )
    return t


def _nuts_step(vag, q, value, grad, eps, inv_mass, max_depth, rng):
    p = rng.standard_normal(q.shape) / np.sqrt(inv_mass)
    h0 = value - _kinetic(p, inv_mass)
    tree = _Tree()
    tree.q_minus = tree.q_plus = q
    tree.p_minus = tree.p_plus = p
    tree.grad_minus = tree.grad_plus = grad
    tree.q_prop, tree.grad_prop, tree.value_prop = q, grad, value
    tree.log_weight = 0.0
    tree.sum_alpha, tree.n_alpha = 0.0, 0
    tree.turning = tree.diverged = False

    diverged = False
    for depth in range(max_depth):
        direction = 1 if rng.uniform() < 0.5 else -1
        sub = _build_tree(vag, tree, direction, depth, eps, inv_mass, h0, rng)
        diverged = diverged or sub.diverged
        tree.sum_alpha += sub.sum_alpha
        tree.n_alpha += sub.n_alpha
        if sub.turning:
            # a turning (or divergent) subtree is discarded entirely
            break
        # biased progressive: favor the new subtree
        if math.log(rng.uniform()) < sub.log_weight - tree.log_weight:
            tree.q_prop, tree.grad_prop = sub.q_prop, sub.grad_prop
            tree.value_prop = sub.value_prop
        tree.log_weight = np.logaddexp(tree.log_weight, sub.log_weight)
        if direction == 1:
            tree.q_plus, tree.p_plus, tree.grad_plus = sub.q_plus, sub.p_plus, sub.grad_plus
        else:
            tree.q_minus, tree.p_minus, tree.grad_minus = sub.q_minus, sub.p_minus, sub.grad_minus
        dq = tree.q_plus - tree.q_minus
        if (
            float(np.dot(dq, inv_mass * tree.p_minus)) < 0
            or float(np.dot(dq, inv_mass * tree.p_plus)) < 0
        ):
            break
    accept_stat = tree.sum_alpha / max(tree.n_alpha, 1)
    return tree.q_prop, tree.value_prop, tree.grad_prop, accept_stat, diverged


class _DualAveraging:
    """Nesterov dual averaging of log step size (gamma=0.05, t0=10, kappa=0.75)."""

    def __init__(self, eps0, target):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.log_eps = math.log(eps0)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.count = 0

    def update(self, accept_stat):
        self.count += 1
        frac = 1.0 / (self.count + 10.0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept_stat)
        self.log_eps = self.mu - math.sqrt(self.count) / 0.05 * self.h_bar
        w = self.count ** -0.75
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar
        return math.exp(self.log_eps)

    def adapted(self):
        return math.exp(self.log_eps_bar)


def _warmup_windows(warmup, init_buffer=75, term_buffer=50, base_window=25):
    """Iteration indices where a slow (mass-matrix) window closes."""
    if warmup < init_buffer + term_buffer + base_window:
        init_buffer = max(1, int(0.15 * warmup))
        term_buffer = max(1, int(0.1 * warmup))
        base_window = warmup - init_buffer - term_buffer
    ends = []
    pos = init_buffer
    size = base_window
    while pos + size < warmup - term_buffer:
        ends.append(pos + size)
        pos += size
        size *= 2
    ends.append(warmup - term_buffer)
    return ends


def nuts_chain(target, q0, warmup, samples, target_accept, max_depth, rng):
    """One chain; returns (draws, divergences, accept_stats, step_size)."""
    vag = target.value_and_grad
    value, grad = vag(q0)
    if not np.isfinite(value):
        raise ValueError("non-finite log density at the chain start")
    q = np.asarray(q0, float)
    inv_mass = np.ones(target.dim)
    eps = _find_reasonable_epsilon(vag, q, value, grad, inv_mass, rng)
    da = _DualAveraging(eps, target_accept)
    window_ends = set(_warmup_windows(warmup))
    window_draws = []

    for it in range(warmup):
        q, value, grad, accept_stat, _ = _nuts_step(
            vag, q, value, grad, eps, inv_mass, max_depth, rng
        )
        eps = da.update(accept_stat)
        window_draws.append(q)
        if (it + 1) in window_ends:
            w = np.asarray(window_draws)
            nw = w.shape[0]
            var = w.var(axis=0, ddof=1) if nw > 1 else np.ones(target.dim)
            # regularize toward unit metric (Stan-style shrinkage)
            var = (nw / (nw + 5.0)) * var + (5.0 / (nw + 5.0)) * 1e-3
            inv_mass = np.maximum(var, 1e-10)
            window_draws = []
            eps = _find_reasonable_epsilon(vag, q, value, grad, inv_mass, rng)
            da = _DualAveraging(eps, target_accept)

    eps = da.adapted()
    draws = np.empty((samples, target.dim))
    divergences = 0
    accept_stats = np.empty(samples)
    for it in range(samples):
        q, value, grad, accept_stat, diverged = _nuts_step(
            vag, q, value, grad, eps, inv_mass, max_depth, rng
        )
        draws[it] = q
        accept_stats[it] = accept_stat
        divergences += int(diverged)
    return draws, divergences, accept_stats, eps


def nuts_sample(target, cfg):
    """Run cfg.chains independent chains; returns (draws (C,S,D), info dict)."""
    seed_seq = np.random.SeedSequence(cfg.seed)
    chain_seeds = seed_seq.spawn(cfg.chains)
    all_draws = np.empty((cfg.chains, cfg.samples, target.dim))
    divergences = []
    step_sizes = []
    for c in range(cfg.chains):
        rng = np.random.default_rng(chain_seeds[c])
        q0 = None
        for _ in range(MAX_INIT_ATTEMPTS):
            cand = rng.uniform(-2.0, 2.0, size=target.dim)
            v, _ = target.value_and_grad(cand)
            if np.isfinite(v):
                q0 = cand
                break
        if q0 is None:
            raise RuntimeError(
                "chain %d: no finite log-posterior found in %d initialization attempts"
                % (c, MAX_INIT_ATTEMPTS)
            )
        draws, ndiv, _, eps = nuts_chain(
            target, q0, cfg.warmup, cfg.samples, cfg.target_accept, cfg.max_tree_depth, rng
        )
        all_draws[c] = draws
        divergences.append(ndiv)
        step_sizes.append(eps)
    info = {"divergences": divergences, "step_sizes": step_sizes}
    total = cfg.chains * cfg.samples
    info["divergence_warning"] = sum(divergences) > 0.1 * total
    return all_draws, info


# ---------------------------------------------------------------------------
# convergence diagnostics
# ---------------------------------------------------------------------------

def _split_chains(draws):
    c, s, d = draws.shape
    half = s // 2
    return np.concatenate([draws[:, :half], draws[:, half : 2 * half]], axis=0)


def split_rhat(draws):
    """Split-R-hat per parameter for draws of shape (chains, samples, dim)."""
    x = _split_chains(np.asarray(draws))
    m, n, d = x.shape
    means = x.mean(axis=1)
    variances = x.var(axis=1, ddof=1)
    w = variances.mean(axis=0)
    b = n * means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * w + b / n
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sqrt(var_plus / w)


def _ess_one(x):
    """ESS of split sequences x (m, n) via Geyer's initial monotone sequence."""
    m, n = x.shape
    means = x.mean(axis=1, keepdims=True)
    centered = x - means
    # per-chain autocovariance by FFT
    nfft = int(2 ** np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(centered, nfft, axis=1)
    acov = np.fft.irfft(f * np.conj(f), nfft, axis=1)[:, :n].real / n
    w = acov[:, 0].mean() * n / (n - 1)
    b = n * x.mean(axis=1).var(ddof=1) if m > 1 else 0.0
    var_plus = (n - 1) / n * w + b / n
    if var_plus <= 0:
        return float("nan")
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer: sum consecutive pairs while positive, enforce monotone decrease
    tau = 0.0
    prev = np.inf
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair < 0:
            break
        pair = min(pair, prev)
        prev = pair
        tau += pair
    tau = max(2.0 * tau - 1.0, 1.0 / (m * n))
    return m * n / tau


def ess_bulk(draws):
    """Bulk effective sample size per parameter, on split chains."""
    x = _split_chains(np.asarray(draws))
    return np.array([_ess_one(x[:, :, j]) for j in range(x.shape[2])])


def check_convergence(draws_by_chain, divergences=None):
    """Split-R-hat, bulk ESS and a pass flag (all R-hat < 1.01, ESS > 400)."""
    if isinstance(draws_by_chain, PosteriorDraws):
        if divergences is None:
            divergences = draws_by_chain.diagnostics.get("divergences")
        draws_by_chain = draws_by_chain.params_by_chain
    draws_by_chain = np.asarray(draws_by_chain)
    c = draws_by_chain.shape[0]
    report = {"chains": c, "divergences": list(divergences or [])}
    if c < 2:
        report["rhat"] = None
        report["ess"] = None
        report["passed"] = False
        report["message"] = "R-hat requires at least 2 chains"
        return report
    rhat = split_rhat(draws_by_chain)
    ess = ess_bulk(draws_by_chain)
    report["rhat"] = rhat
    report["ess"] = ess
    degenerate = bool(np.any(~np.isfinite(rhat)))
    report["degenerate"] = degenerate
    report["passed"] = (
        not degenerate and bool(np.all(rhat < 1.01)) and bool(np.all(ess > 400))
    )
    if degenerate:
        report["message"] = "zero-variance parameter: R-hat undefined"
    return report


def sample_posterior(lp, cfg):
    """Fit one family's LogPosterior with NUTS; returns PosteriorDraws.

    Draws are stored on the constrained scale (b0, b_1..J, z, lam); the
    per-observation log-likelihood matrix is computed from the same draws.
    """
    target = NutsTarget(lp.dim, lp.value_and_grad)
    q_draws, info = nuts_sample(target, cfg)
    c, s, d = q_draws.shape
    constrained = np.empty_like(q_draws)
    for ci in range(c):
        for si in range(s):
            constrained[ci, si] = lp.constrain(q_draws[ci, si]).as_array()
    loglik = lp.pointwise_loglik_matrix(constrained.reshape(c * s, d))
    diagnostics = check_convergence(constrained, info["divergences"])
    diagnostics["divergence_warning"] = info["divergence_warning"]
    diagnostics["step_sizes"] = info["step_sizes"]
    return PosteriorDraws(
        family=lp.family.name,
        params_by_chain=constrained,
        loglik=loglik,
        diagnostics=diagnostics,
    )
