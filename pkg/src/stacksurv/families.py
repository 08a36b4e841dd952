"""Parametric failure time distributions.

Five families, each parameterized by a location ``mu`` and a positive
scale/shape ``lambda``.  All operations are vectorized over ``t`` and (where
useful) over ``mu``.

Note on the generalized Pareto family: we use the Lomax (Pareto type II)
CDF ``F(t) = 1 - (1 + t/mu)^(-lam)``, whose density is
``(lam/mu) * (1 + t/mu)^(-(lam+1))``.
"""

import numpy as np
from scipy.special import expit, log_expit, ndtr, ndtri, log_ndtr

__all__ = [
    "FAMILY_NAMES",
    "get_family",
    "link_mu",
    "cdf",
    "sf",
    "log_pdf",
    "quantile",
    "sample",
    "interval_loglik_grad",
]

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _validate(fam, mu, lam):
    if np.any(np.asarray(lam) <= 0) or not np.all(np.isfinite(np.asarray(lam))):
        raise ValueError("%s: lambda must be positive and finite" % fam.name)
    mu = np.asarray(mu)
    if not np.all(np.isfinite(mu)):
        raise ValueError("%s: mu must be finite" % fam.name)
    if fam.mu_positive and np.any(mu <= 0):
        raise ValueError("%s: mu must be positive" % fam.name)


class _Family:
    """Base class: subclasses implement the kernels for finite positive t."""

    name = ""
    link = "identity"     # eta -> mu map: identity, exp or negexp
    mu_positive = False   # mu enters as a ratio t/mu

    # kernels, t finite and > 0 ------------------------------------------
    def _cdf(self, t, mu, lam):
        raise NotImplementedError

    def _sf(self, t, mu, lam):
        return 1.0 - self._cdf(t, mu, lam)

    def _log_pdf(self, t, mu, lam):
        raise NotImplementedError

    def _quantile(self, p, mu, lam):
        raise NotImplementedError

    def _cdf_grad(self, t, mu, lam):
        """Return (dF/dmu, dF/dlam) at finite positive t."""
        raise NotImplementedError


class Weibull(_Family):
    name = "weibull"
    link = "negexp"
    mu_positive = True

    def _cdf(self, t, mu, lam):
        w = np.minimum(lam * (np.log(t) - np.log(mu)), 700.0)
        return -np.expm1(-np.exp(w))

    def _sf(self, t, mu, lam):
        w = np.minimum(lam * (np.log(t) - np.log(mu)), 700.0)
        return np.exp(-np.exp(w))

    def _log_pdf(self, t, mu, lam):
        d = np.log(t) - np.log(mu)
        return np.log(lam) - np.log(t) + lam * d - np.exp(np.minimum(lam * d, 700.0))

    def _quantile(self, p, mu, lam):
        return mu * np.power(-np.log1p(-p), 1.0 / lam)

    def _cdf_grad(self, t, mu, lam):
        d = np.log(t) - np.log(mu)
        w = np.minimum(lam * d, 700.0)
        # s*u = exp(w - e^w), safe against overflow of u alone
        su = np.exp(w - np.exp(w))
        return -su * lam / mu, su * d


class GeneralizedPareto(_Family):
    name = "gpareto"
    link = "exp"
    mu_positive = True

    def _cdf(self, t, mu, lam):
        return -np.expm1(-lam * np.log1p(t / mu))

    def _sf(self, t, mu, lam):
        return np.exp(-lam * np.log1p(t / mu))

    def _log_pdf(self, t, mu, lam):
        return np.log(lam) - np.log(mu) - (lam + 1.0) * np.log1p(t / mu)

    def _quantile(self, p, mu, lam):
        return mu * np.expm1(-np.log1p(-p) / lam)

    def _cdf_grad(self, t, mu, lam):
        ell = np.log1p(t / mu)
        s = np.exp(-lam * ell)
        return -s * lam * t / (mu * (mu + t)), s * ell


class LogGaussian(_Family):
    name = "loggaussian"
    link = "identity"
    mu_positive = False

    def _cdf(self, t, mu, lam):
        return ndtr((np.log(t) - mu) / lam)

    def _sf(self, t, mu, lam):
        return ndtr(-(np.log(t) - mu) / lam)

    def _log_pdf(self, t, mu, lam):
        z = (np.log(t) - mu) / lam
        return -0.5 * z * z - _LOG_SQRT_2PI - np.log(lam) - np.log(t)

    def _quantile(self, p, mu, lam):
        return np.exp(mu + lam * ndtri(p))

    def _cdf_grad(self, t, mu, lam):
        z = (np.log(t) - mu) / lam
        phi = np.exp(-0.5 * z * z - _LOG_SQRT_2PI)
        return -phi / lam, -phi * z / lam


class LogLogistic(_Family):
    name = "loglogistic"
    link = "negexp"
    mu_positive = True

    def _cdf(self, t, mu, lam):
        return expit(lam * (np.log(t) - np.log(mu)))

    def _sf(self, t, mu, lam):
        return expit(-lam * (np.log(t) - np.log(mu)))

    def _log_pdf(self, t, mu, lam):
        d = np.log(t) - np.log(mu)
        return np.log(lam) - np.log(t) + log_expit(lam * d) + log_expit(-lam * d)

    def _quantile(self, p, mu, lam):
        return mu * np.exp((np.log(p) - np.log1p(-p)) / lam)

    def _cdf_grad(self, t, mu, lam):
        d = np.log(t) - np.log(mu)
        fs = np.exp(log_expit(lam * d) + log_expit(-lam * d))
        return -lam * fs / mu, fs * d


class LogLaplace(_Family):
    name = "loglaplace"
    link = "identity"
    mu_positive = False

    def _cdf(self, t, mu, lam):
        z = (np.log(t) - mu) / lam
        return np.where(z < 0, 0.5 * np.exp(z), 1.0 - 0.5 * np.exp(-np.abs(z)))

    def _sf(self, t, mu, lam):
        z = (np.log(t) - mu) / lam
        return np.where(z < 0, 1.0 - 0.5 * np.exp(z), 0.5 * np.exp(-np.abs(z)))

    def _log_pdf(self, t, mu, lam):
        z = (np.log(t) - mu) / lam
        return -np.abs(z) - np.log(2.0 * lam) - np.log(t)

    def _quantile(self, p, mu, lam):
        q = np.where(p < 0.5, np.log(2.0 * p), -np.log(2.0 * (1.0 - p)))
        return np.exp(mu + lam * q)

    def _cdf_grad(self, t, mu, lam):
        z = (np.log(t) - mu) / lam
        fz = 0.5 * np.exp(-np.abs(z))
        return -fz / lam, -fz * z / lam


_FAMILIES = {
    f.name: f
    for f in (Weibull(), GeneralizedPareto(), LogGaussian(), LogLogistic(), LogLaplace())
}
FAMILY_NAMES = tuple(_FAMILIES)


def get_family(name):
    try:
        return _FAMILIES[name]
    except KeyError:
        raise ValueError(
            "unknown family %r (expected one of %s)" % (name, ", ".join(FAMILY_NAMES))
        )


def link_mu(fam, eta):
    """Map linear predictor eta to the location mu; returns (mu, dmu/deta)."""
    fam = _as_family(fam)
    if fam.link == "identity":
        eta = np.asarray(eta, float)
        return eta, np.ones_like(eta)
    if fam.link == "exp":
        mu = np.exp(np.asarray(eta, float))
        return mu, mu
    if fam.link == "negexp":
        mu = np.exp(-np.asarray(eta, float))
        return mu, -mu
    raise ValueError("unknown link %r" % fam.link)


def _as_family(fam):
    return get_family(fam) if isinstance(fam, str) else fam


def cdf(family, mu, lam, t):
    """F(t | mu, lam); t may be 0 or inf (limits 0 and 1)."""
    fam = _as_family(family)
    _validate(fam, mu, lam)
    t = np.asarray(t, float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    out = np.empty(np.broadcast(t, np.atleast_1d(mu)).shape, float)
    tb = np.broadcast_to(t, out.shape)
    mub = np.broadcast_to(np.atleast_1d(np.asarray(mu, float)), out.shape)
    pos = np.isfinite(tb) & (tb > 0)
    out[~np.isfinite(tb)] = 1.0
    out[np.isfinite(tb) & (tb == 0)] = 0.0
    out[pos] = fam._cdf(tb[pos], mub[pos], lam)
    return float(out[0]) if scalar and out.size == 1 else out


def sf(family, mu, lam, t):
    """Survival function S(t) = 1 - F(t), computed directly for tail accuracy."""
    fam = _as_family(family)
    _validate(fam, mu, lam)
    t = np.asarray(t, float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    out = np.empty(np.broadcast(t, np.atleast_1d(mu)).shape, float)
    tb = np.broadcast_to(t, out.shape)
    mub = np.broadcast_to(np.atleast_1d(np.asarray(mu, float)), out.shape)
    pos = np.isfinite(tb) & (tb > 0)
    out[~np.isfinite(tb)] = 0.0
    out[np.isfinite(tb) & (tb == 0)] = 1.0
    out[pos] = fam._sf(tb[pos], mub[pos], lam)
    return float(out[0]) if scalar and out.size == 1 else out


def log_pdf(family, mu, lam, t):
    fam = _as_family(family)
    _validate(fam, mu, lam)
    t = np.asarray(t, float)
    if np.any(t <= 0) or not np.all(np.isfinite(t)):
        raise ValueError("t must be positive and finite")
    out = fam._log_pdf(t, np.asarray(mu, float), lam)
    return float(out) if np.ndim(out) == 0 else out


def quantile(family, mu, lam, p):
    fam = _as_family(family)
    _validate(fam, mu, lam)
    p = np.asarray(p, float)
    if np.any(p <= 0) or np.any(p >= 1):
        raise ValueError("p must lie in (0, 1)")
    out = fam._quantile(p, np.asarray(mu, float), lam)
    return float(out) if np.ndim(out) == 0 else out


def sample(family, mu, lam, rng, n):
    """Inverse-CDF sampling of n failure times."""
    if n < 1:
        raise ValueError("n must be >= 1")
    fam = _as_family(family)
    _validate(fam, mu, lam)
    u = rng.uniform(size=n)
    return fam._quantile(u, np.asarray(mu, float), lam)


def interval_mass_grad(family, mu, lam, t1, t2):
    """Vectorized interval log-mass and its (mu, lam) gradients.

    Returns arrays (value, d_mu, d_lam) with value = log[F(t2) - F(t1)].
    The difference is taken on whichever side of the distribution keeps
    precision: CDFs in the lower tail, survival functions in the upper.
    Impossible intervals yield value -inf with zero gradients.
    """
    fam = _as_family(family)
    t1 = np.atleast_1d(np.asarray(t1, float))
    t2 = np.atleast_1d(np.asarray(t2, float))
    mu = np.broadcast_to(np.atleast_1d(np.asarray(mu, float)), t1.shape)
    lam = float(lam)

    def endpoint(t):
        F = np.zeros_like(t)
        S = np.ones_like(t)
        dmu = np.zeros_like(t)
        dlam = np.zeros_like(t)
        pos = np.isfinite(t) & (t > 0)
        inf = ~np.isfinite(t)
        F[inf], S[inf] = 1.0, 0.0
        if np.any(pos):
            tp, mp = t[pos], mu[pos]
            F[pos] = fam._cdf(tp, mp, lam)
            S[pos] = fam._sf(tp, mp, lam)
            dmu[pos], dlam[pos] = fam._cdf_grad(tp, mp, lam)
        return F, S, dmu, dlam

    F1, S1, dmu1, dlam1 = endpoint(t1)
    F2, S2, dmu2, dlam2 = endpoint(t2)
    # upper-tail intervals: S1 - S2 avoids cancellation of nearly-1 CDFs
    delta = np.where(F1 > 0.5, S1 - S2, F2 - F1)
    ok = delta > 0
    value = np.full_like(delta, -np.inf)
    d_mu = np.zeros_like(delta)
    d_lam = np.zeros_like(delta)
    value[ok] = np.log(delta[ok])
    d_mu[ok] = (dmu2[ok] - dmu1[ok]) / delta[ok]
    d_lam[ok] = (dlam2[ok] - dlam1[ok]) / delta[ok]
    return value, d_mu, d_lam


def interval_loglik_grad(family, mu, lam, t1, t2):
    """Scalar interval log-likelihood log[F(t2)-F(t1)] with (mu, lam) gradient."""
    fam = _as_family(family)
    _validate(fam, mu, lam)
    if not (0 <= t1 < t2):
        raise ValueError("need 0 <= t1 < t2")
    value, d_mu, d_lam = interval_mass_grad(fam, mu, lam, [t1], [t2])
    return float(value[0]), float(d_mu[0]), float(d_lam[0])
