"""Joint log-posterior for one failure family over one dataset.

Model: for study j, eta_j = b0 + b_j and mu_j = link(eta_j); the likelihood
of observation i in study j is F(t_i2 | mu_j, lam) - F(t_i1 | mu_j, lam).

Priors (per family):
    b0 ~ Cauchy(0, 1)
    b_j ~ Normal(center, sqrt(z)); center is b0 except for the generalized
         Pareto family, where the study effects are centered at 0.
    z ~ InvGamma(a, b), truncated to (0, 4) for loglogistic / loglaplace.
    lam ~ LogNormal or Gamma, family specific.

z is interpreted as the *variance* of the study effects throughout
(standard deviation sqrt(z)); the two notations are unified this way.

The sampler works on an unconstrained vector q: [b0, b_1..J (or the
standardized effects eps_1..J in the non-centered parameterization),
u_z, log lam].  z maps through log for the untruncated families and
through a scaled logistic onto (0, 4) for the truncated ones.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln, log_expit

from . import families

__all__ = ["ParamVector", "PosteriorDraws", "LogPosterior", "PRIORS"]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# (z prior a, b, z upper truncation or None), lam prior, b_j center
PRIORS = {
    "weibull": dict(z=(1.0, 1.0, None), lam=("lognormal", 0.0, 0.5), center="b0"),
    "gpareto": dict(z=(1.0, 1.0, None), lam=("gamma", 2.0, 1.0), center="zero"),
    "loggaussian": dict(z=(1.0, 1.0, None), lam=("gamma", 1.0, 1.0), center="b0"),
    "loglogistic": dict(z=(0.1, 0.1, 4.0), lam=("lognormal", 0.0, 1.0), center="b0"),
    "loglaplace": dict(z=(0.1, 0.1, 4.0), lam=("lognormal", 0.0, 1.0), center="b0"),
}


@dataclass
class ParamVector:
    """Constrained-scale parameters."""

    b0: float
    b: np.ndarray
    z: float
    lam: float

    def as_array(self):
        return np.concatenate([[self.b0], np.asarray(self.b, float), [self.z, self.lam]])

    @classmethod
    def from_array(cls, x):
        x = np.asarray(x, float)
        return cls(b0=float(x[0]), b=x[1:-2].copy(), z=float(x[-2]), lam=float(x[-1]))


@dataclass
class PosteriorDraws:
    """MCMC output for one family: constrained draws plus bookkeeping.

    params_by_chain has shape (chains, samples, J+3) with columns
    (b0, b_1..J, z, lam); loglik has shape (S_total, n).
    """

    family: str
    params_by_chain: np.ndarray
    loglik: np.ndarray
    diagnostics: dict

    @property
    def params(self):
        c, s, d = self.params_by_chain.shape
        return self.params_by_chain.reshape(c * s, d)

    @property
    def n_draws(self):
        return self.params_by_chain.shape[0] * self.params_by_chain.shape[1]


class LogPosterior:
    """Differentiable unnormalized log-posterior on the unconstrained scale."""

    def __init__(self, family, dataset, non_centered=None):
        self.family = families.get_family(family) if isinstance(family, str) else family
        self.data = dataset
        self.prior = PRIORS[self.family.name]
        self.J = dataset.n_studies
        self.n = dataset.n
        self.dim = self.J + 3
        self._idx = dataset.study_index()
        self._t1, self._t2 = dataset.endpoints()
        if non_centered is None:
            non_centered = self.J < 15 or self.n / max(self.J, 1) < 20
        self.non_centered = bool(non_centered)
        self._z_upper = self.prior["z"][2]

    # -- transforms for z --------------------------------------------------
    def _z_from_u(self, u):
        if self._z_upper is None:
            return math.exp(u)
        return self._z_upper * expit(u)

    def _u_from_z(self, z):
        if self._z_upper is None:
            return math.log(z)
        p = z / self._z_upper
        return math.log(p) - math.log1p(-p)

    def _z_jac(self, u):
        """(dz/du, log|dz/du|, d log|dz/du| / du)."""
        if self._z_upper is None:
            z = math.exp(u)
            return z, u, 1.0
        c = self._z_upper
        s = expit(u)
        log_s = float(log_expit(u))
        log_1ms = float(log_expit(-u))
        dz = c * math.exp(log_s + log_1ms)
        return dz, math.log(c) + log_s + log_1ms, 1.0 - 2.0 * s

    # -- parameter mapping --------------------------------------------------
    def constrain(self, q):
        """Unconstrained vector -> ParamVector."""
        q = np.asarray(q, float)
        b0 = float(q[0])
        z = self._z_from_u(float(q[-2]))
        lam = math.exp(float(q[-1]))
        raw = q[1:-2]
        if self.non_centered:
            center = b0 if self.prior["center"] == "b0" else 0.0
            b = center + math.sqrt(z) * raw
        else:
            b = raw.copy()
        return ParamVector(b0=b0, b=b, z=z, lam=lam)

    def unconstrain(self, theta):
        if theta.z <= 0 or theta.lam <= 0:
            raise ValueError("z and lam must be positive")
        if self._z_upper is not None and theta.z >= self._z_upper:
            raise ValueError("z must lie below %g for this family" % self._z_upper)
        if self.non_centered:
            center = theta.b0 if self.prior["center"] == "b0" else 0.0
            raw = (np.asarray(theta.b, float) - center) / math.sqrt(theta.z)
        else:
            raw = np.asarray(theta.b, float)
        return np.concatenate(
            [[theta.b0], raw, [self._u_from_z(theta.z), math.log(theta.lam)]]
        )

    # -- likelihood ----------------------------------------------------------
    def _study_mu(self, theta):
        eta = theta.b0 + np.asarray(theta.b, float)
        return families.link_mu(self.family, eta)

    def pointwise_loglik(self, theta):
        """Per-observation interval log-likelihood, length n."""
        mu_j, _ = self._study_mu(theta)
        value, _, _ = families.interval_mass_grad(
            self.family, mu_j[self._idx], theta.lam, self._t1, self._t2
        )
        return value

    def log_likelihood(self, theta):
        return float(np.sum(self.pointwise_loglik(theta)))

    def pointwise_loglik_matrix(self, draws):
        """S x n log-likelihood matrix for stored constrained draws."""
        params = draws.params if isinstance(draws, PosteriorDraws) else np.asarray(draws)
        out = np.empty((params.shape[0], self.n))
        for s, row in enumerate(params):
            out[s] = self.pointwise_loglik(ParamVector.from_array(row))
        return out

    # -- prior ----------------------------------------------------------------
    def log_prior(self, theta):
        """Priors on the constrained scale plus transform log-Jacobians."""
        lp = -math.log(math.pi) - math.log1p(theta.b0 ** 2)  # Cauchy(0,1) on b0

        center = theta.b0 if self.prior["center"] == "b0" else 0.0
        z = theta.z
        r = np.asarray(theta.b, float) - center
        lp += float(np.sum(-_LOG_SQRT_2PI - 0.5 * math.log(z) - r ** 2 / (2.0 * z)))

        a, b, _ = self.prior["z"]
        lp += a * math.log(b) - gammaln(a) - (a + 1.0) * math.log(z) - b / z

        kind, p1, p2 = self.prior["lam"]
        lam = theta.lam
        if kind == "lognormal":
            lp += (
                -math.log(lam)
                - math.log(p2)
                - _LOG_SQRT_2PI
                - (math.log(lam) - p1) ** 2 / (2.0 * p2 ** 2)
            )
        else:  # gamma(shape p1, rate p2)
            lp += p1 * math.log(p2) - gammaln(p1) + (p1 - 1.0) * math.log(lam) - p2 * lam

        # log-Jacobians of the z and lam transforms
        _, logjac_z, _ = self._z_jac(self._u_from_z(z))
        lp += logjac_z + math.log(lam)
        return lp

    def log_posterior(self, theta):
        ll = self.log_likelihood(theta)
        if not np.isfinite(ll):
            return -np.inf
        return ll + self.log_prior(theta)

    # -- value and gradient on the unconstrained scale -------------------------
    def value_and_grad(self, q):
        """Log-density of q and its gradient (analytic).

        In the non-centered parameterization q carries standardized study
        effects with independent N(0,1) priors; the likelihood is evaluated
        at b_j = center + sqrt(z) * eps_j.
        """
        q = np.asarray(q, float)
        if not np.all(np.isfinite(q)) or np.any(np.abs(q) > 600.0):
            return -np.inf, np.zeros_like(q)
        b0 = q[0]
        u_z, u_lam = q[-2], q[-1]
        dz_du, logjac_z, dlogjac_z = self._z_jac(u_z)
        z = self._z_from_u(u_z)
        lam = math.exp(u_lam)
        raw = q[1:-2]
        centered_at_b0 = self.prior["center"] == "b0"
        center = b0 if centered_at_b0 else 0.0
        sqz = math.sqrt(z)
        if self.non_centered:
            b = center + sqz * raw
        else:
            b = raw

        grad = np.zeros_like(q)

        # likelihood
        eta = b0 + b
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            mu_j, dmu_deta = families.link_mu(self.family, eta)
            ll, d_mu, d_lam = families.interval_mass_grad(
                self.family, mu_j[self._idx], lam, self._t1, self._t2
            )
        value = float(np.sum(ll))
        if not np.isfinite(value):
            return -np.inf, grad
        g_eta = np.bincount(self._idx, weights=d_mu, minlength=self.J) * dmu_deta
        g_lam_ll = float(np.sum(d_lam))

        # chain rule into q
        grad[0] += float(np.sum(g_eta))  # eta_j = b0 + b_j
        if self.non_centered:
            grad[1:-2] += g_eta * sqz
            if centered_at_b0:
                grad[0] += float(np.sum(g_eta))  # b_j also shifts with b0
            # d b_j / d u_z = raw * dsqrt(z)/du
            grad[-2] += float(np.sum(g_eta * raw)) * dz_du / (2.0 * sqz)
        else:
            grad[1:-2] += g_eta
        grad[-1] += g_lam_ll * lam

        # priors
        value += -math.log(math.pi) - math.log1p(b0 ** 2)
        grad[0] += -2.0 * b0 / (1.0 + b0 ** 2)

        if self.non_centered:
            value += float(np.sum(-_LOG_SQRT_2PI - 0.5 * raw ** 2))
            grad[1:-2] += -raw
        else:
            r = b - center
            value += float(np.sum(-_LOG_SQRT_2PI - 0.5 * math.log(z) - r ** 2 / (2.0 * z)))
            grad[1:-2] += -r / z
            if centered_at_b0:
                grad[0] += float(np.sum(r)) / z
            dv_dz = float(np.sum(-0.5 / z + r ** 2 / (2.0 * z ** 2)))
            grad[-2] += dv_dz * dz_du

        a, bb, _ = self.prior["z"]
        value += a * math.log(bb) - gammaln(a) - (a + 1.0) * math.log(z) - bb / z
        grad[-2] += (-(a + 1.0) / z + bb / z ** 2) * dz_du
        value += logjac_z
        grad[-2] += dlogjac_z

        kind, p1, p2 = self.prior["lam"]
        if kind == "lognormal":
            value += (
                -u_lam - math.log(p2) - _LOG_SQRT_2PI - (u_lam - p1) ** 2 / (2.0 * p2 ** 2)
            )
            grad[-1] += -1.0 - (u_lam - p1) / p2 ** 2
        else:
            value += p1 * math.log(p2) - gammaln(p1) + (p1 - 1.0) * u_lam - p2 * lam
            grad[-1] += (p1 - 1.0) - p2 * lam
        value += u_lam  # lam = exp(u_lam) Jacobian
        grad[-1] += 1.0

        if not np.all(np.isfinite(grad)):
            return -np.inf, np.zeros_like(grad)
        return value, grad

    def sample_prior(self, rng):
        """One draw from the prior on the constrained scale (smoke tests)."""
        b0 = rng.standard_cauchy()
        a, b, upper = self.prior["z"]
        while True:
            z = 1.0 / rng.gamma(a, 1.0 / b)
            if upper is None or z < upper:
                break
        center = b0 if self.prior["center"] == "b0" else 0.0
        bj = rng.normal(center, math.sqrt(z), size=self.J)
        kind, p1, p2 = self.prior["lam"]
        if kind == "lognormal":
            lam = math.exp(rng.normal(p1, p2))
        else:
            lam = rng.gamma(p1, 1.0 / p2)
        return ParamVector(b0=float(b0), b=bj, z=float(z), lam=float(lam))
