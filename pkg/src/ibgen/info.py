"""Closed-form KL divergences, priors and the KL-sum mutual-information estimate.

All quantities are in nats.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import DomainError, IbgenError

BERNOULLI_CLAMP = 1e-6


def kl_normal(m1, v1, m2, v2):
    """KL(N(m1, v1) || N(m2, v2)), elementwise."""
    m1, v1, m2, v2 = (np.asarray(a, dtype=np.float64) for a in (m1, v1, m2, v2))
    if np.any(v1 <= 0) or np.any(v2 <= 0):
        raise DomainError("variances must be positive")
    return 0.5 * (np.log(v2 / v1) + (v1 + (m1 - m2) ** 2) / v2 - 1.0)


def kl_gaussian_to_std_normal(mu, var):
    """KL(N(mu, var) || N(0, 1)) = (-log var + var + mu^2 - 1) / 2."""
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if np.any(var <= 0):
        raise DomainError("variance must be positive")
    return 0.5 * (-np.log(var) + var + mu**2 - 1.0)


def kl_lognormal(log_f, alpha, mu_prior, sigma_prior):
    """KL(logN(log_f, alpha^2) || logN(mu_prior, sigma_prior^2)).

    Equal to the KL between the underlying normals since KL is invariant
    under the bijection u -> log u.
    """
    log_f, alpha, mu_prior, sigma_prior = (np.asarray(a, dtype=np.float64) for a in (log_f, alpha, mu_prior, sigma_prior))
    if np.any(alpha <= 0) or np.any(sigma_prior <= 0):
        raise DomainError("alpha and sigma must be positive")
    s2 = sigma_prior**2
    return (alpha**2 + (log_f - mu_prior) ** 2) / (2.0 * s2) - np.log(alpha / sigma_prior) - 0.5


def kl_bernoulli(p, q):
    """KL(Bern(p) || Bern(q)) with 0 log 0 = 0; q must lie strictly inside (0, 1)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise DomainError("p must lie in [0, 1]")
    if np.any((q <= 0) | (q >= 1)):
        raise DomainError("q must lie in (0, 1)")
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0) / q), 0.0)
        b = np.where(p < 1, (1 - p) * np.log(np.where(p < 1, 1 - p, 1.0) / (1 - q)), 0.0)
    return a + b


# ---------------------------------------------------------------------------
# priors and the MI estimate
# ---------------------------------------------------------------------------

# which prior kinds each encoder kind accepts
COMPATIBLE = {
    "gaussian": {"standard-normal", "normal", "empirical-gaussian-mixture"},
    "lognormal": {"learned-log-normal"},
    "rbm": {"empirical-bernoulli-mixture"},
}

DEFAULT_PRIOR = {
    "gaussian": "standard-normal",
    "lognormal": "learned-log-normal",
    "rbm": "empirical-bernoulli-mixture",
}


@dataclass
class PriorSpec:
    """Product prior over latent dimensions.

    ``standard-normal``              N(0, 1) per dimension
    ``normal``                       N(mean_j, var_j); ``params = {"mean", "var"}``
    ``learned-log-normal``           logN(mu_j, sigma_j^2); ``params = {"mu", "sigma"}``,
                                     taken from the encoder when omitted
    ``empirical-bernoulli-mixture``  (1/n) sum_i q(u_j | x_i) over the evaluated split
    ``empirical-gaussian-mixture``   same for Gaussian encoders; KL by quadrature (small n, d_u)
    """

    kind: str = "standard-normal"
    params: dict = field(default_factory=dict)


@dataclass
class MiEstimate:
    value: float
    per_dim: np.ndarray
    split: str
    n: int
    prior: str

    def top_dims(self, k: int = 5):
        order = np.argsort(-self.per_dim, kind="stable")[:k]
        return [(int(j), float(self.per_dim[j])) for j in order]


def _kl_to_gaussian_mixture(mu, var, mix_mu, mix_var):
    """KL(N(mu, var) || mean_k N(mix_mu[k], mix_var[k])) by adaptive quadrature on mu +- 10 sd."""
    sd = np.sqrt(var)

    def log_mix(u):
        z = -0.5 * (np.log(2 * np.pi * mix_var) + (u - mix_mu) ** 2 / mix_var)
        top = z.max()
        return top + np.log(np.mean(np.exp(z - top)))

    def integrand(u):
        lq = -0.5 * (np.log(2 * np.pi * var) + (u - mu) ** 2 / var)
        return np.exp(lq) * (lq - log_mix(u))

    val, _ = integrate.quad(integrand, mu - 10 * sd, mu + 10 * sd, epsabs=1e-11, epsrel=1e-10, limit=200)
    return max(val, 0.0)


def per_sample_kl(encoder, X, prior: PriorSpec) -> np.ndarray:
    """KL(q(u_j | x_i) || prior_j) as an (n, d_u) array."""
    kind = encoder.kind
    if prior.kind not in COMPATIBLE.get(kind, ()):
        raise IbgenError(f"prior {prior.kind!r} is not compatible with a {kind} encoder")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))

    if prior.kind == "standard-normal":
        mu, var = encoder.stats(X)
        return kl_gaussian_to_std_normal(mu, var)
    if prior.kind == "normal":
        mu, var = encoder.stats(X)
        return kl_normal(mu, var, np.asarray(prior.params["mean"]), np.asarray(prior.params["var"]))
    if prior.kind == "empirical-gaussian-mixture":
        mu, var = encoder.stats(X)
        n, d = mu.shape
        out = np.empty((n, d))
        for j in range(d):
            for i in range(n):
                out[i, j] = _kl_to_gaussian_mixture(mu[i, j], var[i, j], mu[:, j], var[:, j])
        return out
    if prior.kind == "learned-log-normal":
        f, alpha = encoder.stats(X)
        pm = prior.params.get("mu", encoder.prior_mu)
        ps = prior.params.get("sigma", encoder.prior_sigma)
        return kl_lognormal(np.log(f), alpha, pm, ps)
    if prior.kind == "empirical-bernoulli-mixture":
        p = encoder.hidden_probs(X)
        pbar = np.clip(p.mean(axis=0), BERNOULLI_CLAMP, 1.0 - BERNOULLI_CLAMP)
        return kl_bernoulli(p, pbar[None, :])
    raise IbgenError(f"unknown prior kind {prior.kind!r}")


def estimate_mi(encoder, X, prior: PriorSpec | None = None, split: str = "train") -> MiEstimate:
    """KL-sum estimate  sum_j (1/n) sum_i KL(q(u_j|x_i) || prior_j)  of I(U; X).

    For any prior this upper-bounds the true MI of the empirical input law;
    the empirical mixture priors are evaluated on the same split.
    """
    if prior is None:
        prior = PriorSpec(DEFAULT_PRIOR[encoder.kind])
    kl = per_sample_kl(encoder, X, prior)
    per_dim = kl.mean(axis=0)
    return MiEstimate(float(per_dim.sum()), per_dim, split, int(kl.shape[0]), prior.kind)
