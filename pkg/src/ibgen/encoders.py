"""Stochastic encoders q(u|x): product Gaussian, product log-normal and RBM (Bernoulli).

All three share a small duck-typed surface used by the classifier, the MI
estimator and the bound estimators:

``params()``              name -> array (views; optimizers update in place)
``decoder_input(X, noise)`` latent fed to the soft-max decoder, shape (s, n, d_u)
``encode_sample(x, rng, s)`` reparameterized draws with the noise kept
``log_density(u, x)``     exact log q(u|x), product form
``second_moment(X)``      E[U_j^2 | x] per row and latent dimension

Gaussian and log-normal encoders additionally expose ``train_forward`` /
``train_backward`` for the reparameterized objective.  The RBM is trained by
contrastive divergence (:func:`cd1_step`) instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .nn import DenseNet, Rng, backward, forward, forward_cached, init_dense_net, net_grads_dict, sigmoid

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0
ALPHA_MAX = 0.7
ALPHA_FLOOR = 1e-3
LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class LatentSample:
    u: np.ndarray
    noise: np.ndarray


def _batch(x):
    x = np.asarray(x, dtype=np.float64)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def _normal_logpdf(u, mean, var):
    return -0.5 * (LOG_2PI + np.log(var) + (u - mean) ** 2 / var)


class GaussianEncoder:
    """U_j | x ~ N(mu_j(x), sigma_j^2(x)); mu and log sigma^2 heads on a shared relu trunk."""

    kind = "gaussian"
    reparameterized = True

    def __init__(self, trunk: DenseNet, mu_head: DenseNet, logvar_head: DenseNet):
        if trunk.n_out != mu_head.n_in or trunk.n_out != logvar_head.n_in:
            raise ShapeError("heads must read the trunk output")
        if mu_head.n_out != logvar_head.n_out:
            raise ShapeError("mu and log-variance heads must agree on d_u")
        self.trunk = trunk
        self.mu_head = mu_head
        self.logvar_head = logvar_head

    @classmethod
    def init(cls, d_x: int, rng: Rng, d_u: int = 256, hidden: int = 512):
        trunk = init_dense_net([d_x, hidden], ["relu"], rng.split("trunk"))
        mu = init_dense_net([hidden, d_u], ["linear"], rng.split("mu"))
        logvar = init_dense_net([hidden, d_u], ["linear"], rng.split("logvar"))
        return cls(trunk, mu, logvar)

    @property
    def d_x(self):
        return self.trunk.n_in

    @property
    def d_u(self):
        return self.mu_head.n_out

    def params(self):
        p = self.trunk.params("trunk.")
        p.update(self.mu_head.params("mu."))
        p.update(self.logvar_head.params("logvar."))
        return p

    def copy(self):
        return GaussianEncoder(self.trunk.copy(), self.mu_head.copy(), self.logvar_head.copy())

    def stats(self, X):
        """Return ``(mu, var)``, each of shape (n, d_u)."""
        X, single = _batch(X)
        h = forward(self.trunk, X)
        mu = forward(self.mu_head, h)
        lv = np.clip(forward(self.logvar_head, h), LOGVAR_MIN, LOGVAR_MAX)
        if single:
            return mu[0], np.exp(lv[0])
        return mu, np.exp(lv)

    def decoder_input(self, X, noise):
        mu, var = self.stats(X)
        return mu[None] + np.sqrt(var)[None] * noise

    def encode_sample(self, x, rng: Rng, s: int = 1) -> LatentSample:
        X, single = _batch(x)
        eps = rng.gaussian((s, X.shape[0], self.d_u))
        u = self.decoder_input(X, eps)
        if single:
            return LatentSample(u[:, 0], eps[:, 0])
        return LatentSample(u, eps)

    def log_density(self, u, x):
        mu, var = self.stats(x)
        return np.sum(_normal_logpdf(np.asarray(u, dtype=np.float64), mu, var), axis=-1)

    def second_moment(self, X):
        mu, var = self.stats(X)
        return mu**2 + var

    def kl_std_normal(self, X):
        from .info import kl_gaussian_to_std_normal

        mu, var = self.stats(X)
        return kl_gaussian_to_std_normal(mu, var)

    # -- training path -------------------------------------------------------

    def train_forward(self, X, noise):
        h, c_trunk = forward_cached(self.trunk, X)
        mu, c_mu = forward_cached(self.mu_head, h)
        raw, c_lv = forward_cached(self.logvar_head, h)
        lv = np.clip(raw, LOGVAR_MIN, LOGVAR_MAX)
        sigma = np.exp(0.5 * lv)
        u = mu[None] + sigma[None] * noise
        kl = 0.5 * (-lv + np.exp(lv) + mu**2 - 1.0)
        ctx = dict(c_trunk=c_trunk, c_mu=c_mu, c_lv=c_lv, raw=raw, lv=lv, mu=mu, sigma=sigma, noise=noise)
        return u, kl, ctx

    def train_backward(self, ctx, dU, kl_weight):
        """Gradients of ``<dU, U> + kl_weight * sum(KL)`` with respect to every parameter."""
        mu, lv, sigma, noise = ctx["mu"], ctx["lv"], ctx["sigma"], ctx["noise"]
        dmu = dU.sum(axis=0)
        dlv = 0.5 * sigma * np.sum(dU * noise, axis=0)
        if kl_weight:
            dmu = dmu + kl_weight * mu
            dlv = dlv + kl_weight * 0.5 * (np.exp(lv) - 1.0)
        raw = ctx["raw"]
        dlv = dlv * ((raw >= LOGVAR_MIN) & (raw <= LOGVAR_MAX))
        g_mu, dh1 = backward(self.mu_head, ctx["c_mu"], dmu)
        g_lv, dh2 = backward(self.logvar_head, ctx["c_lv"], dlv)
        g_tr, _ = backward(self.trunk, ctx["c_trunk"], dh1 + dh2)
        grads = net_grads_dict(g_tr, "trunk.")
        grads.update(net_grads_dict(g_mu, "mu."))
        grads.update(net_grads_dict(g_lv, "logvar."))
        return grads


class LogNormalEncoder:
    """U_j = f_j(x) * exp(alpha_j(x) * Z_j) with a learnable log-normal prior (mu_j, sigma_j)."""

    kind = "lognormal"
    reparameterized = True

    def __init__(self, f_net: DenseNet, alpha_net: DenseNet, prior_mu, prior_logsigma):
        if f_net.n_in != alpha_net.n_in or f_net.n_out != alpha_net.n_out:
            raise ShapeError("f and alpha nets must share input and output widths")
        self.f_net = f_net
        self.alpha_net = alpha_net
        self.prior_mu = np.asarray(prior_mu, dtype=np.float64)
        self.prior_logsigma = np.asarray(prior_logsigma, dtype=np.float64)
        if self.prior_mu.shape != (f_net.n_out,) or self.prior_logsigma.shape != (f_net.n_out,):
            raise ShapeError("prior parameters need one entry per latent dimension")

    @classmethod
    def init(cls, d_x: int, rng: Rng, d_u: int = 256, hidden: int = 256):
        f_net = init_dense_net([d_x, hidden, d_u], ["softplus", "softplus"], rng.split("f"))
        alpha_net = init_dense_net([d_x, d_u], [("sigmoid-scaled", ALPHA_MAX)], rng.split("alpha"))
        return cls(f_net, alpha_net, np.zeros(d_u), np.zeros(d_u))

    @property
    def d_x(self):
        return self.f_net.n_in

    @property
    def d_u(self):
        return self.f_net.n_out

    @property
    def prior_sigma(self):
        return np.exp(self.prior_logsigma)

    def params(self):
        p = self.f_net.params("f.")
        p.update(self.alpha_net.params("alpha."))
        p["prior.mu"] = self.prior_mu
        p["prior.logsigma"] = self.prior_logsigma
        return p

    def copy(self):
        return LogNormalEncoder(self.f_net.copy(), self.alpha_net.copy(), self.prior_mu.copy(), self.prior_logsigma.copy())

    def stats(self, X):
        """Return ``(f, alpha)``: U_j ~ logN(log f_j, alpha_j^2)."""
        X, single = _batch(X)
        f = forward(self.f_net, X)
        alpha = np.maximum(forward(self.alpha_net, X), ALPHA_FLOOR)
        if single:
            return f[0], alpha[0]
        return f, alpha

    def decoder_input(self, X, noise):
        f, alpha = self.stats(X)
        return f[None] * np.exp(alpha[None] * noise)

    def encode_sample(self, x, rng: Rng, s: int = 1) -> LatentSample:
        X, single = _batch(x)
        z = rng.gaussian((s, X.shape[0], self.d_u))
        u = self.decoder_input(X, z)
        if single:
            return LatentSample(u[:, 0], z[:, 0])
        return LatentSample(u, z)

    def log_density(self, u, x):
        u = np.asarray(u, dtype=np.float64)
        if np.any(u <= 0):
            raise DomainError("log-normal density needs u > 0")
        f, alpha = self.stats(x)
        logu = np.log(u)
        return np.sum(_normal_logpdf(logu, np.log(f), alpha**2) - logu, axis=-1)

    def second_moment(self, X):
        f, alpha = self.stats(X)
        return f**2 * np.exp(2.0 * alpha**2)

    # -- training path -------------------------------------------------------

    def train_forward(self, X, noise):
        f, c_f = forward_cached(self.f_net, X)
        raw, c_a = forward_cached(self.alpha_net, X)
        alpha = np.maximum(raw, ALPHA_FLOOR)
        scale = np.exp(alpha[None] * noise)
        u = f[None] * scale
        logf = np.log(f)
        s2 = np.exp(2.0 * self.prior_logsigma)
        dev = logf - self.prior_mu
        kl = (alpha**2 + dev**2) / (2.0 * s2) - np.log(alpha) + self.prior_logsigma - 0.5
        ctx = dict(c_f=c_f, c_a=c_a, raw=raw, f=f, alpha=alpha, scale=scale, u=u, noise=noise, dev=dev, s2=s2)
        return u, kl, ctx

    def train_backward(self, ctx, dU, kl_weight):
        f, alpha, noise, u = ctx["f"], ctx["alpha"], ctx["noise"], ctx["u"]
        df = np.sum(dU * ctx["scale"], axis=0)
        dalpha = np.sum(dU * u * noise, axis=0)
        g_mu = np.zeros_like(self.prior_mu)
        g_ls = np.zeros_like(self.prior_logsigma)
        if kl_weight:
            dev, s2 = ctx["dev"], ctx["s2"]
            df = df + kl_weight * dev / s2 / f
            dalpha = dalpha + kl_weight * (alpha / s2 - 1.0 / alpha)
            g_mu = -kl_weight * np.sum(dev / s2, axis=0)
            g_ls = kl_weight * np.sum(1.0 - (alpha**2 + dev**2) / s2, axis=0)
        dalpha = dalpha * (ctx["raw"] > ALPHA_FLOOR)
        g_f, _ = backward(self.f_net, ctx["c_f"], df)
        g_a, _ = backward(self.alpha_net, ctx["c_a"], dalpha)
        grads = net_grads_dict(g_f, "f.")
        grads.update(net_grads_dict(g_a, "alpha."))
        grads["prior.mu"] = g_mu
        grads["prior.logsigma"] = g_ls
        return grads


class RbmEncoder:
    """Binary RBM; the encoder is P(U_j = 1 | x) = sigmoid(b_j + <w_j, x>).

    The decoder reads the Bernoulli mean vector (deterministic), so
    ``decoder_input`` ignores the noise apart from its leading sample axis.
    """

    kind = "rbm"
    reparameterized = False

    def __init__(self, W, b, c):
        self.W = np.asarray(W, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self.c = np.asarray(c, dtype=np.float64)
        d_u, d_x = self.W.shape
        if self.b.shape != (d_u,) or self.c.shape != (d_x,):
            raise ShapeError("RBM bias shapes do not match W")
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self.dc = np.zeros_like(self.c)

    @classmethod
    def init(cls, d_x: int, rng: Rng, d_u: int = 256, data=None):
        """Small gaussian weights (sd 0.01), zero hidden bias, visible bias logit of the data mean."""
        W = 0.01 * rng.gaussian((d_u, d_x))
        c = np.zeros(d_x)
        if data is not None:
            p = np.clip(np.mean(np.asarray(data, dtype=np.float64), axis=0), 1e-8, 1 - 1e-8)
            c = np.log(p / (1.0 - p))
        return cls(W, np.zeros(d_u), c)

    @property
    def d_x(self):
        return self.W.shape[1]

    @property
    def d_u(self):
        return self.W.shape[0]

    def params(self):
        return {"W": self.W, "b": self.b, "c": self.c}

    def copy(self):
        out = RbmEncoder(self.W.copy(), self.b.copy(), self.c.copy())
        out.dW, out.db, out.dc = self.dW.copy(), self.db.copy(), self.dc.copy()
        return out

    def hidden_probs(self, X):
        X = np.asarray(X, dtype=np.float64)
        return sigmoid(X @ self.W.T + self.b)

    def visible_probs(self, H):
        return sigmoid(np.asarray(H, dtype=np.float64) @ self.W + self.c)

    def decoder_input(self, X, noise):
        p = self.hidden_probs(np.atleast_2d(X))
        return np.broadcast_to(p, (noise.shape[0],) + p.shape)

    def encode_sample(self, x, rng: Rng, s: int = 1) -> LatentSample:
        X, single = _batch(x)
        p = self.hidden_probs(X)
        r = rng.uniform((s,) + p.shape)
        u = (r < p[None]).astype(np.float64)
        if single:
            return LatentSample(u[:, 0], r[:, 0])
        return LatentSample(u, r)

    def log_density(self, u, x):
        u = np.asarray(u, dtype=np.float64)
        if np.any((u != 0.0) & (u != 1.0)):
            raise DomainError("RBM latent must be binary")
        X, single = _batch(x)
        z = X @ self.W.T + self.b
        if single:
            z = z[0]
        # log sigmoid(z) = -softplus(-z); log(1 - sigmoid(z)) = -softplus(z)
        lp = u * -np.logaddexp(0.0, -z) + (1.0 - u) * -np.logaddexp(0.0, z)
        return np.sum(lp, axis=-1)

    def second_moment(self, X):
        return self.hidden_probs(X)


def cd1_step(rbm: RbmEncoder, batch, rng: Rng, lr: float, momentum: float, weight_cost: float = 0.0):
    """One CD-1 update in place; returns ``(rbm, reconstruction_error)``.

    Positive phase uses sampled hidden states to drive the reconstruction and
    hidden probabilities for the statistics; the visible reconstruction and
    the final hidden phase use probabilities.  Weight decay ``weight_cost * W``
    acts on the weights only.
    """
    v0 = np.asarray(batch, dtype=np.float64)
    if v0.ndim != 2 or v0.shape[0] == 0:
        raise ShapeError("cd1_step needs a nonempty 2-D batch")
    m = v0.shape[0]
    h0 = rbm.hidden_probs(v0)
    h0_state = rng.bernoulli(h0)
    v1 = rbm.visible_probs(h0_state)
    h1 = rbm.hidden_probs(v1)

    gW = (h0.T @ v0 - h1.T @ v1) / m - weight_cost * rbm.W
    gb = (h0 - h1).mean(axis=0)
    gc = (v0 - v1).mean(axis=0)
    rbm.dW *= momentum
    rbm.dW += lr * gW
    rbm.db *= momentum
    rbm.db += lr * gb
    rbm.dc *= momentum
    rbm.dc += lr * gc
    rbm.W += rbm.dW
    rbm.b += rbm.db
    rbm.c += rbm.dc
    err = float(np.mean(np.sum((v0 - v1) ** 2, axis=1)))
    return rbm, err


def rbm_momentum(epoch: int, start: float = 0.5, final: float = 0.9, switch_after: int = 5) -> float:
    return start if epoch < switch_after else final
