import numpy as np
import pytest
from scipy import integrate

from ibgen.encoders import (
    ALPHA_FLOOR,
    LOGVAR_MIN,
    GaussianEncoder,
    LogNormalEncoder,
    RbmEncoder,
    cd1_step,
    rbm_momentum,
)
from ibgen.errors import DomainError, ShapeError
from ibgen.nn import Dense, DenseNet, Rng

from conftest import constant_gaussian, small_gaussian, small_lognormal


def _constant_lognormal(d_x, log_f, alpha_raw):
    """Log-normal encoder with f = softplus(.) fixed and alpha given by a constant pre-activation."""
    d_u = len(log_f)
    # softplus^-1(f) = log(expm1(f))
    f = np.exp(np.asarray(log_f, dtype=np.float64))
    f_net = DenseNet([Dense(np.zeros((d_x, d_u)), np.log(np.expm1(f)), "softplus")])
    a_net = DenseNet([Dense(np.zeros((d_x, d_u)), np.full(d_u, alpha_raw), "linear")])
    return LogNormalEncoder(f_net, a_net, np.zeros(d_u), np.zeros(d_u))


def _bars_and_stripes(side=8):
    rows = []
    for bits in range(2**side):
        v = np.array([(bits >> i) & 1 for i in range(side)], dtype=np.float64)
        rows.append(np.repeat(v[:, None], side, axis=1).ravel())
        rows.append(np.repeat(v[None, :], side, axis=0).ravel())
    return np.unique(np.array(rows), axis=0)


class TestGaussianEncoder:
    def test_shapes(self):
        enc = small_gaussian(d_x=4, d_u=3, hidden=6)
        X = Rng(0).uniform((7, 4))
        mu, var = enc.stats(X)
        assert mu.shape == var.shape == (7, 3)
        s = enc.encode_sample(X, Rng(1), 5)
        assert s.u.shape == (5, 7, 3)
        assert enc.encode_sample(X[0], Rng(1), 5).u.shape == (5, 3)

    def test_degenerate_variance_gives_mean(self):
        enc = constant_gaussian(2, [0.3, -1.2], -1e6)
        u = enc.encode_sample(np.array([0.5, 0.5]), Rng(0), 4).u
        mu, var = enc.stats(np.array([0.5, 0.5]))
        assert var[0] == np.exp(LOGVAR_MIN)
        np.testing.assert_allclose(u, np.broadcast_to([0.3, -1.2], u.shape), atol=0.05)

    def test_unit_normal_moments(self):
        enc = constant_gaussian(2, [0.0], 0.0)
        u = enc.encode_sample(np.zeros(2), Rng(3), 100_000).u[:, 0]
        assert abs(u.mean()) < 0.02
        assert abs(u.var() - 1.0) < 0.02

    def test_log_density_at_mode(self):
        enc = constant_gaussian(2, [0.0], 0.0)
        np.testing.assert_allclose(enc.log_density(np.array([0.0]), np.zeros(2)), -0.5 * np.log(2 * np.pi), rtol=1e-14)

    def test_log_density_integrates_to_one(self):
        enc = small_gaussian(d_x=2, d_u=1, hidden=4, seed=5)
        x = np.array([0.2, 0.9])
        mu, var = enc.stats(x)
        sd = np.sqrt(var[0])
        val, _ = integrate.quad(lambda u: np.exp(enc.log_density(np.array([u]), x)), mu[0] - 12 * sd, mu[0] + 12 * sd)
        np.testing.assert_allclose(val, 1.0, atol=1e-8)

    def test_heads_must_match(self):
        enc = small_gaussian(d_x=2, d_u=2, hidden=3)
        with pytest.raises(ShapeError):
            GaussianEncoder(enc.trunk, enc.mu_head, DenseNet([Dense(np.zeros((3, 4)), np.zeros(4))]))


class TestLogNormalEncoder:
    def test_zero_noise_returns_f(self):
        enc = small_lognormal(d_x=3, d_u=2, hidden=4)
        X = Rng(0).uniform((5, 3))
        f, _ = enc.stats(X)
        np.testing.assert_allclose(enc.decoder_input(X, np.zeros((1, 5, 2)))[0], f)

    def test_alpha_floor_and_cap(self):
        enc = _constant_lognormal(2, [0.0], -50.0)
        assert enc.stats(np.zeros(2))[1][0] == ALPHA_FLOOR
        big = small_lognormal(d_x=2, d_u=3, hidden=3)
        big.alpha_net.layers[0].b[:] = 100.0
        np.testing.assert_allclose(big.stats(np.zeros(2))[1], 0.7)

    def test_positive_samples(self):
        enc = small_lognormal()
        u = enc.encode_sample(Rng(0).uniform((4, 3)), Rng(1), 100).u
        assert np.all(u > 0)

    def test_density_integrates_to_one(self):
        enc = _constant_lognormal(2, [0.4], 0.5)
        x = np.zeros(2)
        val, _ = integrate.quad(lambda u: np.exp(enc.log_density(np.array([u]), x)), 0, np.inf, limit=200)
        np.testing.assert_allclose(val, 1.0, atol=1e-6)

    def test_density_is_normal_of_log_over_u(self):
        enc = _constant_lognormal(2, [0.4, -0.2], 0.3)
        u = np.array([0.7, 1.9])
        direct = np.sum(-0.5 * np.log(2 * np.pi * 0.09) - (np.log(u) - np.array([0.4, -0.2])) ** 2 / 0.18 - np.log(u))
        np.testing.assert_allclose(enc.log_density(u, np.zeros(2)), direct, rtol=1e-12)

    def test_negative_latent_rejected(self):
        with pytest.raises(DomainError):
            small_lognormal().log_density(np.array([1.0, -1.0]), np.zeros(3))


class TestRbm:
    def test_log_density_half(self):
        rbm = RbmEncoder(np.zeros((1, 3)), np.zeros(1), np.zeros(3))
        np.testing.assert_allclose(rbm.log_density(np.array([1.0]), np.zeros(3)), np.log(0.5))

    def test_log_density_batch_and_single(self):
        rbm = RbmEncoder.init(4, Rng(0), d_u=3)
        rbm.W = Rng(1).gaussian((3, 4))
        X = Rng(2).uniform((5, 4))
        U = np.array([1.0, 0.0, 1.0])
        batch = rbm.log_density(U, X)
        for i in range(5):
            np.testing.assert_allclose(rbm.log_density(U, X[i]), batch[i], rtol=1e-14)
        p = rbm.hidden_probs(X[0])
        np.testing.assert_allclose(batch[0], np.sum(U * np.log(p) + (1 - U) * np.log1p(-p)), rtol=1e-12)

    def test_non_binary_rejected(self):
        rbm = RbmEncoder.init(2, Rng(0), d_u=2)
        with pytest.raises(DomainError):
            rbm.log_density(np.array([0.5, 1.0]), np.zeros(2))

    def test_zero_batch_leaves_weights_still(self):
        # visible bias at the (clipped) logit of the data mean, as in init
        zeros = np.zeros((10, 6))
        rbm = RbmEncoder.init(6, Rng(0), d_u=4, data=zeros)
        rbm.W[:] = 0.0
        cd1_step(rbm, zeros, Rng(1), lr=0.1, momentum=0.0, weight_cost=0.0)
        assert np.max(np.abs(rbm.W)) < 1e-6

    def test_large_weight_cost_shrinks_weights(self):
        rbm = RbmEncoder.init(16, Rng(0), d_u=8)
        rbm.W = Rng(1).gaussian((8, 16))
        data = (Rng(2).uniform((20, 16)) < 0.5).astype(float)
        norms = [np.linalg.norm(rbm.W)]
        for i in range(20):
            cd1_step(rbm, data, Rng(3).split(i), lr=1e-4, momentum=0.0, weight_cost=1e3)
            norms.append(np.linalg.norm(rbm.W))
        assert np.all(np.diff(norms) < 0)
        assert norms[-1] < 0.2 * norms[0]

    def test_bars_and_stripes_reconstruction_improves(self):
        data = _bars_and_stripes(8)
        rbm = RbmEncoder.init(64, Rng(0), d_u=32, data=data)
        rng = Rng(1)
        errs = []
        for epoch in range(50):
            order = rng.split(("perm", epoch)).permutation(data.shape[0])
            tot = 0.0
            for lo in range(0, data.shape[0], 10):
                _, e = cd1_step(rbm, data[order[lo : lo + 10]], rng, 0.1, rbm_momentum(epoch), 0.0)
                tot += e
            errs.append(tot)
        errs = np.array(errs)
        # non-increasing in expectation: compare block averages
        assert errs[-10:].mean() < errs[:10].mean()
        assert errs[-10:].mean() <= errs[20:30].mean() * 1.05

    def test_momentum_schedule(self):
        assert [rbm_momentum(e) for e in range(7)] == [0.5] * 5 + [0.9] * 2

    def test_bad_batch(self):
        with pytest.raises(ShapeError):
            cd1_step(RbmEncoder.init(3, Rng(0), d_u=2), np.zeros((0, 3)), Rng(0), 0.1, 0.5)
