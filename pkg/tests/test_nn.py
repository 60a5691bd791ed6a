import numpy as np
import pytest

from ibgen.errors import NonFiniteError, ShapeError
from ibgen.nn import (
    SGD,
    Adam,
    Dense,
    DenseNet,
    Rng,
    backward,
    forward,
    forward_cached,
    init_dense_net,
    sigmoid,
    softplus,
)


def _fd_grad(f, p, h=1e-6):
    g = np.zeros_like(p)
    it = np.nditer(p, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = p[i]
        p[i] = old + h
        fp = f()
        p[i] = old - h
        fm = f()
        p[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


class TestRng:
    def test_same_seed_same_stream(self):
        np.testing.assert_array_equal(Rng(5).gaussian(10), Rng(5).gaussian(10))

    def test_split_is_stable_and_distinct(self):
        a = Rng(5).split("train").uniform(8)
        b = Rng(5).split("train").uniform(8)
        c = Rng(5).split("eval").uniform(8)
        np.testing.assert_array_equal(a, b)
        assert not np.allclose(a, c)

    def test_bernoulli_extremes(self):
        r = Rng(0)
        np.testing.assert_array_equal(r.bernoulli(np.zeros(5)), 0.0)
        np.testing.assert_array_equal(r.bernoulli(np.ones(5)), 1.0)


class TestActivations:
    def test_sigmoid_stable_for_large_inputs(self):
        z = np.array([-800.0, -30.0, 0.0, 30.0, 800.0])
        s = sigmoid(z)
        assert np.all(np.isfinite(s))
        np.testing.assert_allclose(s + sigmoid(-z), 1.0, atol=1e-15)
        assert s[2] == 0.5

    def test_softplus_matches_log1p_exp(self):
        z = np.linspace(-20, 20, 41)
        np.testing.assert_allclose(softplus(z), np.log1p(np.exp(z)), rtol=1e-12)


class TestDenseNet:
    def test_forward_matches_hand_computation(self):
        W1 = np.array([[1.0, -1.0], [2.0, 0.5]])
        W2 = np.array([[1.0], [1.0]])
        net = DenseNet([Dense(W1, np.array([0.0, 0.1]), "relu"), Dense(W2, np.array([0.5]), "linear")])
        x = np.array([1.0, 1.0])
        h = np.maximum(x @ W1 + [0.0, 0.1], 0.0)
        np.testing.assert_allclose(forward(net, x), h @ W2 + 0.5)

    def test_single_and_batch_agree(self):
        net = init_dense_net([4, 6, 3], ["relu", "softplus"], Rng(1))
        X = Rng(2).gaussian((5, 4))
        batch = forward(net, X)
        for i in range(5):
            np.testing.assert_allclose(forward(net, X[i]), batch[i], rtol=1e-14)

    def test_shape_mismatch_raises(self):
        net = init_dense_net([4, 3], ["linear"], Rng(1))
        with pytest.raises(ShapeError):
            forward(net, np.zeros((2, 5)))

    def test_broken_chain_raises(self):
        with pytest.raises(ShapeError):
            DenseNet([Dense(np.zeros((2, 3)), np.zeros(3)), Dense(np.zeros((4, 1)), np.zeros(1))])

    @pytest.mark.parametrize("act", ["relu", "softplus", "sigmoid", "linear", ("sigmoid-scaled", 0.7)])
    def test_backward_matches_finite_differences(self, act):
        net = init_dense_net([3, 4, 2], [act, "linear"], Rng(7))
        X = Rng(8).gaussian((6, 3))
        R = Rng(9).gaussian((6, 2))

        def loss():
            return float(np.sum(forward(net, X) * R))

        out, cache = forward_cached(net, X)
        grads, gin = backward(net, cache, R)
        for layer, (dW, db) in zip(net.layers, grads):
            np.testing.assert_allclose(dW, _fd_grad(loss, layer.W), rtol=1e-5, atol=1e-7)
            np.testing.assert_allclose(db, _fd_grad(loss, layer.b), rtol=1e-5, atol=1e-7)
        np.testing.assert_allclose(gin, _fd_grad(loss, X), rtol=1e-5, atol=1e-7)

    def test_params_are_views(self):
        net = init_dense_net([2, 2], ["linear"], Rng(0))
        net.params()["0.W"][0, 0] = 42.0
        assert net.layers[0].W[0, 0] == 42.0

    def test_he_init_range(self):
        net = init_dense_net([100, 50], ["relu"], Rng(0))
        assert np.abs(net.layers[0].W).max() <= np.sqrt(6.0 / 100)


class TestOptimizers:
    def test_sgd_momentum_update(self):
        p = {"w": np.array([1.0])}
        opt = SGD(0.1, momentum=0.5)
        opt.step(p, {"w": np.array([2.0])})
        np.testing.assert_allclose(p["w"], [0.8])
        opt.step(p, {"w": np.array([2.0])})
        # v = 0.5 * (-0.2) - 0.2 = -0.3
        np.testing.assert_allclose(p["w"], [0.5])

    def test_adam_first_step_is_lr_sign(self):
        p = {"w": np.array([1.0, -1.0])}
        Adam(0.01).step(p, {"w": np.array([3.0, -0.5])})
        np.testing.assert_allclose(p["w"], [0.99, -0.99], rtol=1e-6)

    def test_adam_minimizes_quadratic(self):
        p = {"w": np.array([5.0, -3.0])}
        opt = Adam(0.1)
        for _ in range(2000):
            opt.step(p, {"w": 2 * p["w"]})
        np.testing.assert_allclose(p["w"], 0.0, atol=1e-3)

    @pytest.mark.parametrize("opt", [SGD(0.1), Adam(0.1)])
    def test_nonfinite_gradient_names_parameter(self, opt):
        p = {"a": np.zeros(2), "b": np.zeros(2)}
        with pytest.raises(NonFiniteError, match="'b'"):
            opt.step(p, {"a": np.ones(2), "b": np.array([1.0, np.nan])})
        np.testing.assert_array_equal(p["a"], 0.0)
