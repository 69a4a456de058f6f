import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hfcl import nn
from hfcl.nn import GradientVector, Layer, ModelParams, ModelSpec

from oracles import brute_forward, central_differences, fd_relative_error


def random_model(seed, sizes=(6, 5, 4), hidden="tanh", scale=1.0):
    spec = nn.mlp_spec(list(sizes), hidden)
    rng = np.random.default_rng(seed)
    return ModelParams(rng.normal(0, scale, spec.P), spec)


def random_batch(seed, n, n_in, n_out):
    rng = np.random.default_rng(seed + 1000)
    x = rng.uniform(0, 1, (n, n_in))
    y = np.eye(n_out)[rng.integers(0, n_out, n)]
    return x, y


class TestSpec:
    def test_reference_cnn_count(self):
        assert nn.reference_cnn_spec().P == 4352
        assert not nn.reference_cnn_spec().executable

    def test_desk_mlp_count(self):
        assert nn.desk_mlp_spec().P == 196 * 32 + 32 + 32 * 10 + 10

    def test_P_is_sum_of_layers(self):
        spec = nn.mlp_spec([7, 3, 2])
        assert spec.P == sum(layer.n_params for layer in spec.layers) == 7 * 3 + 3 + 3 * 2 + 2

    def test_incompatible_layers(self):
        with pytest.raises(nn.ShapeError):
            ModelSpec((Layer("dense", (4,), (3,), 3), Layer("dense", (2,), (1,), 1)))

    def test_reference_cnn_cannot_run(self):
        spec = nn.reference_cnn_spec()
        params = ModelParams(np.zeros(spec.P), spec)
        with pytest.raises(nn.ShapeError):
            nn.forward(params, np.zeros((1, 28, 28, 1)))

    def test_wrong_theta_length(self):
        with pytest.raises(nn.ShapeError):
            ModelParams(np.zeros(3), nn.mlp_spec([2, 2]))

    def test_nonfinite_theta(self):
        spec = nn.mlp_spec([2, 2])
        with pytest.raises(nn.NumericError):
            ModelParams(np.full(spec.P, np.nan), spec)


class TestForward:
    def test_zero_weights_give_uniform(self):
        spec = nn.mlp_spec([5, 10])
        out = nn.forward(ModelParams(np.zeros(spec.P), spec), np.random.default_rng(0).normal(size=(3, 5)))
        assert np.allclose(out, 0.1, atol=1e-15)

    def test_identity_layer_is_softmax(self):
        spec = nn.mlp_spec([4, 4])
        theta = np.concatenate([np.eye(4).ravel(), np.zeros(4)])
        x = np.array([[0.5, -1.0, 2.0, 0.0]])
        expected = np.exp(x) / np.exp(x).sum()
        assert np.allclose(nn.forward(ModelParams(theta, spec), x), expected, atol=1e-15)

    @pytest.mark.parametrize("seed", range(4))
    @pytest.mark.parametrize("hidden", ["tanh", "sigmoid", "relu"])
    def test_matches_brute_force(self, seed, hidden):
        params = random_model(seed, hidden=hidden)
        x, _ = random_batch(seed, 5, 6, 4)
        assert np.max(np.abs(nn.forward(params, x) - brute_forward(params, x))) < 1e-10

    def test_image_batches_are_flattened(self):
        params = random_model(0, sizes=(4, 3))
        x = np.random.default_rng(0).uniform(size=(2, 2, 2))
        assert np.array_equal(nn.forward(params, x), nn.forward(params, x.reshape(2, 4)))

    def test_shape_mismatch(self):
        with pytest.raises(nn.ShapeError):
            nn.forward(random_model(0), np.zeros((2, 7)))

    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 30.0))
    @settings(max_examples=50, deadline=None)
    def test_softmax_sums_to_one(self, seed, scale):
        params = random_model(seed, scale=scale)
        x = np.random.default_rng(seed).normal(0, scale, (4, 6))
        assert np.allclose(nn.forward(params, x).sum(axis=1), 1.0, atol=1e-6)


class TestLosses:
    def test_mse_identity(self):
        y = np.eye(3)
        assert nn.loss_mse(y, y) == 0.0

    def test_mse_single(self):
        assert nn.loss_mse([[1.0, 0.0]], [[0.0, 1.0]]) == pytest.approx(2.0)

    def test_mse_mean_over_batch(self):
        pred = [[1.0, 0.0], [2.0, 0.0]]
        lab = [[0.0, 1.0], [0.0, 0.0]]
        assert nn.loss_mse(pred, lab) == pytest.approx(3.0)

    def test_xent_perfect(self):
        y = np.eye(10)[[3, 7]]
        assert nn.loss_xent(y, y) < 1e-6

    def test_xent_half(self):
        assert nn.loss_xent([[0.5, 0.5]], [[1.0, 0.0]]) == pytest.approx(2 * math.log(2), abs=1e-12)

    def test_xent_duplicate_batch(self):
        rng = np.random.default_rng(3)
        p = rng.dirichlet(np.ones(5), 4)
        y = np.eye(5)[rng.integers(0, 5, 4)]
        assert nn.loss_xent(np.vstack([p, p]), np.vstack([y, y])) == pytest.approx(nn.loss_xent(p, y), rel=1e-14)

    def test_xent_extremes_are_clamped(self):
        value = nn.loss_xent([[0.0, 1.0]], [[1.0, 0.0]])
        assert np.isfinite(value) and value > 0

    def test_shape_mismatch(self):
        with pytest.raises(nn.ShapeError):
            nn.loss_mse(np.zeros((2, 3)), np.zeros((2, 4)))


class TestBackward:
    def test_stationary_point(self):
        # one weight, identity output, MSE: J = (w x - y)^2 is minimal at w = y / x
        spec = ModelSpec((Layer("dense", (1,), (1,), 1, activation="identity", bias=False),))
        params = ModelParams(np.array([0.75]), spec)
        g = nn.backward(params, [[2.0]], [[1.5]], loss="mse")
        assert abs(g.g[0]) < 1e-12

    @pytest.mark.parametrize("seed", range(3))
    @pytest.mark.parametrize("loss", ["xent", "mse"])
    @pytest.mark.parametrize("hidden", ["tanh", "sigmoid"])
    def test_finite_differences(self, seed, loss, hidden):
        params = random_model(seed, sizes=(6, 5, 4), hidden=hidden, scale=0.5)
        x, y = random_batch(seed, 7, 6, 4)
        analytic = nn.backward(params, x, y, loss).g
        numeric = central_differences(lambda th: nn.batch_loss(ModelParams(th, params.spec), x, y, loss), params.theta)
        assert fd_relative_error(analytic, numeric).max() < 1e-4

    def test_duplicate_batch(self):
        params = random_model(1)
        x, y = random_batch(1, 5, 6, 4)
        g1 = nn.backward(params, x, y).g
        g2 = nn.backward(params, np.vstack([x, x]), np.vstack([y, y])).g
        assert np.allclose(g1, g2, rtol=1e-12, atol=1e-15)

    def test_provenance_clean(self):
        params = random_model(1)
        x, y = random_batch(1, 2, 6, 4)
        assert nn.backward(params, x, y).provenance == nn.CLEAN

    def test_does_not_mutate(self):
        params = random_model(2)
        x, y = random_batch(2, 3, 6, 4)
        theta0, x0 = params.theta.copy(), x.copy()
        nn.backward(params, x, y)
        assert np.array_equal(params.theta, theta0) and np.array_equal(x, x0)

    def test_empty_batch(self):
        with pytest.raises(nn.ShapeError):
            nn.backward(random_model(0), np.zeros((0, 6)), np.zeros((0, 4)))


class TestSgd:
    def test_hand_case(self):
        spec = ModelSpec((Layer("dense", (1,), (1,), 1, activation="identity", bias=False),))
        out = nn.sgd_step(ModelParams([1.0], spec), GradientVector([2.0]), 0.5)
        assert out.theta.tolist() == [0.0]

    def test_zero_gradient(self):
        params = random_model(0)
        assert np.array_equal(nn.sgd_step(params, np.zeros(params.spec.P), 0.3).theta, params.theta)

    def test_pure(self):
        params = random_model(0)
        before = params.theta.copy()
        nn.sgd_step(params, np.ones(params.spec.P), 0.1)
        assert np.array_equal(params.theta, before)

    def test_two_steps_with_constant_gradients(self):
        params = random_model(0)
        rng = np.random.default_rng(9)
        g1, g2 = rng.normal(size=(2, params.spec.P))
        twice = nn.sgd_step(nn.sgd_step(params, g1, 0.1), g2, 0.1)
        once = nn.sgd_step(params, g1 + g2, 0.1)
        assert np.allclose(twice.theta, once.theta, atol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(nn.ShapeError):
            nn.sgd_step(random_model(0), np.zeros(3), 0.1)


class _FixedOrder:
    """Stands in for a generator whose next permutation is known."""

    def __init__(self, order):
        self.order = np.asarray(order)

    def permutation(self, n):
        assert n == len(self.order)
        return self.order


class TestMinibatch:
    def test_single_batch_is_backward(self):
        params = random_model(0)
        x, y = random_batch(0, 8, 6, 4)
        g = nn.minibatch_gradient(params, x, y, 1, np.random.default_rng(0))
        assert np.array_equal(g.g, nn.backward(params, x, y).g)

    @pytest.mark.parametrize("m", [2, 3, 4, 6, 12])
    def test_equal_partitions_match_full_batch(self, m):
        params = random_model(0)
        x, y = random_batch(0, 12, 6, 4)
        g = nn.minibatch_gradient(params, x, y, m, np.random.default_rng(5))
        assert np.allclose(g.g, nn.backward(params, x, y).g, rtol=0, atol=1e-12)

    def test_linear_model_any_partition(self):
        # identity head + MSE on a single repeated sample: every partition sees the same per-sample gradient
        spec = ModelSpec((Layer("dense", (3,), (2,), 2, activation="identity"),))
        params = ModelParams(np.random.default_rng(0).normal(size=spec.P), spec)
        x = np.tile([[0.2, -0.4, 0.9]], (7, 1))
        y = np.tile([[1.0, 0.0]], (7, 1))
        full = nn.backward(params, x, y, "mse").g
        for m in range(1, 8):
            g = nn.minibatch_gradient(params, x, y, m, np.random.default_rng(m), loss="mse")
            assert np.allclose(g.g, full, rtol=0, atol=1e-12)

    def test_average_over_all_orderings(self):
        params = random_model(4)
        x, y = random_batch(4, 4, 6, 4)
        full = nn.backward(params, x, y).g
        grads = [
            nn.minibatch_gradient(params, x, y, 3, _FixedOrder(order)).g
            for order in itertools.permutations(range(4))
        ]
        assert np.allclose(np.mean(grads, axis=0), full, rtol=0, atol=1e-10)

    def test_deterministic(self):
        params = random_model(0)
        x, y = random_batch(0, 10, 6, 4)
        a = nn.minibatch_gradient(params, x, y, 3, np.random.default_rng(11))
        b = nn.minibatch_gradient(params, x, y, 3, np.random.default_rng(11))
        assert np.array_equal(a.g, b.g)

    def test_remainder_goes_last(self):
        parts = nn.partition_minibatches(10, 3, np.random.default_rng(0))
        assert [len(p) for p in parts] == [3, 3, 4]
        assert sorted(np.concatenate(parts).tolist()) == list(range(10))

    def test_batch_size_caps_samples(self):
        parts = nn.partition_minibatches(100, 4, np.random.default_rng(0), batch_size=8)
        assert [len(p) for p in parts] == [8, 8, 8, 8]

    def test_too_many_minibatches(self):
        params = random_model(0)
        x, y = random_batch(0, 2, 6, 4)
        with pytest.raises(nn.ShapeError):
            nn.minibatch_gradient(params, x, y, 3, np.random.default_rng(0))

    def test_empty_shard(self):
        with pytest.raises(nn.ShapeError):
            nn.minibatch_gradient(random_model(0), np.zeros((0, 6)), np.zeros((0, 4)), 1, np.random.default_rng(0))


def test_training_config_validation():
    with pytest.raises(ValueError):
        nn.TrainingConfig(eta=0)
    with pytest.raises(ValueError):
        nn.TrainingConfig(minibatches=0)
    with pytest.raises(ValueError):
        nn.TrainingConfig(rounds=0)
