import math

import numpy as np
import pytest

from hebatch.flr.objective import (
    CentralizedTaylorTrainer,
    MiniBatch,
    exact_gradient,
    exact_loss,
    taylor_fore_gradient,
    taylor_gradient,
    taylor_gradient_from_fore,
    taylor_loss,
)


def rand_problem(rng, s, d, scale=1.0):
    X = rng.uniform(-1, 1, size=(s, d)) * scale
    y = rng.choice([-1.0, 1.0], size=s)
    theta = rng.normal(size=d) * 0.3
    return X, y, theta


class TestExactGradient:
    def test_zero_theta_closed_form(self):
        rng = np.random.default_rng(0)
        X, y, _ = rand_problem(rng, 12, 4)
        theta = np.zeros(4)
        expected = -(0.5 * y) @ X / len(y)
        assert np.allclose(exact_gradient(theta, X, y), expected, atol=1e-12)

    def test_saturation(self):
        X = np.array([[1.0, 0.5]])
        y = np.array([1.0])
        theta = np.array([50.0, 50.0])  # theta.x huge, gradient vanishes
        assert np.linalg.norm(exact_gradient(theta, X, y)) < 1e-12

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        X, y, theta = rand_problem(rng, 10, 3)
        grad = exact_gradient(theta, X, y)
        eps = 1e-6
        for j in range(3):
            step = np.zeros(3)
            step[j] = eps
            fd = (exact_loss(theta + step, X, y) - exact_loss(theta - step, X, y)) / (2 * eps)
            assert abs(grad[j] - fd) < 1e-6


class TestTaylorGradient:
    def test_zero_theta_matches_exact(self):
        rng = np.random.default_rng(2)
        X, y, _ = rand_problem(rng, 9, 5)
        theta = np.zeros(5)
        assert np.allclose(taylor_gradient(theta, X, y),
                           exact_gradient(theta, X, y), atol=1e-12)

    def test_fore_gradient_single_instance(self):
        # fore gradient from (0.4, 0.6, label 1) against a single feature 1
        fore = np.array([0.25 * (0.4 + 0.6) - 0.5 * 1.0])
        X = np.array([[1.0]])
        assert np.allclose(taylor_gradient_from_fore(fore, X), [-0.25])

    def test_from_fore_equals_direct(self):
        rng = np.random.default_rng(3)
        X, y, theta = rand_problem(rng, 8, 3)
        fore = taylor_fore_gradient(theta, X, y)
        assert np.allclose(taylor_gradient_from_fore(fore, X),
                           taylor_gradient(theta, X, y), atol=1e-15)


class TestTaylorLoss:
    def test_zero_theta_is_log2(self):
        rng = np.random.default_rng(4)
        X, y, _ = rand_problem(rng, 20, 4)
        assert abs(taylor_loss(np.zeros(4), X, y) - math.log(2)) < 1e-12

    def test_single_instance_golden(self):
        # y = 1, theta.x = 2: log2 - 1 + 0.5
        X = np.array([[2.0]])
        y = np.array([1.0])
        theta = np.array([1.0])
        assert abs(taylor_loss(theta, X, y) - (math.log(2) - 0.5)) < 1e-12

    def test_empty_loss_set_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            taylor_loss(np.zeros(2), np.zeros((0, 2)), np.zeros(0))

    def test_cubic_remainder_bound(self):
        # |taylor - exact| <= |theta.x|^3 whenever |theta.x| <= 0.5
        rng = np.random.default_rng(5)
        for _ in range(200):
            z = rng.uniform(-0.5, 0.5)
            y = rng.choice([-1.0, 1.0])
            X = np.array([[z]])
            theta = np.array([1.0])
            diff = abs(taylor_loss(theta, X, np.array([y]))
                       - exact_loss(theta, X, np.array([y])))
            assert diff <= abs(z) ** 3 + 1e-15


class TestMiniBatch:
    def test_rejects_bad_labels(self):
        with pytest.raises(ValueError):
            MiniBatch((0,), np.ones((1, 2)), np.array([0.5]))

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            MiniBatch((), np.ones((0, 2)), None)


class TestCentralizedTrainer:
    def test_single_step_unrolls_to_gradient(self):
        rng = np.random.default_rng(6)
        X, y, _ = rand_problem(rng, 16, 3)
        trainer = CentralizedTaylorTrainer(X, y, [np.arange(16)], learning_rate=1.0)
        trace = trainer.train(1)
        expected = -taylor_gradient(np.zeros(3), X, y)
        assert np.allclose(trace.theta, expected, atol=1e-12)

    def test_loss_decreases_on_separable_data(self):
        from hebatch.flr.data import make_minibatches, make_synthetic

        table = make_synthetic(200, 4, seed=11, noise=0.05)
        X = np.hstack([table.X, np.ones((table.rows, 1))])
        batches = make_minibatches(table.rows, 32, seed=1)
        trace = CentralizedTaylorTrainer(X, table.y, batches, 0.15).train(5)
        assert trace.losses[-1] < trace.losses[0]
        assert trace.losses[-1] < math.log(2)
