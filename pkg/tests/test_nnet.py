import logging
import unittest

import numpy as np

from transferability.domains import SampleSet
from transferability.errors import UnsupportedOperationError, ValidationError
from transferability.hypotheses import LossKind
from transferability.nnet import (
    LN2,
    Architecture,
    BallConstraint,
    MlpModel,
    Optimizer,
    OptimizerSpec,
    ce_functional_probes,
    ce_lipschitz_slack,
    evaluate,
    loss_and_grad,
    minimal_set_ball_radius,
    param_lipschitz_probe,
    project_to_ball,
    strong_convexity_constant,
)

logging.basicConfig(level=logging.DEBUG)


def make_batch(m: int = 20, dim: int = 2, K: int = 3, seed: int = 0) -> SampleSet:
    rng = np.random.default_rng(seed)
    return SampleSet(x=rng.standard_normal((m, dim)), y=rng.integers(0, K, size=m), n_labels=K)


def finite_difference(f, params: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    grad = np.zeros_like(params)
    for i in range(params.size):
        step = np.zeros_like(params)
        step[i] = eps
        grad[i] = (f(params + step) - f(params - step)) / (2.0 * eps)
    return grad


class TestArchitecture(unittest.TestCase):
    def test_sizes(self):
        arch = Architecture.build(2, hidden_dims=(5,), feature_dim=3, n_labels=3, clamp=0.01)
        self.assertEqual(arch.dims, (2, 5, 3))
        self.assertEqual(arch.head_size, 12)
        self.assertEqual(arch.featurizer_size, 2 * 5 + 5 + 5 * 3 + 3)

    def test_identity_featurizer(self):
        arch = Architecture.build(2, hidden_dims=(), feature_dim=None)
        model = MlpModel.initialize(arch, seed=0)
        x = np.array([[0.5, -1.0]])
        np.testing.assert_array_equal(model.features(x), x)
        self.assertEqual(model.get_theta_g().size, 0)

    def test_clamp_must_leave_mass(self):
        with self.assertRaises(ValidationError):
            Architecture.build(2, n_labels=4, clamp=0.25)


class TestMlpModel(unittest.TestCase):
    def setUp(self):
        self.arch = Architecture.build(2, hidden_dims=(5,), feature_dim=3, n_labels=3, clamp=0.01)
        self.model = MlpModel.initialize(self.arch, seed=1)
        self.batch = make_batch()

    def test_outputs_are_squeezed_probabilities(self):
        p = self.model.predict_proba(self.batch.x)
        np.testing.assert_allclose(p.sum(axis=1), 1.0)
        self.assertTrue(np.all(p >= 0.01 - 1e-15))
        self.assertTrue(np.all(p <= 1.0 - 2 * 0.01 + 1e-15))

    def test_initialization_is_seeded(self):
        other = MlpModel.initialize(self.arch, seed=1)
        np.testing.assert_array_equal(other.get_params(), self.model.get_params())

    def test_head_override_leaves_model_untouched(self):
        theta = np.zeros(self.arch.head_size)
        before = self.model.get_theta()
        np.testing.assert_allclose(self.model.predict_proba(self.batch.x, theta), 1.0 / 3.0)
        np.testing.assert_array_equal(self.model.get_theta(), before)

    def test_wrong_shapes_rejected(self):
        with self.assertRaises(ValidationError):
            self.model.set_theta(np.zeros(5))
        with self.assertRaises(ValidationError):
            self.model.set_theta_g(np.zeros(5))
        with self.assertRaises(ValidationError):
            self.model.features(np.zeros((4, 3)))

    def test_checkpoint_restores_predictions(self):
        restored = MlpModel.from_checkpoint(self.model.to_checkpoint())
        np.testing.assert_array_equal(restored.predict_proba(self.batch.x), self.model.predict_proba(self.batch.x))

    def test_copy_is_independent(self):
        clone = self.model.copy()
        clone.set_theta(np.zeros(self.arch.head_size))
        self.assertFalse(np.array_equal(clone.get_theta(), self.model.get_theta()))


class TestGradients(unittest.TestCase):
    def setUp(self):
        self.arch = Architecture.build(2, hidden_dims=(5,), feature_dim=3, n_labels=3, clamp=0.01)
        self.model = MlpModel.initialize(self.arch, seed=2)
        self.batch = make_batch(seed=3)

    def assert_gradient_matches(self, wrt: str, get, set_):
        _, grad = loss_and_grad(self.model, self.batch, wrt=wrt)
        params = get()

        def f(p):
            model = self.model.copy()
            getattr(model, set_)(p)
            return loss_and_grad(model, self.batch, wrt="head")[0]

        numeric = finite_difference(f, params)
        self.assertLessEqual(np.linalg.norm(grad - numeric), 1e-5 * max(1.0, np.linalg.norm(numeric)))

    def test_head_gradient(self):
        self.assert_gradient_matches("head", self.model.get_theta, "set_theta")

    def test_featurizer_gradient(self):
        self.assert_gradient_matches("featurizer", self.model.get_theta_g, "set_theta_g")

    def test_full_gradient(self):
        self.assert_gradient_matches("all", self.model.get_params, "set_params")

    def test_loss_is_base2_cross_entropy(self):
        value, _ = loss_and_grad(self.model, self.batch, theta=np.zeros(self.arch.head_size))
        self.assertAlmostEqual(value, np.log(3.0) / LN2, places=12)

    def test_zero_one_has_no_gradient(self):
        with self.assertRaises(UnsupportedOperationError):
            loss_and_grad(self.model, self.batch, loss=LossKind.zero_one())
        with self.assertRaises(ValidationError):
            loss_and_grad(self.model, self.batch, wrt="bias")

    def test_descent_lowers_the_loss(self):
        opt = Optimizer(OptimizerSpec(kind="gradient_descent", learning_rate=0.05), self.arch.head_size)
        start, _ = evaluate(self.model, self.batch)
        theta = self.model.get_theta()
        for _ in range(50):
            _, grad = loss_and_grad(self.model, self.batch, theta=theta)
            theta = opt.step(theta, grad)
        end, _ = evaluate(self.model, self.batch, theta)
        self.assertLess(end, start)


class TestOptimizer(unittest.TestCase):
    def test_plain_steps(self):
        params, grad = np.array([1.0, 2.0]), np.array([0.5, -1.0])
        down = Optimizer(OptimizerSpec(kind="gradient_descent", learning_rate=0.1), 2)
        up = Optimizer(OptimizerSpec(kind="gradient_ascent", learning_rate=0.1), 2)
        np.testing.assert_allclose(down.step(params, grad), [0.95, 2.1])
        np.testing.assert_allclose(up.step(params, grad), [1.05, 1.9])

    def test_adam_first_step_is_signed_learning_rate(self):
        opt = Optimizer(OptimizerSpec(kind="adam", learning_rate=0.01, maximize=True), 2)
        moved = opt.step(np.zeros(2), np.array([3.0, -0.2]))
        np.testing.assert_allclose(moved, [0.01, -0.01], rtol=1e-6)
        opt.reset()
        self.assertEqual(opt.t, 0)
        self.assertFalse(opt.m.any())

    def test_descent_converges_on_quadratic(self):
        target = np.array([0.3, -0.7, 1.2])
        opt = Optimizer(OptimizerSpec(kind="gradient_descent", learning_rate=0.1), 3)
        x = np.zeros(3)
        for _ in range(200):
            x = opt.step(x, 2.0 * (x - target))
        np.testing.assert_allclose(x, target, atol=1e-9)


class TestBall(unittest.TestCase):
    def test_projection(self):
        ball = BallConstraint(center=np.zeros(2), radius=1.0)
        np.testing.assert_allclose(project_to_ball(np.array([3.0, 4.0]), ball), [0.6, 0.8])
        np.testing.assert_array_equal(project_to_ball(np.array([0.1, 0.2]), ball), [0.1, 0.2])

    def test_zero_radius_projects_to_center(self):
        ball = BallConstraint(center=np.array([1.0, 1.0]), radius=0.0)
        np.testing.assert_array_equal(project_to_ball(np.array([5.0, -2.0]), ball), [1.0, 1.0])

    def test_negative_radius_rejected(self):
        with self.assertRaises(ValidationError):
            BallConstraint(center=np.zeros(2), radius=-0.1)

    def test_samples_stay_inside(self):
        ball = BallConstraint(center=np.array([1.0, -2.0, 0.5]), radius=0.3)
        rng = np.random.default_rng(0)
        self.assertTrue(all(ball.contains(ball.sample(rng)) for _ in range(200)))

    def test_shape_mismatch(self):
        with self.assertRaises(ValidationError):
            project_to_ball(np.zeros(3), BallConstraint(center=np.zeros(2), radius=1.0))


class TestFunctionalProbes(unittest.TestCase):
    def test_constants(self):
        self.assertAlmostEqual(strong_convexity_constant(2), 1.0 / (4.0 * np.log(2.0)), places=12)
        self.assertAlmostEqual(strong_convexity_constant(5), 1.0 / np.log(2.0), places=12)
        self.assertAlmostEqual(minimal_set_ball_radius(0.5, 0.01), 0.2, places=12)
        with self.assertRaises(ValidationError):
            minimal_set_ball_radius(0.0, 0.01)

    def test_cross_entropy_inequalities(self):
        for K in (2, 3):
            report = ce_functional_probes(make_batch(m=30, K=K, seed=K), clamp=0.05, n_pairs=100, seed=K)
            self.assertTrue(report.ok, f"K={K}: {report}")

    def test_identical_outputs_have_zero_slack(self):
        p = np.full((4, 2), 0.5)
        self.assertEqual(ce_lipschitz_slack(p, p, np.array([0, 1, 0, 1]), 0.01), 0.0)

    def test_clamp_range(self):
        with self.assertRaises(ValidationError):
            ce_functional_probes(make_batch(K=2), clamp=0.5)

    def test_parameter_lipschitz_probe(self):
        arch = Architecture.build(2, hidden_dims=(4,), feature_dim=3, n_labels=2, clamp=0.01)
        model = MlpModel.initialize(arch, seed=0)
        probe = param_lipschitz_probe(model, make_batch(K=2), n_pairs=50, seed=1, scale=0.5)
        self.assertGreater(probe.estimate, 0.0)
        self.assertLessEqual(probe.mean_ratio, probe.estimate)
        self.assertEqual(probe.n_pairs, 50)


if __name__ == '__main__':
    unittest.main()
