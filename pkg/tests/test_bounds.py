import itertools
import logging
import unittest

import numpy as np

from transferability.bounds import (
    NATARAJAN_CAVEAT,
    BoundInputs,
    bound_report,
    empirical_rademacher,
    estimation_reduction_check,
    natarajan_bound_value,
    natarajan_slack,
    rademacher_bound_value,
    rademacher_coverage,
    vc_bound_value,
    vc_slack,
)
from transferability.domains import (
    DISCRETE,
    PIECEWISE,
    SampleSet,
    example1_pair,
    random_joint,
    rotated_gaussian_suite,
    sample,
)
from transferability.errors import ValidationError
from transferability.hypotheses import CellwiseClassifier, ExplicitList, ThresholdClassifier, ThresholdGrid

logging.basicConfig(level=logging.DEBUG)


class TestClosedForms(unittest.TestCase):
    def test_rademacher_value(self):
        inputs = BoundInputs(m=1000, k=1000, delta=0.05, r_m=0.05, r_k=0.05)
        slack = rademacher_bound_value(inputs)
        self.assertAlmostEqual(slack.one_sided, 0.587233, places=5)
        self.assertEqual(slack.one_sided, slack.symmetric)
        self.assertAlmostEqual(slack.realizable, slack.one_sided / 2.0, places=12)

    def test_rademacher_needs_estimates(self):
        with self.assertRaises(ValidationError):
            rademacher_bound_value(BoundInputs(m=10, k=10, delta=0.05, r_m=0.1))

    def test_vc_value(self):
        self.assertAlmostEqual(vc_bound_value(1, 1000), 0.125760, places=6)

    def test_vc_binomial_form(self):
        self.assertAlmostEqual(vc_bound_value(5, 3), np.sqrt(2.0 / 3.0 * np.log(8.0)), places=12)
        self.assertAlmostEqual(vc_bound_value(1, 1000, form="binomial"), np.sqrt(0.002 * np.log(1001.0)), places=12)
        self.assertLessEqual(vc_bound_value(3, 500, form="binomial"), vc_bound_value(3, 500))

    def test_vc_rejects_unknown_form(self):
        with self.assertRaises(ValidationError):
            vc_bound_value(1, 10, form="tight")

    def test_natarajan_value(self):
        self.assertAlmostEqual(natarajan_bound_value(10, 10, 10000, 0.05), 0.051011, places=6)
        self.assertAlmostEqual(natarajan_bound_value(10, 10, 10000, 0.05, C=3.0),
                               3.0 * natarajan_bound_value(10, 10, 10000, 0.05), places=12)

    def test_natarajan_rejects_bad_inputs(self):
        for args in ((0, 10, 100, 0.05), (1, 1, 100, 0.05), (1, 10, 100, 1.0)):
            with self.assertRaises(ValidationError):
                natarajan_bound_value(*args)

    def test_two_domain_slacks(self):
        vc = vc_slack(2, 400, 900, 0.1)
        expected = (2 * vc_bound_value(2, 400) + 2 * vc_bound_value(2, 900)
                    + 2 * np.sqrt(np.log(40.0) / 800) + 2 * np.sqrt(np.log(40.0) / 1800))
        self.assertAlmostEqual(vc.one_sided, expected, places=12)
        nat = natarajan_slack(4, 5, 300, 600, 0.1)
        expected = 2 * natarajan_bound_value(4, 5, 300, 0.05) + 2 * natarajan_bound_value(4, 5, 600, 0.05)
        self.assertAlmostEqual(nat.symmetric, expected, places=12)

    def test_inputs_are_validated(self):
        with self.assertRaises(ValueError):
            BoundInputs(m=10, k=10, delta=1.5)
        with self.assertRaises(ValueError):
            BoundInputs(m=0, k=10, delta=0.1)


class TestBoundReport(unittest.TestCase):
    def test_vc_only(self):
        report = bound_report(BoundInputs(m=100, k=100, delta=0.05, d_vc=1))
        self.assertIsNone(report.rademacher)
        self.assertIsNotNone(report.vc)
        self.assertEqual(report.caveats, ())
        self.assertEqual(report.log_base, "natural")

    def test_natarajan_carries_caveat(self):
        report = bound_report(BoundInputs(m=100, k=100, delta=0.05, d_nat=3, K=4))
        self.assertIn(NATARAJAN_CAVEAT, report.caveats)
        self.assertIn("m", report.natarajan_rate)

    def test_empty_inputs_rejected(self):
        with self.assertRaises(ValidationError):
            bound_report(BoundInputs(m=100, k=100, delta=0.05))


def labeled_line(m: int) -> SampleSet:
    """``m`` evenly spaced points on (-1, 1) with label 1 exactly on ``x < 0``."""
    x = np.linspace(-0.9, 0.9, m)
    return SampleSet(x=x, y=(x < 0).astype(int), n_labels=2)


class TestEmpiricalRademacher(unittest.TestCase):
    def setUp(self):
        self.source, self.target = example1_pair(0.1)

    def test_explicit_list_keeps_its_own_behaviors(self):
        gamma = ExplicitList(classifiers=(ThresholdClassifier(rho=-0.5), ThresholdClassifier(rho=0.5)))
        estimate = empirical_rademacher(gamma, labeled_line(50), n_sign_draws=16, seed=0)
        self.assertEqual(estimate.n_behaviors, 2)

    def test_unrefined_grid_is_not_widened(self):
        s = sample(self.source, 200, seed=1)
        estimate = empirical_rademacher(ThresholdGrid(n_grid=5, refine=False), s, n_sign_draws=16, seed=0)
        self.assertLessEqual(estimate.n_behaviors, 5)

    def test_separating_thresholds_give_m_plus_one_behaviors(self):
        s = labeled_line(10)
        x = np.sort(s.x[:, 0])
        rhos = np.concatenate([[-1.0], (x[:-1] + x[1:]) / 2.0, [1.0]])
        gamma = ExplicitList(classifiers=tuple(ThresholdClassifier(rho=float(r)) for r in rhos))
        self.assertEqual(empirical_rademacher(gamma, s, n_sign_draws=8, seed=0).n_behaviors, 11)

    def test_singleton_class(self):
        perfect = ExplicitList(classifiers=(ThresholdClassifier(rho=0.0),))
        estimate = empirical_rademacher(perfect, labeled_line(20), n_sign_draws=50, seed=0)
        self.assertEqual((estimate.estimate, estimate.n_behaviors), (0.0, 1))

        shifted = ExplicitList(classifiers=(ThresholdClassifier(rho=0.5),))
        estimate = empirical_rademacher(shifted, labeled_line(20), n_sign_draws=400, seed=0)
        self.assertGreater(estimate.std_err, 0.0)
        self.assertLessEqual(abs(estimate.estimate), 5.0 * estimate.std_err)

    def test_shattered_sample(self):
        m = 6
        atoms = tuple(float(i) for i in range(m))
        gamma = ExplicitList(classifiers=tuple(
            CellwiseClassifier(variant=DISCRETE, partition=atoms, assignment=bits)
            for bits in itertools.product((0, 1), repeat=m)
        ))
        s = SampleSet(x=np.arange(m, dtype=float), y=np.array([0, 1, 1, 0, 1, 0]), n_labels=2)
        estimate = empirical_rademacher(gamma, s, n_sign_draws=2000, seed=3)
        self.assertEqual(estimate.n_behaviors, 2 ** m)
        self.assertAlmostEqual(estimate.estimate, 0.5, delta=5.0 * estimate.std_err)

    def test_loss_class_is_half_the_hypothesis_class(self):
        s = sample(self.source, 40, seed=4)
        gamma = ThresholdGrid(n_grid=41, refine=False)
        loss = empirical_rademacher(gamma, s, n_sign_draws=1000, seed=5)
        hypothesis = empirical_rademacher(gamma, s, n_sign_draws=1000, seed=6, of="hypothesis")
        tolerance = 5.0 * (2.0 * loss.std_err + hypothesis.std_err)
        self.assertAlmostEqual(2.0 * loss.estimate, hypothesis.estimate, delta=tolerance)

    def test_refinement_comes_from_analytic_domains(self):
        s = sample(self.source, 100, seed=2)
        gamma = ThresholdGrid(n_grid=3, rho_min=-0.5, rho_max=0.5)
        plain = empirical_rademacher(gamma, s, n_sign_draws=8, seed=0)
        refined = empirical_rademacher(gamma, s, n_sign_draws=8, seed=0,
                                       refine_with=[random_joint(PIECEWISE, 6, 2, seed=1)])
        self.assertLessEqual(plain.n_behaviors, 3)
        self.assertGreaterEqual(refined.n_behaviors, plain.n_behaviors)

    def test_deterministic_per_seed(self):
        s = sample(self.source, 80, seed=2)
        a = empirical_rademacher(ThresholdGrid(n_grid=101), s, n_sign_draws=16, seed=5)
        b = empirical_rademacher(ThresholdGrid(n_grid=101), s, n_sign_draws=16, seed=5)
        self.assertEqual(a.estimate, b.estimate)

    def test_shrinks_with_sample_size(self):
        gamma = ThresholdGrid(n_grid=101)
        small = empirical_rademacher(gamma, sample(self.source, 50, seed=3), n_sign_draws=64, seed=0)
        large = empirical_rademacher(gamma, sample(self.source, 1000, seed=3), n_sign_draws=64, seed=0)
        self.assertLess(large.estimate, small.estimate)

    def test_hypothesis_class_needs_binary_labels(self):
        s = rotated_gaussian_suite(1, [0.0], 20, seed=0, n_classes=3)[0]
        s_1d = type(s)(x=s.x[:, :1], y=s.y, n_labels=3)
        with self.assertRaises(ValidationError):
            empirical_rademacher(ThresholdGrid(n_grid=11), s_1d, n_sign_draws=4, of="hypothesis")

    def test_bad_arguments(self):
        s = sample(self.source, 10, seed=0)
        with self.assertRaises(ValidationError):
            empirical_rademacher(ThresholdGrid(n_grid=11), s, n_sign_draws=0)
        with self.assertRaises(ValidationError):
            empirical_rademacher(ThresholdGrid(n_grid=11), s, of="margin")


class TestEstimationReduction(unittest.TestCase):
    def setUp(self):
        self.source, self.target = example1_pair(0.1)
        self.gamma = ThresholdGrid(n_grid=201)

    def test_reduction_holds_on_example1(self):
        frame = estimation_reduction_check(self.source, self.target, self.gamma, [100, 1000, 10000],
                                           seed=0, n_draws=200)
        self.assertEqual(len(frame), 3 * 200 * 3)
        self.assertTrue(frame["holds"].all())
        self.assertEqual(set(frame["variant"]), {"one_sided", "symmetric", "realizable"})

    def test_coverage(self):
        report = rademacher_coverage(self.source, self.target, self.gamma, m=1000, k=1000, delta=0.1,
                                     n_trials=200, n_sign_draws=64, seed=0)
        self.assertAlmostEqual(report.true_measure, 0.8, places=9)
        self.assertEqual(report.n_trials, 200)
        self.assertGreaterEqual(report.rate, 0.9)


if __name__ == '__main__':
    unittest.main()
