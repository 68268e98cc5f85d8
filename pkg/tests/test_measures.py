import itertools
import logging
import unittest

import numpy as np

from transferability.domains import DISCRETE, PIECEWISE, LabeledJoint, counterexample_pair, example1_pair, random_joint
from transferability.errors import UnsupportedOperationError, ValidationError
from transferability.hypotheses import LossKind, ThresholdClassifier, ThresholdGrid, risk
from transferability.measures import (
    check_tv_sandwich,
    common_refinement,
    equivalence_check,
    extremal_classifiers,
    hdh_bound_comparison,
    hdh_divergence_1d,
    pseudo_metric_suite,
    realizable_ipm,
    surrogate_transfer_check,
    symmetric_threshold_family,
    target_bound,
    transfer_measures,
    transferability_certificate,
    tv_half,
    tv_unnormalized,
)

logging.basicConfig(level=logging.DEBUG)

TOL = 1e-9


def brute_force_realizable(source: LabeledJoint, target: LabeledJoint) -> float:
    """Largest |eps_S - eps_T| over every labeling or abstention of the refined cells."""
    ref = common_refinement(source, target)
    # error mass of each atom when predicting 1, predicting 0 or abstaining
    errors = [np.column_stack([t[:, 0], t[:, 1], t.sum(axis=1)]) for t in ref.tables]
    choices = np.array(list(itertools.product(range(3), repeat=ref.n_atoms)), dtype=np.int64)
    atoms = np.arange(ref.n_atoms)
    eps_s = errors[0][atoms, choices].sum(axis=1)
    eps_t = errors[1][atoms, choices].sum(axis=1)
    return float(np.abs(eps_s - eps_t).max())


class TestTransferMeasures(unittest.TestCase):
    def test_example1_symmetric_measure(self):
        source, target = example1_pair(0.1)
        report = transfer_measures(source, target, symmetric_threshold_family(0.008, 0.8))
        self.assertAlmostEqual(report.symmetric, 0.008, delta=TOL)
        self.assertAlmostEqual(report.one_sided, 0.008, delta=TOL)
        self.assertAlmostEqual(report.reverse, 0.008, delta=TOL)
        self.assertAlmostEqual(report.eps_star_source, 0.0, delta=TOL)
        self.assertAlmostEqual(report.eps_star_target, 0.0, delta=TOL)
        self.assertAlmostEqual(report.witness_one_sided.rho, -0.01, delta=TOL)

    def test_identical_domains_have_zero_measures(self):
        joint = random_joint(PIECEWISE, 4, 2, seed=9)
        report = transfer_measures(joint, joint, ThresholdGrid(n_grid=101))
        self.assertEqual((report.one_sided, report.symmetric, report.realizable), (0.0, 0.0, 0.0))

    def test_symmetric_at_most_twice_realizable(self):
        rng = np.random.default_rng(0)
        for trial in range(200):
            variant = PIECEWISE if trial % 2 else DISCRETE
            n_cells = int(rng.integers(1, 6))
            a = random_joint(variant, n_cells, 2, seed=2 * trial)
            b = random_joint(variant, n_cells, 2, seed=2 * trial + 1)
            report = transfer_measures(a, b, ThresholdGrid(n_grid=41))
            self.assertLessEqual(report.symmetric, 2.0 * report.realizable + TOL)
            self.assertLessEqual(report.one_sided, report.symmetric + TOL)

    def test_label_counts_must_match(self):
        a = random_joint(DISCRETE, 2, 2, seed=0)
        b = random_joint(DISCRETE, 2, 3, seed=0)
        with self.assertRaises(ValidationError):
            transfer_measures(a, b, ThresholdGrid(n_grid=5))


class TestTotalVariation(unittest.TestCase):
    def test_example1_sandwich(self):
        source, target = example1_pair(0.1)
        sandwich = check_tv_sandwich(source, target)
        self.assertAlmostEqual(sandwich.realizable_all, 0.8, places=12)
        self.assertAlmostEqual(sandwich.tv, 1.6, places=12)
        self.assertAlmostEqual(tv_half(source, target), 0.8, places=12)
        self.assertTrue(sandwich.lhs_ok and sandwich.rhs_ok)

    def test_sandwich_fuzz(self):
        for seed in range(100):
            variant = PIECEWISE if seed % 2 else DISCRETE
            a = random_joint(variant, 1 + seed % 8, 2, seed=1000 + seed)
            b = random_joint(variant, 1 + (seed * 3) % 8, 2, seed=2000 + seed)
            sandwich = check_tv_sandwich(a, b)
            self.assertTrue(sandwich.lhs_ok, f"seed {seed}: {sandwich}")
            self.assertTrue(sandwich.rhs_ok, f"seed {seed}: {sandwich}")

    def test_extremal_classifiers_match_brute_force(self):
        zero_one = LossKind.zero_one()
        for seed in range(100):
            if seed % 2:
                n_a = 1 + seed % 5
                a = random_joint(PIECEWISE, n_a, 2, seed=3000 + seed)
                b = random_joint(PIECEWISE, 1 + (seed * 3) % (9 - n_a), 2, seed=4000 + seed)
            else:
                a = random_joint(DISCRETE, 1 + seed % 8, 2, seed=3000 + seed)
                b = random_joint(DISCRETE, 1 + (seed * 3) % 8, 2, seed=4000 + seed)
            self.assertLessEqual(common_refinement(a, b).n_atoms, 8)
            h_plus, h_minus, gap_plus, gap_minus = extremal_classifiers(a, b)
            self.assertAlmostEqual(risk(h_plus, a, zero_one) - risk(h_plus, b, zero_one), gap_plus, delta=TOL)
            self.assertAlmostEqual(risk(h_minus, b, zero_one) - risk(h_minus, a, zero_one), gap_minus, delta=TOL)
            self.assertAlmostEqual(max(gap_plus, gap_minus), brute_force_realizable(a, b), delta=TOL)

    def test_tv_is_symmetric(self):
        a = random_joint(PIECEWISE, 3, 2, seed=5)
        b = random_joint(PIECEWISE, 5, 2, seed=6)
        self.assertAlmostEqual(tv_unnormalized(a, b), tv_unnormalized(b, a), places=12)

    def test_extremal_classifiers_need_binary_labels(self):
        a = random_joint(DISCRETE, 2, 3, seed=0)
        b = random_joint(DISCRETE, 2, 3, seed=1)
        with self.assertRaises(UnsupportedOperationError):
            extremal_classifiers(a, b)


class TestTargetBound(unittest.TestCase):
    def test_example1_bound_holds(self):
        source, target = example1_pair(0.1)
        gamma = symmetric_threshold_family(0.008, 0.8)
        certificate = target_bound(source, target, gamma, ThresholdClassifier(rho=0.005))
        self.assertTrue(certificate.holds)
        self.assertAlmostEqual(certificate.source_risk, 0.0045, places=12)
        self.assertAlmostEqual(certificate.target_risk, 0.0005, places=12)
        self.assertGreaterEqual(certificate.bound_symmetric, certificate.bound_one_sided - TOL)

    def test_bound_fuzz(self):
        for seed in range(50):
            a = random_joint(PIECEWISE, 4, 2, seed=seed)
            b = random_joint(PIECEWISE, 3, 2, seed=100 + seed)
            rho = float(np.random.default_rng(seed).uniform(-1.0, 1.0))
            certificate = target_bound(a, b, ThresholdGrid(n_grid=51), ThresholdClassifier(rho=rho))
            self.assertTrue(certificate.holds, f"seed {seed}: {certificate.slacks}")

    def test_classifier_outside_family_rejected(self):
        source, target = example1_pair(0.1)
        gamma = symmetric_threshold_family(0.008, 0.8)
        with self.assertRaises(ValidationError):
            target_bound(source, target, gamma, ThresholdClassifier(rho=0.5))


class TestTransferability(unittest.TestCase):
    def test_example1_certificate(self):
        source, target = example1_pair(0.1)
        cert = transferability_certificate(source, target, ThresholdGrid(), 0.009)
        self.assertAlmostEqual(cert.delta_target_min, 0.081, places=9)
        self.assertAlmostEqual(cert.worst_member.rho, -0.09, places=9)
        self.assertTrue(cert.containment_ok)

    def test_counterexample_certificate(self):
        source, target = counterexample_pair()
        cert = transferability_certificate(source, target, ThresholdGrid(), 0.05)
        self.assertAlmostEqual(cert.eps_star_target, 0.3, places=9)
        self.assertAlmostEqual(cert.delta_target_min, 0.02, places=9)

    def test_counterexample_has_large_realizable_measure(self):
        source, target = counterexample_pair()
        report = transfer_measures(source, target, ThresholdGrid())
        self.assertGreaterEqual(report.realizable, 0.3 - TOL)

    def test_certificates_compose(self):
        gamma = ThresholdGrid(n_grid=41)
        for seed in range(200):
            a, b, c = (random_joint(PIECEWISE, 3, 2, seed=10 * seed + i) for i in range(3))
            first = transferability_certificate(a, b, gamma, 0.05, refine_with=[c])
            second = transferability_certificate(b, c, gamma, first.delta_target_min, refine_with=[a])
            direct = transferability_certificate(a, c, gamma, 0.05, refine_with=[b])
            self.assertTrue(first.containment_ok and second.containment_ok and direct.containment_ok)
            self.assertEqual(len({first.family_size, second.family_size, direct.family_size}), 1)
            self.assertLessEqual(direct.delta_target_min, second.delta_target_min + TOL, f"seed {seed}")

    def test_chain_refinement_grows_the_family(self):
        a, b, c = (random_joint(PIECEWISE, 3, 2, seed=i) for i in range(3))
        gamma = ThresholdGrid(n_grid=41)
        pairwise = transferability_certificate(a, b, gamma, 0.05)
        chained = transferability_certificate(a, b, gamma, 0.05, refine_with=[c])
        self.assertGreaterEqual(chained.family_size, pairwise.family_size)

    def test_equivalence_fuzz(self):
        for seed in range(50):
            a = random_joint(PIECEWISE, 3, 2, seed=500 + seed)
            b = random_joint(PIECEWISE, 3, 2, seed=600 + seed)
            report = equivalence_check(a, b, ThresholdGrid(n_grid=41), 0.05)
            self.assertTrue(report.backward_holds)
            if report.gamma_min_matches:
                self.assertTrue(report.forward_holds)
            else:
                self.assertIsNone(report.forward_holds)

    def test_surrogate_transfer_fuzz(self):
        for seed in range(30):
            a = random_joint(PIECEWISE, 3, 2, seed=700 + seed)
            b = random_joint(PIECEWISE, 3, 2, seed=800 + seed)
            report = surrogate_transfer_check(a, b, ThresholdGrid(n_grid=41), 0.1, clamp=0.01)
            self.assertTrue(report.holds, f"seed {seed}: {report}")


class TestDivergence(unittest.TestCase):
    def test_example1_divergence(self):
        source, target = example1_pair(0.1)
        self.assertAlmostEqual(hdh_divergence_1d(source, target), 1.6, places=12)

    def test_divergence_bound_fuzz(self):
        for seed in range(100):
            a = random_joint(PIECEWISE, 1 + seed % 5, 2, seed=900 + seed)
            b = random_joint(PIECEWISE, 1 + (seed + 2) % 5, 2, seed=1900 + seed)
            comparison = hdh_bound_comparison(a, b, ThresholdGrid(n_grid=41), 0.05)
            self.assertTrue(comparison.holds, f"seed {seed}: {comparison}")

    def test_divergence_needs_piecewise(self):
        a = random_joint(DISCRETE, 2, 2, seed=0)
        with self.assertRaises(UnsupportedOperationError):
            hdh_divergence_1d(a, a)


class TestPseudoMetric(unittest.TestCase):
    def test_axioms_fuzz(self):
        for seed in range(200):
            domains = [random_joint(PIECEWISE, 1 + (seed + i) % 4, 2, seed=5000 + 4 * seed + i) for i in range(3)]
            report = pseudo_metric_suite(domains, ThresholdGrid(n_grid=21))
            self.assertTrue(report.ok, f"seed {seed}: {report}")

    def test_needs_three_domains(self):
        source, target = example1_pair(0.1)
        with self.assertRaises(ValidationError):
            pseudo_metric_suite([source, target], ThresholdGrid(n_grid=5))

    def test_ipm_form_matches(self):
        for seed in range(30):
            variant = PIECEWISE if seed % 2 else DISCRETE
            a = random_joint(variant, 4, 2, seed=6000 + seed)
            b = random_joint(variant, 4, 2, seed=7000 + seed)
            check = realizable_ipm(a, b, ThresholdGrid(n_grid=21))
            self.assertLessEqual(check.difference, TOL)


if __name__ == '__main__':
    unittest.main()
