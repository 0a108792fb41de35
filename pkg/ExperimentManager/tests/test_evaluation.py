import json

import numpy as np
from django.test import SimpleTestCase

from ExperimentManager import datagen, evaluation
from ExperimentManager.datagen import Dataset
from ExperimentManager.exceptions import BalanceError, DimensionError, DomainError, MetricUnavailableError


def binary_dataset(T, y0, y1):
    T = np.asarray(T)
    y0, y1 = np.asarray(y0, dtype=float), np.asarray(y1, dtype=float)
    return Dataset(np.zeros((T.size, 1)), T, np.where(T == 1, y1, y0), np.where(T == 1, y0, y1))


def brute_force_policy_risk(tau_hat, y0, y1):
    n = len(tau_hat)
    treated = [u for u in range(n) if tau_hat[u] > 0]
    control = [u for u in range(n) if tau_hat[u] <= 0]
    value = 0.0
    if treated:
        value += sum(y1[u] for u in treated) / len(treated) * len(treated) / n
    if control:
        value += sum(y0[u] for u in control) / len(control) * len(control) / n
    return 1.0 - value


class PeheTests(SimpleTestCase):
    def test_perfect_estimate(self):
        self.assertEqual(evaluation.pehe([1.0, -2.0, 3.0], [1.0, -2.0, 3.0]), 0.0)

    def test_hand_example(self):
        self.assertAlmostEqual(evaluation.pehe([1.0, 2.0], [1.0, 3.0]), np.sqrt(0.5))

    def test_constant_shift_bound(self):
        rng = np.random.default_rng(0)
        tau, estimate = rng.normal(size=20), rng.normal(size=20)
        old = evaluation.pehe(tau, estimate)
        self.assertGreaterEqual(evaluation.pehe(tau, estimate + 3.0), 3.0 - old)

    def test_missing_truth(self):
        with self.assertRaises(MetricUnavailableError):
            evaluation.pehe(None, [1.0])

    def test_length_mismatch(self):
        with self.assertRaises(DimensionError):
            evaluation.pehe([1.0, 2.0], [1.0])


class AteTests(SimpleTestCase):
    def test_equal_means(self):
        self.assertAlmostEqual(evaluation.ate_error([1.0, 3.0], [2.0, 2.0]), 0.0)

    def test_hand_example(self):
        self.assertAlmostEqual(evaluation.ate_error([1.0, 2.0], [1.0, 3.0]), 0.5)

    def test_symmetric(self):
        self.assertEqual(evaluation.ate_error([1.0, 2.0], [4.0, 0.5]), evaluation.ate_error([4.0, 0.5], [1.0, 2.0]))


class AttTests(SimpleTestCase):
    def setUp(self):
        mu0 = np.array([0.0, 1.0, 2.0, 3.0])
        self.dataset = Dataset(np.zeros((4, 1)), [0, 1, 0, 1], mu0, MU0=mu0, MU1=mu0 + [1.0, 2.0, 3.0, 4.0])

    def test_constant_estimate_at_truth(self):
        self.assertEqual(evaluation.att_error(self.dataset, np.full(4, 5.0), att_true=5.0), 0.0)

    def test_mean_derived_truth(self):
        self.assertAlmostEqual(evaluation.att_error(self.dataset, [0.0, 3.0, 0.0, 3.0]), 0.0)

    def test_control_estimates_ignored(self):
        first = evaluation.att_error(self.dataset, [100.0, 3.5, -7.0, 2.0])
        second = evaluation.att_error(self.dataset, [0.0, 3.5, 0.0, 2.0])
        self.assertEqual(first, second)

    def test_no_treated_units(self):
        dataset = Dataset(np.zeros((2, 1)), [0, 0], [1.0, 2.0])
        with self.assertRaises(BalanceError):
            evaluation.att_error(dataset, [0.0, 0.0], att_true=1.0)


class PolicyRiskTests(SimpleTestCase):
    def test_always_treat_sure_success(self):
        dataset = binary_dataset([0, 1, 0, 1], [0, 1, 0, 0], [1, 1, 1, 1])
        self.assertEqual(evaluation.policy_risk(dataset, np.ones(4)), 0.0)

    def test_hand_example(self):
        tau_hat = np.array([1.0] * 5 + [-1.0] * 5)
        y1 = np.array([1.0] * 5 + [0.0] * 5)
        y0 = np.array([0.0] * 5 + [1, 1, 1, 0, 0])
        dataset = binary_dataset(np.arange(10) % 2, y0, y1)
        self.assertAlmostEqual(evaluation.policy_risk(dataset, tau_hat), 0.2, places=12)

    def test_matches_enumeration(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            y0, y1 = rng.integers(0, 2, size=12), rng.integers(0, 2, size=12)
            tau_hat = rng.normal(size=12)
            dataset = binary_dataset(np.arange(12) % 2, y0, y1)
            self.assertAlmostEqual(evaluation.policy_risk(dataset, tau_hat),
                                   brute_force_policy_risk(tau_hat, y0, y1), places=12)

    def test_wrong_sign_is_riskier(self):
        y0 = np.zeros(10)
        y1 = np.array([1, 1, 1, 0, 1, 1, 0, 1, 1, 1])
        dataset = binary_dataset(np.arange(10) % 2, y0, y1)
        tau_hat = y1 - y0 + 0.1
        self.assertGreater(evaluation.policy_risk(dataset, -tau_hat), evaluation.policy_risk(dataset, tau_hat))

    def test_mask_restricts_units(self):
        dataset = binary_dataset([0, 1, 0, 1], [0, 0, 1, 1], [1, 1, 0, 0])
        mask = [True, True, False, False]
        self.assertEqual(evaluation.policy_risk(dataset, np.ones(4), mask=mask), 0.0)

    def test_needs_counterfactuals(self):
        dataset = Dataset(np.zeros((2, 1)), [0, 1], [0.0, 1.0])
        with self.assertRaises(MetricUnavailableError):
            evaluation.policy_risk(dataset, [1.0, 1.0])


class AucTests(SimpleTestCase):
    def test_separated(self):
        self.assertEqual(evaluation.auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]), 1.0)

    def test_all_ties(self):
        self.assertEqual(evaluation.auc([0.5] * 4, [0, 1, 0, 1]), 0.5)

    def test_hand_example(self):
        self.assertAlmostEqual(evaluation.auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]), 0.75)

    def test_negated_scores_complement(self):
        rng = np.random.default_rng(2)
        scores, labels = rng.normal(size=30), np.arange(30) % 2
        self.assertAlmostEqual(evaluation.auc(scores, labels) + evaluation.auc(-scores, labels), 1.0)

    def test_single_class(self):
        with self.assertRaises(MetricUnavailableError):
            evaluation.auc([0.1, 0.2], [1, 1])


class MetricsReportTests(SimpleTestCase):
    def test_json_keys(self):
        report = evaluation.MetricsReport(sqrt_pehe=0.5, ate_error=0.1, split='out')
        data = json.loads(report.to_json())
        self.assertEqual(sorted(data), ['ate_error', 'att_error', 'auc', 'policy_risk', 'split', 'sqrt_pehe'])
        self.assertEqual(evaluation.MetricsReport.from_dict(data), report)
        self.assertEqual(report.metrics(), {'sqrt_pehe': 0.5, 'ate_error': 0.1})

    def test_rejects_bad_values(self):
        with self.assertRaises(DomainError):
            evaluation.MetricsReport(sqrt_pehe=-1.0)
        with self.assertRaises(DomainError):
            evaluation.MetricsReport(auc=1.5)
        with self.assertRaises(DomainError):
            evaluation.MetricsReport(split='test')

    def test_evaluate_estimate_on_continuous_outcomes(self):
        mu0 = np.array([0.0, 1.0, 2.0])
        dataset = Dataset(np.zeros((3, 1)), [0, 1, 0], mu0 + 0.5, mu0 + 1.0, MU0=mu0, MU1=mu0 + 1.0)
        report = evaluation.evaluate_estimate(dataset, np.ones(3), split='in')
        self.assertEqual(report.sqrt_pehe, 0.0)
        self.assertEqual(report.att_error, 0.0)
        self.assertIsNone(report.policy_risk)
        self.assertIsNone(report.auc)

    def test_evaluate_estimate_on_binary_outcomes(self):
        dataset = binary_dataset([0, 1, 0, 1], [0, 1, 0, 0], [1, 1, 0, 1])
        y0_hat, y1_hat = np.array([0.1, 0.6, 0.2, 0.3]), np.array([0.9, 0.8, 0.4, 0.7])
        report = evaluation.evaluate_estimate(dataset, y1_hat - y0_hat, split='out', outcomes=(y0_hat, y1_hat))
        self.assertIsNone(report.sqrt_pehe)
        self.assertIsNotNone(report.policy_risk)
        self.assertTrue(0.0 <= report.auc <= 1.0)


class LinearBaselineTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(3)
        self.X = rng.normal(size=(40, 3))
        self.T = np.arange(40) % 2

    def test_lr1_recovers_treatment_coefficient(self):
        w = np.array([0.5, -1.0, 2.0])
        dataset = Dataset(self.X, self.T, self.X @ w + 1.7 * self.T)
        np.testing.assert_allclose(evaluation.ols_lr1(dataset), np.full(40, 1.7), atol=1e-8)

    def test_lr2_recovers_heterogeneous_effect(self):
        w0, w1 = np.array([0.5, -1.0, 2.0]), np.array([1.5, 0.0, -0.5])
        mu0, mu1 = self.X @ w0 + 0.3, self.X @ w1 - 0.2
        dataset = Dataset(self.X, self.T, np.where(self.T == 1, mu1, mu0), MU0=mu0, MU1=mu1)
        tau = evaluation.ols_lr2(dataset)
        self.assertLess(np.abs(tau - dataset.tau_true()).max(), 1e-8)

    def test_lr2_on_new_rows(self):
        mu0 = self.X @ np.array([1.0, 0.0, 0.0])
        dataset = Dataset(self.X, self.T, np.where(self.T == 1, mu0 + 2.0, mu0))
        np.testing.assert_allclose(evaluation.ols_lr2(dataset, X=np.ones((2, 3))), [2.0, 2.0], atol=1e-8)

    def test_identical_groups_give_zero(self):
        X = np.vstack([self.X[:20], self.X[:20]])
        T = np.repeat([0, 1], 20)
        y = np.tile(self.X[:20] @ np.array([1.0, 2.0, 3.0]), 2)
        np.testing.assert_allclose(evaluation.ols_lr2(Dataset(X, T, y)), np.zeros(40), atol=1e-8)

    def test_separate_fits_beat_pooled_fit_under_selection_bias(self):
        errors = {'ols_lr1': [], 'ols_lr2': []}
        for seed in range(20):
            dataset = datagen.gen_toy_bias(datagen.ToyBiasSpec(k=10, mu_offset=1.0, seed=seed))
            for name, estimator in (('ols_lr1', evaluation.ols_lr1), ('ols_lr2', evaluation.ols_lr2)):
                errors[name].append(evaluation.ate_error(dataset.tau_true(), estimator(dataset)))
        self.assertLess(np.median(errors['ols_lr2']), np.median(errors['ols_lr1']))

    def test_lr1_underdetermined(self):
        with self.assertRaises(DomainError):
            evaluation.ols_lr1(Dataset(self.X[:4], [0, 1, 0, 1], np.zeros(4)))

    def test_lr2_empty_group(self):
        with self.assertRaises(BalanceError):
            evaluation.ols_lr2(Dataset(self.X, np.zeros(40), np.zeros(40)))

    def test_lr2_small_group_falls_back_to_ridge(self):
        T = np.r_[np.ones(2), np.zeros(38)]
        tau = evaluation.ols_lr2(Dataset(self.X, T, self.X @ np.array([1.0, 2.0, 3.0])))
        self.assertTrue(np.isfinite(tau).all())


class KnnTests(SimpleTestCase):
    def test_hand_example(self):
        dataset = Dataset([[0.0], [0.1], [5.0]], [1, 0, 0], [2.0, 1.0, 7.0])
        self.assertAlmostEqual(evaluation.knn_cate(dataset, 1)[0], 1.0)

    def test_control_sign(self):
        dataset = Dataset([[0.0], [0.1], [5.0]], [1, 0, 0], [2.0, 1.0, 7.0])
        np.testing.assert_allclose(evaluation.knn_cate(dataset, 1)[1:], [1.0, -5.0])

    def test_duplicated_unit(self):
        dataset = Dataset([[1.0, 2.0], [1.0, 2.0], [9.0, 9.0]], [1, 0, 0], [3.0, 3.0, 0.0])
        self.assertEqual(evaluation.knn_cate(dataset, 1)[0], 0.0)

    def test_row_permutation_equivariant(self):
        rng = np.random.default_rng(4)
        dataset = Dataset(rng.normal(size=(20, 2)), np.arange(20) % 2, rng.normal(size=20))
        order = rng.permutation(20)
        np.testing.assert_allclose(evaluation.knn_cate(dataset.subset(order), 2),
                                   evaluation.knn_cate(dataset, 2)[order])

    def test_new_rows(self):
        dataset = Dataset([[0.0], [0.2], [3.0], [3.1]], [1, 0, 1, 0], [5.0, 1.0, 2.0, 4.0])
        np.testing.assert_allclose(evaluation.knn_cate(dataset, 1, X=[[0.1], [3.05]]), [4.0, -2.0])

    def test_too_many_neighbours(self):
        dataset = Dataset([[0.0], [1.0], [2.0]], [1, 0, 0], [1.0, 2.0, 3.0])
        with self.assertRaises(DomainError):
            evaluation.knn_cate(dataset, 2)
