"""
코어 앱 테스트
"""

import itertools
import math
import shutil
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
import pandas as pd
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, override_settings
from scipy import stats as sps

from core.exceptions import (
    ConfigurationError, DegenerateBootstrapError, DegenerateTableError,
    InsufficientDataError, UndefinedCorrelationError,
)
from core.models import Settings, SystemLog
from core.stats import (
    bootstrap_ci, chi_square_2x2, kruskal_wallis, mann_whitney_u, mean_statistic,
    spearman_rho, spearman_statistic,
)
from core.utils import (
    format_decimal, json_ready, parse_float_list, read_json, resolve_setting, write_json,
)


def pearson_chi_square(table):
    """N(ad - bc)^2 / (r1 r2 c1 c2)"""
    (a, b), (c, d) = table
    n = a + b + c + d
    return n * (a * d - b * c) ** 2 / ((a + b) * (c + d) * (a + c) * (b + d))


def midranks(values):
    values = list(values)
    ranks = [0.0] * len(values)
    order = sorted(range(len(values)), key=lambda i: values[i])
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def enumerated_mwu_p(a, b):
    """모든 순위 배정을 열거한 정확 양측 p"""
    ranks = midranks(list(a) + list(b))
    observed = sum(ranks[:len(a)])
    sums = [sum(ranks[i] for i in subset) for subset in itertools.combinations(range(len(ranks)), len(a))]
    lower = sum(1 for s in sums if s <= observed + 1e-9) / len(sums)
    upper = sum(1 for s in sums if s >= observed - 1e-9) / len(sums)
    return min(1.0, 2 * min(lower, upper))


def normal_mwu_p(a, b):
    """동순위 보정 분산 + 연속성 보정 정규 근사"""
    n_a, n_b = len(a), len(b)
    n = n_a + n_b
    ranks = midranks(list(a) + list(b))
    u_a = sum(ranks[:n_a]) - n_a * (n_a + 1) / 2
    u = max(u_a, n_a * n_b - u_a)
    _, counts = np.unique(np.concatenate([a, b]), return_counts=True)
    ties = float(((counts ** 3) - counts).sum())
    sigma = math.sqrt(n_a * n_b / 12 * ((n + 1) - ties / (n * (n - 1))))
    z = (u - n_a * n_b / 2 - 0.5) / sigma
    return min(1.0, 2 * sps.norm.sf(z))


def kruskal_h(groups):
    pooled = [v for group in groups for v in group]
    ranks = midranks(pooled)
    n = len(pooled)
    h, start = 0.0, 0
    for group in groups:
        r = sum(ranks[start:start + len(group)])
        h += r * r / len(group)
        start += len(group)
    h = 12 / (n * (n + 1)) * h - 3 * (n + 1)
    _, counts = np.unique(pooled, return_counts=True)
    return h / (1 - ((counts ** 3) - counts).sum() / (n ** 3 - n))


def rank_pearson(x, y):
    return float(np.corrcoef(midranks(x), midranks(y))[0, 1])


class ChiSquareTest(SimpleTestCase):
    """chi_square_2x2 테스트"""

    def test_identical_proportions(self):
        result = chi_square_2x2([[50, 50], [50, 50]])
        self.assertEqual(result.statistic, 0.0)
        self.assertAlmostEqual(result.p_value, 1.0, places=12)

    def test_perfect_separation(self):
        result = chi_square_2x2([[10, 0], [0, 10]])
        self.assertAlmostEqual(result.statistic, 20.0, places=9)
        self.assertAlmostEqual(result.p_value, 7.7e-6, delta=1e-7)
        self.assertAlmostEqual(result.p_value, sps.chi2.sf(20.0, 1), places=15)

    def test_detection_counts_of_two_models(self):
        table = [[105, 19], [76, 48]]
        result = chi_square_2x2(table)
        self.assertAlmostEqual(result.statistic, pearson_chi_square(table), places=9)
        self.assertLess(result.p_value, 0.05)
        self.assertTrue(result.significant())
        self.assertEqual(result.n, (248,))

    def test_transpose_and_row_swap_invariance(self):
        table = np.array([[105, 19], [76, 48]])
        base = chi_square_2x2(table)
        self.assertAlmostEqual(chi_square_2x2(table.T).statistic, base.statistic, places=9)
        swapped = chi_square_2x2(table[::-1])
        self.assertAlmostEqual(swapped.p_value, base.p_value, places=12)

    def test_yates_correction_flag(self):
        table = [[105, 19], [76, 48]]
        corrected = chi_square_2x2(table, correction=True)
        self.assertLess(corrected.statistic, chi_square_2x2(table).statistic)
        self.assertIn('yates', corrected.method)

    def test_zero_margin(self):
        with self.assertRaises(DegenerateTableError):
            chi_square_2x2([[5, 0], [7, 0]])
        with self.assertRaises(DegenerateTableError):
            chi_square_2x2([[0, 0], [3, 4]])

    def test_invalid_table(self):
        with self.assertRaises(ConfigurationError):
            chi_square_2x2([[1, 2, 3], [4, 5, 6]])
        with self.assertRaises(ConfigurationError):
            chi_square_2x2([[1, -2], [3, 4]])


class MannWhitneyTest(SimpleTestCase):
    """mann_whitney_u 테스트"""

    def test_separated_small_samples(self):
        result = mann_whitney_u([1, 2, 3], [10, 20, 30])
        self.assertEqual(result.statistic, 0.0)
        self.assertAlmostEqual(result.p_value, 0.1, places=12)
        self.assertAlmostEqual(result.p_value, enumerated_mwu_p([1, 2, 3], [10, 20, 30]), places=12)
        self.assertIn('exact', result.method)

    def test_equal_samples(self):
        a = [0.3, 0.5, 0.7, 0.9]
        result = mann_whitney_u(a, list(a))
        self.assertEqual(result.statistic, len(a) * len(a) / 2)
        self.assertAlmostEqual(result.p_value, 1.0, places=12)

    def test_u_statistics_sum(self):
        rng = np.random.default_rng(5)
        a, b = rng.normal(size=7), rng.normal(0.5, size=9)
        u_a = mann_whitney_u(a, b).statistic
        u_b = mann_whitney_u(b, a).statistic
        self.assertAlmostEqual(u_a + u_b, 63.0, places=9)

    def test_swap_leaves_p_unchanged(self):
        rng = np.random.default_rng(6)
        for size in ((4, 5), (15, 18)):
            a = rng.integers(0, 6, size=size[0])
            b = rng.integers(0, 6, size=size[1])
            self.assertAlmostEqual(
                mann_whitney_u(a, b).p_value, mann_whitney_u(b, a).p_value, places=12,
            )

    def test_all_identical_is_degenerate(self):
        result = mann_whitney_u([2.0] * 12, [2.0] * 15)
        self.assertTrue(result.degenerate)
        self.assertEqual(result.p_value, 1.0)

    def test_empty_sample(self):
        with self.assertRaises(InsufficientDataError):
            mann_whitney_u([], [1.0])

    def test_exact_regime_matches_enumeration(self):
        """동순위가 있는 작은 표본 50개: 열거 오라클과 일치"""
        rng = np.random.default_rng(77)
        for trial in range(50):
            n_a = int(rng.integers(1, 6))
            n_b = int(rng.integers(1, 7))
            a = rng.integers(0, 5, size=n_a).astype(float)
            b = rng.integers(0, 5, size=n_b).astype(float)
            if np.all(np.concatenate([a, b]) == a[0]):
                continue
            with self.subTest(trial=trial):
                result = mann_whitney_u(a, b)
                self.assertAlmostEqual(result.p_value, enumerated_mwu_p(a, b), delta=1e-9)

    def test_normal_regime_matches_formula(self):
        """두 50개 표본 50세트: 정규 근사 공식과 일치"""
        rng = np.random.default_rng(99)
        for trial in range(50):
            a = np.round(rng.normal(0, 1, size=50), 1)
            b = np.round(rng.normal(0.3, 1, size=50), 1)
            with self.subTest(trial=trial):
                result = mann_whitney_u(a, b)
                self.assertIn('normal', result.method)
                self.assertAlmostEqual(result.p_value, normal_mwu_p(a, b), delta=1e-9)

    def test_threshold_is_configurable(self):
        a, b = [1, 2, 3, 4], [5, 6, 7, 8]
        self.assertIn('exact', mann_whitney_u(a, b).method)
        self.assertIn('normal', mann_whitney_u(a, b, exact_max_n=4).method)


class KruskalWallisTest(SimpleTestCase):
    """kruskal_wallis 테스트"""

    def test_three_separated_groups(self):
        result = kruskal_wallis([[1, 2, 3], [4, 5, 6], [7, 8, 9]])
        self.assertAlmostEqual(result.statistic, 7.2, places=9)
        self.assertAlmostEqual(result.p_value, sps.chi2.sf(7.2, 2), places=12)

    def test_identical_multisets(self):
        result = kruskal_wallis([[1, 2, 2, 5], [5, 2, 1, 2], [2, 5, 2, 1]])
        self.assertAlmostEqual(result.statistic, 0.0, places=12)

    def test_all_equal_is_degenerate(self):
        result = kruskal_wallis([[3, 3], [3, 3, 3]])
        self.assertTrue(result.degenerate)
        self.assertEqual((result.statistic, result.p_value), (0.0, 1.0))

    def test_two_groups_agree_with_mann_whitney(self):
        rng = np.random.default_rng(8)
        a = rng.normal(0, 1, size=30)
        b = rng.normal(0.4, 1, size=30)
        self.assertAlmostEqual(
            kruskal_wallis([a, b]).p_value, mann_whitney_u(a, b).p_value, delta=0.02,
        )

    def test_matches_rank_formula(self):
        rng = np.random.default_rng(12)
        for trial in range(50):
            groups = [rng.integers(0, 8, size=int(rng.integers(2, 9))).astype(float) for _ in range(3)]
            if len(np.unique(np.concatenate(groups))) == 1:
                continue
            with self.subTest(trial=trial):
                result = kruskal_wallis(groups)
                expected = kruskal_h(groups)
                self.assertAlmostEqual(result.statistic, expected, delta=1e-9)
                self.assertAlmostEqual(result.p_value, sps.chi2.sf(expected, 2), delta=1e-9)

    def test_requires_two_nonempty_groups(self):
        with self.assertRaises(InsufficientDataError):
            kruskal_wallis([[1, 2]])
        with self.assertRaises(InsufficientDataError):
            kruskal_wallis([[1, 2], []])


class SpearmanTest(SimpleTestCase):
    """spearman_rho 테스트"""

    def test_monotone(self):
        x = [1.0, 2.0, 3.5, 8.0]
        self.assertAlmostEqual(spearman_rho(x, [2, 4, 9, 10]).statistic, 1.0, places=12)
        self.assertAlmostEqual(spearman_rho(x, [10, 9, 4, 2]).statistic, -1.0, places=12)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(0.1, 5, size=20)
        y = x + rng.normal(0, 1, size=20)
        base = spearman_rho(x, y).statistic
        self.assertAlmostEqual(spearman_rho(np.log(x), np.exp(y)).statistic, base, places=12)

    def test_matches_midrank_oracle_with_ties(self):
        rng = np.random.default_rng(30)
        for trial in range(50):
            x = rng.integers(0, 10, size=30).astype(float)
            y = x + rng.integers(-3, 4, size=30)
            with self.subTest(trial=trial):
                result = spearman_rho(x, y)
                self.assertAlmostEqual(result.statistic, rank_pearson(x, y), delta=1e-12)
                self.assertTrue(-1.0 <= result.statistic <= 1.0)
                self.assertTrue(0.0 <= result.p_value <= 1.0)

    def test_zero_rank_variance(self):
        with self.assertRaises(UndefinedCorrelationError):
            spearman_rho([1, 1, 1], [1, 2, 3])

    def test_too_few_pairs(self):
        with self.assertRaises(InsufficientDataError):
            spearman_rho([1, 2], [1, 2])

    def test_reducer_returns_none_when_undefined(self):
        self.assertIsNone(spearman_statistic(np.array([[1.0, 2.0], [1.0, 3.0], [1.0, 4.0]])))
        self.assertAlmostEqual(
            spearman_statistic(np.array([[1.0, 2.0], [2.0, 3.0], [3.0, 5.0]])), 1.0, places=12,
        )


class BootstrapTest(SimpleTestCase):
    """bootstrap_ci 테스트"""

    def test_constant_data(self):
        ci = bootstrap_ci(np.full(40, 0.75), mean_statistic, n_resamples=500, seed=3)
        self.assertEqual(ci.lower, ci.point)
        self.assertEqual(ci.upper, ci.point)

    def test_sensitivity_is_reproducible(self):
        hits = np.array([1.0] * 105 + [0.0] * 19)
        first = bootstrap_ci(hits, mean_statistic, n_resamples=10000, seed=20240101)
        second = bootstrap_ci(hits, mean_statistic, n_resamples=10000, seed=20240101)
        self.assertEqual(first, second)
        self.assertAlmostEqual(first.point, 105 / 124, places=12)
        self.assertLessEqual(first.lower, first.upper)
        self.assertEqual(first.n_resamples, 10000)
        self.assertEqual(first.rng, 'PCG64')

    def test_worker_count_does_not_change_bounds(self):
        rng = np.random.default_rng(4)
        data = rng.exponential(size=60)
        serial = bootstrap_ci(data, mean_statistic, n_resamples=3000, seed=9, workers=1)
        parallel = bootstrap_ci(data, mean_statistic, n_resamples=3000, seed=9, workers=4)
        self.assertEqual(serial, parallel)

    def test_default_resample_count_is_reproducible_across_workers(self):
        rng = np.random.default_rng(8)
        x = rng.exponential(size=40)
        pairs = np.column_stack([x, 0.9 * x + rng.normal(0, 0.1, size=40)])
        serial = bootstrap_ci(pairs, spearman_statistic, seed=20240101)
        again = bootstrap_ci(pairs, spearman_statistic, seed=20240101)
        parallel = bootstrap_ci(pairs, spearman_statistic, seed=20240101, workers=4)
        self.assertEqual(serial.n_resamples, 10000)
        self.assertEqual(serial.skipped, 0)
        self.assertEqual(serial, again)
        self.assertEqual(serial, parallel)
        self.assertLessEqual(serial.lower, serial.upper)

    def test_input_order_does_not_change_bounds(self):
        rng = np.random.default_rng(5)
        data = rng.exponential(size=60)
        ci = bootstrap_ci(data, mean_statistic, n_resamples=1000, seed=2)
        shuffled = bootstrap_ci(rng.permutation(data), mean_statistic, n_resamples=1000, seed=2)
        self.assertEqual(ci, shuffled)

    def test_different_seed_changes_bounds(self):
        data = np.random.default_rng(6).normal(size=50)
        a = bootstrap_ci(data, mean_statistic, n_resamples=1000, seed=1)
        b = bootstrap_ci(data, mean_statistic, n_resamples=1000, seed=2)
        self.assertNotEqual((a.lower, a.upper), (b.lower, b.upper))

    def test_bounds_are_resample_percentiles(self):
        """독립 재표본 오라클: 같은 스트림으로 직접 재표본해 백분위 비교"""
        data = np.sort(np.random.default_rng(7).normal(size=30))
        ci = bootstrap_ci(data, mean_statistic, n_resamples=1000, seed=11)
        values = []
        for block, size in ((0, 500), (1, 500)):
            generator = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence(11, spawn_key=(block,)))
            )
            index = generator.integers(0, 30, size=(size, 30))
            values.extend(data[index].mean(axis=1))
        lower, upper = np.percentile(values, [2.5, 97.5])
        self.assertAlmostEqual(ci.lower, lower, places=12)
        self.assertAlmostEqual(ci.upper, upper, places=12)

    def test_mean_coverage(self):
        """정규(0,1) 100개 표본 100회: 95% CI가 0을 90회 이상 포함"""
        covered = 0
        for trial in range(100):
            data = np.random.default_rng(1000 + trial).normal(0, 1, size=100)
            ci = bootstrap_ci(data, mean_statistic, n_resamples=10000, seed=trial)
            covered += ci.lower <= 0 <= ci.upper
        self.assertGreaterEqual(covered, 90)

    def test_skipped_resamples_are_counted(self):
        data = np.arange(1000, dtype=float)
        undefined = []

        def statistic(values):
            if values[0] == 999 and len(undefined) < 5:
                undefined.append(1)
                return None
            return float(values.mean())

        ci = bootstrap_ci(data, statistic, n_resamples=1000, seed=4)
        self.assertEqual(ci.skipped, len(undefined))

    def test_too_many_undefined_resamples(self):
        hits = np.array([1.0] + [0.0] * 99)

        def positive_mean(values):
            return None if values.sum() == 0 else float(values.mean())

        with self.assertRaises(DegenerateBootstrapError):
            bootstrap_ci(hits, positive_mean, n_resamples=1000, seed=1)

    def test_invalid_arguments(self):
        with self.assertRaises(InsufficientDataError):
            bootstrap_ci([], mean_statistic)
        with self.assertRaises(ConfigurationError):
            bootstrap_ci([1.0, 2.0], mean_statistic, n_resamples=50)
        with self.assertRaises(ConfigurationError):
            bootstrap_ci([1.0, 2.0], mean_statistic, n_resamples=100, confidence=1.0)

    def test_pairs_are_resampled_together(self):
        pairs = np.column_stack([np.arange(20.0), np.arange(20.0) * 2])
        ci = bootstrap_ci(pairs, spearman_statistic, n_resamples=500, seed=1)
        for bound in (ci.point, ci.lower, ci.upper):
            self.assertAlmostEqual(bound, 1.0, places=12)


class SettingsTest(TestCase):
    def test_resolution_order(self):
        with override_settings(LESIONEVAL_TAU_MM=0.7):
            self.assertEqual(resolve_setting('tau_mm'), 0.7)
            Settings.set_setting('tau_mm', 0.9)
            self.assertEqual(resolve_setting('tau_mm'), 0.9)
            self.assertEqual(resolve_setting('tau_mm', 1.2), 1.2)

    def test_typed_values(self):
        self.assertEqual(Settings.set_setting('bootstrap_n', 500).value_type, 'integer')
        self.assertEqual(Settings.get_setting('bootstrap_n'), 500)
        self.assertEqual(Settings.set_setting('strata', [1, 3]).value_type, 'float_list')
        self.assertEqual(parse_float_list(Settings.get_setting('strata')), [1.0, 3.0])
        self.assertEqual(Settings.set_setting('band_mode', 'disjoint').get_typed_value(), 'disjoint')
        self.assertIsNone(Settings.get_setting('seed'))
        self.assertEqual(Settings.get_setting('seed', 3), 3)

    def test_update_keeps_single_row(self):
        Settings.set_setting('workers', 2)
        Settings.set_setting('workers', 8, description='서버 코어 수')
        self.assertEqual(Settings.objects.filter(key='workers').count(), 1)
        self.assertEqual(Settings.get_setting('workers'), 8)

    def test_invalid_settings(self):
        with self.assertRaises(ConfigurationError):
            Settings.set_setting('retention_days', 14)
        with self.assertRaises(ConfigurationError):
            Settings.set_setting('tau_mm', 'abc', 'float')
        with self.assertRaises(ConfigurationError):
            Settings.set_setting('strata', '2,x', 'float_list')
        with self.assertRaises(ConfigurationError):
            resolve_setting('retention_days')

    def test_system_log_data_is_json_ready(self):
        entry = SystemLog.log('INFO', 'statistics', '검정', {'p': np.float64(0.5), 'h': float('nan')})
        entry.refresh_from_db()
        self.assertEqual(entry.data, {'p': 0.5, 'h': None})


class UtilsTest(SimpleTestCase):
    def test_parse_float_list(self):
        self.assertEqual(parse_float_list('0, 1,2.5'), [0.0, 1.0, 2.5])
        self.assertEqual(parse_float_list([2, 4]), [2.0, 4.0])
        self.assertEqual(parse_float_list(''), [])
        for text in ('1,a', '1,inf', 'nan'):
            with self.subTest(text=text):
                with self.assertRaises(ConfigurationError):
                    parse_float_list(text)

    def test_format_decimal(self):
        self.assertEqual(format_decimal(105 / 124), '0.85')
        self.assertEqual(format_decimal(33 / 142), '0.23')
        self.assertEqual(format_decimal(None), '')
        self.assertEqual(format_decimal(float('nan')), '')
        self.assertEqual(format_decimal(1 / 3, 4), '0.3333')

    def test_json_ready(self):
        value = {1: (np.int64(2), np.float64(0.5)), 'x': [float('inf'), Path('/a')]}
        self.assertEqual(json_ready(value), {'1': [2, 0.5], 'x': [None, '/a']})

    def test_write_json_is_deterministic(self):
        root = Path(tempfile.mkdtemp())
        try:
            first = write_json(root / 'a.json', {'b': 1, 'a': [1.5, None]}).read_bytes()
            second = write_json(root / 'b.json', {'a': [1.5, None], 'b': 1}).read_bytes()
            self.assertEqual(first, second)
            self.assertEqual(read_json(root / 'a.json'), {'a': [1.5, None], 'b': 1})
        finally:
            shutil.rmtree(root, ignore_errors=True)


class CommandTestMixin:
    """임시 디렉터리에 팬텀 코호트를 만들고 명령을 실행"""

    def setUp(self):
        self.root = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.root, ignore_errors=True)

    def call(self, *args, **options):
        out = StringIO()
        call_command(*args, stdout=out, stderr=StringIO(), **options)
        return out.getvalue()

    def phantom(self, name='cohort', *extra):
        self.call(
            'phantom', '--out-dir', str(self.root / name),
            '--n-positive', '4', '--n-negative', '2', '--n-lesions', '12', '--n-missed', '1',
            '--n-false-positives', '2', '--seed', '11', '--dims', '40,40,40', '--max-diameter', '4.5',
            *extra,
        )
        return self.root / name / 'manifest.json'

    def evaluate(self, manifest, out_name='out'):
        output = self.call(
            'evaluate', '--manifest', str(manifest), '--out-dir', str(self.root / out_name),
            '--bootstrap-n', '200', '--workers', '1',
        )
        return output, self.root / out_name


class CommandTest(CommandTestMixin, TestCase):
    def test_phantom_and_evaluate(self):
        manifest = self.phantom()
        totals = read_json(manifest)['totals']
        self.assertEqual((totals['studies'], totals['tp'], totals['fn'], totals['fp']), (6, 11, 1, 2))

        output, out_dir = self.evaluate(manifest)
        self.assertIn('TP 11 / FN 1 / FP 2', output)
        for name in ('report.json', 'report.csv', 'lesions.csv'):
            self.assertTrue((out_dir / name).exists())
        report = read_json(out_dir / 'report.json')
        self.assertEqual(report['schema_version'], '1.0')
        self.assertEqual(report['counts'], {'tp': 11, 'fn': 1, 'fp': 2})

    def test_curves_and_scatter(self):
        _, out_dir = self.evaluate(self.phantom())
        output = self.call('curves', str(out_dir / 'lesions.csv'), '--thresholds', '0,2,4')
        self.assertTrue((out_dir / 'curves.csv').exists())
        self.assertTrue((out_dir / 'curves.svg').exists())
        self.assertIn('0.33', output)

        output = self.call('scatter', str(out_dir / 'lesions.csv'), '--out-dir', str(self.root / 'scatter'))
        self.assertIn('TP 11개', output)
        summary = read_json(self.root / 'scatter' / 'scatter.json')
        self.assertAlmostEqual(summary['spearman_diameter']['statistic'], 1.0, places=12)

    def test_compare_report_with_itself(self):
        _, out_dir = self.evaluate(self.phantom())
        report = str(out_dir / 'report.json')
        self.call('compare', report, report, '--labels', 'a', 'b', '--out-dir', str(self.root / 'cmp'))
        payload = read_json(self.root / 'cmp' / 'comparison.json')
        detection = payload['pairwise'][0]['tests'][0]
        self.assertEqual(detection['metric'], 'detection')
        self.assertEqual(detection['p_value'], 1.0)
        self.assertFalse(detection['significant'])
        self.assertTrue((self.root / 'cmp' / 'comparison.csv').exists())

    def test_compare_different_cohorts_exits_with_data_error(self):
        _, first = self.evaluate(self.phantom('a'), 'out_a')
        _, second = self.evaluate(self.phantom('b', '--n-lesions', '10', '--seed', '12'), 'out_b')
        with self.assertRaises(CommandError) as raised:
            self.call('compare', str(first / 'report.json'), str(second / 'report.json'))
        self.assertEqual(raised.exception.returncode, 2)
        self.assertTrue(SystemLog.objects.filter(level='ERROR', category='statistics').exists())

    def test_configuration_errors_exit_with_one(self):
        for args in (
            ('evaluate', '--gt-dir', str(self.root / 'missing'), '--pred-dir', str(self.root)),
            ('evaluate', '--gt-dir', str(self.root)),
            ('evaluate', '--gt-dir', str(self.root), '--pred-dir', str(self.root), '--connectivity', '7'),
            ('evaluate', '--gt-dir', str(self.root), '--pred-dir', str(self.root), '--strata', '4,2'),
            ('phantom', '--out-dir', str(self.root / 'p'), '--n-positive', '3', '--n-lesions', '2'),
        ):
            with self.subTest(args=args):
                with self.assertRaises(CommandError) as raised:
                    self.call(*args)
                self.assertEqual(raised.exception.returncode, 1)

    def test_scatter_with_too_few_true_positives_exits_with_three(self):
        manifest = self.phantom('small', '--n-positive', '2', '--n-lesions', '2', '--n-missed', '0',
                                '--n-false-positives', '0')
        _, out_dir = self.evaluate(manifest)
        with self.assertRaises(CommandError) as raised:
            self.call('scatter', str(out_dir / 'lesions.csv'))
        self.assertEqual(raised.exception.returncode, 3)


class EndToEndCohortTest(CommandTestMixin, TestCase):
    """105/124 검출, 142 case 중 FP 33개 코호트"""

    def test_headline_display(self):
        output = self.call(
            'phantom', '--out-dir', str(self.root / 'cohort'),
            '--n-positive', '101', '--n-negative', '41', '--n-lesions', '124', '--n-missed', '19',
            '--n-false-positives', '33', '--seed', '2024', '--dims', '40,40,40', '--max-diameter', '6',
            '--workers', '4',
        )
        self.assertIn('기대 TP 105 / FN 19 / FP 33', output)

        output = self.call(
            'evaluate', '--manifest', str(self.root / 'cohort' / 'manifest.json'),
            '--out-dir', str(self.root / 'out'), '--bootstrap-n', '200', '--workers', '4',
        )
        self.assertIn('TP 105 / FN 19 / FP 33', output)
        lines = {line.split()[0]: line for line in output.splitlines() if line.startswith('  ')}
        self.assertEqual(lines['Sensitivity'].split()[1], '0.85')
        self.assertEqual(lines['FP/case'].split()[1], '0.23')

        report = read_json(self.root / 'out' / 'report.json')
        self.assertEqual(report['n_cases'], 142)
        sensitivity = next(m for m in report['metrics'] if m['metric'] == 'sensitivity' and m['stratum'] == 'all')
        self.assertAlmostEqual(sensitivity['point'], 105 / 124)

        table = pd.read_csv(self.root / 'out' / 'report.csv', dtype=str, keep_default_na=False)
        rows = table[table['metric'] == 'sensitivity'].set_index('stratum')
        for stratum in ('< 2mm', '< 4mm', '≥ 4mm'):
            with self.subTest(stratum=stratum):
                self.assertNotEqual(rows.loc[stratum, 'lower'], '')
                self.assertNotEqual(rows.loc[stratum, 'upper'], '')
