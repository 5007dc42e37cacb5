"""
매칭, 병변 지표, 코호트 집계, 평가 서비스 테스트
"""

import shutil
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase, TestCase
from scipy import ndimage
from scipy.spatial.distance import cdist, pdist

from core.exceptions import (
    ConfigurationError, EmptyCohortError, IncomparableRunsError, IncompatibleGridsError,
    InsufficientDataError, TooManySkippedStudiesError,
)
from core.models import SystemLog
from core.stats import mann_whitney_u
from core.utils import read_json
from evaluation import reports
from evaluation.cohort import (
    ALL, StratumSpec, aggregate_cohort, aggregate_rows, cumulative_curves, size_comparison,
    size_correlation,
)
from evaluation.matching import match_lesions
from evaluation.metrics import (
    DISTANCE_TOLERANCE, LesionMetrics, dice_lesionwise, evaluate_masks, nsd_lesionwise,
    study_metrics,
)
from evaluation.models import EvaluationRun, LesionRecord, StudyResult
from evaluation.services import (
    ComparisonService, EvaluationService, LoadedRun, RunConfig, curves_from_lesions,
    pair_by_stem, pair_from_manifest, scatter_from_lesions,
)
from evaluation.tasks import evaluate_run
from lesions.components import connected_components
from volumes.grid import BinaryMask, VoxelGrid
from volumes.nifti import save_volume

NEIGHBOURS_6 = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]


def mask_of(array, spacing=(1.0, 1.0, 1.0)):
    return BinaryMask.from_array(array, spacing)


def voxel_set(array):
    return {tuple(int(c) for c in p) for p in np.argwhere(array)}


def set_surface(voxels):
    """6-이웃 중 하나라도 집합 밖이면 표면 (오라클)"""
    return {
        v for v in voxels
        if any((v[0] + dx, v[1] + dy, v[2] + dz) not in voxels for dx, dy, dz in NEIGHBOURS_6)
    }


def set_dice(gt, pred):
    return 2 * len(gt & pred) / (len(gt) + len(pred))


def set_nsd(gt, pred, tau, spacing):
    """모든 표면 쌍 거리로 계산한 대칭 NSD (오라클)"""
    spacing = np.asarray(spacing, dtype=np.float64)
    gt_surface = np.array(sorted(set_surface(gt)), dtype=np.float64) * spacing
    pred_surface = np.array(sorted(set_surface(pred)), dtype=np.float64) * spacing
    distance = cdist(pred_surface, gt_surface)
    limit = tau + DISTANCE_TOLERANCE
    close = np.count_nonzero(distance.min(axis=1) <= limit) + np.count_nonzero(distance.min(axis=0) <= limit)
    return close / (len(pred_surface) + len(gt_surface))


def set_diameter(voxels, spacing):
    points = np.array(sorted(voxels), dtype=np.float64) * np.asarray(spacing)
    return float(pdist(points).max()) if len(points) > 1 else 0.0


def lesion_sets(lesion_set):
    return {lesion.id: {tuple(int(c) for c in v) for v in lesion.voxels} for lesion in lesion_set}


def cube(dims, low, size):
    array = np.zeros(dims, dtype=bool)
    x, y, z = low
    array[x:x + size, y:y + size, z:z + size] = True
    return array


def ball(n, radius_voxels):
    idx = np.indices((n, n, n)) - n // 2
    return (idx ** 2).sum(axis=0) <= radius_voxels ** 2


class MatchLesionsTest(SimpleTestCase):
    """match_lesions 테스트"""

    def setUp(self):
        self.gt = np.zeros((12, 6, 6), dtype=bool)
        self.gt[1:3, 1:3, 1:3] = True
        self.gt[7:9, 1:3, 1:3] = True

    def test_identical_prediction(self):
        gt = connected_components(mask_of(self.gt))
        match = match_lesions(gt, connected_components(mask_of(self.gt)))
        self.assertEqual((match.tp_count, match.fn_count, match.fp_count), (2, 0, 0))

    def test_one_of_two_detected(self):
        pred = np.zeros_like(self.gt)
        pred[2, 2, 2] = True
        match = match_lesions(connected_components(mask_of(self.gt)), connected_components(mask_of(pred)))
        self.assertEqual((match.tp_count, match.fn_count, match.fp_count), (1, 1, 0))
        self.assertEqual(match.false_negatives, (2,))

    def test_disjoint_prediction(self):
        pred = np.zeros_like(self.gt)
        pred[4:6, 4:6, 4:6] = True
        match = match_lesions(connected_components(mask_of(self.gt)), connected_components(mask_of(pred)))
        self.assertEqual((match.tp_count, match.fn_count, match.fp_count), (0, 2, 1))

    def test_prediction_spanning_two_lesions(self):
        pred = np.zeros_like(self.gt)
        pred[2:8, 2, 2] = True
        match = match_lesions(connected_components(mask_of(self.gt)), connected_components(mask_of(pred)))
        self.assertEqual(match.true_positive_pairs, ((1, (1,)), (2, (1,))))
        self.assertEqual(match.false_positives, ())

    def test_several_predictions_on_one_lesion(self):
        pred = np.zeros_like(self.gt)
        pred[1, 1, 1] = True
        pred[2, 2, 2] = True
        match = match_lesions(connected_components(mask_of(self.gt), 6), connected_components(mask_of(pred), 6))
        self.assertEqual(match.true_positive_pairs, ((1, (1, 2)),))
        self.assertEqual(match.tp_count, 1)

    def test_geometry_mismatch(self):
        gt = connected_components(mask_of(self.gt))
        other = connected_components(mask_of(self.gt, spacing=(0.5, 0.5, 0.5)))
        with self.assertRaises(IncompatibleGridsError):
            match_lesions(gt, other)


class LesionMetricTest(SimpleTestCase):
    """dice_lesionwise / nsd_lesionwise 테스트"""

    def test_dice_identical(self):
        gt = connected_components(mask_of(cube((6, 6, 6), (1, 1, 1), 3)))
        self.assertEqual(dice_lesionwise(gt.get(1), gt.get(1).voxels), 1.0)

    def test_dice_shifted_cube(self):
        dims = (10, 6, 6)
        gt = connected_components(mask_of(cube(dims, (1, 1, 1), 4)))
        pred = connected_components(mask_of(cube(dims, (3, 1, 1), 4)))
        self.assertEqual(dice_lesionwise(gt.get(1), pred.get(1).voxels), 0.5)

    def test_dice_without_prediction(self):
        gt = connected_components(mask_of(cube((6, 6, 6), (1, 1, 1), 3)))
        self.assertEqual(dice_lesionwise(gt.get(1), np.empty((0, 3), dtype=np.int64)), 0.0)

    def test_nsd_identical(self):
        gt = connected_components(mask_of(cube((8, 8, 8), (1, 1, 1), 5)))
        self.assertEqual(nsd_lesionwise(gt.get(1), gt.get(1).voxels, 0.5, gt.spacing), 1.0)

    def test_nsd_far_apart(self):
        dims = (14, 5, 5)
        gt = connected_components(mask_of(cube(dims, (0, 0, 0), 3)))
        pred = connected_components(mask_of(cube(dims, (8, 0, 0), 3)))
        self.assertEqual(nsd_lesionwise(gt.get(1), pred.get(1).voxels, 0.5, gt.spacing), 0.0)

    def test_nsd_shifted_cube_matches_all_pairs_oracle(self):
        dims = (13, 12, 12)
        spacing = (0.5, 0.5, 0.5)
        gt_array = cube(dims, (1, 1, 1), 10)
        pred_array = cube(dims, (2, 1, 1), 10)
        gt = connected_components(mask_of(gt_array, spacing))
        pred = connected_components(mask_of(pred_array, spacing))
        for tau in (0.25, 0.5, 0.75):
            with self.subTest(tau=tau):
                expected = set_nsd(voxel_set(gt_array), voxel_set(pred_array), tau, spacing)
                actual = nsd_lesionwise(gt.get(1), pred.get(1).voxels, tau, spacing)
                self.assertLessEqual(abs(actual - expected), 1e-12)
        self.assertEqual(nsd_lesionwise(gt.get(1), pred.get(1).voxels, 0.5, spacing), 1.0)

    def test_nsd_rejects_invalid_arguments(self):
        gt = connected_components(mask_of(cube((6, 6, 6), (1, 1, 1), 3)))
        with self.assertRaises(ConfigurationError):
            nsd_lesionwise(gt.get(1), gt.get(1).voxels, 0.0, gt.spacing)
        with self.assertRaises(ValueError):
            nsd_lesionwise(gt.get(1), np.empty((0, 3), dtype=np.int64), 0.5, gt.spacing)


class OracleEquivalenceTest(SimpleTestCase):
    """무작위 마스크에서 매칭/DICE/NSD/크기를 집합 기반 오라클과 비교"""

    SPACINGS = [(1.0, 1.0, 1.0), (0.5, 0.5, 0.5), (0.3, 0.3, 0.6), (0.7, 0.4, 0.5)]

    def random_pair(self, rng):
        dims = tuple(int(d) for d in rng.integers(4, 13, size=3))
        gt = rng.random(dims) < rng.uniform(0.05, 0.3)
        pred = rng.random(dims) < rng.uniform(0.05, 0.3)
        if rng.random() < 0.5:
            # 일부는 GT를 흔든 예측
            pred = (gt & (rng.random(dims) < 0.7)) | (rng.random(dims) < 0.05)
        return gt, pred

    def test_random_masks(self):
        rng = np.random.default_rng(7)
        for trial in range(200):
            gt_array, pred_array = self.random_pair(rng)
            spacing = self.SPACINGS[trial % len(self.SPACINGS)]
            tau = float(rng.choice([0.3, 0.5, 1.0]))
            connectivity = int(rng.choice([6, 18, 26]))
            gt = connected_components(mask_of(gt_array, spacing), connectivity)
            pred = connected_components(mask_of(pred_array, spacing), connectivity)
            match, metrics = study_metrics(gt, pred, tau)

            gt_sets = lesion_sets(gt)
            pred_sets = lesion_sets(pred)
            expected_tp = {
                gt_id: tuple(sorted(p for p, pv in pred_sets.items() if gv & pv))
                for gt_id, gv in gt_sets.items()
            }
            expected_fp = tuple(sorted(
                p for p, pv in pred_sets.items() if not any(pv & gv for gv in gt_sets.values())
            ))
            with self.subTest(trial=trial):
                self.assertEqual(
                    match.true_positive_pairs,
                    tuple((g, ps) for g, ps in sorted(expected_tp.items()) if ps),
                )
                self.assertEqual(match.false_negatives, tuple(g for g, ps in sorted(expected_tp.items()) if not ps))
                self.assertEqual(match.false_positives, expected_fp)
                self.assertEqual(match.tp_count + match.fn_count, len(gt))

                voxel_volume = spacing[0] * spacing[1] * spacing[2]
                for m in metrics:
                    g = gt_sets[m.gt_id]
                    p = set().union(*(pred_sets[i] for i in m.pred_ids))
                    self.assertLessEqual(abs(m.dice - set_dice(g, p)), 1e-12)
                    self.assertLessEqual(abs(m.nsd - set_nsd(g, p, tau, spacing)), 1e-12)
                    self.assertAlmostEqual(m.gt_volume_mm3, len(g) * voxel_volume, places=9)
                    self.assertAlmostEqual(m.pred_volume_mm3, len(p) * voxel_volume, places=9)
                    self.assertLessEqual(abs(m.gt_diameter_mm - set_diameter(g, spacing)), 1e-12)
                    self.assertLessEqual(abs(m.pred_diameter_mm - set_diameter(p, spacing)), 1e-12)
                    self.assertTrue(0 <= m.dice <= 1 and 0 <= m.nsd <= 1)
                    if m.dice == 1.0:
                        self.assertEqual(m.nsd, 1.0)
                        self.assertEqual(m.volume_diff_mm3, 0.0)


class InvarianceTest(SimpleTestCase):
    """평행 이동, 팽창 단조성, 크기 차이 부호"""

    def blobs(self, seed):
        rng = np.random.default_rng(seed)
        gt = ndimage.binary_opening(rng.random((10, 10, 10)) < 0.35)
        pred = ndimage.binary_opening(rng.random((10, 10, 10)) < 0.35) | (gt & (rng.random((10, 10, 10)) < 0.5))
        return gt, pred

    def test_translation_invariance(self):
        for seed in range(10):
            gt_small, pred_small = self.blobs(seed)
            values = []
            for offset in ((0, 0, 0), (3, 2, 5)):
                gt = np.zeros((16, 16, 16), dtype=bool)
                pred = np.zeros((16, 16, 16), dtype=bool)
                region = tuple(slice(o, o + 10) for o in offset)
                gt[region] = gt_small
                pred[region] = pred_small
                _, metrics = study_metrics(
                    connected_components(mask_of(gt, (0.5, 0.5, 0.5))),
                    connected_components(mask_of(pred, (0.5, 0.5, 0.5))),
                )
                values.append([(m.dice, m.nsd) for m in metrics])
            with self.subTest(seed=seed):
                self.assertEqual(len(values[0]), len(values[1]))
                np.testing.assert_allclose(values[0], values[1], rtol=0, atol=1e-12)

    def test_detection_is_monotone_under_dilation(self):
        structure = ndimage.generate_binary_structure(3, 1)
        for seed in range(10):
            gt, pred = self.blobs(seed)
            gt_set = connected_components(mask_of(gt))
            before = match_lesions(gt_set, connected_components(mask_of(pred)))
            grown = ndimage.binary_dilation(pred, structure=structure)
            after = match_lesions(gt_set, connected_components(mask_of(grown)))
            with self.subTest(seed=seed):
                self.assertLessEqual(after.fn_count, before.fn_count)
                detected = {gt_id for gt_id, _ in before.true_positive_pairs}
                self.assertTrue(detected <= {gt_id for gt_id, _ in after.true_positive_pairs})

    def test_size_difference_sign(self):
        structure = ndimage.generate_binary_structure(3, 1)
        gt = ball(17, 6)
        spacing = (0.5, 0.5, 0.5)
        gt_set = connected_components(mask_of(gt, spacing))

        _, eroded = study_metrics(
            gt_set, connected_components(mask_of(ndimage.binary_erosion(gt, structure), spacing)),
        )
        self.assertGreater(eroded[0].volume_diff_mm3, 0)
        self.assertGreater(eroded[0].diameter_diff_mm, 0)

        _, dilated = study_metrics(
            gt_set, connected_components(mask_of(ndimage.binary_dilation(gt, structure), spacing)),
        )
        self.assertLess(dilated[0].volume_diff_mm3, 0)
        self.assertLess(dilated[0].diameter_diff_mm, 0)


class StudyEvaluationTest(SimpleTestCase):
    """evaluate_masks / StudyEvaluation.rows 테스트"""

    def test_volume_difference_sign(self):
        gt = np.zeros((12, 3, 3), dtype=bool)
        gt[0:10, 1, 1] = True
        pred = np.zeros_like(gt)
        pred[1:9, 1, 1] = True
        study = evaluate_masks('s1', mask_of(gt), mask_of(pred))
        self.assertEqual(study.metrics[0].volume_diff_mm3, 2.0)
        self.assertEqual(study.metrics[0].diameter_diff_mm, 2.0)

    def test_missing_prediction(self):
        gt = cube((8, 8, 8), (1, 1, 1), 2) | cube((8, 8, 8), (5, 5, 5), 2)
        study = evaluate_masks('s1', mask_of(gt), None)
        self.assertTrue(study.missing_prediction)
        self.assertEqual(study.metrics, [])
        self.assertEqual([row['status'] for row in study.rows()], ['FN', 'FN'])

    def test_rows(self):
        dims = (12, 6, 6)
        gt = cube(dims, (0, 0, 0), 2) | cube(dims, (5, 0, 0), 2)
        pred = cube(dims, (0, 0, 0), 2) | cube(dims, (9, 3, 3), 3)
        study = evaluate_masks('s1', mask_of(gt, (0.5, 0.5, 0.5)), mask_of(pred, (0.5, 0.5, 0.5)))
        rows = study.rows()
        self.assertEqual([(row['lesion_id'], row['status']) for row in rows], [(1, 'TP'), (2, 'FN'), (2, 'FP')])
        tp, fn, fp = rows
        self.assertEqual(tp['pred_ids'], '1')
        self.assertEqual(tp['dice'], 1.0)
        self.assertEqual(tp['gt_volume_mm3'], 8 * 0.125)
        self.assertIsNone(fn['pred_volume_mm3'])
        self.assertIsNone(fn['dice'])
        self.assertIsNone(fp['gt_diameter_mm'])
        self.assertEqual(fp['pred_volume_mm3'], 27 * 0.125)
        self.assertEqual(study.summary()['fp'], 1)

    def test_grid_mismatch(self):
        gt = mask_of(cube((6, 6, 6), (1, 1, 1), 2))
        pred = mask_of(cube((6, 6, 7), (1, 1, 1), 2))
        with self.assertRaises(IncompatibleGridsError):
            evaluate_masks('s1', gt, pred)


def lesion_row(study_id, lesion_id, status, gt_diameter=None, pred_diameter=None, dice=None):
    """집계 테스트용 병변 행 (부피는 지름에서 유도)"""
    return {
        'study_id': study_id,
        'lesion_id': lesion_id,
        'status': status,
        'pred_ids': '' if status == 'FN' else str(lesion_id),
        'gt_diameter_mm': gt_diameter,
        'pred_diameter_mm': pred_diameter,
        'gt_volume_mm3': None if gt_diameter is None else gt_diameter ** 3 / 2,
        'pred_volume_mm3': None if pred_diameter is None else pred_diameter ** 3 / 2,
        'dice': dice,
        'nsd': None if dice is None else min(1.0, dice + 0.1),
    }


def table_two_cohort():
    """142 스터디 (양성 101, 병변 124), 105 검출, FP 33"""
    study_ids = [f"s{i:03d}" for i in range(142)]
    owners = study_ids[:101] + study_ids[:23]
    rows = []
    for index, study_id in enumerate(owners):
        diameter = 1.0 + (index % 60) * 0.1
        if index < 105:
            rows.append(lesion_row(study_id, index + 1, 'TP', diameter, diameter * 0.95 + 0.01 * (index % 7),
                                   dice=0.5 + 0.004 * index))
        else:
            rows.append(lesion_row(study_id, index + 1, 'FN', diameter))
    for index in range(33):
        rows.append(lesion_row(study_ids[index], 500 + index, 'FP', pred_diameter=0.5 + 0.2 * index))
    return rows, study_ids


class AggregateRowsTest(SimpleTestCase):
    """aggregate_rows 집계 테스트"""

    def cells(self, rows, study_ids, n_cases, strata=None):
        return {
            (cell.metric, cell.stratum): cell
            for cell in aggregate_rows(rows, study_ids, n_cases, strata or StratumSpec(),
                                       n_resamples=200, seed=11)
        }

    def test_detection_counts(self):
        rows, study_ids = table_two_cohort()
        cells = self.cells(rows, study_ids, 142)
        sensitivity = cells[('sensitivity', ALL)]
        fp_per_case = cells[('fp_per_case', ALL)]
        self.assertAlmostEqual(sensitivity.point, 0.8468, places=4)
        self.assertEqual(sensitivity.numerator, 105)
        self.assertEqual(sensitivity.n, 124)
        self.assertEqual(sensitivity.unit, 'lesion')
        self.assertAlmostEqual(fp_per_case.point, 0.2324, places=4)
        self.assertEqual(fp_per_case.n, 142)
        self.assertEqual(fp_per_case.unit, 'study')
        for cell in cells.values():
            with self.subTest(cell=(cell.metric, cell.stratum)):
                self.assertIsNotNone(cell.ci)
                self.assertLessEqual(cell.lower, cell.upper)

    def test_overlapping_strata(self):
        rows = [lesion_row('a', 1, 'FN', 1.0), lesion_row('a', 2, 'FN', 1.5),
                lesion_row('b', 1, 'TP', 3.0, 3.0, 0.8), lesion_row('b', 2, 'FN', 3.5)]
        rows += [lesion_row('c', i, 'TP', 4.0 + 0.1 * i, 4.1 + 0.1 * i, 0.9) for i in range(1, 21)]
        rows += [lesion_row('c', 100, 'FP', pred_diameter=1.0), lesion_row('d', 100, 'FP', pred_diameter=6.0)]
        cells = self.cells(rows, ['a', 'b', 'c', 'd'], 4)
        self.assertEqual(cells[('sensitivity', '< 2mm')].point, 0.0)
        self.assertEqual(cells[('sensitivity', '< 4mm')].point, 0.25)
        self.assertEqual(cells[('sensitivity', '≥ 4mm')].point, 1.0)
        self.assertEqual(cells[('fp_per_case', '< 2mm')].point, 0.25)
        self.assertEqual(cells[('fp_per_case', '< 4mm')].point, 0.25)
        self.assertEqual(cells[('fp_per_case', '≥ 4mm')].point, 0.25)
        self.assertEqual(cells[('fp_per_case', ALL)].point, 0.5)

    def test_disjoint_strata_recombine(self):
        rows, study_ids = table_two_cohort()
        cells = self.cells(rows, study_ids, 142, StratumSpec((2.0, 4.0), 'disjoint'))
        bands = ['< 2mm', '2–4mm', '≥ 4mm']
        for metric in ('sensitivity', 'fp_per_case'):
            with self.subTest(metric=metric):
                total = sum(cells[(metric, band)].numerator for band in bands)
                self.assertEqual(total, cells[(metric, ALL)].numerator)
        self.assertEqual(sum(cells[('sensitivity', band)].n for band in bands), 124)

    def test_no_ground_truth_lesions(self):
        rows = [lesion_row('a', 1, 'FP', pred_diameter=2.0)]
        cells = self.cells(rows, ['a', 'b'], 2)
        self.assertIsNone(cells[('sensitivity', ALL)].point)
        self.assertIsNone(cells[('dice', ALL)].point)
        self.assertEqual(cells[('fp_per_case', ALL)].point, 0.5)

    def test_no_predictions(self):
        rows = [lesion_row('a', 1, 'FN', 2.0)]
        cells = self.cells(rows, ['a', 'b'], 2)
        self.assertEqual(cells[('fp_per_case', ALL)].point, 0.0)
        self.assertEqual(cells[('sensitivity', ALL)].point, 0.0)
        self.assertIn('fewer than 3', cells[('spearman_volume', ALL)].note)

    def test_negative_cases_pad_fp_denominator(self):
        rows = [lesion_row('a', 1, 'FP', pred_diameter=2.0)]
        self.assertEqual(self.cells(rows, ['a'], 4)[('fp_per_case', ALL)].point, 0.25)

    def test_size_difference_sign(self):
        rows = [lesion_row('a', 1, 'TP', 3.0, 2.0, 0.7)]
        cells = self.cells(rows, ['a'], 1)
        self.assertEqual(cells[('diameter_diff_mm', ALL)].point, 1.0)
        self.assertEqual(cells[('volume_diff_mm3', ALL)].point, (27 - 8) / 2)

    def test_three_true_positives_keep_rank_correlation_point(self):
        """TP 3개면 상수 재표본이 약 1/9이라 Spearman CI만 비고 나머지 칸은 그대로"""
        rows = [lesion_row('a', i, 'TP', 1.0 + i, 0.8 + i, 0.6 + 0.1 * i) for i in range(1, 4)]
        cells = {
            (cell.metric, cell.stratum): cell
            for cell in aggregate_rows(rows, ['a'], 1, StratumSpec(), seed=11)
        }
        for metric in ('spearman_volume', 'spearman_diameter'):
            with self.subTest(metric=metric):
                cell = cells[(metric, ALL)]
                self.assertAlmostEqual(cell.point, 1.0, places=12)
                self.assertIsNone(cell.ci)
                self.assertEqual(cell.n, 3)
                self.assertIn('confidence interval undefined', cell.note)
        for metric in ('sensitivity', 'dice', 'nsd', 'volume_diff_mm3', 'diameter_diff_mm'):
            with self.subTest(metric=metric):
                self.assertEqual(cells[(metric, ALL)].ci.n_resamples, 10000)


class StratumSpecTest(SimpleTestCase):

    def test_band_labels(self):
        self.assertEqual([b.label for b in StratumSpec().bands], ['< 2mm', '< 4mm', '≥ 4mm'])
        self.assertEqual([b.label for b in StratumSpec.parse('2,4', 'disjoint').bands],
                         ['< 2mm', '2–4mm', '≥ 4mm'])
        self.assertEqual(StratumSpec.parse([1, 3.5]).boundaries_mm, (1.0, 3.5))

    def test_invalid_boundaries(self):
        for text in ('4,2', '0,2', '', '2,x'):
            with self.subTest(text=text):
                with self.assertRaises(ConfigurationError):
                    StratumSpec.parse(text)
        with self.assertRaises(ConfigurationError):
            StratumSpec((2.0,), 'nested')


class CumulativeCurvesTest(SimpleTestCase):

    def setUp(self):
        self.rows = [
            lesion_row('a', 1, 'FN', 1.0),
            lesion_row('a', 2, 'FN', 3.0),
            lesion_row('b', 1, 'TP', 5.0, 5.0, 0.6),
            lesion_row('b', 2, 'TP', 7.0, 6.5, 0.8),
            lesion_row('b', 3, 'FP', pred_diameter=0.5),
            lesion_row('c', 1, 'FP', pred_diameter=6.0),
        ]

    def test_threshold_semantics(self):
        points = cumulative_curves(self.rows, [0, 4, 6, 8], n_cases=4)
        self.assertEqual([p.sensitivity for p in points[:3]], [0.5, 1.0, 1.0])
        self.assertEqual([p.fp_per_case for p in points], [0.5, 0.25, 0.25, 0.0])
        self.assertAlmostEqual(points[0].mean_dice, 0.7)
        self.assertEqual(points[2].mean_dice, 0.8)
        self.assertIsNone(points[3].sensitivity)
        self.assertIsNone(points[3].mean_dice)
        self.assertEqual((points[1].n_gt, points[1].n_tp, points[1].n_fp), (2, 2, 1))

    def test_zero_threshold_matches_overall(self):
        cells = {
            (cell.metric, cell.stratum): cell
            for cell in aggregate_rows(self.rows, ['a', 'b', 'c', 'd'], 4, StratumSpec(), n_resamples=200)
        }
        point = cumulative_curves(self.rows, [0.0], 4)[0]
        self.assertEqual(point.sensitivity, cells[('sensitivity', ALL)].point)
        self.assertEqual(point.fp_per_case, cells[('fp_per_case', ALL)].point)

    def test_thresholds_must_ascend(self):
        with self.assertRaises(ConfigurationError):
            cumulative_curves(self.rows, [2, 1], 4)
        with self.assertRaises(EmptyCohortError):
            cumulative_curves(self.rows, [0], 0)


class SizeCorrelationTest(SimpleTestCase):

    def metrics(self, gt_sizes, pred_sizes):
        return [
            LesionMetrics(i, (i,), 1.0, 1.0, g ** 3, p ** 3, g, p)
            for i, (g, p) in enumerate(zip(gt_sizes, pred_sizes), start=1)
        ]

    def test_monotone_and_reversed(self):
        rho_volume, rho_diameter = size_correlation(self.metrics([1, 2, 3, 4], [2, 3, 5, 9]))
        self.assertAlmostEqual(rho_volume.statistic, 1.0, places=12)
        self.assertAlmostEqual(rho_diameter.statistic, 1.0, places=12)
        rho_volume, rho_diameter = size_correlation(self.metrics([1, 2, 3, 4], [9, 5, 3, 2]))
        self.assertAlmostEqual(rho_volume.statistic, -1.0, places=12)
        self.assertAlmostEqual(rho_diameter.statistic, -1.0, places=12)

    def test_too_few_pairs(self):
        with self.assertRaises(InsufficientDataError):
            size_correlation(self.metrics([1, 2], [1, 2]))


class SizeComparisonTest(SimpleTestCase):
    """TP 병변의 GT/예측 크기 분포 비교"""

    def rows(self):
        rows = [lesion_row('a', i, 'TP', 2.0 + i, (2.0 + i) / 2, 0.6) for i in range(1, 9)]
        rows.append(lesion_row('b', 1, 'FN', 30.0))
        rows.append(lesion_row('b', 2, 'FP', pred_diameter=0.1))
        return rows

    def test_matches_direct_mann_whitney(self):
        rows = self.rows()
        comparison = size_comparison(rows)
        tp_rows = [row for row in rows if row['status'] == 'TP']
        for measure, gt_key, pred_key in (('volume_mm3', 'gt_volume_mm3', 'pred_volume_mm3'),
                                          ('diameter_mm', 'gt_diameter_mm', 'pred_diameter_mm')):
            with self.subTest(measure=measure):
                gt = [row[gt_key] for row in tp_rows]
                pred = [row[pred_key] for row in tp_rows]
                expected = mann_whitney_u(gt, pred)
                entry = comparison[measure]
                self.assertEqual(entry['n'], 8)
                self.assertEqual(entry['gt_median'], float(np.median(gt)))
                self.assertEqual(entry['pred_median'], float(np.median(pred)))
                self.assertEqual(entry['result']['statistic'], expected.statistic)
                self.assertEqual(entry['result']['p_value'], expected.p_value)
                self.assertEqual(entry['result']['method'], 'mann-whitney-u (exact)')
                self.assertLess(entry['result']['p_value'], 0.05)
        self.assertEqual(comparison['diameter_mm']['gt_median'], 6.5)
        self.assertEqual(comparison['diameter_mm']['pred_median'], 3.25)

    def test_large_samples_use_normal_approximation(self):
        comparison = size_comparison(self.rows(), exact_max_n=10)
        self.assertEqual(comparison['volume_mm3']['result']['method'], 'mann-whitney-u (normal)')

    def test_no_true_positives(self):
        comparison = size_comparison([lesion_row('a', 1, 'FN', 3.0)])
        for entry in comparison.values():
            self.assertEqual(entry['n'], 0)
            self.assertIsNone(entry['gt_median'])
            self.assertIsNone(entry['result'])
            self.assertNotEqual(entry['reason'], '')


class AggregateCohortTest(SimpleTestCase):

    def studies(self):
        dims = (10, 10, 10)
        detected = evaluate_masks('a', mask_of(cube(dims, (1, 1, 1), 3)), mask_of(cube(dims, (2, 1, 1), 3)))
        missed = evaluate_masks('b', mask_of(cube(dims, (1, 1, 1), 2)), mask_of(cube(dims, (6, 6, 6), 2)))
        negative = evaluate_masks('c', mask_of(np.zeros(dims)), mask_of(np.zeros(dims)))
        return [detected, missed, negative]

    def test_report(self):
        report = aggregate_cohort(self.studies(), StratumSpec(), n_resamples=200, seed=3)
        self.assertEqual(report.n_cases, 3)
        self.assertEqual(report.counts, {'tp': 1, 'fn': 1, 'fp': 1})
        self.assertEqual(report.cell('sensitivity').point, 0.5)
        self.assertAlmostEqual(report.cell('fp_per_case').point, 1 / 3)
        self.assertEqual(report.cohort_summary['negative_studies'], 1)
        payload = report.to_dict()
        self.assertEqual(payload['schema_version'], '1.0')
        self.assertEqual(payload['bootstrap']['units']['fp_per_case'], 'study')

    def test_study_order_does_not_matter(self):
        studies = self.studies()
        forward = aggregate_cohort(studies, StratumSpec(), n_resamples=200, seed=3).to_dict()
        backward = aggregate_cohort(studies[::-1], StratumSpec(), n_resamples=200, seed=3).to_dict()
        self.assertEqual(forward, backward)

    def test_size_comparison_in_report(self):
        report = aggregate_cohort(self.studies(), StratumSpec(), n_resamples=200, seed=3)
        payload = report.to_dict()
        self.assertEqual(set(payload['size_comparison']), {'volume_mm3', 'diameter_mm'})
        volume = payload['size_comparison']['volume_mm3']
        self.assertEqual((volume['gt_median'], volume['pred_median']), (27.0, 27.0))
        self.assertEqual(volume['result']['p_value'], 1.0)

        table = reports.report_table(report)
        volume_row = table[table['metric'] == 'size_test_volume_mm3'].iloc[0]
        diameter_row = table[table['metric'] == 'size_test_diameter_mm'].iloc[0]
        self.assertEqual(volume_row['point'], '1.0000')
        self.assertEqual(volume_row['stratum'], ALL)
        self.assertIn('U=', diameter_row['note'])

    def test_default_resample_count_on_small_cohort(self):
        """기본 재표본 수로 TP 3개 코호트 집계 후 보고서 파일까지 저장"""
        dims = (12, 12, 12)
        studies = [
            evaluate_masks(f"s{size}", mask_of(cube(dims, (1, 1, 1), size)), mask_of(cube(dims, (2, 1, 1), size)))
            for size in (2, 3, 4)
        ]
        studies.append(evaluate_masks('s9', mask_of(cube(dims, (1, 1, 1), 2)), mask_of(cube(dims, (8, 8, 8), 2))))
        studies.append(evaluate_masks('s0', mask_of(np.zeros(dims)), mask_of(np.zeros(dims))))

        report = aggregate_cohort(studies, StratumSpec())
        self.assertEqual(report.config['n_resamples'], 10000)
        self.assertEqual(report.counts, {'tp': 3, 'fn': 1, 'fp': 1})
        self.assertEqual(report.cell('sensitivity').point, 0.75)
        self.assertEqual(report.cell('dice').ci.n_resamples, 10000)
        self.assertEqual(report.cell('fp_per_case').ci.n_resamples, 10000)
        spearman = report.cell('spearman_volume')
        self.assertAlmostEqual(spearman.point, 1.0, places=12)
        self.assertIsNone(spearman.ci)

        with tempfile.TemporaryDirectory() as tmp:
            paths = reports.write_report(report, tmp)
            self.assertEqual(len(reports.read_lesions_csv(paths['lesions_csv'])), 5)
            payload = read_json(paths['report_json'])
        self.assertEqual(payload['size_comparison']['volume_mm3']['n'], 3)

    def test_invalid_inputs(self):
        with self.assertRaises(EmptyCohortError):
            aggregate_cohort([], StratumSpec())
        with self.assertRaises(ConfigurationError):
            aggregate_cohort(self.studies(), StratumSpec(), n_cases=2, n_resamples=200)


def write_mask(path, array, spacing=(0.5, 0.5, 0.5)):
    save_volume(VoxelGrid(np.asarray(array, dtype=np.uint8), spacing), path)


class ServiceTestMixin:
    """임시 디렉터리에 GT/예측 볼륨 작성"""

    dims = (12, 12, 12)

    def setUp(self):
        self.root = Path(tempfile.mkdtemp())
        self.gt_dir = self.root / 'gt'
        self.pred_dir = self.root / 'pred'
        self.gt_dir.mkdir()
        self.pred_dir.mkdir()
        lesions = cube(self.dims, (1, 1, 1), 3) | cube(self.dims, (7, 7, 7), 3)
        write_mask(self.gt_dir / 'case01.nii.gz', lesions)
        write_mask(self.pred_dir / 'case01.nii.gz', lesions)
        write_mask(self.gt_dir / 'case02.nii', cube(self.dims, (4, 4, 4), 3))
        write_mask(self.gt_dir / 'case03.nii.gz', np.zeros(self.dims))
        write_mask(self.pred_dir / 'case03.nii.gz', cube(self.dims, (2, 2, 2), 2))

    def tearDown(self):
        shutil.rmtree(self.root, ignore_errors=True)

    def config(self, **overrides):
        options = dict(
            gt_dir=self.gt_dir, pred_dir=self.pred_dir, out_dir=self.root / 'out',
            bootstrap_n=200, seed=5, workers=1,
        )
        options.update(overrides)
        return RunConfig(**options)


class PairingTest(ServiceTestMixin, SimpleTestCase):

    def test_pair_by_stem(self):
        pairs = pair_by_stem(self.gt_dir, self.pred_dir)
        self.assertEqual([p.study_id for p in pairs], ['case01', 'case02', 'case03'])
        self.assertIsNone(pairs[1].pred_path)

    def test_prediction_without_ground_truth(self):
        write_mask(self.pred_dir / 'case99.nii.gz', np.zeros(self.dims))
        with self.assertRaises(ConfigurationError):
            pair_by_stem(self.gt_dir, self.pred_dir)

    def test_duplicate_stem(self):
        write_mask(self.gt_dir / 'case01.nii', np.zeros(self.dims))
        with self.assertRaises(ConfigurationError):
            pair_by_stem(self.gt_dir, self.pred_dir)

    def test_manifest(self):
        manifest = self.root / 'manifest.json'
        manifest.write_text(
            '{"studies": {"x": {"gt": "gt/case01.nii.gz", "pred": "pred/case01.nii.gz"},'
            ' "y": {"gt": "gt/case02.nii", "pred": null}}}',
            encoding='utf-8',
        )
        pairs = pair_from_manifest(manifest)
        self.assertEqual([p.study_id for p in pairs], ['x', 'y'])
        self.assertEqual(pairs[0].gt_path, self.root / 'gt' / 'case01.nii.gz')
        self.assertIsNone(pairs[1].pred_path)

    def test_config_validation(self):
        with self.assertRaises(ConfigurationError):
            self.config(tau_mm=0).validate()
        with self.assertRaises(ConfigurationError):
            self.config(connectivity=8).validate()
        with self.assertRaises(ConfigurationError):
            self.config(gt_dir=self.root / 'missing').validate()


class EvaluationServiceTest(ServiceTestMixin, TestCase):
    """EvaluationService 실행 테스트"""

    def test_run(self):
        report, paths, run = EvaluationService(self.config()).run()

        self.assertEqual(run.status, 'completed')
        self.assertEqual((run.n_studies, run.n_skipped, run.n_tp, run.n_fn, run.n_fp), (3, 0, 2, 1, 1))
        self.assertAlmostEqual(run.sensitivity, 2 / 3)
        self.assertAlmostEqual(report.cell('fp_per_case').point, 1 / 3)
        self.assertEqual(report.cell('dice').point, 1.0)
        for path in paths.values():
            self.assertTrue(path.exists())

        statuses = dict(StudyResult.objects.filter(run=run).values_list('study_id', 'status'))
        self.assertEqual(statuses, {'case01': 'evaluated', 'case02': 'missing_prediction',
                                    'case03': 'evaluated'})
        self.assertEqual(LesionRecord.objects.filter(run=run).count(), 4)
        self.assertTrue(SystemLog.objects.filter(category='evaluation', level='WARNING').exists())

        payload = read_json(paths['report_json'])
        self.assertEqual(payload['skipped_studies'], [])
        self.assertEqual(payload['config']['tau_mm'], 0.5)
        self.assertEqual(payload['config']['exact_max_n'], 20)
        self.assertEqual(payload['size_comparison']['diameter_mm']['n'], 2)

    def test_rerun_is_byte_identical(self):
        _, first, _ = EvaluationService(self.config()).run()
        before = {name: path.read_bytes() for name, path in first.items()}
        _, second, _ = EvaluationService(self.config(workers=3)).run()
        self.assertEqual(before, {name: path.read_bytes() for name, path in second.items()})

    def test_mismatched_grid_is_skipped(self):
        write_mask(self.gt_dir / 'case04.nii.gz', cube(self.dims, (1, 1, 1), 2))
        write_mask(self.pred_dir / 'case04.nii.gz', np.zeros((12, 12, 13)))

        with self.assertRaises(TooManySkippedStudiesError):
            EvaluationService(self.config()).run()
        self.assertEqual(EvaluationRun.objects.get().status, 'failed')

        report, paths, run = EvaluationService(self.config(max_skip_fraction=0.5)).run()
        self.assertEqual(run.n_skipped, 1)
        self.assertEqual(report.n_cases, 3)
        skipped = read_json(paths['report_json'])['skipped_studies']
        self.assertEqual([s['study_id'] for s in skipped], ['case04'])
        self.assertIn('IncompatibleGridsError', skipped[0]['error'])
        self.assertEqual(StudyResult.objects.get(run=run, study_id='case04').status, 'skipped')

    def test_orphan_prediction_fails_run(self):
        write_mask(self.pred_dir / 'case99.nii.gz', np.zeros(self.dims))
        with self.assertRaises(ConfigurationError):
            EvaluationService(self.config()).run()
        self.assertEqual(EvaluationRun.objects.get().status, 'failed')


class EvaluateRunTaskTest(ServiceTestMixin, TestCase):
    """Celery 태스크를 apply()로 동기 실행"""

    def queued_run(self, **overrides):
        config = self.config(**overrides)
        return EvaluationRun.objects.create(
            name='queued', gt_dir=str(config.gt_dir), pred_dir=str(config.pred_dir),
            out_dir=str(config.out_dir), config=config.to_dict(), source='api',
        )

    def test_task_completes_run(self):
        run = self.queued_run()
        result = evaluate_run.apply(args=[run.id])

        self.assertEqual(result.get(), run.id)
        run.refresh_from_db()
        self.assertEqual(run.status, 'completed')
        self.assertEqual((run.n_tp, run.n_fn, run.n_fp), (2, 1, 1))
        self.assertEqual(run.config['bootstrap_n'], 200)
        self.assertTrue((self.root / 'out' / reports.REPORT_JSON).exists())

    def test_missing_directory_marks_run_failed(self):
        run = self.queued_run()
        shutil.rmtree(self.pred_dir)

        self.assertIsNone(evaluate_run.apply(args=[run.id]).get())
        run.refresh_from_db()
        self.assertEqual(run.status, 'failed')
        self.assertIn('ConfigurationError', run.error_message)

    def test_unknown_run(self):
        self.assertIsNone(evaluate_run.apply(args=[999999]).get())


class ComparisonServiceTest(ServiceTestMixin, TestCase):

    def setUp(self):
        super().setUp()
        _, self.paths, _ = EvaluationService(self.config()).run()

    def load(self, label):
        return ComparisonService.load(self.paths['report_json'], label=label)

    def test_compare_with_itself(self):
        payload = ComparisonService(exact_max_n=20).compare([self.load('a'), self.load('b')])
        tests = {(t['test'], t['metric']): t for t in payload['pairwise'][0]['tests']}
        self.assertEqual(tests[('chi-square', 'detection')]['p_value'], 1.0)
        self.assertEqual(tests[('chi-square', 'detection')]['statistic'], 0.0)
        self.assertEqual(tests[('mann-whitney-u', 'dice')]['statistic'], 2.0)
        self.assertTrue(tests[('mann-whitney-u', 'dice')]['degenerate'])
        self.assertEqual(tests[('mann-whitney-u', 'fp_per_study')]['statistic'], 4.5)
        self.assertEqual(tests[('mann-whitney-u', 'fp_per_study')]['p_value'], 1.0)
        self.assertFalse(tests[('mann-whitney-u', 'fp_per_study')]['significant'])
        self.assertEqual(payload['groupwise'], [])

        written = reports.write_comparison(payload, self.root / 'cmp')
        self.assertTrue(written['comparison_csv'].exists())

    def test_three_identical_reports(self):
        payload = ComparisonService().compare([self.load('a'), self.load('b'), self.load('c')])
        self.assertEqual(len(payload['pairwise']), 3)
        for test in payload['groupwise'][0]['tests']:
            with self.subTest(metric=test['metric']):
                self.assertAlmostEqual(test['statistic'], 0.0, places=12)

    def test_different_cohorts(self):
        run = self.load('a')
        other = LoadedRun('b', {'studies': [{'study_id': 'case01'}]}, run.rows)
        with self.assertRaises(IncomparableRunsError):
            ComparisonService().compare([run, other])
        fewer = LoadedRun('c', run.report, [row for row in run.rows if row['status'] != 'FN'])
        with self.assertRaises(IncomparableRunsError):
            ComparisonService().compare([run, fewer])

    def test_detection_difference(self):
        rows = [lesion_row('s', i, 'TP' if i <= 105 else 'FN', 3.0, 3.0 if i <= 105 else None,
                           0.8 if i <= 105 else None) for i in range(1, 125)]
        weaker = [dict(row, status='TP' if row['lesion_id'] <= 76 else 'FN') for row in rows]
        report = {'studies': [{'study_id': 's'}]}
        payload = ComparisonService().compare([LoadedRun('a', report, rows), LoadedRun('b', report, weaker)])
        detection = payload['pairwise'][0]['tests'][0]
        self.assertLess(detection['p_value'], 0.05)
        self.assertTrue(detection['significant'])


class CurveAndScatterServiceTest(ServiceTestMixin, TestCase):

    def setUp(self):
        super().setUp()
        _, self.paths, _ = EvaluationService(self.config()).run()

    def test_curves_use_report_case_count(self):
        points, paths = curves_from_lesions(self.paths['lesions_csv'], [0.0, 2.0, 100.0])
        self.assertEqual(points[0].fp_per_case, 1 / 3)
        self.assertAlmostEqual(points[0].sensitivity, 2 / 3)
        self.assertIsNone(points[2].sensitivity)
        first = {name: path.read_bytes() for name, path in paths.items()}
        _, again = curves_from_lesions(self.paths['lesions_csv'], [0.0, 2.0, 100.0])
        self.assertEqual(first, {name: path.read_bytes() for name, path in again.items()})

    def test_curves_without_report(self):
        lesions = self.root / 'alone' / 'lesions.csv'
        lesions.parent.mkdir()
        shutil.copy(self.paths['lesions_csv'], lesions)
        points, _ = curves_from_lesions(lesions, [0.0])
        self.assertEqual(points[0].fp_per_case, 1 / 3)

    def test_empty_lesion_file(self):
        empty = self.root / 'empty.csv'
        empty.write_text('', encoding='utf-8')
        with self.assertRaises(EmptyCohortError):
            curves_from_lesions(empty, [0.0])

    def test_scatter_requires_three_true_positives(self):
        with self.assertRaises(InsufficientDataError):
            scatter_from_lesions(self.paths['lesions_csv'])

    def test_scatter(self):
        rows = [lesion_row('s', i, 'TP', float(i), float(i) + 0.5, 0.9) for i in range(1, 6)]
        lesions = reports.write_lesions_csv(rows, self.root / 'lesions.csv')
        summary, paths = scatter_from_lesions(lesions, self.root / 'scatter')
        self.assertEqual(summary['n'], 5)
        self.assertAlmostEqual(summary['spearman_diameter']['statistic'], 1.0, places=12)
        self.assertAlmostEqual(summary['spearman_volume']['statistic'], 1.0, places=12)
        self.assertTrue(paths['scatter_svg'].read_text(encoding='utf-8').startswith('<?xml'))

        reversed_rows = [dict(row, pred_diameter_mm=10.0 - row['gt_diameter_mm'],
                              pred_volume_mm3=1000.0 - row['gt_volume_mm3']) for row in rows]
        lesions = reports.write_lesions_csv(reversed_rows, self.root / 'reversed.csv')
        summary, _ = scatter_from_lesions(lesions, self.root / 'reversed')
        self.assertAlmostEqual(summary['spearman_diameter']['statistic'], -1.0, places=12)


class EvaluationRunModelTest(TestCase):

    def test_lifecycle(self):
        run = EvaluationRun.objects.create(gt_dir='/gt', pred_dir='/pred', out_dir='/out')
        self.assertEqual(run.status, 'pending')
        self.assertIsNone(run.sensitivity)
        run.start(task_id='t-1')
        self.assertEqual(run.status, 'running')
        run.complete({'schema_version': '1.0'}, {'tp': 3, 'fn': 1, 'fp': 2}, 4, 0)
        run.refresh_from_db()
        self.assertEqual(run.status, 'completed')
        self.assertEqual(run.sensitivity, 0.75)
        self.assertIsNotNone(run.duration)
        run.fail('boom')
        self.assertEqual(run.status, 'failed')
        self.assertEqual(run.error_message, 'boom')
