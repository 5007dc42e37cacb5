"""
팬텀 래스터화, 변형, 코호트 생성 테스트
"""

import math
import shutil
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase, TestCase

from core.exceptions import ConfigurationError, PhantomGenerationError
from core.models import SystemLog
from core.utils import read_json
from evaluation.metrics import evaluate_masks
from evaluation.services import EvaluationService, RunConfig
from lesions.components import connected_components, lesion_max_diameter, lesion_volume
from phantoms.cohort import CohortParams, generate_cohort, plan_cohort
from phantoms.shapes import LesionShape, Perturbation, PhantomSpec, perturb, rasterize
from volumes.nifti import load_volume


def centred_sphere(radius_mm, spacing_mm):
    """격자 중앙 복셀에 중심을 둔 구와 그 격자"""
    half = math.ceil(radius_mm / spacing_mm) + 2
    dims = (2 * half + 1,) * 3
    center = (half * spacing_mm,) * 3
    return PhantomSpec(dims, (spacing_mm,) * 3, (LesionShape.sphere(center, radius_mm),))


def single_lesion(spec):
    gt, truths = rasterize(spec)
    lesions = connected_components(gt)
    return gt, truths, lesions.get(lesions.ids[0])


def volume_error(radius_mm, spacing_mm):
    spec = centred_sphere(radius_mm, spacing_mm)
    _, truths, lesion = single_lesion(spec)
    return abs(lesion_volume(lesion, spec.spacing) - truths[0].volume_mm3) / truths[0].volume_mm3


class RasterizeTest(SimpleTestCase):
    def test_tiny_sphere_is_one_voxel(self):
        gt, truths = rasterize(centred_sphere(0.2, 0.5))
        self.assertEqual(gt.voxel_count, 1)
        self.assertEqual(truths[0].voxel_count, 1)
        lesion = connected_components(gt).get(1)
        self.assertEqual(lesion_max_diameter(lesion, gt.spacing), 0.0)

    def test_voxel_count_of_half_millimetre_sphere(self):
        gt, _ = rasterize(centred_sphere(2.5, 0.5))
        # 반지름 5복셀 구 안의 격자점 수
        self.assertEqual(gt.voxel_count, 515)
        self.assertLess(abs(gt.voxel_count - 4 / 3 * math.pi * 125) / (4 / 3 * math.pi * 125), 0.05)

    def test_volume_accuracy(self):
        for radius in (1.0, 2.5, 5.0):
            with self.subTest(radius=radius):
                self.assertLess(volume_error(radius, 0.5), 0.05)

    def test_volume_error_shrinks_with_spacing(self):
        for radius in (2.5, 5.0):
            with self.subTest(radius=radius):
                self.assertLess(volume_error(radius, 0.25), volume_error(radius, 0.5))

    def test_sphere_diameter(self):
        spec = centred_sphere(2.5, 0.5)
        _, truths, lesion = single_lesion(spec)
        self.assertEqual(truths[0].diameter_mm, 5.0)
        measured = lesion_max_diameter(lesion, spec.spacing)
        self.assertLessEqual(abs(measured - 5.0), math.sqrt(3) * 0.5)

    def test_ellipsoid_diameter_on_anisotropic_grid(self):
        spacing = (0.3, 0.3, 0.6)
        shape = LesionShape.ellipsoid((15 * 0.3, 15 * 0.3, 8 * 0.6), (3.0, 2.0, 1.5))
        spec = PhantomSpec((31, 31, 17), spacing, (shape,))
        _, truths, lesion = single_lesion(spec)
        self.assertEqual(truths[0].diameter_mm, 6.0)
        self.assertAlmostEqual(truths[0].volume_mm3, 4 / 3 * math.pi * 9.0)
        measured = lesion_max_diameter(lesion, spacing)
        self.assertLessEqual(abs(measured - 6.0), math.sqrt(3) * max(spacing))

    def test_lesions_are_separate_components(self):
        spec = PhantomSpec(
            (30, 20, 20), (0.5, 0.5, 0.5),
            (LesionShape.sphere((2.5, 5.0, 5.0), 1.0), LesionShape.sphere((10.0, 5.0, 5.0), 2.0)),
        )
        gt, truths = rasterize(spec)
        self.assertEqual(len(connected_components(gt)), 2)
        self.assertEqual(gt.voxel_count, sum(t.voxel_count for t in truths))

    def test_shape_outside_margin(self):
        spec = PhantomSpec((10, 10, 10), (1.0, 1.0, 1.0), (LesionShape.sphere((1.0, 5.0, 5.0), 1.0),))
        with self.assertRaises(PhantomGenerationError):
            rasterize(spec)

    def test_touching_shapes(self):
        spec = PhantomSpec(
            (20, 20, 20), (1.0, 1.0, 1.0),
            (LesionShape.sphere((5.0, 5.0, 5.0), 2.0), LesionShape.sphere((9.0, 5.0, 5.0), 1.0)),
        )
        with self.assertRaises(PhantomGenerationError):
            rasterize(spec)

    def test_invalid_shapes(self):
        with self.assertRaises(ConfigurationError):
            LesionShape('sphere', (1, 1, 1), (1.0, 2.0, 1.0))
        with self.assertRaises(ConfigurationError):
            LesionShape.sphere((1, 1, 1), 0.0)
        with self.assertRaises(ConfigurationError):
            LesionShape('cube', (1, 1, 1), (1.0, 1.0, 1.0))
        with self.assertRaises(ConfigurationError):
            PhantomSpec((2, 10, 10), (1.0, 1.0, 1.0))


class PerturbTest(SimpleTestCase):
    spacing = (0.5, 0.5, 0.5)
    dims = (30, 20, 20)

    def spec(self, **perturbation):
        lesions = (LesionShape.sphere((3.0, 5.0, 5.0), 1.5), LesionShape.sphere((10.0, 5.0, 5.0), 2.0))
        return PhantomSpec(self.dims, self.spacing, lesions, Perturbation(**perturbation), seed=3)

    def test_identity(self):
        spec = self.spec()
        gt, _ = rasterize(spec)
        pred = perturb(gt, spec)
        self.assertEqual(pred, gt)
        study = evaluate_masks('s', gt, pred)
        self.assertEqual((study.match.tp_count, study.match.fn_count, study.match.fp_count), (2, 0, 0))
        self.assertTrue(all(m.dice == 1.0 and m.nsd == 1.0 for m in study.metrics))

    def test_drop_gives_one_false_negative(self):
        spec = self.spec(drop=(0,))
        gt, _ = rasterize(spec)
        study = evaluate_masks('s', gt, perturb(gt, spec))
        self.assertEqual((study.match.tp_count, study.match.fn_count, study.match.fp_count), (1, 1, 0))

    def test_seeded_drop_is_reproducible(self):
        spec = self.spec(drop_count=1)
        self.assertEqual(spec.dropped_indices(), spec.dropped_indices())
        self.assertEqual(len(spec.dropped_indices()), 1)
        gt, _ = rasterize(spec)
        self.assertEqual(perturb(gt, spec), perturb(gt, spec))

    def test_shift_matches_array_oracle(self):
        spec = self.spec(offset_mm=(0.5, 0.0, -1.0))
        gt, _ = rasterize(spec)
        expected = np.zeros_like(gt.array)
        expected[1:, :, :-2] = gt.array[:-1, :, 2:]
        np.testing.assert_array_equal(perturb(gt, spec).array, expected)

    def test_dilate_and_erode(self):
        gt, _ = rasterize(self.spec())
        dilated = perturb(gt, self.spec(steps=1)).array
        eroded = perturb(gt, self.spec(steps=-1)).array
        self.assertTrue((dilated >= gt.array).all())
        self.assertGreater(dilated.sum(), gt.array.sum())
        self.assertTrue((eroded <= gt.array).all())
        self.assertLess(eroded.sum(), gt.array.sum())

    def test_false_positive(self):
        spec = self.spec(false_positives=(LesionShape.sphere((6.5, 5.0, 5.0), 0.5),))
        gt, _ = rasterize(spec)
        study = evaluate_masks('s', gt, perturb(gt, spec))
        self.assertEqual((study.match.tp_count, study.match.fn_count, study.match.fp_count), (2, 0, 1))

    def test_false_positive_touching_lesion(self):
        spec = self.spec(false_positives=(LesionShape.sphere((10.0, 5.0, 7.5), 0.5),))
        gt, _ = rasterize(spec)
        with self.assertRaises(PhantomGenerationError):
            perturb(gt, spec)

    def test_drop_index_out_of_range(self):
        with self.assertRaises(ConfigurationError):
            self.spec(drop=(5,))


class PlanCohortTest(SimpleTestCase):
    def test_counts(self):
        params = CohortParams(n_positive=101, n_negative=41, n_lesions=124, n_missed=19,
                              n_false_positives=33, seed=7)
        plans = plan_cohort(params)
        self.assertEqual(len(plans), 142)
        self.assertEqual(len({plan.study_id for plan in plans}), 142)
        self.assertEqual(plans[0].study_id, 'study_0001')
        self.assertEqual(sum(len(plan.diameters_mm) for plan in plans), 124)
        self.assertEqual(sum(len(plan.dropped) for plan in plans), 19)
        self.assertEqual(sum(plan.n_false_positives for plan in plans), 33)
        self.assertEqual(sum(1 for plan in plans if plan.diameters_mm), 101)
        self.assertTrue(all(not plan.diameters_mm for plan in plans[101:]))

    def test_every_stratum_is_populated(self):
        plans = plan_cohort(CohortParams(n_positive=5, n_negative=0, seed=1))
        diameters = [d for plan in plans for d in plan.diameters_mm]
        self.assertTrue(any(d < 2 for d in diameters))
        self.assertTrue(any(2 <= d < 4 for d in diameters))
        self.assertTrue(any(d >= 4 for d in diameters))
        self.assertTrue(all(1.0 <= d <= 8.0 for d in diameters))

    def test_same_seed_same_plan(self):
        params = CohortParams(n_positive=10, n_negative=3, n_lesions=20, n_missed=4, n_false_positives=5, seed=9)
        self.assertEqual(plan_cohort(params), plan_cohort(params))

    def test_invalid_params(self):
        for options in (
            dict(n_positive=0, n_negative=0),
            dict(n_positive=5, n_lesions=3),
            dict(n_positive=5, n_missed=6),
            dict(min_diameter_mm=5.0, max_diameter_mm=2.0),
            dict(ellipsoid_fraction=1.5),
        ):
            with self.subTest(options=options):
                with self.assertRaises(ConfigurationError):
                    CohortParams(**options).validate()


class GenerateCohortTest(TestCase):
    def setUp(self):
        self.root = Path(tempfile.mkdtemp())
        self.params = CohortParams(
            n_positive=4, n_negative=2, n_lesions=12, n_missed=1, n_false_positives=2, seed=11,
            dims=(40, 40, 40), max_diameter_mm=4.5,
        )

    def tearDown(self):
        shutil.rmtree(self.root, ignore_errors=True)

    def test_manifest(self):
        manifest = generate_cohort(self.root / 'a', self.params)
        self.assertEqual(manifest['totals'], {
            'studies': 6, 'positive': 4, 'negative': 2, 'lesions': 12, 'tp': 11, 'fn': 1, 'fp': 2,
        })
        self.assertEqual(read_json(self.root / 'a' / 'manifest.json'), manifest)
        for study_id, entry in manifest['studies'].items():
            gt = load_volume(self.root / 'a' / entry['gt'])
            self.assertEqual(gt.dims, (40, 40, 40))
            self.assertTrue((self.root / 'a' / entry['pred']).exists())
            self.assertEqual(int(gt.data.sum()), sum(lesion['voxel_count'] for lesion in entry['lesions']))
        self.assertTrue(SystemLog.objects.filter(category='phantom').exists())

    def test_regeneration_is_byte_identical(self):
        generate_cohort(self.root / 'a', self.params)
        self.params.workers = 3
        generate_cohort(self.root / 'b', self.params)
        first = (self.root / 'a' / 'manifest.json').read_bytes()
        self.assertEqual(first, (self.root / 'b' / 'manifest.json').read_bytes())
        for name in ('gt', 'pred'):
            for path in sorted((self.root / 'a' / name).iterdir()):
                self.assertEqual(path.read_bytes(), (self.root / 'b' / name / path.name).read_bytes())

    def test_evaluation_recovers_expected_counts(self):
        manifest = generate_cohort(self.root / 'cohort', self.params)
        config = RunConfig(
            gt_dir=self.root / 'cohort' / 'gt', pred_dir=self.root / 'cohort' / 'pred',
            out_dir=self.root / 'out', manifest=self.root / 'cohort' / 'manifest.json',
            bootstrap_n=200, seed=5, workers=1,
        )
        report, _, run = EvaluationService(config).run()
        totals = manifest['totals']
        self.assertEqual(report.counts, {'tp': totals['tp'], 'fn': totals['fn'], 'fp': totals['fp']})
        self.assertEqual(report.n_cases, 6)
        self.assertEqual(run.status, 'completed')

        voxel_volume = 0.5 ** 3
        expected_volume = sum(
            lesion['voxel_count'] for entry in manifest['studies'].values() for lesion in entry['lesions']
        ) * voxel_volume
        measured = sum(row['gt_volume_mm3'] for row in report.rows if row['status'] in ('TP', 'FN'))
        self.assertAlmostEqual(measured, expected_volume)

    def test_lesions_do_not_fit(self):
        params = CohortParams(n_positive=1, n_negative=0, dims=(8, 8, 8),
                              min_diameter_mm=6.0, max_diameter_mm=6.0, diameter_median_mm=6.0)
        with self.assertRaises(PhantomGenerationError):
            generate_cohort(self.root / 'c', params)
