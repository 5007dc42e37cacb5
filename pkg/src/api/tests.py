"""
REST API 테스트
"""

import shutil
import tempfile
from pathlib import Path
from unittest import mock

import factory
from django.contrib.auth import get_user_model
from django.test import TestCase
from rest_framework import status
from rest_framework.test import APIClient

from core.models import Settings, SystemLog
from evaluation.models import EvaluationRun, LesionRecord, StudyResult


class UserFactory(factory.django.DjangoModelFactory):
    class Meta:
        model = get_user_model()

    username = factory.Sequence(lambda n: f'user{n}')


class EvaluationRunFactory(factory.django.DjangoModelFactory):
    class Meta:
        model = EvaluationRun

    name = factory.Sequence(lambda n: f'run {n}')
    gt_dir = '/data/gt'
    pred_dir = '/data/pred'
    out_dir = factory.LazyAttribute(lambda run: f'/reports/{run.name.replace(" ", "_")}')
    config = factory.LazyFunction(lambda: {'tau_mm': 0.5, 'connectivity': 26})


class CompletedRunFactory(EvaluationRunFactory):
    status = 'completed'
    n_studies = 142
    n_tp = 105
    n_fn = 19
    n_fp = 33
    report = factory.LazyFunction(lambda: {'schema_version': '1.0', 'n_cases': 142})


class StudyResultFactory(factory.django.DjangoModelFactory):
    class Meta:
        model = StudyResult

    run = factory.SubFactory(CompletedRunFactory)
    study_id = factory.Sequence(lambda n: f'study_{n:04d}')
    gt_path = factory.LazyAttribute(lambda study: f'/data/gt/{study.study_id}.nii.gz')
    pred_path = factory.LazyAttribute(lambda study: f'/data/pred/{study.study_id}.nii.gz')
    spacing = [0.5, 0.5, 0.5]


class LesionRecordFactory(factory.django.DjangoModelFactory):
    class Meta:
        model = LesionRecord

    run = factory.SubFactory(CompletedRunFactory)
    study_id = 'study_0001'
    lesion_id = factory.Sequence(lambda n: n + 1)
    status = 'TP'
    pred_ids = '1'
    gt_diameter_mm = 3.0
    pred_diameter_mm = 3.0
    gt_volume_mm3 = 14.0
    pred_volume_mm3 = 14.0
    dice = 1.0
    nsd = 1.0


class APITestCase(TestCase):
    def setUp(self):
        self.client = APIClient()
        self.client.force_login(UserFactory())


class AuthenticationTest(TestCase):
    def test_anonymous_is_rejected(self):
        response = APIClient().get('/api/v1/runs/')
        self.assertIn(response.status_code, (status.HTTP_401_UNAUTHORIZED, status.HTTP_403_FORBIDDEN))


class EvaluationRunAPITest(APITestCase):
    def test_list_and_filter(self):
        CompletedRunFactory()
        EvaluationRunFactory(status='failed')
        response = self.client.get('/api/v1/runs/')
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.data['count'], 2)

        response = self.client.get('/api/v1/runs/', {'status': 'completed'})
        self.assertEqual(response.data['count'], 1)
        run = response.data['results'][0]
        self.assertAlmostEqual(run['sensitivity'], 105 / 124)
        self.assertAlmostEqual(run['fp_per_case'], 33 / 142)
        self.assertNotIn('report', run)

    def test_report(self):
        run = CompletedRunFactory()
        response = self.client.get(f'/api/v1/runs/{run.id}/report/')
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.data['n_cases'], 142)

        pending = EvaluationRunFactory()
        response = self.client.get(f'/api/v1/runs/{pending.id}/report/')
        self.assertEqual(response.status_code, status.HTTP_409_CONFLICT)

    def test_lesions_are_paginated_and_filtered(self):
        run = CompletedRunFactory()
        LesionRecordFactory.create_batch(25, run=run)
        LesionRecordFactory(run=run, status='FN', pred_ids='', dice=None, nsd=None,
                            pred_diameter_mm=None, pred_volume_mm3=None)
        LesionRecordFactory(run=CompletedRunFactory())

        response = self.client.get(f'/api/v1/runs/{run.id}/lesions/')
        self.assertEqual(response.data['count'], 26)
        self.assertEqual(len(response.data['results']), 20)

        response = self.client.get(f'/api/v1/runs/{run.id}/lesions/', {'status': 'fn'})
        self.assertEqual(response.data['count'], 1)
        self.assertIsNone(response.data['results'][0]['dice'])

    def test_studies(self):
        run = CompletedRunFactory()
        StudyResultFactory.create_batch(3, run=run)
        StudyResultFactory(run=run, status='skipped', error_message='IncompatibleGridsError: dims')
        response = self.client.get(f'/api/v1/runs/{run.id}/studies/')
        self.assertEqual(response.data['count'], 4)
        self.assertEqual(
            [study['status'] for study in response.data['results']].count('skipped'), 1,
        )


class EvaluationRunCreateTest(APITestCase):
    def setUp(self):
        super().setUp()
        self.root = Path(tempfile.mkdtemp())
        (self.root / 'gt').mkdir()
        (self.root / 'pred').mkdir()

    def tearDown(self):
        shutil.rmtree(self.root, ignore_errors=True)

    def payload(self, **extra):
        return {
            'name': 'nightly',
            'gt_dir': str(self.root / 'gt'),
            'pred_dir': str(self.root / 'pred'),
            'out_dir': str(self.root / 'out'),
            **extra,
        }

    def test_create_queues_task(self):
        def fake_queue(run):
            run.task_id = 'task-1'
            run.save(update_fields=['task_id'])
            return run

        with mock.patch('api.views.queue_evaluation', side_effect=fake_queue) as queue:
            response = self.client.post('/api/v1/runs/', self.payload(tau_mm=0.75, strata='1,3'), format='json')

        self.assertEqual(response.status_code, status.HTTP_201_CREATED)
        queue.assert_called_once()
        run = EvaluationRun.objects.get(pk=response.data['id'])
        self.assertEqual(run.source, 'api')
        self.assertEqual(run.status, 'pending')
        self.assertEqual(run.task_id, 'task-1')
        self.assertEqual(run.config['tau_mm'], 0.75)
        self.assertEqual(run.config['strata']['boundaries_mm'], [1.0, 3.0])
        self.assertTrue(SystemLog.objects.filter(category='evaluation', message__contains=str(run.id)).exists())

    def test_defaults_come_from_settings_table(self):
        Settings.set_setting('bootstrap_n', 500)
        with mock.patch('api.views.queue_evaluation'):
            response = self.client.post('/api/v1/runs/', self.payload(), format='json')
        self.assertEqual(response.status_code, status.HTTP_201_CREATED)
        self.assertEqual(EvaluationRun.objects.get(pk=response.data['id']).config['bootstrap_n'], 500)

    def test_invalid_requests(self):
        for payload in (
            {'name': 'no dirs'},
            self.payload(gt_dir=str(self.root / 'missing')),
            self.payload(strata='4,2'),
            self.payload(connectivity=7),
        ):
            with self.subTest(payload=payload):
                with mock.patch('api.views.queue_evaluation') as queue:
                    response = self.client.post('/api/v1/runs/', payload, format='json')
                self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)
                queue.assert_not_called()
        self.assertFalse(EvaluationRun.objects.exists())

    def test_broker_failure_marks_run_failed(self):
        with mock.patch('api.views.queue_evaluation', side_effect=ConnectionError('redis down')):
            response = self.client.post('/api/v1/runs/', self.payload(), format='json')
        self.assertEqual(response.status_code, status.HTTP_503_SERVICE_UNAVAILABLE)
        self.assertEqual(EvaluationRun.objects.get().status, 'failed')


class SettingsAPITest(APITestCase):
    def test_create_and_effective(self):
        response = self.client.post('/api/v1/settings/', {
            'key': 'tau_mm', 'value': '0.8', 'value_type': 'float',
        }, format='json')
        self.assertEqual(response.status_code, status.HTTP_201_CREATED)
        self.assertEqual(response.data['typed_value'], 0.8)

        response = self.client.get('/api/v1/settings/effective/')
        self.assertEqual(response.data['tau_mm'], 0.8)
        self.assertEqual(response.data['connectivity'], 26)

    def test_unknown_key_is_rejected(self):
        response = self.client.post('/api/v1/settings/', {
            'key': 'retention_days', 'value': '14', 'value_type': 'integer',
        }, format='json')
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)

    def test_update_by_key(self):
        Settings.set_setting('seed', 1)
        response = self.client.patch('/api/v1/settings/seed/', {'value': '7'}, format='json')
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(Settings.get_setting('seed'), 7)


class SystemLogAPITest(APITestCase):
    def test_filter(self):
        SystemLog.log('INFO', 'evaluation', '평가 시작')
        SystemLog.log('ERROR', 'statistics', '퇴화 분할표')
        response = self.client.get('/api/v1/logs/', {'category': 'statistics'})
        self.assertEqual(response.data['count'], 1)
        self.assertEqual(response.data['results'][0]['level'], 'ERROR')
