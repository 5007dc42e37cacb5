"""
API 뷰들
"""

import logging

from rest_framework import mixins, permissions, status, viewsets
from rest_framework.decorators import action
from rest_framework.response import Response

from core.models import Settings, SystemLog
from core.utils import SETTING_KEYS, resolve_setting
from evaluation.models import EvaluationRun
from evaluation.services import queue_evaluation

from .serializers import (
    EvaluationRunCreateSerializer, EvaluationRunSerializer, LesionRecordSerializer,
    SettingsSerializer, StudyResultSerializer, SystemLogSerializer,
)

logger = logging.getLogger('lesioneval')


class EvaluationRunViewSet(mixins.ListModelMixin,
                           mixins.RetrieveModelMixin,
                           mixins.CreateModelMixin,
                           viewsets.GenericViewSet):
    """평가 실행 API ViewSet"""
    queryset = EvaluationRun.objects.all()
    permission_classes = [permissions.IsAuthenticated]

    def get_serializer_class(self):
        if self.action == 'create':
            return EvaluationRunCreateSerializer
        return EvaluationRunSerializer

    def get_queryset(self):
        queryset = super().get_queryset()

        # 필터링
        status_filter = self.request.query_params.get('status')
        source_filter = self.request.query_params.get('source')

        if status_filter:
            queryset = queryset.filter(status=status_filter)

        if source_filter:
            queryset = queryset.filter(source=source_filter)

        return queryset

    def create(self, request):
        """평가 실행 생성 후 Celery 큐 등록"""
        serializer = self.get_serializer(data=request.data)
        serializer.is_valid(raise_exception=True)
        run = serializer.save()

        try:
            queue_evaluation(run)
        except Exception as e:
            logger.error(f"평가 실행 {run.id} 큐 등록 실패: {e}")
            run.fail(f"큐 등록 실패: {e}")
            return Response(
                {'error': '평가 작업을 큐에 등록하지 못했습니다.', 'run': EvaluationRunSerializer(run).data},
                status=status.HTTP_503_SERVICE_UNAVAILABLE
            )

        SystemLog.log('INFO', 'evaluation', f"API 평가 실행 등록: run {run.id}", {'task_id': run.task_id})
        return Response(EvaluationRunSerializer(run).data, status=status.HTTP_201_CREATED)

    @action(detail=True, methods=['get'])
    def lesions(self, request, pk=None):
        """병변 행 목록 (status, study 필터)"""
        run = self.get_object()
        queryset = run.lesions.all()

        status_filter = request.query_params.get('status')
        study_filter = request.query_params.get('study')

        if status_filter:
            queryset = queryset.filter(status=status_filter.upper())

        if study_filter:
            queryset = queryset.filter(study_id=study_filter)

        page = self.paginate_queryset(queryset)
        serializer = LesionRecordSerializer(page, many=True)
        return self.get_paginated_response(serializer.data)

    @action(detail=True, methods=['get'])
    def studies(self, request, pk=None):
        """스터디별 결과"""
        run = self.get_object()
        page = self.paginate_queryset(run.studies.all())
        serializer = StudyResultSerializer(page, many=True)
        return self.get_paginated_response(serializer.data)

    @action(detail=True, methods=['get'])
    def report(self, request, pk=None):
        """저장된 report.json 내용"""
        run = self.get_object()

        if run.status != 'completed' or run.report is None:
            return Response(
                {'error': '완료된 실행만 보고서가 있습니다.', 'status': run.status},
                status=status.HTTP_409_CONFLICT
            )

        return Response(run.report)


class SettingsViewSet(viewsets.ModelViewSet):
    """평가 설정 API ViewSet"""
    queryset = Settings.objects.all().order_by('key')
    serializer_class = SettingsSerializer
    permission_classes = [permissions.IsAuthenticated]
    lookup_field = 'key'

    @action(detail=False, methods=['get'])
    def effective(self, request):
        """DB, 환경 변수를 반영한 현재 평가 기본값"""
        return Response({key: resolve_setting(key) for key in SETTING_KEYS})


class SystemLogViewSet(viewsets.ReadOnlyModelViewSet):
    """시스템 로그 API ViewSet"""
    queryset = SystemLog.objects.all()
    serializer_class = SystemLogSerializer
    permission_classes = [permissions.IsAuthenticated]

    def get_queryset(self):
        queryset = super().get_queryset()

        # 필터링
        level_filter = self.request.query_params.get('level')
        category_filter = self.request.query_params.get('category')

        if level_filter:
            queryset = queryset.filter(level=level_filter)

        if category_filter:
            queryset = queryset.filter(category=category_filter)

        return queryset
