"""
API 시리얼라이저들
"""

from pathlib import Path

from rest_framework import serializers

from core.exceptions import ConfigurationError
from core.models import Settings, SystemLog
from evaluation.cohort import BAND_MODES
from evaluation.models import EvaluationRun, LesionRecord, StudyResult
from evaluation.services import RunConfig


class EvaluationRunSerializer(serializers.ModelSerializer):
    """평가 실행 시리얼라이저 (report 본문 제외)"""
    sensitivity = serializers.FloatField(read_only=True)
    fp_per_case = serializers.SerializerMethodField()
    duration_seconds = serializers.SerializerMethodField()

    class Meta:
        model = EvaluationRun
        fields = [
            'id', 'name', 'gt_dir', 'pred_dir', 'manifest_path', 'out_dir', 'config',
            'source', 'status', 'n_studies', 'n_skipped', 'n_tp', 'n_fn', 'n_fp',
            'sensitivity', 'fp_per_case', 'duration_seconds', 'error_message', 'task_id',
            'started_at', 'completed_at', 'created_at',
        ]
        read_only_fields = fields

    def get_fp_per_case(self, obj):
        return obj.n_fp / obj.n_studies if obj.n_studies else None

    def get_duration_seconds(self, obj):
        duration = obj.duration
        return duration.total_seconds() if duration else None


class EvaluationRunCreateSerializer(serializers.Serializer):
    """
    평가 실행 생성 시리얼라이저

    생략한 값은 core.Settings, 환경 변수 순으로 채운다.
    """
    name = serializers.CharField(max_length=200, required=False, allow_blank=True, default='')
    gt_dir = serializers.CharField(max_length=500, required=False)
    pred_dir = serializers.CharField(max_length=500, required=False)
    manifest = serializers.CharField(max_length=500, required=False)
    out_dir = serializers.CharField(max_length=500, required=False)
    tau_mm = serializers.FloatField(required=False)
    connectivity = serializers.ChoiceField(choices=[6, 18, 26], required=False)
    strata = serializers.CharField(required=False, help_text='쉼표 구분 경계 (예: "2,4")')
    band_mode = serializers.ChoiceField(choices=BAND_MODES, required=False)
    bootstrap_n = serializers.IntegerField(required=False)
    seed = serializers.IntegerField(required=False)
    confidence = serializers.FloatField(required=False)
    workers = serializers.IntegerField(required=False)

    OVERRIDES = ['tau_mm', 'connectivity', 'strata', 'band_mode', 'bootstrap_n', 'seed', 'confidence', 'workers']

    def validate(self, attrs):
        manifest = attrs.get('manifest')
        if not manifest and not (attrs.get('gt_dir') and attrs.get('pred_dir')):
            raise serializers.ValidationError('gt_dir와 pred_dir 또는 manifest가 필요합니다.')
        gt_dir = attrs.get('gt_dir') or str(Path(manifest).parent)
        pred_dir = attrs.get('pred_dir') or gt_dir
        try:
            attrs['run_config'] = RunConfig.from_settings(
                gt_dir, pred_dir, attrs.get('out_dir'),
                manifest=manifest, name=attrs.get('name'),
                **{key: attrs.get(key) for key in self.OVERRIDES},
            )
        except ConfigurationError as e:
            raise serializers.ValidationError(str(e))
        return attrs

    def create(self, validated_data):
        config = validated_data['run_config']
        return EvaluationRun.objects.create(
            name=config.name,
            gt_dir=str(config.gt_dir),
            pred_dir=str(config.pred_dir),
            manifest_path=str(config.manifest or ''),
            out_dir=str(config.out_dir),
            config=config.to_dict(),
            source='api',
        )


class StudyResultSerializer(serializers.ModelSerializer):
    class Meta:
        model = StudyResult
        fields = [
            'study_id', 'status', 'gt_path', 'pred_path', 'spacing',
            'n_gt', 'n_pred', 'n_tp', 'n_fn', 'n_fp', 'error_message',
        ]


class LesionRecordSerializer(serializers.ModelSerializer):
    """lesions.csv 행"""

    class Meta:
        model = LesionRecord
        fields = [
            'study_id', 'lesion_id', 'status', 'pred_ids',
            'gt_diameter_mm', 'pred_diameter_mm', 'gt_volume_mm3', 'pred_volume_mm3',
            'dice', 'nsd',
        ]


class SettingsSerializer(serializers.ModelSerializer):
    """평가 설정 시리얼라이저"""
    typed_value = serializers.SerializerMethodField()

    class Meta:
        model = Settings
        fields = ['key', 'value', 'value_type', 'typed_value', 'description', 'updated_at']
        read_only_fields = ['updated_at']

    def get_typed_value(self, obj):
        return obj.get_typed_value()

    def validate(self, attrs):
        candidate = Settings(**{
            field: attrs.get(field, getattr(self.instance, field, None))
            for field in ('key', 'value', 'value_type')
        })
        try:
            candidate.clean()
        except ConfigurationError as e:
            raise serializers.ValidationError(str(e))
        return attrs


class SystemLogSerializer(serializers.ModelSerializer):
    """시스템 로그 시리얼라이저"""

    class Meta:
        model = SystemLog
        fields = [
            'id', 'level', 'category', 'message', 'data', 'created_at'
        ]
        read_only_fields = ['id', 'created_at']
