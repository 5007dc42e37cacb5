from django.db import models
from django.utils import timezone


class EvaluationRun(models.Model):
    """코호트 평가 실행"""

    STATUS_CHOICES = [
        ('pending', '대기 중'),
        ('running', '실행 중'),
        ('completed', '완료'),
        ('failed', '실패'),
    ]

    SOURCE_CHOICES = [
        ('cli', '명령행'),
        ('api', 'API'),
    ]

    name = models.CharField(
        max_length=200,
        blank=True,
        default='',
        help_text="실행 이름"
    )
    gt_dir = models.CharField(
        max_length=500,
        help_text="GT 마스크 디렉터리"
    )
    pred_dir = models.CharField(
        max_length=500,
        help_text="예측 마스크 디렉터리"
    )
    manifest_path = models.CharField(
        max_length=500,
        blank=True,
        default='',
        help_text="짝 지정 매니페스트 (선택)"
    )
    out_dir = models.CharField(
        max_length=500,
        help_text="보고서 출력 디렉터리"
    )
    config = models.JSONField(
        default=dict,
        help_text="평가 설정 (tau, connectivity, strata 등)"
    )
    source = models.CharField(
        max_length=10,
        choices=SOURCE_CHOICES,
        default='cli'
    )
    status = models.CharField(
        max_length=20,
        choices=STATUS_CHOICES,
        default='pending'
    )
    report = models.JSONField(
        blank=True,
        null=True,
        help_text="report.json 내용"
    )
    n_studies = models.IntegerField(default=0)
    n_skipped = models.IntegerField(default=0)
    n_tp = models.IntegerField(default=0)
    n_fn = models.IntegerField(default=0)
    n_fp = models.IntegerField(default=0)
    error_message = models.TextField(
        blank=True,
        null=True
    )
    task_id = models.CharField(
        max_length=255,
        blank=True,
        null=True,
        help_text="Celery 태스크 ID"
    )
    started_at = models.DateTimeField(
        blank=True,
        null=True
    )
    completed_at = models.DateTimeField(
        blank=True,
        null=True
    )
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        verbose_name = "평가 실행"
        verbose_name_plural = "평가 실행들"
        ordering = ['-created_at']
        indexes = [
            models.Index(fields=['status'], name='eval_run_status_idx'),
            models.Index(fields=['-created_at'], name='eval_run_created_idx'),
        ]

    def __str__(self):
        return f"{self.name or self.gt_dir} ({self.get_status_display()})"

    @property
    def duration(self):
        if self.started_at and self.completed_at:
            return self.completed_at - self.started_at
        return None

    @property
    def sensitivity(self):
        total = self.n_tp + self.n_fn
        return self.n_tp / total if total else None

    def start(self, task_id=None):
        self.status = 'running'
        self.started_at = timezone.now()
        self.error_message = None
        fields = ['status', 'started_at', 'error_message']
        if task_id:
            self.task_id = task_id
            fields.append('task_id')
        self.save(update_fields=fields)

    def complete(self, report: dict, counts: dict, n_studies: int, n_skipped: int):
        self.status = 'completed'
        self.completed_at = timezone.now()
        self.report = report
        self.n_studies = n_studies
        self.n_skipped = n_skipped
        self.n_tp = counts['tp']
        self.n_fn = counts['fn']
        self.n_fp = counts['fp']
        self.save(update_fields=[
            'status', 'completed_at', 'report', 'n_studies', 'n_skipped',
            'n_tp', 'n_fn', 'n_fp',
        ])

    def fail(self, error_message=None):
        self.status = 'failed'
        self.completed_at = timezone.now()
        self.error_message = error_message
        self.save(update_fields=['status', 'completed_at', 'error_message'])


class StudyResult(models.Model):
    """실행 내 스터디 하나의 결과"""

    STATUS_CHOICES = [
        ('evaluated', '평가됨'),
        ('missing_prediction', '예측 없음 (빈 예측으로 평가)'),
        ('skipped', '건너뜀'),
    ]

    run = models.ForeignKey(
        EvaluationRun,
        on_delete=models.CASCADE,
        related_name='studies'
    )
    study_id = models.CharField(max_length=255)
    status = models.CharField(
        max_length=20,
        choices=STATUS_CHOICES,
        default='evaluated'
    )
    gt_path = models.CharField(max_length=500)
    pred_path = models.CharField(
        max_length=500,
        blank=True,
        default=''
    )
    spacing = models.JSONField(
        blank=True,
        null=True,
        help_text="복셀 spacing (mm)"
    )
    n_gt = models.IntegerField(default=0)
    n_pred = models.IntegerField(default=0)
    n_tp = models.IntegerField(default=0)
    n_fn = models.IntegerField(default=0)
    n_fp = models.IntegerField(default=0)
    error_message = models.TextField(
        blank=True,
        null=True
    )

    class Meta:
        verbose_name = "스터디 결과"
        verbose_name_plural = "스터디 결과들"
        ordering = ['run', 'study_id']
        unique_together = ['run', 'study_id']

    def __str__(self):
        return f"{self.study_id} ({self.get_status_display()})"


class LesionRecord(models.Model):
    """lesions.csv의 한 행"""

    STATUS_CHOICES = [
        ('TP', '검출'),
        ('FN', '미검출'),
        ('FP', '오검출'),
    ]

    run = models.ForeignKey(
        EvaluationRun,
        on_delete=models.CASCADE,
        related_name='lesions'
    )
    study_id = models.CharField(max_length=255)
    lesion_id = models.IntegerField()
    status = models.CharField(
        max_length=2,
        choices=STATUS_CHOICES
    )
    pred_ids = models.CharField(
        max_length=255,
        blank=True,
        default='',
        help_text="겹치는 예측 병변 id (세미콜론 구분)"
    )
    gt_diameter_mm = models.FloatField(blank=True, null=True)
    pred_diameter_mm = models.FloatField(blank=True, null=True)
    gt_volume_mm3 = models.FloatField(blank=True, null=True)
    pred_volume_mm3 = models.FloatField(blank=True, null=True)
    dice = models.FloatField(blank=True, null=True)
    nsd = models.FloatField(blank=True, null=True)

    class Meta:
        verbose_name = "병변 기록"
        verbose_name_plural = "병변 기록들"
        ordering = ['run', 'study_id', 'status', 'lesion_id']
        indexes = [
            models.Index(fields=['run', 'status'], name='eval_lesion_run_status_idx'),
        ]

    def __str__(self):
        return f"{self.study_id}#{self.lesion_id} {self.status}"
