from django.db import migrations, models
import django.db.models.deletion


class Migration(migrations.Migration):
    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="EvaluationRun",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                (
                    "name",
                    models.CharField(blank=True, default="", help_text="실행 이름", max_length=200),
                ),
                ("gt_dir", models.CharField(help_text="GT 마스크 디렉터리", max_length=500)),
                ("pred_dir", models.CharField(help_text="예측 마스크 디렉터리", max_length=500)),
                (
                    "manifest_path",
                    models.CharField(
                        blank=True, default="", help_text="짝 지정 매니페스트 (선택)", max_length=500
                    ),
                ),
                ("out_dir", models.CharField(help_text="보고서 출력 디렉터리", max_length=500)),
                (
                    "config",
                    models.JSONField(default=dict, help_text="평가 설정 (tau, connectivity, strata 등)"),
                ),
                (
                    "source",
                    models.CharField(
                        choices=[("cli", "명령행"), ("api", "API")],
                        default="cli",
                        max_length=10,
                    ),
                ),
                (
                    "status",
                    models.CharField(
                        choices=[
                            ("pending", "대기 중"),
                            ("running", "실행 중"),
                            ("completed", "완료"),
                            ("failed", "실패"),
                        ],
                        default="pending",
                        max_length=20,
                    ),
                ),
                (
                    "report",
                    models.JSONField(blank=True, help_text="report.json 내용", null=True),
                ),
                ("n_studies", models.IntegerField(default=0)),
                ("n_skipped", models.IntegerField(default=0)),
                ("n_tp", models.IntegerField(default=0)),
                ("n_fn", models.IntegerField(default=0)),
                ("n_fp", models.IntegerField(default=0)),
                ("error_message", models.TextField(blank=True, null=True)),
                (
                    "task_id",
                    models.CharField(
                        blank=True, help_text="Celery 태스크 ID", max_length=255, null=True
                    ),
                ),
                ("started_at", models.DateTimeField(blank=True, null=True)),
                ("completed_at", models.DateTimeField(blank=True, null=True)),
                ("created_at", models.DateTimeField(auto_now_add=True)),
                ("updated_at", models.DateTimeField(auto_now=True)),
            ],
            options={
                "verbose_name": "평가 실행",
                "verbose_name_plural": "평가 실행들",
                "ordering": ["-created_at"],
                "indexes": [
                    models.Index(fields=["status"], name="eval_run_status_idx"),
                    models.Index(fields=["-created_at"], name="eval_run_created_idx"),
                ],
            },
        ),
        migrations.CreateModel(
            name="StudyResult",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                ("study_id", models.CharField(max_length=255)),
                (
                    "status",
                    models.CharField(
                        choices=[
                            ("evaluated", "평가됨"),
                            ("missing_prediction", "예측 없음 (빈 예측으로 평가)"),
                            ("skipped", "건너뜀"),
                        ],
                        default="evaluated",
                        max_length=20,
                    ),
                ),
                ("gt_path", models.CharField(max_length=500)),
                ("pred_path", models.CharField(blank=True, default="", max_length=500)),
                (
                    "spacing",
                    models.JSONField(blank=True, help_text="복셀 spacing (mm)", null=True),
                ),
                ("n_gt", models.IntegerField(default=0)),
                ("n_pred", models.IntegerField(default=0)),
                ("n_tp", models.IntegerField(default=0)),
                ("n_fn", models.IntegerField(default=0)),
                ("n_fp", models.IntegerField(default=0)),
                ("error_message", models.TextField(blank=True, null=True)),
                (
                    "run",
                    models.ForeignKey(
                        on_delete=django.db.models.deletion.CASCADE,
                        related_name="studies",
                        to="evaluation.evaluationrun",
                    ),
                ),
            ],
            options={
                "verbose_name": "스터디 결과",
                "verbose_name_plural": "스터디 결과들",
                "ordering": ["run", "study_id"],
                "unique_together": {("run", "study_id")},
            },
        ),
        migrations.CreateModel(
            name="LesionRecord",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                ("study_id", models.CharField(max_length=255)),
                ("lesion_id", models.IntegerField()),
                (
                    "status",
                    models.CharField(
                        choices=[("TP", "검출"), ("FN", "미검출"), ("FP", "오검출")],
                        max_length=2,
                    ),
                ),
                (
                    "pred_ids",
                    models.CharField(
                        blank=True,
                        default="",
                        help_text="겹치는 예측 병변 id (세미콜론 구분)",
                        max_length=255,
                    ),
                ),
                ("gt_diameter_mm", models.FloatField(blank=True, null=True)),
                ("pred_diameter_mm", models.FloatField(blank=True, null=True)),
                ("gt_volume_mm3", models.FloatField(blank=True, null=True)),
                ("pred_volume_mm3", models.FloatField(blank=True, null=True)),
                ("dice", models.FloatField(blank=True, null=True)),
                ("nsd", models.FloatField(blank=True, null=True)),
                (
                    "run",
                    models.ForeignKey(
                        on_delete=django.db.models.deletion.CASCADE,
                        related_name="lesions",
                        to="evaluation.evaluationrun",
                    ),
                ),
            ],
            options={
                "verbose_name": "병변 기록",
                "verbose_name_plural": "병변 기록들",
                "ordering": ["run", "study_id", "status", "lesion_id"],
                "indexes": [
                    models.Index(fields=["run", "status"], name="eval_lesion_run_status_idx"),
                ],
            },
        ),
    ]
