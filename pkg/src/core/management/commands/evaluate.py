"""
GT/예측 볼륨 디렉터리 평가 관리 명령어

report.json, report.csv, lesions.csv를 --out-dir에 쓴다.
"""

from pathlib import Path

from core.exceptions import ConfigurationError
from core.management.base import LesionEvalCommand
from evaluation.cohort import ALL, BAND_MODES
from evaluation.models import EvaluationRun
from evaluation.services import EvaluationService, RunConfig, queue_evaluation

HEADLINE = [
    ('sensitivity', 'Sensitivity'),
    ('fp_per_case', 'FP/case'),
    ('dice', 'DICE'),
    ('nsd', 'NSD'),
]


class Command(LesionEvalCommand):
    help = 'GT/예측 마스크 코호트를 평가하고 보고서를 작성합니다'
    log_category = 'evaluation'

    def add_arguments(self, parser):
        parser.add_argument('--gt-dir', help='GT 마스크 디렉터리')
        parser.add_argument('--pred-dir', help='예측 마스크 디렉터리 (파일명 stem으로 짝 지음)')
        parser.add_argument('--manifest', help='study id -> {gt, pred} 매니페스트 (stem 짝 대신 사용)')
        parser.add_argument('--out-dir', help='출력 디렉터리 (기본: LESIONEVAL_OUTPUT_ROOT/<gt-dir 이름>)')
        parser.add_argument('--tau-mm', type=float, help='NSD 허용 거리 mm (기본 0.5)')
        parser.add_argument('--connectivity', type=int, choices=[6, 18, 26], help='연결성 (기본 26)')
        parser.add_argument('--strata', help='크기 층 경계 mm, 쉼표 구분 (기본 "2,4")')
        parser.add_argument('--band-mode', choices=BAND_MODES, help='층 방식 (기본 overlapping)')
        parser.add_argument('--bootstrap-n', type=int, help='부트스트랩 재표본 수 (기본 10000)')
        parser.add_argument('--seed', type=int, help='부트스트랩 seed')
        parser.add_argument('--confidence', type=float, help='신뢰 수준 (기본 0.95)')
        parser.add_argument('--workers', type=int, help='병렬 작업 수')
        parser.add_argument('--threshold', type=float, help='비이진 볼륨 이진화 임계값 (기본 0.5)')
        parser.add_argument('--max-skip-fraction', type=float, help='허용되는 건너뛴 스터디 비율 (기본 0.10)')
        parser.add_argument('--curve-thresholds', help='누적 곡선 지름 임계값 mm, 쉼표 구분')
        parser.add_argument('--exact-max-n', type=int, help='크기 비교 Mann-Whitney 정확 분포를 쓰는 최대 표본 크기')
        parser.add_argument('--name', default='', help='실행 이름')
        parser.add_argument(
            '--async',
            dest='queue',
            action='store_true',
            help='바로 실행하지 않고 Celery 큐에 등록',
        )

    def config_from_options(self, options) -> RunConfig:
        manifest = options.get('manifest')
        gt_dir = options.get('gt_dir')
        pred_dir = options.get('pred_dir')
        if manifest:
            base = Path(manifest).parent
            gt_dir = gt_dir or base
            pred_dir = pred_dir or base
        elif not gt_dir or not pred_dir:
            raise ConfigurationError('--gt-dir와 --pred-dir (또는 --manifest)가 필요합니다.')
        overrides = {
            key: options.get(key)
            for key in (
                'tau_mm', 'connectivity', 'strata', 'band_mode', 'bootstrap_n', 'seed', 'confidence',
                'workers', 'threshold', 'max_skip_fraction', 'curve_thresholds', 'exact_max_n',
            )
        }
        return RunConfig.from_settings(
            gt_dir, pred_dir, options.get('out_dir'),
            manifest=manifest, name=options.get('name'), **overrides,
        )

    def run(self, *args, **options):
        config = self.config_from_options(options)

        if options.get('queue'):
            run = EvaluationRun.objects.create(
                name=config.name,
                gt_dir=str(config.gt_dir),
                pred_dir=str(config.pred_dir),
                manifest_path=str(config.manifest or ''),
                out_dir=str(config.out_dir),
                config=config.to_dict(),
                source='cli',
            )
            queue_evaluation(run)
            self.stdout.write(self.style.SUCCESS(f'평가 실행 {run.id}을(를) 큐에 등록했습니다 (task {run.task_id}).'))
            return

        self.stdout.write(f'평가 시작: {config.gt_dir} / {config.pred_dir}')
        report, paths, run = EvaluationService(config).run()

        counts = report.counts
        self.stdout.write(
            f"스터디 {run.n_studies} (건너뜀 {run.n_skipped}), "
            f"TP {counts['tp']} / FN {counts['fn']} / FP {counts['fp']}"
        )
        for metric, label in HEADLINE:
            cell = report.cell(metric, ALL)
            self.stdout.write(
                f"  {label:<12} {self.display(cell.point)} "
                f"[{self.display(cell.lower)}, {self.display(cell.upper)}]"
            )
        self.write_paths(paths)
        self.stdout.write(self.style.SUCCESS(f'평가 완료 (run {run.id})'))
