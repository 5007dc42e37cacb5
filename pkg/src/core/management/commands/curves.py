"""
지름 누적 곡선 관리 명령어 (임계값 이상 병변의 민감도, FP/case, 평균 DICE)
"""

from core.management.base import LesionEvalCommand
from core.utils import parse_float_list, resolve_setting
from evaluation.services import curves_from_lesions


class Command(LesionEvalCommand):
    help = 'lesions.csv에서 지름 누적 곡선(curves.csv, curves.svg)을 만듭니다'
    log_category = 'report'

    def add_arguments(self, parser):
        parser.add_argument('lesions', help='evaluate가 쓴 lesions.csv')
        parser.add_argument('--thresholds', help='지름 임계값 mm, 쉼표 구분 (기본 0..10)')
        parser.add_argument('--n-cases', type=int, help='FP/case 분모 (기본: 옆 report.json의 n_cases)')
        parser.add_argument('--out-dir', help='출력 디렉터리 (기본: lesions.csv 위치)')

    def run(self, *args, **options):
        thresholds = parse_float_list(resolve_setting('curve_thresholds', options.get('thresholds')), 'thresholds')
        points, paths = curves_from_lesions(
            options['lesions'], thresholds, options.get('out_dir'), options.get('n_cases'),
        )
        self.stdout.write(f"{'≥ mm':>6} {'Sens':>6} {'FP/case':>8} {'DICE':>6}")
        for point in points:
            self.stdout.write(
                f"{point.threshold_mm:>6g} {self.display(point.sensitivity):>6} "
                f"{self.display(point.fp_per_case):>8} {self.display(point.mean_dice):>6}"
            )
        self.write_paths(paths)
