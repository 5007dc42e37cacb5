"""
평가 결과 비교 관리 명령어 (chi-square, Mann-Whitney U, Kruskal-Wallis)
"""

from pathlib import Path

from core.exceptions import ConfigurationError
from core.management.base import LesionEvalCommand
from evaluation import reports
from evaluation.services import ComparisonService


class Command(LesionEvalCommand):
    help = '같은 GT 코호트에 대한 두 개 이상의 평가 결과를 통계적으로 비교합니다'
    log_category = 'statistics'

    def add_arguments(self, parser):
        parser.add_argument('reports', nargs='+', help='report.json 경로 (2개 이상)')
        parser.add_argument(
            '--lesions',
            nargs='+',
            help='reports와 같은 순서의 lesions.csv 경로 (기본: report.json 옆 파일)',
        )
        parser.add_argument('--labels', nargs='+', help='보고서 이름 (기본: 상위 디렉터리 이름)')
        parser.add_argument('--out-dir', help='comparison.json/csv 출력 디렉터리 (기본: 현재 디렉터리)')
        parser.add_argument('--exact-max-n', type=int, help='Mann-Whitney 정확 분포를 쓰는 최대 표본 크기')

    def run(self, *args, **options):
        report_paths = options['reports']
        lesions = options.get('lesions') or [None] * len(report_paths)
        labels = options.get('labels') or [None] * len(report_paths)
        if len(report_paths) < 2:
            raise ConfigurationError('비교하려면 보고서가 2개 이상 필요합니다.')
        if len(lesions) != len(report_paths) or len(labels) != len(report_paths):
            raise ConfigurationError('--lesions/--labels 개수가 보고서 개수와 다릅니다.')

        service = ComparisonService(exact_max_n=options.get('exact_max_n'))
        runs = [
            service.load(report, lesion_path, label)
            for report, lesion_path, label in zip(report_paths, lesions, labels)
        ]
        if len({run.label for run in runs}) != len(runs):
            raise ConfigurationError('보고서 이름이 중복됩니다. --labels로 구분하세요.')

        payload = service.compare(runs)
        paths = reports.write_comparison(payload, Path(options.get('out_dir') or '.'))

        for group in payload['pairwise'] + payload['groupwise']:
            self.stdout.write(group['label'])
            for test in group['tests']:
                marker = '*' if test['significant'] else ' '
                p_value = self.display(test['p_value'], 4)
                reason = f" ({test['reason']})" if test['reason'] else ''
                self.stdout.write(f"  {marker} {test['test']:<15} {test['metric']:<17} p={p_value}{reason}")
        self.write_paths(paths)
        self.stdout.write(self.style.SUCCESS('비교 완료'))
