"""
GT-예측 크기 산점도 관리 명령어
"""

from core.management.base import LesionEvalCommand
from evaluation.services import scatter_from_lesions


class Command(LesionEvalCommand):
    help = 'lesions.csv의 TP 병변으로 크기 산점도와 Spearman 상관을 만듭니다'
    log_category = 'report'

    def add_arguments(self, parser):
        parser.add_argument('lesions', help='evaluate가 쓴 lesions.csv')
        parser.add_argument('--out-dir', help='출력 디렉터리 (기본: lesions.csv 위치)')

    def run(self, *args, **options):
        summary, paths = scatter_from_lesions(options['lesions'], options.get('out_dir'))
        self.stdout.write(f"TP {summary['n']}개")
        for key, label in (('spearman_diameter', '지름'), ('spearman_volume', '부피')):
            self.stdout.write(f"  {label} Spearman rho = {self.display(summary[key]['statistic'])}")
        self.write_paths(paths)
