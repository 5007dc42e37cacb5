"""
팬텀 코호트 생성 관리 명령어
"""

from pathlib import Path

from core.exceptions import ConfigurationError
from core.management.base import LesionEvalCommand, float_triple
from core.utils import parse_float_list
from phantoms.cohort import CohortParams, generate_cohort


class Command(LesionEvalCommand):
    help = '해석적 정답이 있는 팬텀 GT/예측 코호트를 생성합니다'
    log_category = 'phantom'

    def add_arguments(self, parser):
        defaults = CohortParams()
        parser.add_argument('--out-dir', required=True, help='출력 디렉터리 (gt/, pred/, manifest.json)')
        parser.add_argument('--n-positive', type=int, default=defaults.n_positive, help='병변이 있는 스터디 수')
        parser.add_argument('--n-negative', type=int, default=defaults.n_negative, help='병변이 없는 스터디 수')
        parser.add_argument('--n-lesions', type=int, help='전체 병변 수 (기본: 양성 스터디 수)')
        parser.add_argument('--n-missed', type=int, default=0, help='예측에서 지울 병변 수 (FN)')
        parser.add_argument('--n-false-positives', type=int, default=0, help='예측에 추가할 FP 수')
        parser.add_argument('--seed', type=int, default=defaults.seed)
        parser.add_argument('--dims', type=float_triple, default=defaults.dims, help='격자 크기 "x,y,z"')
        parser.add_argument('--spacing', type=float_triple, default=defaults.spacing, help='복셀 간격 mm "x,y,z"')
        parser.add_argument('--diameter-median', type=float, default=defaults.diameter_median_mm)
        parser.add_argument('--diameter-sigma', type=float, default=defaults.diameter_sigma, help='로그정규 sigma')
        parser.add_argument('--min-diameter', type=float, default=defaults.min_diameter_mm)
        parser.add_argument('--max-diameter', type=float, default=defaults.max_diameter_mm)
        parser.add_argument('--ellipsoid-fraction', type=float, default=defaults.ellipsoid_fraction)
        parser.add_argument('--fp-diameter', default='1,3', help='FP 지름 범위 mm "min,max"')
        parser.add_argument('--steps', type=int, default=0, help='양수 팽창, 음수 침식 횟수')
        parser.add_argument('--offset-mm', type=float_triple, default=(0.0, 0.0, 0.0), help='예측 이동 mm "x,y,z"')
        parser.add_argument('--no-cover-strata', action='store_true', help='층별 지름 강제 배정 끄기')
        parser.add_argument('--workers', type=int, default=1)

    @staticmethod
    def diameter_range(text):
        values = parse_float_list(text, 'fp_diameter')
        if len(values) != 2:
            raise ConfigurationError(f"--fp-diameter는 \"min,max\" 형식이어야 합니다: {text!r}")
        return tuple(values)

    def run(self, *args, **options):
        params = CohortParams(
            n_positive=options['n_positive'],
            n_negative=options['n_negative'],
            n_lesions=options.get('n_lesions'),
            n_missed=options['n_missed'],
            n_false_positives=options['n_false_positives'],
            seed=options['seed'],
            dims=options['dims'],
            spacing=options['spacing'],
            diameter_median_mm=options['diameter_median'],
            diameter_sigma=options['diameter_sigma'],
            min_diameter_mm=options['min_diameter'],
            max_diameter_mm=options['max_diameter'],
            ellipsoid_fraction=options['ellipsoid_fraction'],
            fp_diameter_mm=self.diameter_range(options['fp_diameter']),
            steps=options['steps'],
            offset_mm=options['offset_mm'],
            cover_strata=not options['no_cover_strata'],
            workers=options['workers'],
        )
        out_dir = Path(options['out_dir'])
        manifest = generate_cohort(out_dir, params)
        totals = manifest['totals']
        self.stdout.write(
            f"스터디 {totals['studies']} (양성 {totals['positive']}, 음성 {totals['negative']}), "
            f"병변 {totals['lesions']}"
        )
        self.stdout.write(f"기대 TP {totals['tp']} / FN {totals['fn']} / FP {totals['fp']}")
        self.stdout.write(self.style.SUCCESS(f"팬텀 코호트 생성 완료: {out_dir / 'manifest.json'}"))
