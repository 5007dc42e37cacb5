"""
평가 실행, 보고서 비교, 곡선/산점도 서비스

명령행(manage.py)과 Celery 태스크가 같은 서비스를 사용한다.
"""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from django.db import transaction

from core.exceptions import (
    ConfigurationError, DataError, EmptyCohortError, IncomparableRunsError,
    InsufficientDataError, LesionEvalError, StatisticsError, TooManySkippedStudiesError,
)
from core.models import SystemLog
from core.stats import chi_square_2x2, kruskal_wallis, mann_whitney_u
from core.utils import json_ready, parse_float_list, read_json, resolve_setting, write_json
from evaluation import plots, reports
from evaluation.cohort import (
    BAND_MODES, SCHEMA_VERSION, CohortReport, StratumSpec, aggregate_cohort, cumulative_curves,
    size_correlation,
)
from evaluation.metrics import (
    STATUS_FN, STATUS_FP, STATUS_TP, LesionMetrics, StudyEvaluation, evaluate_masks,
)
from evaluation.models import EvaluationRun, LesionRecord, StudyResult
from lesions.components import CONNECTIVITY_RANK
from volumes.grid import binarize
from volumes.nifti import is_volume_file, load_volume, volume_stem

logger = logging.getLogger('lesioneval')

ALPHA = 0.05


@dataclass
class RunConfig:
    """evaluate 실행 설정"""
    gt_dir: Path
    pred_dir: Path
    out_dir: Path
    tau_mm: float = 0.5
    connectivity: int = 26
    strata: StratumSpec = field(default_factory=StratumSpec)
    bootstrap_n: int = 10000
    seed: int = 20240101
    confidence: float = 0.95
    workers: int = 4
    threshold: float = 0.5
    max_skip_fraction: float = 0.10
    exact_max_n: int = 20
    curve_thresholds: Tuple[float, ...] = tuple(float(t) for t in range(11))
    manifest: Optional[Path] = None
    name: str = ''

    def __post_init__(self):
        self.gt_dir = Path(self.gt_dir)
        self.pred_dir = Path(self.pred_dir)
        self.out_dir = Path(self.out_dir)
        if self.manifest:
            self.manifest = Path(self.manifest)

    @classmethod
    def from_settings(cls, gt_dir, pred_dir, out_dir=None, **overrides) -> 'RunConfig':
        """설정 우선순위에 따라 RunConfig 생성 (override > core.Settings > Django settings)"""
        def pick(key):
            return resolve_setting(key, overrides.get(key))

        strata = StratumSpec.parse(pick('strata'), pick('band_mode'))
        if out_dir is None:
            from django.conf import settings
            out_dir = Path(settings.LESIONEVAL_OUTPUT_ROOT) / Path(gt_dir).name
        config = cls(
            gt_dir=gt_dir,
            pred_dir=pred_dir,
            out_dir=out_dir,
            tau_mm=float(pick('tau_mm')),
            connectivity=int(pick('connectivity')),
            strata=strata,
            bootstrap_n=int(pick('bootstrap_n')),
            seed=int(pick('seed')),
            confidence=float(pick('confidence')),
            workers=int(pick('workers')),
            threshold=float(pick('threshold')),
            max_skip_fraction=float(pick('max_skip_fraction')),
            exact_max_n=int(resolve_setting('mw_exact_max_n', overrides.get('exact_max_n'))),
            curve_thresholds=tuple(parse_float_list(pick('curve_thresholds'), 'curve_thresholds')),
            manifest=overrides.get('manifest'),
            name=overrides.get('name') or '',
        )
        config.validate()
        return config

    def validate(self):
        if not (math.isfinite(self.tau_mm) and self.tau_mm > 0):
            raise ConfigurationError(f"tau_mm은 양수여야 합니다: {self.tau_mm}")
        if self.connectivity not in CONNECTIVITY_RANK:
            raise ConfigurationError(f"connectivity는 6, 18, 26 중 하나여야 합니다: {self.connectivity}")
        if self.strata.mode not in BAND_MODES:
            raise ConfigurationError(f"band mode가 잘못되었습니다: {self.strata.mode}")
        if self.bootstrap_n < 100:
            raise ConfigurationError(f"bootstrap_n은 100 이상이어야 합니다: {self.bootstrap_n}")
        if self.workers < 1:
            raise ConfigurationError(f"workers는 1 이상이어야 합니다: {self.workers}")
        if not 0 <= self.max_skip_fraction <= 1:
            raise ConfigurationError(f"max_skip_fraction은 [0, 1] 범위여야 합니다: {self.max_skip_fraction}")
        if not self.manifest and not self.gt_dir.is_dir():
            raise ConfigurationError(f"GT 디렉터리가 없습니다: {self.gt_dir}")
        if not self.manifest and not self.pred_dir.is_dir():
            raise ConfigurationError(f"예측 디렉터리가 없습니다: {self.pred_dir}")
        if self.manifest and not self.manifest.is_file():
            raise ConfigurationError(f"매니페스트가 없습니다: {self.manifest}")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['strata'] = self.strata.to_dict()
        for key in ('gt_dir', 'pred_dir', 'out_dir', 'manifest'):
            data[key] = str(data[key]) if data[key] else None
        data['curve_thresholds'] = list(self.curve_thresholds)
        return data


@dataclass(frozen=True)
class StudyPair:
    study_id: str
    gt_path: Path
    pred_path: Optional[Path]


@dataclass
class StudyOutcome:
    pair: StudyPair
    evaluation: Optional[StudyEvaluation] = None
    error: str = ''

    @property
    def skipped(self) -> bool:
        return self.evaluation is None


def _volumes_by_stem(directory: Path) -> Dict[str, Path]:
    found: Dict[str, Path] = {}
    for path in sorted(directory.iterdir()):
        if not path.is_file() or not is_volume_file(path):
            continue
        stem = volume_stem(path)
        if stem in found:
            raise ConfigurationError(f"같은 이름의 볼륨이 두 개 있습니다: {found[stem].name}, {path.name}")
        found[stem] = path
    return found


def pair_by_stem(gt_dir: Path, pred_dir: Path) -> List[StudyPair]:
    """확장자를 뺀 파일명(대소문자 구분)으로 GT와 예측을 짝짓기"""
    gt_files = _volumes_by_stem(gt_dir)
    pred_files = _volumes_by_stem(pred_dir)
    orphans = sorted(set(pred_files) - set(gt_files))
    if orphans:
        raise ConfigurationError(f"GT가 없는 예측 파일: {', '.join(orphans)}")
    return [StudyPair(stem, gt_files[stem], pred_files.get(stem)) for stem in sorted(gt_files)]


def pair_from_manifest(manifest_path: Path) -> List[StudyPair]:
    """
    매니페스트로 짝짓기

    {"studies": {"<id>": {"gt": "...", "pred": "..."}}} 형식이며 상대 경로는
    매니페스트 파일 위치 기준이다. pred가 없거나 null이면 빈 예측.
    """
    payload = read_json(manifest_path)
    studies = payload.get('studies') if isinstance(payload, dict) else None
    if not isinstance(studies, dict):
        raise ConfigurationError(f"매니페스트에 studies 항목이 없습니다: {manifest_path}")
    base = manifest_path.parent
    pairs = []
    for study_id in sorted(studies):
        entry = studies[study_id]
        if not isinstance(entry, dict) or not entry.get('gt'):
            if isinstance(entry, dict) and entry.get('pred'):
                raise ConfigurationError(f"GT가 없는 예측: {study_id}")
            raise ConfigurationError(f"매니페스트 항목에 gt 경로가 없습니다: {study_id}")
        pred = entry.get('pred')
        pairs.append(StudyPair(
            study_id=str(study_id),
            gt_path=base / entry['gt'],
            pred_path=base / pred if pred else None,
        ))
    return pairs


class EvaluationService:
    """GT/예측 디렉터리 평가와 보고서 생성"""

    def __init__(self, config: RunConfig):
        self.config = config

    def pairs(self) -> List[StudyPair]:
        if self.config.manifest:
            pairs = pair_from_manifest(self.config.manifest)
        else:
            pairs = pair_by_stem(self.config.gt_dir, self.config.pred_dir)
        if not pairs:
            raise EmptyCohortError(f"평가할 GT 볼륨이 없습니다: {self.config.gt_dir}")
        return pairs

    def evaluate_pair(self, pair: StudyPair) -> StudyOutcome:
        """스터디 하나 평가 (데이터 오류는 건너뜀으로 기록)"""
        config = self.config
        try:
            gt_mask = binarize(load_volume(pair.gt_path), config.threshold)
            pred_mask = None
            if pair.pred_path is not None and pair.pred_path.exists():
                pred_mask = binarize(load_volume(pair.pred_path), config.threshold)
            else:
                logger.warning(f"예측 파일 없음, 빈 예측으로 평가: {pair.study_id}")
            evaluation = evaluate_masks(
                pair.study_id, gt_mask, pred_mask, config.tau_mm, config.connectivity,
            )
            return StudyOutcome(pair, evaluation)
        except (DataError, OSError) as e:
            logger.error(f"스터디 {pair.study_id} 건너뜀: {e}")
            return StudyOutcome(pair, error=f"{type(e).__name__}: {e}")

    def evaluate_all(self, pairs: Sequence[StudyPair]) -> List[StudyOutcome]:
        """workers 수만큼 병렬 평가, 결과는 study id 순"""
        if self.config.workers > 1 and len(pairs) > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as executor:
                outcomes = list(executor.map(self.evaluate_pair, pairs))
        else:
            outcomes = [self.evaluate_pair(pair) for pair in pairs]
        return sorted(outcomes, key=lambda outcome: outcome.pair.study_id)

    def run(self, run: Optional[EvaluationRun] = None, task_id: Optional[str] = None):
        """평가 실행 전체. (CohortReport, 출력 경로, EvaluationRun) 반환"""
        config = self.config
        if run is None:
            run = EvaluationRun.objects.create(
                name=config.name,
                gt_dir=str(config.gt_dir),
                pred_dir=str(config.pred_dir),
                manifest_path=str(config.manifest or ''),
                out_dir=str(config.out_dir),
                config=config.to_dict(),
                source='cli',
            )
        run.start(task_id=task_id)
        SystemLog.log('INFO', 'evaluation', f"평가 시작: run {run.id}", {'config': config.to_dict()})

        try:
            pairs = self.pairs()
            outcomes = self.evaluate_all(pairs)
            skipped = [outcome for outcome in outcomes if outcome.skipped]
            evaluated = [outcome.evaluation for outcome in outcomes if not outcome.skipped]

            for outcome in outcomes:
                if outcome.skipped:
                    SystemLog.log('WARNING', 'evaluation', f"스터디 건너뜀: {outcome.pair.study_id}",
                                  {'run_id': run.id, 'error': outcome.error})
                elif outcome.evaluation.missing_prediction:
                    SystemLog.log('WARNING', 'evaluation', f"예측 없음: {outcome.pair.study_id}",
                                  {'run_id': run.id})

            if len(skipped) > config.max_skip_fraction * len(outcomes):
                raise TooManySkippedStudiesError(
                    f"건너뛴 스터디가 너무 많습니다: {len(skipped)}/{len(outcomes)}"
                )
            if not evaluated:
                raise EmptyCohortError("평가된 스터디가 없습니다.")

            report = aggregate_cohort(
                evaluated,
                config.strata,
                n_cases=len(evaluated),
                n_resamples=config.bootstrap_n,
                confidence=config.confidence,
                seed=config.seed,
                workers=config.workers,
                curve_thresholds=config.curve_thresholds,
                exact_max_n=config.exact_max_n,
            )
            # 보고서 바이트는 workers 값과 무관해야 한다
            report.config.update({k: v for k, v in config.to_dict().items() if k != 'workers'})
            extra = {
                'skipped_studies': [
                    {'study_id': outcome.pair.study_id, 'error': outcome.error} for outcome in skipped
                ],
            }
            paths = reports.write_report(report, config.out_dir, extra)
            self._persist(run, outcomes, report)
            run.complete(json_ready(report.to_dict() | extra), report.counts, len(evaluated), len(skipped))
        except LesionEvalError as e:
            run.fail(f"{type(e).__name__}: {e}")
            SystemLog.log('ERROR', 'evaluation', f"평가 실패: run {run.id}", {'error': str(e)})
            raise

        counts = report.counts
        SystemLog.log('INFO', 'evaluation', f"평가 완료: run {run.id}", {
            'studies': len(evaluated), 'skipped': len(skipped), **counts,
        })
        return report, paths, run

    @transaction.atomic
    def _persist(self, run: EvaluationRun, outcomes: Sequence[StudyOutcome], report: CohortReport):
        results = []
        for outcome in outcomes:
            pair = outcome.pair
            result = StudyResult(
                run=run,
                study_id=pair.study_id,
                gt_path=str(pair.gt_path),
                pred_path=str(pair.pred_path or ''),
            )
            if outcome.skipped:
                result.status = 'skipped'
                result.error_message = outcome.error
            else:
                evaluation = outcome.evaluation
                summary = evaluation.summary()
                result.status = 'missing_prediction' if evaluation.missing_prediction else 'evaluated'
                result.spacing = summary['spacing']
                result.n_gt = summary['gt_lesions']
                result.n_pred = summary['pred_lesions']
                result.n_tp = summary['tp']
                result.n_fn = summary['fn']
                result.n_fp = summary['fp']
            results.append(result)
        StudyResult.objects.bulk_create(results)
        LesionRecord.objects.bulk_create([LesionRecord(run=run, **row) for row in report.rows])


def _test_entry(test: str, metric: str, call) -> Dict[str, Any]:
    """검정 결과 항목, 퇴화/표본 부족이면 null과 사유"""
    try:
        result = call()
    except StatisticsError as e:
        return {
            'test': test, 'metric': metric, 'statistic': None, 'p_value': None,
            'significant': None, 'n': [], 'degenerate': True, 'reason': str(e),
        }
    return {
        'test': test,
        'metric': metric,
        'statistic': result.statistic,
        'p_value': result.p_value,
        'significant': result.significant(ALPHA),
        'n': list(result.n),
        'degenerate': result.degenerate,
        'reason': 'all values identical' if result.degenerate else '',
    }


@dataclass
class LoadedRun:
    label: str
    report: Dict[str, Any]
    rows: List[Dict[str, Any]]

    @property
    def study_ids(self) -> List[str]:
        return sorted(study['study_id'] for study in self.report.get('studies', []))

    def gt_keys(self):
        return sorted((row['study_id'], row['lesion_id']) for row in self.rows
                      if row['status'] in (STATUS_TP, STATUS_FN))

    def detection(self) -> Tuple[int, int]:
        statuses = [row['status'] for row in self.rows]
        return statuses.count(STATUS_TP), statuses.count(STATUS_FN)

    def values(self, metric: str) -> List[float]:
        tp_rows = [row for row in self.rows if row['status'] == STATUS_TP]
        if metric == 'dice':
            return [row['dice'] for row in tp_rows]
        if metric == 'nsd':
            return [row['nsd'] for row in tp_rows]
        if metric == 'volume_diff_mm3':
            return [row['gt_volume_mm3'] - row['pred_volume_mm3'] for row in tp_rows]
        if metric == 'diameter_diff_mm':
            return [row['gt_diameter_mm'] - row['pred_diameter_mm'] for row in tp_rows]
        if metric == 'fp_per_study':
            counts = dict.fromkeys(self.study_ids, 0)
            for row in self.rows:
                if row['status'] == STATUS_FP:
                    counts[row['study_id']] = counts.get(row['study_id'], 0) + 1
            return [counts[study_id] for study_id in sorted(counts)]
        raise ConfigurationError(f"알 수 없는 비교 지표: {metric}")


class ComparisonService:
    """두 개 이상의 평가 결과 비교"""

    METRICS = ['dice', 'nsd', 'volume_diff_mm3', 'diameter_diff_mm', 'fp_per_study']

    def __init__(self, exact_max_n: Optional[int] = None):
        self.exact_max_n = int(resolve_setting('mw_exact_max_n', exact_max_n))

    @staticmethod
    def load(report_path, lesions_path=None, label: Optional[str] = None) -> LoadedRun:
        report_path = Path(report_path)
        lesions_path = Path(lesions_path) if lesions_path else report_path.parent / reports.LESIONS_CSV
        return LoadedRun(
            label=label or report_path.parent.name,
            report=reports.read_report_json(report_path),
            rows=reports.read_lesions_csv(lesions_path),
        )

    @staticmethod
    def verify_same_cohort(runs: Sequence[LoadedRun]):
        reference = runs[0]
        for other in runs[1:]:
            if other.study_ids != reference.study_ids:
                raise IncomparableRunsError(
                    f"스터디 구성이 다릅니다: {reference.label} vs {other.label}"
                )
            if other.gt_keys() != reference.gt_keys():
                raise IncomparableRunsError(
                    f"GT 병변 구성이 다릅니다: {reference.label} vs {other.label}"
                )

    def compare(self, runs: Sequence[LoadedRun]) -> Dict[str, Any]:
        if len(runs) < 2:
            raise ConfigurationError("비교하려면 보고서가 2개 이상 필요합니다.")
        self.verify_same_cohort(runs)

        pairwise = []
        for a, b in itertools.combinations(runs, 2):
            tests = [_test_entry(
                'chi-square', 'detection',
                lambda a=a, b=b: chi_square_2x2([list(a.detection()), list(b.detection())]),
            )]
            for metric in self.METRICS:
                tests.append(_test_entry(
                    'mann-whitney-u', metric,
                    lambda metric=metric, a=a, b=b: mann_whitney_u(
                        a.values(metric), b.values(metric), exact_max_n=self.exact_max_n,
                    ),
                ))
            pairwise.append({'label': f"{a.label} vs {b.label}", 'runs': [a.label, b.label], 'tests': tests})

        groupwise = []
        if len(runs) > 2:
            tests = [
                _test_entry('kruskal-wallis', metric,
                            lambda metric=metric: kruskal_wallis([run.values(metric) for run in runs]))
                for metric in self.METRICS
            ]
            groupwise.append({'label': ' vs '.join(run.label for run in runs),
                              'runs': [run.label for run in runs], 'tests': tests})

        SystemLog.log('INFO', 'statistics', f"비교 완료: {len(runs)}개 보고서",
                      {'runs': [run.label for run in runs]})
        return {
            'schema_version': SCHEMA_VERSION,
            'alpha': ALPHA,
            'runs': [
                {'label': run.label, 'detection': dict(zip(('tp', 'fn'), run.detection()))}
                for run in runs
            ],
            'pairwise': pairwise,
            'groupwise': groupwise,
        }


def _sibling_n_cases(lesions_path: Path) -> Optional[int]:
    report_path = lesions_path.parent / reports.REPORT_JSON
    if not report_path.exists():
        return None
    return int(reports.read_report_json(report_path)['n_cases'])


def curves_from_lesions(lesions_path, thresholds, out_dir=None, n_cases: Optional[int] = None):
    """lesions.csv에서 누적 곡선 계산, curves.csv/curves.svg 저장"""
    lesions_path = Path(lesions_path)
    rows = reports.read_lesions_csv(lesions_path)
    if n_cases is None:
        n_cases = _sibling_n_cases(lesions_path)
    if n_cases is None:
        n_cases = len({row['study_id'] for row in rows})
        logger.warning(
            f"case 수를 알 수 없어 lesions.csv의 스터디 수({n_cases})를 사용합니다. "
            "음성 스터디가 빠졌을 수 있습니다."
        )
    points = cumulative_curves(rows, thresholds, n_cases)
    out_dir = Path(out_dir) if out_dir else lesions_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        'curves_csv': reports.write_curves(points, out_dir / reports.CURVES_CSV),
        'curves_svg': plots.plot_curves(points, out_dir / reports.CURVES_SVG),
    }
    return points, paths


def scatter_from_lesions(lesions_path, out_dir=None):
    """TP 병변의 GT/예측 크기 쌍과 Spearman rho, scatter.csv/json/svg 저장"""
    lesions_path = Path(lesions_path)
    rows = [row for row in reports.read_lesions_csv(lesions_path) if row['status'] == STATUS_TP]
    if len(rows) < 3:
        raise InsufficientDataError(f"산점도에는 TP가 3개 이상 필요합니다: {len(rows)}")
    metrics = [
        LesionMetrics(
            gt_id=row['lesion_id'],
            pred_ids=tuple(int(i) for i in row['pred_ids'].split(';') if i),
            dice=row['dice'],
            nsd=row['nsd'],
            gt_volume_mm3=row['gt_volume_mm3'],
            pred_volume_mm3=row['pred_volume_mm3'],
            gt_diameter_mm=row['gt_diameter_mm'],
            pred_diameter_mm=row['pred_diameter_mm'],
        )
        for row in rows
    ]
    rho_volume, rho_diameter = size_correlation(metrics)
    out_dir = Path(out_dir) if out_dir else lesions_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {
        'n': len(rows),
        'spearman_volume': rho_volume.to_dict(),
        'spearman_diameter': rho_diameter.to_dict(),
    }
    paths = {
        'scatter_csv': reports.write_scatter(rows, out_dir / reports.SCATTER_CSV),
        'scatter_json': write_json(out_dir / reports.SCATTER_JSON, summary),
        'scatter_svg': plots.plot_scatter(
            rows, rho_diameter.statistic, rho_volume.statistic, out_dir / reports.SCATTER_SVG,
        ),
    }
    return summary, paths


def queue_evaluation(run: EvaluationRun) -> EvaluationRun:
    """API로 생성된 실행을 Celery 큐에 넣기"""
    from evaluation.tasks import evaluate_run

    result = evaluate_run.delay(run.id)
    run.task_id = result.id
    run.save(update_fields=['task_id'])
    logger.info(f"평가 실행 {run.id} 큐 등록 (task {result.id})")
    return run


def config_for_run(run: EvaluationRun) -> RunConfig:
    """저장된 EvaluationRun 설정에서 RunConfig 재구성"""
    stored = dict(run.config or {})
    strata = stored.pop('strata', None)
    overrides = {key: value for key, value in stored.items() if key not in ('gt_dir', 'pred_dir', 'out_dir')}
    if isinstance(strata, dict):
        overrides['strata'] = strata.get('boundaries_mm')
        overrides.setdefault('band_mode', strata.get('mode'))
    elif strata is not None:
        overrides['strata'] = strata
    overrides['manifest'] = run.manifest_path or None
    overrides['name'] = run.name
    return RunConfig.from_settings(run.gt_dir, run.pred_dir, run.out_dir or None, **overrides)
