"""
코호트 집계: 크기 층화 민감도/FP per case, 분할 지표, 부트스트랩 CI, 누적 곡선

입력은 lesions.csv와 같은 평탄한 병변 행(dict)이다.
민감도 층은 GT 지름, FP/case 층은 예측 지름 기준이다.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.exceptions import (
    ConfigurationError, DegenerateBootstrapError, DegenerateTableError, EmptyCohortError,
    InsufficientDataError,
)
from core.stats import (
    DEFAULT_CONFIDENCE, DEFAULT_RESAMPLES, EXACT_MAX_N, RNG_ALGORITHM, BootstrapCI, TestResult,
    bootstrap_ci, chi_square_2x2, mann_whitney_u, mean_statistic, spearman_rho,
    spearman_statistic,
)
from core.utils import parse_float_list
from evaluation.metrics import (
    STATUS_FN, STATUS_FP, STATUS_TP, LesionMetrics, StudyEvaluation, rows_of,
)

logger = logging.getLogger('lesioneval')

SCHEMA_VERSION = '1.0'
BAND_OVERLAPPING = 'overlapping'
BAND_DISJOINT = 'disjoint'
BAND_MODES = (BAND_OVERLAPPING, BAND_DISJOINT)
ALL = 'all'

UNIT_LESION = 'lesion'
UNIT_STUDY = 'study'

DEFAULT_CURVE_THRESHOLDS = tuple(float(t) for t in range(11))


@dataclass(frozen=True)
class Band:
    label: str
    low: float
    high: float

    def contains(self, diameter: float) -> bool:
        return self.low <= diameter < self.high


@dataclass(frozen=True)
class StratumSpec:
    """크기 층 경계 (mm)와 층 방식"""
    boundaries_mm: Tuple[float, ...] = (2.0, 4.0)
    mode: str = BAND_OVERLAPPING

    def __post_init__(self):
        boundaries = tuple(float(b) for b in self.boundaries_mm)
        if not boundaries:
            raise ConfigurationError("층 경계가 비어 있습니다.")
        if any(not math.isfinite(b) or b <= 0 for b in boundaries):
            raise ConfigurationError(f"층 경계는 양수여야 합니다: {boundaries}")
        if any(b >= c for b, c in zip(boundaries, boundaries[1:])):
            raise ConfigurationError(f"층 경계는 엄격히 증가해야 합니다: {boundaries}")
        if self.mode not in BAND_MODES:
            raise ConfigurationError(f"band mode는 {BAND_MODES} 중 하나여야 합니다: {self.mode}")
        object.__setattr__(self, 'boundaries_mm', boundaries)

    @classmethod
    def parse(cls, text, mode: str = BAND_OVERLAPPING) -> 'StratumSpec':
        """'2,4' 형식 문자열 또는 숫자 목록"""
        return cls(tuple(parse_float_list(text, 'strata')), mode)

    @property
    def bands(self) -> List[Band]:
        edges = self.boundaries_mm
        if self.mode == BAND_OVERLAPPING:
            bands = [Band(f"< {b:g}mm", 0.0, b) for b in edges]
        else:
            lows = (0.0,) + edges[:-1]
            bands = [
                Band(f"< {high:g}mm" if low == 0 else f"{low:g}–{high:g}mm", low, high)
                for low, high in zip(lows, edges)
            ]
        bands.append(Band(f"≥ {edges[-1]:g}mm", edges[-1], math.inf))
        return bands

    def to_dict(self) -> Dict[str, Any]:
        return {
            'boundaries_mm': list(self.boundaries_mm),
            'mode': self.mode,
            'bands': [band.label for band in self.bands],
        }


@dataclass(frozen=True)
class MetricCell:
    """report.csv의 한 칸: 지표 x 층"""
    metric: str
    stratum: str
    point: Optional[float]
    ci: Optional[BootstrapCI]
    n: int
    unit: str
    numerator: Optional[float] = None
    note: str = ''

    @property
    def lower(self) -> Optional[float]:
        return self.ci.lower if self.ci else None

    @property
    def upper(self) -> Optional[float]:
        return self.ci.upper if self.ci else None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'metric': self.metric,
            'stratum': self.stratum,
            'point': self.point,
            'lower': self.lower,
            'upper': self.upper,
            'n': self.n,
            'numerator': self.numerator,
            'unit': self.unit,
            'note': self.note,
            'bootstrap': self.ci.to_dict() if self.ci else None,
        }


@dataclass(frozen=True)
class CurvePoint:
    threshold_mm: float
    sensitivity: Optional[float]
    fp_per_case: Optional[float]
    mean_dice: Optional[float]
    n_gt: int
    n_fp: int
    n_tp: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            'threshold_mm': self.threshold_mm,
            'sensitivity': self.sensitivity,
            'fp_per_case': self.fp_per_case,
            'mean_dice': self.mean_dice,
            'n_gt': self.n_gt,
            'n_fp': self.n_fp,
            'n_tp': self.n_tp,
        }


@dataclass
class CohortReport:
    """코호트 집계 결과 (report.json)"""
    n_cases: int
    strata: StratumSpec
    cells: List[MetricCell]
    curves: List[CurvePoint]
    studies: List[Dict[str, Any]]
    rows: List[Dict[str, Any]]
    cohort_summary: Dict[str, Any]
    stratum_contrast: Dict[str, Any]
    spacings: List[List[float]]
    config: Dict[str, Any] = field(default_factory=dict)
    size_comparison: Dict[str, Any] = field(default_factory=dict)

    def cell(self, metric: str, stratum: str = ALL) -> MetricCell:
        for cell in self.cells:
            if cell.metric == metric and cell.stratum == stratum:
                return cell
        raise KeyError(f"{metric}/{stratum}")

    @property
    def counts(self) -> Dict[str, int]:
        statuses = [row['status'] for row in self.rows]
        return {
            'tp': statuses.count(STATUS_TP),
            'fn': statuses.count(STATUS_FN),
            'fp': statuses.count(STATUS_FP),
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            'schema_version': SCHEMA_VERSION,
            'n_cases': self.n_cases,
            'counts': self.counts,
            'strata': self.strata.to_dict(),
            'config': self.config,
            'bootstrap': {
                'rng': RNG_ALGORITHM,
                'units': {cell.metric: cell.unit for cell in self.cells},
            },
            'metrics': [cell.to_dict() for cell in self.cells],
            'curves': [point.to_dict() for point in self.curves],
            'cohort_summary': self.cohort_summary,
            'stratum_contrast': self.stratum_contrast,
            'size_comparison': self.size_comparison,
            'spacings': self.spacings,
            'studies': self.studies,
        }


def _gt_rows(rows):
    return [row for row in rows if row['status'] in (STATUS_TP, STATUS_FN)]


def _tp_rows(rows):
    return [row for row in rows if row['status'] == STATUS_TP]


def _fp_rows(rows):
    return [row for row in rows if row['status'] == STATUS_FP]


class _CellBuilder:
    """부트스트랩 설정을 공유하는 칸 생성기"""

    def __init__(self, n_resamples, confidence, seed, workers):
        self.n_resamples = n_resamples
        self.confidence = confidence
        self.seed = seed
        self.workers = workers

    def mean_cell(self, metric, stratum, values, unit, numerator=None, note='') -> MetricCell:
        values = np.asarray(values, dtype=np.float64)
        if len(values) == 0:
            return MetricCell(metric, stratum, None, None, 0, unit, numerator, note or 'empty')
        ci = bootstrap_ci(
            values, mean_statistic, self.n_resamples, self.confidence, self.seed,
            unit=unit, workers=self.workers,
        )
        return MetricCell(metric, stratum, ci.point, ci, len(values), unit, numerator, note)

    def spearman_cell(self, metric, pairs) -> MetricCell:
        pairs = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
        if len(pairs) < 3:
            return MetricCell(metric, ALL, None, None, len(pairs), UNIT_LESION,
                              note='fewer than 3 true positives')
        if spearman_statistic(pairs) is None:
            return MetricCell(metric, ALL, None, None, len(pairs), UNIT_LESION,
                              note='zero rank variance')
        try:
            ci = bootstrap_ci(
                pairs, spearman_statistic, self.n_resamples, self.confidence, self.seed,
                unit=UNIT_LESION, workers=self.workers,
            )
        except DegenerateBootstrapError as e:
            # 작은 TP 집합은 상수 재표본이 잦다. 점추정은 유지하고 CI만 비운다.
            logger.warning(f"{metric}: 부트스트랩 CI를 계산하지 못해 점추정만 보고합니다. {e}")
            return MetricCell(metric, ALL, spearman_statistic(pairs), None, len(pairs), UNIT_LESION,
                              note=f'confidence interval undefined: {e}')
        return MetricCell(metric, ALL, ci.point, ci, len(pairs), UNIT_LESION)


def _per_study_fp(rows, study_ids, n_cases, band: Optional[Band] = None) -> np.ndarray:
    """스터디별 FP 수 (평가되지 않은 나머지 case는 0)"""
    counts = dict.fromkeys(study_ids, 0)
    for row in _fp_rows(rows):
        if band is None or band.contains(row['pred_diameter_mm']):
            counts[row['study_id']] = counts.get(row['study_id'], 0) + 1
    values = [counts[study_id] for study_id in sorted(counts)]
    return np.asarray(values + [0] * (n_cases - len(values)), dtype=np.float64)


def cohort_summary(studies: Sequence[StudyEvaluation], rows) -> Dict[str, Any]:
    """코호트 기술 통계 (스터디 수, 병변 지름/부피 평균, 표준편차, 중앙값)"""
    gt_rows = _gt_rows(rows)
    positive = sum(1 for study in studies if study.is_positive)

    def describe(values):
        values = np.asarray(values, dtype=np.float64)
        if len(values) == 0:
            return {'mean': None, 'sd': None, 'median': None}
        return {
            'mean': float(values.mean()),
            'sd': float(values.std(ddof=1)) if len(values) > 1 else None,
            'median': float(np.median(values)),
        }

    return {
        'n_studies': len(studies),
        'positive_studies': positive,
        'negative_studies': len(studies) - positive,
        'n_lesions': len(gt_rows),
        'lesions_per_positive_study': len(gt_rows) / positive if positive else None,
        'diameter_mm': describe([row['gt_diameter_mm'] for row in gt_rows]),
        'volume_mm3': describe([row['gt_volume_mm3'] for row in gt_rows]),
    }


def stratum_contrast(rows, strata: StratumSpec) -> Dict[str, Any]:
    """마지막 경계 기준 작은 병변 vs 큰 병변 검출 카이제곱"""
    boundary = strata.boundaries_mm[-1]
    table = [[0, 0], [0, 0]]
    for row in _gt_rows(rows):
        band = 0 if row['gt_diameter_mm'] < boundary else 1
        table[band][0 if row['status'] == STATUS_TP else 1] += 1
    contrast = {
        'bands': [f"< {boundary:g}mm", f"≥ {boundary:g}mm"],
        'table': table,
        'result': None,
        'reason': '',
    }
    try:
        contrast['result'] = chi_square_2x2(table).to_dict()
    except DegenerateTableError as e:
        contrast['reason'] = str(e)
    return contrast


# size_comparison 키: (GT 열, 예측 열)
SIZE_MEASURES = {
    'volume_mm3': ('gt_volume_mm3', 'pred_volume_mm3'),
    'diameter_mm': ('gt_diameter_mm', 'pred_diameter_mm'),
}


def size_comparison(rows, exact_max_n: int = EXACT_MAX_N) -> Dict[str, Any]:
    """
    TP 병변의 GT 크기 분포와 예측 크기 분포 Mann-Whitney U 비교

    U는 GT 표본 기준. 검정할 수 없으면 result는 None, reason에 사유.
    """
    tp_rows = _tp_rows(rows)
    comparison = {}
    for measure, (gt_key, pred_key) in SIZE_MEASURES.items():
        gt = [row[gt_key] for row in tp_rows]
        pred = [row[pred_key] for row in tp_rows]
        entry = {
            'n': len(tp_rows),
            'gt_median': float(np.median(gt)) if gt else None,
            'pred_median': float(np.median(pred)) if pred else None,
            'result': None,
            'reason': '',
        }
        try:
            entry['result'] = mann_whitney_u(gt, pred, exact_max_n=exact_max_n).to_dict()
        except InsufficientDataError as e:
            entry['reason'] = str(e)
        comparison[measure] = entry
    return comparison


def cumulative_curves(rows, thresholds_mm, n_cases: int) -> List[CurvePoint]:
    """
    지름 임계값 t 이상 병변에 대한 민감도, FP/case, 평균 DICE

    선택이 비면 민감도와 평균 DICE는 None. FP/case는 n_cases > 0이면 항상 정의된다.
    """
    thresholds = [float(t) for t in thresholds_mm]
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ConfigurationError(f"임계값은 오름차순이어야 합니다: {thresholds}")
    if n_cases <= 0:
        raise EmptyCohortError("case 수가 0입니다.")

    gt_rows = _gt_rows(rows)
    fp_rows = _fp_rows(rows)
    points = []
    for t in thresholds:
        selected = [row for row in gt_rows if row['gt_diameter_mm'] >= t]
        hits = [row for row in selected if row['status'] == STATUS_TP]
        fps = [row for row in fp_rows if row['pred_diameter_mm'] >= t]
        points.append(CurvePoint(
            threshold_mm=t,
            sensitivity=len(hits) / len(selected) if selected else None,
            fp_per_case=len(fps) / n_cases,
            mean_dice=float(np.mean([row['dice'] for row in hits])) if hits else None,
            n_gt=len(selected),
            n_fp=len(fps),
            n_tp=len(hits),
        ))
    return points


def size_correlation(tp_metrics: Sequence[LesionMetrics]) -> Tuple[TestResult, TestResult]:
    """GT와 예측 크기의 Spearman rho (부피, 지름)"""
    if len(tp_metrics) < 3:
        raise InsufficientDataError(f"TP가 3개 이상 필요합니다: {len(tp_metrics)}")
    rho_volume = spearman_rho(
        [m.gt_volume_mm3 for m in tp_metrics], [m.pred_volume_mm3 for m in tp_metrics],
    )
    rho_diameter = spearman_rho(
        [m.gt_diameter_mm for m in tp_metrics], [m.pred_diameter_mm for m in tp_metrics],
    )
    return rho_volume, rho_diameter


def aggregate_rows(
    rows: List[Dict[str, Any]],
    study_ids: Sequence[str],
    n_cases: int,
    strata: StratumSpec,
    n_resamples: int = DEFAULT_RESAMPLES,
    confidence: float = DEFAULT_CONFIDENCE,
    seed: int = 0,
    workers: int = 1,
) -> List[MetricCell]:
    """병변 행에서 지표 칸 계산"""
    builder = _CellBuilder(n_resamples, confidence, seed, workers)
    gt_rows = _gt_rows(rows)
    tp_rows = _tp_rows(rows)
    cells = []

    hits = [1.0 if row['status'] == STATUS_TP else 0.0 for row in gt_rows]
    cells.append(builder.mean_cell('sensitivity', ALL, hits, UNIT_LESION, numerator=sum(hits),
                                   note='' if hits else 'no ground-truth lesions'))
    for band in strata.bands:
        band_hits = [
            1.0 if row['status'] == STATUS_TP else 0.0
            for row in gt_rows if band.contains(row['gt_diameter_mm'])
        ]
        cells.append(builder.mean_cell('sensitivity', band.label, band_hits, UNIT_LESION,
                                       numerator=sum(band_hits)))

    for stratum, band in [(ALL, None)] + [(band.label, band) for band in strata.bands]:
        per_study = _per_study_fp(rows, study_ids, n_cases, band)
        cells.append(builder.mean_cell('fp_per_case', stratum, per_study, UNIT_STUDY,
                                       numerator=float(per_study.sum())))

    cells.append(builder.mean_cell('dice', ALL, [row['dice'] for row in tp_rows], UNIT_LESION))
    cells.append(builder.mean_cell('nsd', ALL, [row['nsd'] for row in tp_rows], UNIT_LESION))
    cells.append(builder.mean_cell(
        'volume_diff_mm3', ALL,
        [row['gt_volume_mm3'] - row['pred_volume_mm3'] for row in tp_rows], UNIT_LESION,
    ))
    cells.append(builder.mean_cell(
        'diameter_diff_mm', ALL,
        [row['gt_diameter_mm'] - row['pred_diameter_mm'] for row in tp_rows], UNIT_LESION,
    ))
    cells.append(builder.spearman_cell(
        'spearman_volume', [(row['gt_volume_mm3'], row['pred_volume_mm3']) for row in tp_rows],
    ))
    cells.append(builder.spearman_cell(
        'spearman_diameter', [(row['gt_diameter_mm'], row['pred_diameter_mm']) for row in tp_rows],
    ))
    return cells


def aggregate_cohort(
    studies: Sequence[StudyEvaluation],
    strata: StratumSpec,
    n_cases: Optional[int] = None,
    n_resamples: int = DEFAULT_RESAMPLES,
    confidence: float = DEFAULT_CONFIDENCE,
    seed: int = 0,
    workers: int = 1,
    curve_thresholds=DEFAULT_CURVE_THRESHOLDS,
    exact_max_n: int = EXACT_MAX_N,
) -> CohortReport:
    """
    스터디 평가 결과를 CohortReport로 집계

    n_cases를 생략하면 스터디 수. 평가된 스터디보다 큰 n_cases는 예측이 없는
    case로 보고 FP/case 분모와 스터디 단위 재표본에 0으로 포함한다.
    exact_max_n은 size_comparison의 Mann-Whitney 정확 분포 상한.
    결과는 스터디 처리 순서와 무관하다.
    """
    if not studies:
        raise EmptyCohortError("평가된 스터디가 없습니다.")
    studies = sorted(studies, key=lambda s: s.study_id)
    study_ids = [study.study_id for study in studies]
    if len(set(study_ids)) != len(study_ids):
        raise ConfigurationError("스터디 id가 중복되었습니다.")

    positive = sum(1 for study in studies if study.is_positive)
    if n_cases is None:
        n_cases = len(studies)
    if n_cases < positive or n_cases < len(studies):
        raise ConfigurationError(
            f"n_cases({n_cases})가 평가된 스터디 수({len(studies)})보다 작습니다."
        )

    rows = rows_of(studies)
    cells = aggregate_rows(rows, study_ids, n_cases, strata, n_resamples, confidence, seed, workers)
    spacings = sorted({tuple(float(s) for s in study.spacing) for study in studies})

    report = CohortReport(
        n_cases=n_cases,
        strata=strata,
        cells=cells,
        curves=cumulative_curves(rows, curve_thresholds, n_cases),
        studies=[study.summary() for study in studies],
        rows=rows,
        cohort_summary=cohort_summary(studies, rows),
        stratum_contrast=stratum_contrast(rows, strata),
        size_comparison=size_comparison(rows, exact_max_n),
        spacings=[list(spacing) for spacing in spacings],
        config={
            'n_resamples': n_resamples,
            'confidence': confidence,
            'seed': seed,
        },
    )
    counts = report.counts
    logger.info(
        f"코호트 집계 완료: 스터디 {len(studies)}개, case {n_cases}개, "
        f"TP {counts['tp']}, FN {counts['fn']}, FP {counts['fp']}"
    )
    return report

