"""
보고서 파일 입출력 (report.json, report.csv, lesions.csv, curves.csv, scatter.csv, comparison.*)
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd

from core.exceptions import DataError, EmptyCohortError
from core.utils import format_decimal, read_json, write_json
from evaluation.cohort import ALL, SCHEMA_VERSION, UNIT_LESION, CohortReport
from evaluation.metrics import LESION_COLUMNS

logger = logging.getLogger('lesioneval')

REPORT_JSON = 'report.json'
REPORT_CSV = 'report.csv'
LESIONS_CSV = 'lesions.csv'
CURVES_CSV = 'curves.csv'
CURVES_SVG = 'curves.svg'
SCATTER_CSV = 'scatter.csv'
SCATTER_JSON = 'scatter.json'
SCATTER_SVG = 'scatter.svg'
COMPARISON_JSON = 'comparison.json'
COMPARISON_CSV = 'comparison.csv'

REPORT_COLUMNS = ['metric', 'stratum', 'point', 'lower', 'upper', 'n', 'numerator', 'unit', 'note']
CURVE_COLUMNS = ['threshold_mm', 'sensitivity', 'fp_per_case', 'mean_dice', 'n_gt', 'n_fp', 'n_tp']
SCATTER_COLUMNS = [
    'study_id', 'lesion_id', 'gt_diameter_mm', 'pred_diameter_mm', 'gt_volume_mm3', 'pred_volume_mm3',
]
COMPARISON_COLUMNS = [
    'comparison', 'test', 'metric', 'statistic', 'p_value', 'significant', 'n', 'reason',
]

FLOAT_COLUMNS = [
    'gt_diameter_mm', 'pred_diameter_mm', 'gt_volume_mm3', 'pred_volume_mm3', 'dice', 'nsd',
]


def _write_csv(frame: pd.DataFrame, path) -> Path:
    path = Path(path)
    frame.to_csv(path, index=False, lineterminator='\n')
    return path


def report_table(report: CohortReport) -> pd.DataFrame:
    """지표 x 층 행 (표시용 소수 둘째 자리)"""
    records = []
    for cell in report.cells:
        records.append({
            'metric': cell.metric,
            'stratum': cell.stratum,
            'point': format_decimal(cell.point),
            'lower': format_decimal(cell.lower),
            'upper': format_decimal(cell.upper),
            'n': cell.n,
            'numerator': '' if cell.numerator is None else f"{cell.numerator:g}",
            'unit': cell.unit,
            'note': cell.note,
        })
    # GT vs 예측 크기 검정 행: point 칸은 p-value
    for measure, entry in report.size_comparison.items():
        result = entry['result']
        if result is None:
            note = entry['reason']
        else:
            note = (
                f"{result['method']}; U={result['statistic']:g}; "
                f"median gt={format_decimal(entry['gt_median'])} pred={format_decimal(entry['pred_median'])}"
            )
        records.append({
            'metric': f'size_test_{measure}',
            'stratum': ALL,
            'point': format_decimal(result['p_value'], 4) if result else '',
            'lower': '',
            'upper': '',
            'n': entry['n'],
            'numerator': '',
            'unit': UNIT_LESION,
            'note': note,
        })
    return pd.DataFrame.from_records(records, columns=REPORT_COLUMNS)


def lesions_frame(rows: List[Dict[str, Any]]) -> pd.DataFrame:
    return pd.DataFrame.from_records(rows, columns=LESION_COLUMNS)


def write_lesions_csv(rows, path) -> Path:
    return _write_csv(lesions_frame(rows), path)


def write_report(report: CohortReport, out_dir, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Path]:
    """report.json, report.csv, lesions.csv 저장"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    if extra:
        payload.update(extra)
    paths = {
        'report_json': write_json(out_dir / REPORT_JSON, payload),
        'report_csv': _write_csv(report_table(report), out_dir / REPORT_CSV),
        'lesions_csv': write_lesions_csv(report.rows, out_dir / LESIONS_CSV),
    }
    logger.info(f"보고서 저장: {out_dir}")
    return paths


def read_lesions_csv(path) -> List[Dict[str, Any]]:
    """lesions.csv를 행 목록으로 (빈 칸은 None)"""
    path = Path(path)
    if not path.exists():
        raise DataError(f"병변 파일이 없습니다: {path}")
    try:
        frame = pd.read_csv(path, dtype={'study_id': str, 'pred_ids': str, 'status': str})
    except pd.errors.EmptyDataError as e:
        raise EmptyCohortError(f"병변 파일이 비어 있습니다: {path}") from e
    missing = [column for column in LESION_COLUMNS if column not in frame.columns]
    if missing:
        raise DataError(f"병변 파일에 열이 없습니다: {missing}")
    if frame.empty:
        raise EmptyCohortError(f"병변 파일에 행이 없습니다: {path}")

    rows = []
    for record in frame[LESION_COLUMNS].to_dict('records'):
        row = {
            'study_id': str(record['study_id']),
            'lesion_id': int(record['lesion_id']),
            'status': str(record['status']),
            'pred_ids': '' if pd.isna(record['pred_ids']) else str(record['pred_ids']),
        }
        for column in FLOAT_COLUMNS:
            value = record[column]
            row[column] = None if pd.isna(value) else float(value)
        rows.append(row)
    return rows


def read_report_json(path) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"보고서 파일이 없습니다: {path}")
    payload = read_json(path)
    if 'schema_version' not in payload:
        raise DataError(f"schema_version이 없는 보고서입니다: {path}")
    if str(payload['schema_version']).split('.')[0] != SCHEMA_VERSION.split('.')[0]:
        raise DataError(f"지원하지 않는 보고서 버전: {payload['schema_version']}")
    return payload


def write_curves(points, path) -> Path:
    frame = pd.DataFrame.from_records([p.to_dict() for p in points], columns=CURVE_COLUMNS)
    return _write_csv(frame, path)


def write_scatter(rows, path) -> Path:
    frame = pd.DataFrame.from_records(rows, columns=SCATTER_COLUMNS)
    return _write_csv(frame, path)


def write_comparison(payload: Dict[str, Any], out_dir) -> Dict[str, Path]:
    """comparison.json과 평탄화한 comparison.csv 저장"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for group in payload['pairwise'] + payload['groupwise']:
        for test in group['tests']:
            records.append({
                'comparison': group['label'],
                'test': test['test'],
                'metric': test['metric'],
                'statistic': test['statistic'],
                'p_value': test['p_value'],
                'significant': test['significant'],
                'n': ';'.join(str(n) for n in test['n']),
                'reason': test['reason'],
            })
    return {
        'comparison_json': write_json(out_dir / COMPARISON_JSON, payload),
        'comparison_csv': _write_csv(
            pd.DataFrame.from_records(records, columns=COMPARISON_COLUMNS), out_dir / COMPARISON_CSV,
        ),
    }
