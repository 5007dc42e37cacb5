"""
병변 단위 DICE / NSD 와 스터디 단위 평가
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from core.exceptions import ConfigurationError
from evaluation.matching import MatchResult, match_lesions
from lesions.components import (
    DEFAULT_CONNECTIVITY, Lesion, LesionSet, connected_components, size_table,
    surface_voxels, voxel_set_diameter,
)
from volumes.grid import BinaryMask

logger = logging.getLogger('lesioneval')

DEFAULT_TAU_MM = 0.5
# 복셀 중심 간 거리 비교 허용 오차 (mm)
DISTANCE_TOLERANCE = 1e-9

STATUS_TP = 'TP'
STATUS_FN = 'FN'
STATUS_FP = 'FP'

LESION_COLUMNS = [
    'study_id', 'lesion_id', 'status', 'pred_ids',
    'gt_diameter_mm', 'pred_diameter_mm', 'gt_volume_mm3', 'pred_volume_mm3',
    'dice', 'nsd',
]


def _linear(voxels: np.ndarray, dims) -> np.ndarray:
    return np.ravel_multi_index(tuple(np.asarray(voxels, dtype=np.int64).T), dims)


def dice_lesionwise(gt_lesion: Lesion, matched_preds: np.ndarray) -> float:
    """2|G∩P| / (|G| + |P|), P는 겹치는 예측들의 합집합 복셀"""
    if len(matched_preds) == 0:
        return 0.0
    gt_index = gt_lesion.linear_indices()
    pred_index = np.unique(_linear(matched_preds, gt_lesion.dims))
    shared = len(np.intersect1d(gt_index, pred_index, assume_unique=True))
    return 2.0 * shared / (len(gt_index) + len(pred_index))


def _surface_distances(source: np.ndarray, target: np.ndarray, spacing) -> np.ndarray:
    """source 표면 복셀 각각에서 target 표면까지의 최소 거리 (mm)"""
    low = np.minimum(source.min(axis=0), target.min(axis=0))
    high = np.maximum(source.max(axis=0), target.max(axis=0))
    target_mask = np.zeros(tuple(high - low + 1), dtype=bool)
    target_mask[tuple((target - low).T)] = True
    distance = ndimage.distance_transform_edt(~target_mask, sampling=spacing)
    return distance[tuple((source - low).T)]


def nsd_lesionwise(gt_lesion: Lesion, matched_preds: np.ndarray, tau_mm: float, spacing) -> float:
    """
    대칭 Normalized Surface Distance

    양쪽 표면 복셀 중 상대 표면까지 거리가 tau_mm 이내인 비율.
    거리는 축별 spacing을 반영한 복셀 중심 간 유클리드 거리.
    """
    if not (math.isfinite(tau_mm) and tau_mm > 0):
        raise ConfigurationError(f"tau_mm은 양수여야 합니다: {tau_mm}")
    if len(matched_preds) == 0:
        raise ValueError("예측 합집합이 비어 있으면 NSD가 정의되지 않습니다.")

    spacing = tuple(float(s) for s in spacing)
    gt_surface = np.asarray(gt_lesion.surface, dtype=np.int64)
    pred_surface = surface_voxels(matched_preds)
    limit = tau_mm + DISTANCE_TOLERANCE
    pred_close = int(np.count_nonzero(_surface_distances(pred_surface, gt_surface, spacing) <= limit))
    gt_close = int(np.count_nonzero(_surface_distances(gt_surface, pred_surface, spacing) <= limit))
    return (pred_close + gt_close) / (len(pred_surface) + len(gt_surface))


@dataclass(frozen=True)
class LesionMetrics:
    """TP GT 병변 하나의 분할 지표 (크기 차이는 gt - pred)"""
    gt_id: int
    pred_ids: Tuple[int, ...]
    dice: float
    nsd: float
    gt_volume_mm3: float
    pred_volume_mm3: float
    gt_diameter_mm: float
    pred_diameter_mm: float

    @property
    def volume_diff_mm3(self) -> float:
        return self.gt_volume_mm3 - self.pred_volume_mm3

    @property
    def diameter_diff_mm(self) -> float:
        return self.gt_diameter_mm - self.pred_diameter_mm


def study_metrics(gt: LesionSet, pred: LesionSet, tau_mm: float = DEFAULT_TAU_MM):
    """(MatchResult, TP 병변별 LesionMetrics 목록)"""
    match = match_lesions(gt, pred)
    voxel_volume = float(np.prod(gt.spacing))
    metrics = []
    for gt_id, pred_ids in match.true_positive_pairs:
        gt_lesion = gt.get(gt_id)
        union = pred.union_voxels(pred_ids)
        metrics.append(LesionMetrics(
            gt_id=gt_id,
            pred_ids=pred_ids,
            dice=dice_lesionwise(gt_lesion, union),
            nsd=nsd_lesionwise(gt_lesion, union, tau_mm, gt.spacing),
            gt_volume_mm3=gt_lesion.volume_mm3,
            pred_volume_mm3=len(union) * voxel_volume,
            gt_diameter_mm=gt_lesion.max_diameter_mm,
            pred_diameter_mm=voxel_set_diameter(union, gt.spacing),
        ))
    return match, metrics


@dataclass
class StudyEvaluation:
    """
    스터디 하나의 평가 결과

    라벨 볼륨은 보관하지 않고 행 생성에 필요한 병변 크기만 남긴다.
    gt_sizes / pred_sizes: 병변 id -> (최대 지름 mm, 부피 mm³)
    """
    study_id: str
    spacing: Tuple[float, float, float]
    match: MatchResult
    metrics: List[LesionMetrics] = field(default_factory=list)
    gt_sizes: Dict[int, Tuple[float, float]] = field(default_factory=dict)
    pred_sizes: Dict[int, Tuple[float, float]] = field(default_factory=dict)
    missing_prediction: bool = False

    @property
    def is_positive(self) -> bool:
        return len(self.gt_sizes) > 0

    def rows(self) -> List[Dict]:
        """lesions.csv 행 (TP, FN은 GT id 순, FP는 예측 id 순)"""
        by_gt = {m.gt_id: m for m in self.metrics}
        rows = []
        for gt_id in sorted(self.gt_sizes):
            m = by_gt.get(gt_id)
            if m is None:
                diameter, volume = self.gt_sizes[gt_id]
                rows.append(_row(self.study_id, gt_id, STATUS_FN, (),
                                 diameter, None, volume, None, None, None))
            else:
                rows.append(_row(self.study_id, gt_id, STATUS_TP, m.pred_ids,
                                 m.gt_diameter_mm, m.pred_diameter_mm,
                                 m.gt_volume_mm3, m.pred_volume_mm3, m.dice, m.nsd))
        for pred_id in self.match.false_positives:
            diameter, volume = self.pred_sizes[pred_id]
            rows.append(_row(self.study_id, pred_id, STATUS_FP, (pred_id,),
                             None, diameter, None, volume, None, None))
        return rows

    def summary(self) -> Dict:
        return {
            'study_id': self.study_id,
            'spacing': list(self.spacing),
            'gt_lesions': len(self.gt_sizes),
            'pred_lesions': len(self.pred_sizes),
            'tp': self.match.tp_count,
            'fn': self.match.fn_count,
            'fp': self.match.fp_count,
            'missing_prediction': self.missing_prediction,
        }


def _row(study_id, lesion_id, status, pred_ids, gt_diameter, pred_diameter,
         gt_volume, pred_volume, dice, nsd) -> Dict:
    return {
        'study_id': study_id,
        'lesion_id': int(lesion_id),
        'status': status,
        'pred_ids': ';'.join(str(i) for i in pred_ids),
        'gt_diameter_mm': gt_diameter,
        'pred_diameter_mm': pred_diameter,
        'gt_volume_mm3': gt_volume,
        'pred_volume_mm3': pred_volume,
        'dice': dice,
        'nsd': nsd,
    }


def evaluate_masks(
    study_id: str,
    gt_mask: BinaryMask,
    pred_mask: Optional[BinaryMask],
    tau_mm: float = DEFAULT_TAU_MM,
    connectivity: int = DEFAULT_CONNECTIVITY,
) -> StudyEvaluation:
    """마스크 쌍을 병변으로 분해해 평가 (pred_mask=None은 빈 예측)"""
    missing = pred_mask is None
    if missing:
        pred_mask = BinaryMask.empty_like(gt_mask.grid)
    gt = connected_components(gt_mask, connectivity)
    pred = connected_components(pred_mask, connectivity)
    match, metrics = study_metrics(gt, pred, tau_mm)
    return StudyEvaluation(
        study_id=study_id,
        spacing=gt_mask.spacing,
        match=match,
        metrics=metrics,
        gt_sizes=size_table(gt),
        pred_sizes=size_table(pred),
        missing_prediction=missing,
    )


def rows_of(studies: Sequence[StudyEvaluation]) -> List[Dict]:
    rows = []
    for study in sorted(studies, key=lambda s: s.study_id):
        rows.extend(study.rows())
    return rows
