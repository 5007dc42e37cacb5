"""
GT 병변과 예측 병변 매칭

GT 병변은 예측 복셀과 1개 이상 겹치면 검출(TP)로 본다.
여러 GT에 걸친 예측은 각 GT의 TP 쌍에 모두 기록되고 FP로 세지 않는다.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from core.exceptions import IncompatibleGridsError
from lesions.components import LesionSet

logger = logging.getLogger('lesioneval')


@dataclass(frozen=True)
class MatchResult:
    """스터디 하나의 매칭 결과"""
    true_positive_pairs: Tuple[Tuple[int, Tuple[int, ...]], ...]
    false_negatives: Tuple[int, ...]
    false_positives: Tuple[int, ...]

    @property
    def tp_count(self) -> int:
        return len(self.true_positive_pairs)

    @property
    def fn_count(self) -> int:
        return len(self.false_negatives)

    @property
    def fp_count(self) -> int:
        return len(self.false_positives)

    def to_dict(self) -> Dict:
        return {
            'true_positive_pairs': [
                {'gt_id': gt_id, 'pred_ids': list(pred_ids)}
                for gt_id, pred_ids in self.true_positive_pairs
            ],
            'false_negatives': list(self.false_negatives),
            'false_positives': list(self.false_positives),
        }


def overlap_pairs(gt: LesionSet, pred: LesionSet) -> np.ndarray:
    """겹치는 (gt id, pred id) 쌍, 사전순 정렬"""
    both = (gt.labels > 0) & (pred.labels > 0)
    if not both.any():
        return np.empty((0, 2), dtype=np.int64)
    pairs = np.stack([gt.labels[both], pred.labels[both]], axis=1).astype(np.int64)
    return np.unique(pairs, axis=0)


def match_lesions(gt: LesionSet, pred: LesionSet) -> MatchResult:
    if not gt.same_geometry(pred):
        raise IncompatibleGridsError(
            f"격자가 다릅니다: gt dims={gt.dims} spacing={gt.spacing}, "
            f"pred dims={pred.dims} spacing={pred.spacing}"
        )

    matched: Dict[int, List[int]] = {}
    for gt_id, pred_id in overlap_pairs(gt, pred):
        matched.setdefault(int(gt_id), []).append(int(pred_id))

    overlapping_preds = {pred_id for pred_ids in matched.values() for pred_id in pred_ids}
    result = MatchResult(
        true_positive_pairs=tuple(
            (gt_id, tuple(sorted(matched[gt_id]))) for gt_id in sorted(matched)
        ),
        false_negatives=tuple(gt_id for gt_id in gt.ids if gt_id not in matched),
        false_positives=tuple(pred_id for pred_id in pred.ids if pred_id not in overlapping_preds),
    )
    logger.debug(f"매칭: TP {result.tp_count}, FN {result.fn_count}, FP {result.fp_count}")
    return result
