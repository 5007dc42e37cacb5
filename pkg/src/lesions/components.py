"""
이진 마스크의 병변(연결 성분) 분해와 크기 기술자

좌표는 모두 [x, y, z] 정수 복셀 인덱스이며 물리 거리는 축별 spacing(mm)을 곱해 계산한다.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterator, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import cdist, pdist

from core.exceptions import ConfigurationError
from volumes.grid import BinaryMask

logger = logging.getLogger('lesioneval')

DEFAULT_CONNECTIVITY = 26
CONNECTIVITY_RANK = {6: 1, 18: 2, 26: 3}

# 표면 판정은 연결성 설정과 무관하게 6-이웃
SURFACE_STRUCTURE = ndimage.generate_binary_structure(3, 1)

# 이보다 점이 많으면 볼록 껍질 꼭짓점만으로 최대 거리 계산
_HULL_MIN_POINTS = 64
_DISTANCE_CHUNK = 2048


@dataclass(frozen=True, eq=False)
class Lesion:
    """하나의 연결 성분"""
    id: int
    voxels: np.ndarray
    surface: np.ndarray
    spacing: Tuple[float, float, float]
    dims: Tuple[int, int, int]
    volume_mm3: float
    max_diameter_mm: float

    @property
    def voxel_count(self) -> int:
        return int(len(self.voxels))

    def linear_indices(self) -> np.ndarray:
        return np.ravel_multi_index(tuple(self.voxels.T), self.dims)


@dataclass(frozen=True, eq=False)
class LesionSet:
    """한 마스크의 병변 목록과 원본 격자 정보"""
    lesions: Tuple[Lesion, ...]
    dims: Tuple[int, int, int]
    spacing: Tuple[float, float, float]
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.lesions)

    def __iter__(self) -> Iterator[Lesion]:
        return iter(self.lesions)

    @property
    def ids(self) -> Tuple[int, ...]:
        return tuple(lesion.id for lesion in self.lesions)

    def get(self, lesion_id: int) -> Lesion:
        return self.lesions[lesion_id - 1]

    def union_voxels(self, lesion_ids: Sequence[int]) -> np.ndarray:
        """여러 병변 복셀의 합집합 좌표 (정렬됨)"""
        if not lesion_ids:
            return np.empty((0, 3), dtype=np.int64)
        coords = np.concatenate([self.get(i).voxels for i in sorted(lesion_ids)])
        order = np.lexsort(coords.T[::-1])
        return coords[order]

    def same_geometry(self, other: 'LesionSet') -> bool:
        return (
            tuple(self.dims) == tuple(other.dims)
            and np.array_equal(np.float32(self.spacing), np.float32(other.spacing))
        )


def _voxel_volume(spacing) -> float:
    return float(spacing[0]) * float(spacing[1]) * float(spacing[2])


def surface_voxels(voxels: np.ndarray) -> np.ndarray:
    """
    6-이웃 중 하나라도 집합 밖(격자 밖 포함)인 복셀

    바운딩 박스를 1복셀씩 0으로 패딩해 침식하므로 격자 경계도 바깥으로 취급된다.
    """
    voxels = np.asarray(voxels, dtype=np.int64)
    if len(voxels) == 0:
        return voxels.reshape(0, 3)
    low = voxels.min(axis=0) - 1
    local = voxels - low
    mask = np.zeros(tuple(local.max(axis=0) + 2), dtype=bool)
    mask[tuple(local.T)] = True
    interior = ndimage.binary_erosion(mask, structure=SURFACE_STRUCTURE, border_value=0)
    return np.argwhere(mask & ~interior) + low


def extract_surface(lesion: Lesion) -> np.ndarray:
    return surface_voxels(lesion.voxels)


def _chunked_max_distance(points: np.ndarray) -> float:
    best = 0.0
    for start in range(0, len(points), _DISTANCE_CHUNK):
        block = points[start:start + _DISTANCE_CHUNK]
        best = max(best, float(cdist(block, points[start:]).max()))
    return best


def max_pairwise_distance(points_mm: np.ndarray) -> float:
    """점 집합의 최대 쌍 거리 (최댓값은 볼록 껍질 꼭짓점 사이에서만 나타남)"""
    points_mm = np.asarray(points_mm, dtype=np.float64)
    if len(points_mm) < 2:
        return 0.0
    if len(points_mm) <= _HULL_MIN_POINTS:
        return float(pdist(points_mm).max())
    try:
        hull = ConvexHull(points_mm)
    except QhullError:
        # 평면/직선 병변: 껍질 계산 불가
        return _chunked_max_distance(points_mm)
    # Qhull이 경계 위 점으로 분류한 점도 후보에 포함
    candidates = np.union1d(hull.vertices, hull.coplanar[:, 0]).astype(np.int64)
    return float(pdist(points_mm[candidates]).max())


def lesion_volume(lesion: Lesion, spacing) -> float:
    """복셀 수 x 복셀 부피 (mm³)"""
    return lesion.voxel_count * _voxel_volume(spacing)


def lesion_max_diameter(lesion: Lesion, spacing) -> float:
    """표면 복셀 중심 사이 최대 유클리드 거리 (mm)"""
    return max_pairwise_distance(lesion.surface * np.asarray(spacing, dtype=np.float64))


def voxel_set_diameter(voxels: np.ndarray, spacing) -> float:
    """임의 복셀 집합(예: 여러 예측의 합집합)의 최대 지름"""
    return max_pairwise_distance(surface_voxels(voxels) * np.asarray(spacing, dtype=np.float64))


def make_lesion(lesion_id: int, voxels: np.ndarray, spacing, dims) -> Lesion:
    voxels = np.asarray(voxels, dtype=np.int64)
    spacing = tuple(float(s) for s in spacing)
    surface = surface_voxels(voxels)
    lesion = Lesion(
        id=lesion_id,
        voxels=voxels,
        surface=surface,
        spacing=spacing,
        dims=tuple(int(d) for d in dims),
        volume_mm3=0.0,
        max_diameter_mm=0.0,
    )
    object.__setattr__(lesion, 'volume_mm3', lesion_volume(lesion, spacing))
    object.__setattr__(lesion, 'max_diameter_mm', lesion_max_diameter(lesion, spacing))
    return lesion


def connected_components(mask: BinaryMask, connectivity: int = DEFAULT_CONNECTIVITY) -> LesionSet:
    """
    마스크를 연결 성분으로 분해

    라벨은 각 병변의 첫 복셀(x, y, z 사전순 최소)의 순서로 1부터 부여된다.
    """
    if connectivity not in CONNECTIVITY_RANK:
        raise ConfigurationError(f"connectivity는 6, 18, 26 중 하나여야 합니다: {connectivity}")

    structure = ndimage.generate_binary_structure(3, CONNECTIVITY_RANK[connectivity])
    raw_labels, count = ndimage.label(mask.array, structure=structure)
    labels = np.zeros(mask.dims, dtype=np.int32)
    if count == 0:
        return LesionSet((), mask.dims, mask.spacing, labels)

    # argwhere는 (x, y, z) 사전순으로 좌표를 돌려준다
    coords = np.argwhere(raw_labels)
    raw = raw_labels[tuple(coords.T)]
    unique_raw, first_index = np.unique(raw, return_index=True)
    canonical = np.empty(unique_raw.max() + 1, dtype=np.int32)
    canonical[unique_raw[np.argsort(first_index)]] = np.arange(1, len(unique_raw) + 1)
    ids = canonical[raw]
    labels[tuple(coords.T)] = ids

    order = np.argsort(ids, kind='stable')
    groups = np.split(coords[order], np.cumsum(np.bincount(ids)[1:])[:-1])
    lesions = tuple(
        make_lesion(lesion_id, voxels, mask.spacing, mask.dims)
        for lesion_id, voxels in enumerate(groups, start=1)
    )
    logger.debug(f"연결 성분 {len(lesions)}개 (connectivity={connectivity})")
    return LesionSet(lesions, mask.dims, mask.spacing, labels)


def size_table(lesion_set: LesionSet) -> Dict[int, Tuple[float, float]]:
    """병변 id -> (최대 지름 mm, 부피 mm³)"""
    return {lesion.id: (lesion.max_diameter_mm, lesion.volume_mm3) for lesion in lesion_set}


def bounding_box_diagonal_mm(dims, spacing) -> float:
    return float(np.linalg.norm((np.asarray(dims) - 1) * np.asarray(spacing, dtype=np.float64)))

