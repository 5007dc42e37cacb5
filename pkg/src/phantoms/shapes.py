"""
해석적으로 부피/지름을 아는 팬텀 병변 (구, 타원체) 래스터화와 예측 마스크 변형

복셀 (i, j, k)의 중심 좌표는 격자 기준 (i·sx, j·sy, k·sz) mm이며,
중심이 도형 안에 있는 복셀만 1이 된다.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from core.exceptions import ConfigurationError, PhantomGenerationError
from volumes.grid import BinaryMask, VoxelGrid

logger = logging.getLogger('lesioneval')

SHAPE_SPHERE = 'sphere'
SHAPE_ELLIPSOID = 'ellipsoid'
SHAPES = (SHAPE_SPHERE, SHAPE_ELLIPSOID)

# 변형(erode/dilate)은 6-이웃 구조
MORPH_STRUCTURE = ndimage.generate_binary_structure(3, 1)
# 병변끼리 26-이웃으로 닿는지 검사
TOUCH_STRUCTURE = ndimage.generate_binary_structure(3, 3)
# 경계 위 복셀 중심의 반올림 오차 흡수
INSIDE_TOLERANCE = 1e-9


def _triple(values, name: str) -> Tuple[float, float, float]:
    triple = tuple(float(v) for v in values)
    if len(triple) != 3 or not all(math.isfinite(v) for v in triple):
        raise ConfigurationError(f"{name}는 유한한 3개의 값이어야 합니다: {values}")
    return triple


@dataclass(frozen=True)
class LesionShape:
    """축 정렬 타원체 (구는 세 반지름이 같은 경우)"""
    shape: str
    center_mm: Tuple[float, float, float]
    radii_mm: Tuple[float, float, float]

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigurationError(f"지원하지 않는 도형: {self.shape}")
        radii = _triple(self.radii_mm, 'radii_mm')
        if any(r <= 0 for r in radii):
            raise ConfigurationError(f"반지름은 양수여야 합니다: {radii}")
        if self.shape == SHAPE_SPHERE and len(set(radii)) != 1:
            raise ConfigurationError(f"구의 반지름이 서로 다릅니다: {radii}")
        object.__setattr__(self, 'radii_mm', radii)
        object.__setattr__(self, 'center_mm', _triple(self.center_mm, 'center_mm'))

    @classmethod
    def sphere(cls, center_mm, radius_mm: float) -> 'LesionShape':
        return cls(SHAPE_SPHERE, center_mm, (radius_mm,) * 3)

    @classmethod
    def ellipsoid(cls, center_mm, radii_mm) -> 'LesionShape':
        return cls(SHAPE_ELLIPSOID, center_mm, radii_mm)

    @property
    def analytic_volume_mm3(self) -> float:
        a, b, c = self.radii_mm
        return 4.0 / 3.0 * math.pi * a * b * c

    @property
    def analytic_diameter_mm(self) -> float:
        return 2.0 * max(self.radii_mm)

    @property
    def bounding_radius_mm(self) -> float:
        return max(self.radii_mm)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'shape': self.shape,
            'center_mm': list(self.center_mm),
            'radii_mm': list(self.radii_mm),
            'volume_mm3': self.analytic_volume_mm3,
            'diameter_mm': self.analytic_diameter_mm,
        }


@dataclass(frozen=True)
class Perturbation:
    """
    GT에서 예측을 만드는 변형

    steps: 양수면 팽창, 음수면 침식 횟수 (6-이웃)
    offset_mm: 평행 이동 (spacing 단위로 반올림)
    drop: 예측에서 지울 병변 인덱스, drop_count: seed로 추가로 고를 병변 수
    false_positives: GT와 닿지 않게 추가할 도형
    """
    steps: int = 0
    offset_mm: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    drop: Tuple[int, ...] = ()
    drop_count: int = 0
    false_positives: Tuple[LesionShape, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'offset_mm', _triple(self.offset_mm, 'offset_mm'))
        object.__setattr__(self, 'drop', tuple(sorted({int(i) for i in self.drop})))
        object.__setattr__(self, 'false_positives', tuple(self.false_positives))
        if self.drop_count < 0:
            raise ConfigurationError(f"drop_count는 0 이상이어야 합니다: {self.drop_count}")

    @property
    def is_identity(self) -> bool:
        return (
            self.steps == 0
            and not any(self.offset_mm)
            and not self.drop
            and self.drop_count == 0
            and not self.false_positives
        )


@dataclass(frozen=True)
class PhantomSpec:
    """팬텀 하나의 격자, 병변, 변형, seed"""
    dims: Tuple[int, int, int]
    spacing: Tuple[float, float, float]
    lesions: Tuple[LesionShape, ...] = ()
    perturbation: Perturbation = field(default_factory=Perturbation)
    seed: int = 0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 3:
            raise ConfigurationError(f"dims는 3 이상의 정수 3개여야 합니다: {self.dims}")
        spacing = _triple(self.spacing, 'spacing')
        if any(s <= 0 for s in spacing):
            raise ConfigurationError(f"spacing은 양수여야 합니다: {spacing}")
        object.__setattr__(self, 'dims', dims)
        object.__setattr__(self, 'spacing', spacing)
        object.__setattr__(self, 'lesions', tuple(self.lesions))
        for index in self.perturbation.drop:
            if not 0 <= index < len(self.lesions):
                raise ConfigurationError(f"drop 인덱스가 범위를 벗어났습니다: {index}")

    def dropped_indices(self) -> Tuple[int, ...]:
        """명시적 drop과 seed로 고른 drop_count개를 합친 인덱스"""
        dropped = set(self.perturbation.drop)
        remaining = [i for i in range(len(self.lesions)) if i not in dropped]
        count = self.perturbation.drop_count
        if count > len(remaining):
            raise ConfigurationError(f"지울 병변 수가 병변 수보다 많습니다: {count} > {len(remaining)}")
        if count:
            rng = np.random.default_rng(self.seed)
            dropped.update(int(i) for i in rng.choice(remaining, size=count, replace=False))
        return tuple(sorted(dropped))


@dataclass(frozen=True)
class AnalyticTruth:
    volume_mm3: float
    diameter_mm: float
    voxel_count: int


def _shape_box(shape: LesionShape, dims, spacing) -> Tuple[slice, ...]:
    """도형이 덮는 인덱스 범위, 1복셀 여백이 없으면 오류"""
    box = []
    for axis in range(3):
        low = (shape.center_mm[axis] - shape.radii_mm[axis]) / spacing[axis]
        high = (shape.center_mm[axis] + shape.radii_mm[axis]) / spacing[axis]
        first, last = math.ceil(low - 1e-9), math.floor(high + 1e-9)
        if first < 1 or last > dims[axis] - 2:
            raise PhantomGenerationError(
                f"도형이 격자 밖(1복셀 여백)으로 나갑니다: center={shape.center_mm}, "
                f"radii={shape.radii_mm}, axis={axis}"
            )
        box.append(slice(first, last + 1))
    return tuple(box)


def shape_mask(shape: LesionShape, dims, spacing) -> np.ndarray:
    """중심이 도형 안에 있는 복셀 (bool 배열)"""
    box = _shape_box(shape, dims, spacing)
    axes = [
        (np.arange(s.start, s.stop) * spacing[a] - shape.center_mm[a]) / shape.radii_mm[a]
        for a, s in enumerate(box)
    ]
    x, y, z = np.meshgrid(*axes, indexing='ij')
    mask = np.zeros(dims, dtype=bool)
    mask[box] = x * x + y * y + z * z <= 1.0 + INSIDE_TOLERANCE
    if not mask.any():
        raise PhantomGenerationError(f"복셀 중심을 하나도 포함하지 않는 도형입니다: {shape}")
    return mask


def _touches(mask: np.ndarray, occupied: np.ndarray) -> bool:
    return bool((ndimage.binary_dilation(mask, structure=TOUCH_STRUCTURE) & occupied).any())


def rasterize_shapes(shapes: Sequence[LesionShape], dims, spacing) -> List[np.ndarray]:
    """도형별 마스크, 서로 겹치거나 닿으면 오류"""
    occupied = np.zeros(dims, dtype=bool)
    masks = []
    for index, shape in enumerate(shapes):
        mask = shape_mask(shape, dims, spacing)
        if _touches(mask, occupied):
            raise PhantomGenerationError(f"{index}번 도형이 다른 도형과 겹치거나 닿습니다.")
        _, count = ndimage.label(mask, structure=TOUCH_STRUCTURE)
        if count != 1:
            raise PhantomGenerationError(f"{index}번 도형이 여러 조각으로 래스터화되었습니다.")
        occupied |= mask
        masks.append(mask)
    return masks


def rasterize(spec: PhantomSpec) -> Tuple[BinaryMask, List[AnalyticTruth]]:
    """GT 마스크와 병변별 해석적 부피/지름"""
    masks = rasterize_shapes(spec.lesions, spec.dims, spec.spacing)
    data = np.zeros(spec.dims, dtype=np.uint8)
    for mask in masks:
        data[mask] = 1
    truths = [
        AnalyticTruth(shape.analytic_volume_mm3, shape.analytic_diameter_mm, int(mask.sum()))
        for shape, mask in zip(spec.lesions, masks)
    ]
    return BinaryMask(VoxelGrid(data, spec.spacing)), truths


def shift_array(array: np.ndarray, offset: Sequence[int]) -> np.ndarray:
    """정수 복셀 이동, 격자 밖으로 나간 복셀은 버림"""
    shifted = np.zeros_like(array)
    source, target = [], []
    for size, step in zip(array.shape, offset):
        if abs(step) >= size:
            return shifted
        source.append(slice(max(0, -step), size - max(0, step)))
        target.append(slice(max(0, step), size - max(0, -step)))
    shifted[tuple(target)] = array[tuple(source)]
    return shifted


def voxel_offset(offset_mm, spacing) -> Tuple[int, int, int]:
    return tuple(int(round(o / s)) for o, s in zip(offset_mm, spacing))


def morph(array: np.ndarray, steps: int) -> np.ndarray:
    # scipy는 iterations=0을 "수렴할 때까지"로 해석한다
    if steps > 0:
        return ndimage.binary_dilation(array, structure=MORPH_STRUCTURE, iterations=steps)
    if steps < 0:
        return ndimage.binary_erosion(array, structure=MORPH_STRUCTURE, iterations=-steps)
    return array


def add_false_positives(pred: np.ndarray, gt: np.ndarray, shapes: Sequence[LesionShape], spacing) -> np.ndarray:
    """GT와 기존 예측 어디에도 닿지 않는 FP 도형 추가"""
    result = pred.copy()
    for index, mask in enumerate(rasterize_shapes(shapes, pred.shape, spacing)):
        if _touches(mask, gt | result):
            raise PhantomGenerationError(f"{index}번 FP 도형이 병변과 겹치거나 닿습니다.")
        result |= mask
    return result


def perturb(gt: BinaryMask, spec: PhantomSpec, dropped: Optional[Sequence[int]] = None) -> BinaryMask:
    """
    GT에서 예측 마스크 생성: drop → 이동 → erode/dilate → FP 추가

    변형이 없으면 GT와 같은 마스크를 돌려준다.
    """
    if tuple(gt.dims) != spec.dims:
        raise ConfigurationError(f"GT dims {gt.dims}가 spec dims {spec.dims}와 다릅니다.")
    perturbation = spec.perturbation
    if perturbation.is_identity:
        return BinaryMask(VoxelGrid(gt.grid.data.copy(), gt.spacing, gt.grid.origin))

    gt_array = gt.array.copy()
    pred = gt_array.copy()
    dropped = spec.dropped_indices() if dropped is None else tuple(dropped)
    for index in dropped:
        pred &= ~shape_mask(spec.lesions[index], spec.dims, spec.spacing)

    pred = shift_array(pred, voxel_offset(perturbation.offset_mm, spec.spacing))
    pred = morph(pred, perturbation.steps)
    if perturbation.false_positives:
        pred = add_false_positives(pred, gt_array, perturbation.false_positives, spec.spacing)

    logger.debug(
        f"팬텀 변형: drop={list(dropped)} offset={perturbation.offset_mm} steps={perturbation.steps} "
        f"fp={len(perturbation.false_positives)}"
    )
    return BinaryMask(VoxelGrid(pred.astype(np.uint8), gt.spacing, gt.grid.origin))
