"""
복셀 격자와 이진 마스크
"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from core.exceptions import ConfigurationError, DataError

# 지원하는 스칼라 종류
SCALAR_KINDS = {
    'uint8': np.dtype(np.uint8),
    'int16': np.dtype(np.int16),
    'float32': np.dtype(np.float32),
}


def _as_triple(values, name: str) -> Tuple[float, float, float]:
    triple = tuple(float(v) for v in values)
    if len(triple) != 3:
        raise DataError(f"{name}는 3개의 값이어야 합니다: {values}")
    return triple


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """
    물리 좌표(mm)를 가진 3D 스칼라 격자

    data는 [x, y, z]로 인덱싱되며 디스크에는 x가 가장 빠르게 변하는 순서로 저장된다.
    생성 후 data는 읽기 전용이다.
    """
    data: np.ndarray
    spacing: Tuple[float, float, float]
    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise DataError(f"3D 격자가 아닙니다: shape={data.shape}")
        if data.dtype.newbyteorder('=') not in SCALAR_KINDS.values():
            raise DataError(f"지원하지 않는 스칼라 종류: {data.dtype}")
        spacing = _as_triple(self.spacing, 'spacing')
        if not all(math.isfinite(s) and s > 0 for s in spacing):
            raise DataError(f"spacing은 양의 유한값이어야 합니다: {spacing}")

        data = data.astype(data.dtype.newbyteorder('='), copy=True)
        data.setflags(write=False)
        object.__setattr__(self, 'data', data)
        object.__setattr__(self, 'spacing', spacing)
        object.__setattr__(self, 'origin', _as_triple(self.origin, 'origin'))

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(d) for d in self.data.shape)

    @property
    def scalar_kind(self) -> str:
        return self.data.dtype.name

    def same_geometry(self, other: 'VoxelGrid') -> bool:
        """dims와 spacing이 같은지 (spacing은 float32 정밀도로 비교)"""
        return (
            self.dims == other.dims
            and np.array_equal(np.float32(self.spacing), np.float32(other.spacing))
        )

    def __eq__(self, other):
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return (
            self.same_geometry(other)
            and self.data.dtype == other.data.dtype
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """값이 {0, 1}로 제한된 격자"""
    grid: VoxelGrid

    def __post_init__(self):
        if self.grid.data.dtype != np.uint8:
            raise DataError(f"이진 마스크는 uint8이어야 합니다: {self.grid.data.dtype}")
        if self.grid.data.size and self.grid.data.max() > 1:
            raise DataError("이진 마스크에 0/1 이외의 값이 있습니다.")

    @classmethod
    def from_array(cls, array, spacing, origin=(0.0, 0.0, 0.0)) -> 'BinaryMask':
        return cls(VoxelGrid(np.asarray(array).astype(bool).astype(np.uint8), spacing, origin))

    @classmethod
    def empty_like(cls, grid: VoxelGrid) -> 'BinaryMask':
        return cls(VoxelGrid(np.zeros(grid.dims, dtype=np.uint8), grid.spacing, grid.origin))

    @property
    def array(self) -> np.ndarray:
        """bool 배열 (읽기 전용 뷰)"""
        return self.grid.data.view(bool)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.grid.dims

    @property
    def spacing(self) -> Tuple[float, float, float]:
        return self.grid.spacing

    @property
    def voxel_count(self) -> int:
        return int(np.count_nonzero(self.grid.data))

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.grid == other.grid

    __hash__ = None


def binarize(grid: VoxelGrid, threshold: float) -> BinaryMask:
    """value > threshold인 복셀을 1로 하는 이진 마스크 생성"""
    if not math.isfinite(threshold):
        raise ConfigurationError(f"threshold는 유한값이어야 합니다: {threshold}")
    data = (grid.data > threshold).astype(np.uint8)
    return BinaryMask(VoxelGrid(data, grid.spacing, grid.origin))
