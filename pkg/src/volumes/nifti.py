"""
NIfTI-1 단일 파일(.nii / .nii.gz) 읽기/쓰기

헤더 레이아웃은 NIfTI-1 표준의 348바이트 구조를 그대로 따른다.
gzip 여부는 확장자가 아니라 0x1F 0x8B 접두어로 판별한다.
"""

import gzip
import logging
import math
import zlib
from pathlib import Path

import numpy as np

from core.exceptions import (
    TruncatedVolumeError, UnsupportedDatatypeError, UnsupportedShapeError,
    VolumeFormatError,
)
from volumes.grid import VoxelGrid

logger = logging.getLogger('lesioneval')

HEADER_SIZE = 348
VOX_OFFSET = 352
NIFTI_MAGIC = b'n+1\x00'
GZIP_PREFIX = b'\x1f\x8b'
XYZT_UNITS_MM = 2

HEADER_FIELDS = [
    ('sizeof_hdr', 'i4'),       # 0; must be 348
    ('data_type', 'S10'),       # 4; unused
    ('db_name', 'S18'),         # 14; unused
    ('extents', 'i4'),          # 32; unused
    ('session_error', 'i2'),    # 36; unused
    ('regular', 'S1'),          # 38; unused
    ('dim_info', 'u1'),         # 39
    ('dim', 'i2', (8,)),        # 40
    ('intent_p1', 'f4'),        # 56
    ('intent_p2', 'f4'),        # 60
    ('intent_p3', 'f4'),        # 64
    ('intent_code', 'i2'),      # 68
    ('datatype', 'i2'),         # 70
    ('bitpix', 'i2'),           # 72
    ('slice_start', 'i2'),      # 74
    ('pixdim', 'f4', (8,)),     # 76
    ('vox_offset', 'f4'),       # 108
    ('scl_slope', 'f4'),        # 112
    ('scl_inter', 'f4'),        # 116
    ('slice_end', 'i2'),        # 120
    ('slice_code', 'u1'),       # 122
    ('xyzt_units', 'u1'),       # 123
    ('cal_max', 'f4'),          # 124
    ('cal_min', 'f4'),          # 128
    ('slice_duration', 'f4'),   # 132
    ('toffset', 'f4'),          # 136
    ('glmax', 'i4'),            # 140
    ('glmin', 'i4'),            # 144
    ('descrip', 'S80'),         # 148
    ('aux_file', 'S24'),        # 228
    ('qform_code', 'i2'),       # 252
    ('sform_code', 'i2'),       # 254
    ('quatern_b', 'f4'),        # 256
    ('quatern_c', 'f4'),        # 260
    ('quatern_d', 'f4'),        # 264
    ('qoffset_x', 'f4'),        # 268
    ('qoffset_y', 'f4'),        # 272
    ('qoffset_z', 'f4'),        # 276
    ('srow_x', 'f4', (4,)),     # 280
    ('srow_y', 'f4', (4,)),     # 296
    ('srow_z', 'f4', (4,)),     # 312
    ('intent_name', 'S16'),     # 328
    ('magic', 'S4'),            # 344
]

HEADER_DTYPE = np.dtype(HEADER_FIELDS)
assert HEADER_DTYPE.itemsize == HEADER_SIZE

# datatype 코드 -> numpy dtype
DATATYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    16: np.dtype(np.float32),
}
DATATYPE_CODES = {dtype: code for code, dtype in DATATYPES.items()}


def _read_raw(path) -> bytes:
    with open(path, 'rb') as fileobj:
        raw = fileobj.read()
    if raw[:2] == GZIP_PREFIX:
        try:
            raw = gzip.decompress(raw)
        except (EOFError, gzip.BadGzipFile, zlib.error) as e:
            raise TruncatedVolumeError(f"gzip 스트림이 손상되었습니다: {path} ({e})") from e
    return raw


def detect_byteorder(raw: bytes) -> str:
    """sizeof_hdr 필드로 엔디안 판별 ('<' 또는 '>')"""
    if len(raw) < HEADER_SIZE:
        raise VolumeFormatError(f"헤더가 {HEADER_SIZE}바이트보다 짧습니다: {len(raw)}바이트")
    if int.from_bytes(raw[:4], 'little', signed=True) == HEADER_SIZE:
        return '<'
    if int.from_bytes(raw[:4], 'big', signed=True) == HEADER_SIZE:
        return '>'
    raise VolumeFormatError("sizeof_hdr가 348이 아닙니다.")


def parse_header(raw: bytes):
    """(헤더 레코드, 바이트 순서) 반환"""
    byteorder = detect_byteorder(raw)
    header = np.frombuffer(raw[:HEADER_SIZE], dtype=HEADER_DTYPE.newbyteorder(byteorder))[0]
    if bytes(header['magic']).ljust(4, b'\x00') != NIFTI_MAGIC:
        raise VolumeFormatError(f"단일 파일 NIfTI-1 magic이 아닙니다: {bytes(header['magic'])!r}")
    return header, byteorder


def _shape_from_header(header):
    dim = [int(d) for d in header['dim']]
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise VolumeFormatError(f"dim[0] 값이 잘못되었습니다: {ndim}")
    extents = dim[1:ndim + 1]
    if any(d < 1 for d in extents):
        raise VolumeFormatError(f"dim 값이 양수가 아닙니다: {extents}")
    if ndim < 3 or any(d > 1 for d in extents[3:]):
        raise UnsupportedShapeError(f"3D 볼륨만 지원합니다: dim={extents}")
    return tuple(extents[:3])


def _spacing_from_header(header):
    spacing = []
    for axis in range(3):
        value = abs(float(header['pixdim'][axis + 1]))
        if not math.isfinite(value) or value <= 0:
            raise VolumeFormatError(f"pixdim[{axis + 1}] 값이 잘못되었습니다: {value}")
        spacing.append(value)
    return tuple(spacing)


def _origin_from_header(header):
    if int(header['qform_code']) > 0:
        return tuple(float(header[name]) for name in ('qoffset_x', 'qoffset_y', 'qoffset_z'))
    if int(header['sform_code']) > 0:
        return tuple(float(header[row][3]) for row in ('srow_x', 'srow_y', 'srow_z'))
    return (0.0, 0.0, 0.0)


def load_volume(path) -> VoxelGrid:
    """NIfTI-1 파일을 VoxelGrid로 읽기"""
    raw = _read_raw(path)
    header, byteorder = parse_header(raw)
    shape = _shape_from_header(header)

    code = int(header['datatype'])
    if code not in DATATYPES:
        raise UnsupportedDatatypeError(f"지원하지 않는 datatype 코드: {code}")
    dtype = DATATYPES[code]
    if int(header['bitpix']) != dtype.itemsize * 8:
        raise VolumeFormatError(
            f"bitpix({int(header['bitpix'])})가 datatype {code}와 맞지 않습니다."
        )

    offset = int(header['vox_offset'])
    if offset < HEADER_SIZE:
        raise VolumeFormatError(f"vox_offset이 헤더 안쪽을 가리킵니다: {offset}")
    nbytes = int(np.prod(shape)) * dtype.itemsize
    payload = raw[offset:offset + nbytes]
    if len(payload) < nbytes:
        raise TruncatedVolumeError(
            f"데이터 영역이 잘렸습니다: {path} (필요 {nbytes}바이트, 실제 {len(payload)}바이트)"
        )

    data = np.frombuffer(payload, dtype=dtype.newbyteorder(byteorder))
    data = data.reshape(shape, order='F').astype(dtype)

    slope = float(header['scl_slope'])
    inter = float(header['scl_inter'])
    if slope != 0 and math.isfinite(slope) and not (slope == 1 and inter == 0):
        # 스케일링이 적용되면 float32로 승격
        data = (data.astype(np.float64) * slope + inter).astype(np.float32)

    grid = VoxelGrid(data, _spacing_from_header(header), _origin_from_header(header))
    logger.debug(f"볼륨 로드: {path} dims={grid.dims} spacing={grid.spacing} kind={grid.scalar_kind}")
    return grid


def build_header(grid: VoxelGrid, byteorder: str = '<'):
    """grid에 맞는 NIfTI-1 헤더 레코드 생성"""
    dtype = grid.data.dtype
    header = np.zeros((), dtype=HEADER_DTYPE.newbyteorder(byteorder))
    header['sizeof_hdr'] = HEADER_SIZE
    header['dim'] = [3, *grid.dims, 1, 1, 1, 1]
    header['datatype'] = DATATYPE_CODES[dtype]
    header['bitpix'] = dtype.itemsize * 8
    header['pixdim'] = [1.0, *grid.spacing, 0.0, 0.0, 0.0, 0.0]
    header['vox_offset'] = VOX_OFFSET
    header['scl_slope'] = 1.0
    header['scl_inter'] = 0.0
    header['xyzt_units'] = XYZT_UNITS_MM
    header['descrip'] = b'lesioneval'
    header['qform_code'] = 1
    header['sform_code'] = 1
    header['qoffset_x'], header['qoffset_y'], header['qoffset_z'] = grid.origin
    header['srow_x'] = [grid.spacing[0], 0.0, 0.0, grid.origin[0]]
    header['srow_y'] = [0.0, grid.spacing[1], 0.0, grid.origin[1]]
    header['srow_z'] = [0.0, 0.0, grid.spacing[2], grid.origin[2]]
    header['magic'] = NIFTI_MAGIC
    return header


def encode_volume(grid: VoxelGrid, byteorder: str = '<') -> bytes:
    """헤더 + 4바이트 확장 표시 + 데이터 (비압축)"""
    if byteorder not in ('<', '>'):
        raise ValueError(f"byteorder는 '<' 또는 '>'여야 합니다: {byteorder}")
    header = build_header(grid, byteorder)
    data = grid.data.astype(grid.data.dtype.newbyteorder(byteorder))
    return header.tobytes() + b'\x00' * (VOX_OFFSET - HEADER_SIZE) + data.tobytes(order='F')


def save_volume(grid: VoxelGrid, path, byteorder: str = '<') -> None:
    """VoxelGrid를 NIfTI-1로 저장 (.gz로 끝나면 gzip 압축)"""
    payload = encode_volume(grid, byteorder)
    path = Path(path)
    if path.name.endswith('.gz'):
        # mtime=0: 같은 입력이면 같은 바이트
        payload = gzip.compress(payload, mtime=0)
    with open(path, 'wb') as fileobj:
        fileobj.write(payload)
    logger.debug(f"볼륨 저장: {path} dims={grid.dims}")


def volume_stem(path) -> str:
    """확장자(.nii, .nii.gz)를 제거한 파일명 (대소문자 구분)"""
    name = Path(path).name
    for suffix in ('.nii.gz', '.nii'):
        if name.endswith(suffix):
            return name[:-len(suffix)]
    return name


def is_volume_file(path) -> bool:
    name = Path(path).name
    return name.endswith('.nii') or name.endswith('.nii.gz')
