"""
볼륨 입출력 테스트
"""

import gzip
import struct
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from core.exceptions import (
    DataError, TruncatedVolumeError, UnsupportedDatatypeError,
    UnsupportedShapeError, VolumeFormatError,
)
from volumes.grid import BinaryMask, VoxelGrid, binarize
from volumes.nifti import load_volume, save_volume, volume_stem


def minimal_nifti(dims, pixdim, values, datatype=2, bitpix=8, order='<',
                  magic=b'n+1\x00', sizeof_hdr=348, ndim=None, slope=0.0, inter=0.0):
    """struct로 직접 조립한 최소 NIfTI-1 파일 (헤더 레이아웃 오라클)"""
    header = bytearray(352)
    dim = [ndim if ndim is not None else len(dims), *dims]
    dim += [1] * (8 - len(dim))
    struct.pack_into(f'{order}i', header, 0, sizeof_hdr)
    struct.pack_into(f'{order}8h', header, 40, *dim)
    struct.pack_into(f'{order}h', header, 70, datatype)
    struct.pack_into(f'{order}h', header, 72, bitpix)
    struct.pack_into(f'{order}8f', header, 76, 1.0, *pixdim, *([0.0] * (7 - len(pixdim))))
    struct.pack_into(f'{order}f', header, 108, 352.0)
    struct.pack_into(f'{order}f', header, 112, slope)
    struct.pack_into(f'{order}f', header, 116, inter)
    header[344:348] = magic
    return bytes(header) + np.asarray(values).tobytes(order='F')


def sphere_grid(n=24, radius_vox=6.0, spacing=(0.5, 0.5, 0.5)):
    x, y, z = np.indices((n, n, n))
    c = (n - 1) / 2
    inside = (x - c) ** 2 + (y - c) ** 2 + (z - c) ** 2 <= radius_vox ** 2
    return VoxelGrid(inside.astype(np.uint8), spacing)


class LoadVolumeTest(SimpleTestCase):
    """load_volume 테스트"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, name, payload):
        path = self.root / name
        path.write_bytes(payload)
        return path

    def test_minimal_uint8_file(self):
        """348바이트 헤더 + 64개 uint8 복셀"""
        values = np.arange(64, dtype=np.uint8).reshape((4, 4, 4), order='F')
        path = self.write('mini.nii', minimal_nifti((4, 4, 4), (0.5, 0.5, 0.5), values))

        grid = load_volume(path)

        self.assertEqual(grid.dims, (4, 4, 4))
        self.assertEqual(grid.spacing, (0.5, 0.5, 0.5))
        self.assertEqual(grid.data.size, 64)
        self.assertEqual(grid.scalar_kind, 'uint8')
        np.testing.assert_array_equal(grid.data, values)
        # x가 가장 빠르게 변하는 순서
        self.assertEqual(grid.data[1, 0, 0], 1)
        self.assertEqual(grid.data[0, 1, 0], 4)
        self.assertEqual(grid.data[0, 0, 1], 16)

    def test_gzip_is_transparent(self):
        """gzip 압축 파일도 동일한 격자"""
        values = np.arange(64, dtype=np.uint8).reshape((4, 4, 4), order='F')
        payload = minimal_nifti((4, 4, 4), (0.5, 0.5, 0.5), values)
        plain = load_volume(self.write('a.nii', payload))
        # 확장자와 무관하게 접두어로 판별
        packed = load_volume(self.write('b.nii', gzip.compress(payload)))

        self.assertEqual(plain, packed)

    def test_big_endian_header_is_byte_swapped(self):
        """big-endian 헤더와 데이터"""
        values = np.arange(8, dtype='>i2').reshape((2, 2, 2), order='F')
        path = self.write('be.nii', minimal_nifti(
            (2, 2, 2), (0.3, 0.3, 0.6), values, datatype=4, bitpix=16, order='>'
        ))

        grid = load_volume(path)

        self.assertEqual(grid.scalar_kind, 'int16')
        np.testing.assert_array_equal(grid.data, np.arange(8).reshape((2, 2, 2), order='F'))
        np.testing.assert_array_equal(np.float32(grid.spacing), np.float32([0.3, 0.3, 0.6]))

    def test_negative_pixdim_uses_absolute_value(self):
        values = np.zeros((2, 2, 2), dtype=np.uint8)
        grid = load_volume(self.write('neg.nii', minimal_nifti((2, 2, 2), (-0.5, 0.5, 0.5), values)))
        self.assertEqual(grid.spacing, (0.5, 0.5, 0.5))

    def test_scaling_applied_when_slope_nonzero(self):
        values = np.array([1, 2, 3, 4, 5, 6, 7, 8], dtype=np.uint8).reshape((2, 2, 2), order='F')
        grid = load_volume(self.write('scaled.nii', minimal_nifti(
            (2, 2, 2), (1, 1, 1), values, slope=2.0, inter=-1.0
        )))
        self.assertEqual(grid.scalar_kind, 'float32')
        np.testing.assert_array_equal(grid.data, values.astype(np.float32) * 2 - 1)

    def test_zero_slope_is_identity(self):
        values = np.arange(8, dtype=np.uint8).reshape((2, 2, 2), order='F')
        grid = load_volume(self.write('noscale.nii', minimal_nifti(
            (2, 2, 2), (1, 1, 1), values, slope=0.0, inter=5.0
        )))
        self.assertEqual(grid.scalar_kind, 'uint8')
        np.testing.assert_array_equal(grid.data, values)

    def test_wrong_magic_rejected(self):
        values = np.zeros((2, 2, 2), dtype=np.uint8)
        path = self.write('magic.nii', minimal_nifti((2, 2, 2), (1, 1, 1), values, magic=b'ni1\x00'))
        with self.assertRaises(VolumeFormatError):
            load_volume(path)

    def test_wrong_sizeof_hdr_rejected(self):
        values = np.zeros((2, 2, 2), dtype=np.uint8)
        path = self.write('size.nii', minimal_nifti((2, 2, 2), (1, 1, 1), values, sizeof_hdr=540))
        with self.assertRaises(VolumeFormatError):
            load_volume(path)

    def test_truncated_data_rejected(self):
        values = np.zeros((4, 4, 4), dtype=np.uint8)
        payload = minimal_nifti((4, 4, 4), (1, 1, 1), values)[:-10]
        with self.assertRaises(TruncatedVolumeError):
            load_volume(self.write('short.nii', payload))

    def test_truncated_gzip_rejected(self):
        values = np.zeros((8, 8, 8), dtype=np.uint8)
        payload = gzip.compress(minimal_nifti((8, 8, 8), (1, 1, 1), values))[:40]
        with self.assertRaises(TruncatedVolumeError):
            load_volume(self.write('short.nii.gz', payload))

    def test_four_dimensional_rejected(self):
        values = np.zeros((2, 2, 2, 2), dtype=np.uint8)
        path = self.write('4d.nii', minimal_nifti((2, 2, 2, 2), (1, 1, 1, 1), values))
        with self.assertRaises(UnsupportedShapeError):
            load_volume(path)

    def test_two_dimensional_rejected(self):
        values = np.zeros((4, 4), dtype=np.uint8)
        path = self.write('2d.nii', minimal_nifti((4, 4), (1, 1), values))
        with self.assertRaises(UnsupportedShapeError):
            load_volume(path)

    def test_singleton_third_dimension_with_dim0_two_rejected(self):
        # dim[0]=2면 dim[3]이 1이어도 2D 파일이다
        values = np.zeros((4, 4, 1), dtype=np.uint8)
        path = self.write('2d1.nii', minimal_nifti((4, 4, 1), (1, 1, 1), values, ndim=2))
        with self.assertRaises(UnsupportedShapeError):
            load_volume(path)

    def test_singleton_fourth_dimension_accepted(self):
        values = np.zeros((2, 2, 2), dtype=np.uint8)
        grid = load_volume(self.write('4d1.nii', minimal_nifti((2, 2, 2, 1), (1, 1, 1, 1), values)))
        self.assertEqual(grid.dims, (2, 2, 2))

    def test_unsupported_datatype_rejected(self):
        values = np.zeros((2, 2, 2), dtype=np.int32)
        path = self.write('i32.nii', minimal_nifti((2, 2, 2), (1, 1, 1), values, datatype=8, bitpix=32))
        with self.assertRaises(UnsupportedDatatypeError):
            load_volume(path)

    def test_short_file_rejected(self):
        with self.assertRaises(VolumeFormatError):
            load_volume(self.write('tiny.nii', b'\x5c\x01\x00\x00'))


class SaveVolumeTest(SimpleTestCase):
    """save_volume / 왕복 테스트"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_single_voxel(self):
        path = self.root / 'one.nii'
        save_volume(VoxelGrid(np.ones((1, 1, 1), dtype=np.uint8), (1, 1, 1)), path)
        grid = load_volume(path)
        self.assertEqual(grid.dims, (1, 1, 1))
        self.assertEqual(int(grid.data[0, 0, 0]), 1)

    def test_header_fields_written(self):
        path = self.root / 'hdr.nii'
        save_volume(VoxelGrid(np.zeros((3, 4, 5), dtype=np.int16), (0.3, 0.4, 0.5)), path)
        raw = path.read_bytes()
        self.assertEqual(struct.unpack_from('<i', raw, 0)[0], 348)
        self.assertEqual(struct.unpack_from('<8h', raw, 40)[:4], (3, 3, 4, 5))
        self.assertEqual(struct.unpack_from('<h', raw, 70)[0], 4)
        self.assertEqual(struct.unpack_from('<h', raw, 72)[0], 16)
        self.assertEqual(struct.unpack_from('<f', raw, 108)[0], 352.0)
        self.assertEqual(raw[344:348], b'n+1\x00')
        self.assertEqual(len(raw), 352 + 3 * 4 * 5 * 2)

    def test_spacing_stored_as_float32(self):
        path = self.root / 'sp.nii'
        save_volume(VoxelGrid(np.zeros((2, 2, 2), dtype=np.uint8), (0.3, 0.3, 0.3)), path)
        grid = load_volume(path)
        self.assertEqual(grid.spacing, tuple(float(np.float32(0.3)) for _ in range(3)))

    def test_phantom_round_trip(self):
        original = sphere_grid(n=128, radius_vox=40)
        path = self.root / 'sphere.nii.gz'
        save_volume(original, path)
        self.assertEqual(load_volume(path), original)

    def test_gzip_output_is_deterministic(self):
        grid = sphere_grid()
        save_volume(grid, self.root / 'a.nii.gz')
        save_volume(grid, self.root / 'b.nii.gz')
        self.assertEqual((self.root / 'a.nii.gz').read_bytes(), (self.root / 'b.nii.gz').read_bytes())

    def test_seeded_round_trips(self):
        """100개 시드 격자: gzip, 양 엔디안, 세 가지 datatype"""
        rng = np.random.default_rng(1234)
        kinds = [np.uint8, np.int16, np.float32]
        for trial in range(100):
            dims = tuple(int(d) for d in rng.integers(1, 12, size=3))
            kind = kinds[trial % 3]
            if kind is np.float32:
                data = rng.normal(size=dims).astype(np.float32)
            else:
                info = np.iinfo(kind)
                data = rng.integers(info.min, info.max, size=dims, endpoint=True).astype(kind)
            spacing = tuple(float(s) for s in rng.uniform(0.3, 0.7, size=3))
            origin = tuple(float(o) for o in rng.uniform(-50, 50, size=3))
            grid = VoxelGrid(data, spacing, origin)
            suffix = '.nii.gz' if trial % 2 else '.nii'
            byteorder = '>' if trial % 4 >= 2 else '<'
            path = self.root / f'g{trial}{suffix}'

            save_volume(grid, path, byteorder=byteorder)
            loaded = load_volume(path)

            with self.subTest(trial=trial):
                self.assertEqual(loaded.dims, grid.dims)
                self.assertEqual(loaded.data.dtype, grid.data.dtype)
                self.assertEqual(loaded.data.tobytes(), grid.data.tobytes())
                np.testing.assert_array_equal(np.float32(loaded.spacing), np.float32(spacing))
                np.testing.assert_array_equal(np.float32(loaded.origin), np.float32(origin))

    def test_unwritable_path_raises_io_error(self):
        grid = VoxelGrid(np.zeros((2, 2, 2), dtype=np.uint8), (1, 1, 1))
        with self.assertRaises(OSError):
            save_volume(grid, self.root / 'missing' / 'x.nii')

    def test_volume_stem(self):
        self.assertEqual(volume_stem('/a/case_01.nii.gz'), 'case_01')
        self.assertEqual(volume_stem('Case_01.nii'), 'Case_01')


class VoxelGridTest(SimpleTestCase):
    """VoxelGrid / BinaryMask 불변식"""

    def test_spacing_must_be_positive(self):
        with self.assertRaises(DataError):
            VoxelGrid(np.zeros((2, 2, 2), dtype=np.uint8), (0.5, 0.0, 0.5))
        with self.assertRaises(DataError):
            VoxelGrid(np.zeros((2, 2, 2), dtype=np.uint8), (0.5, float('inf'), 0.5))

    def test_unsupported_kind_rejected(self):
        with self.assertRaises(DataError):
            VoxelGrid(np.zeros((2, 2, 2), dtype=np.float64), (1, 1, 1))

    def test_data_is_read_only(self):
        grid = VoxelGrid(np.zeros((2, 2, 2), dtype=np.uint8), (1, 1, 1))
        with self.assertRaises(ValueError):
            grid.data[0, 0, 0] = 1

    def test_binary_mask_rejects_other_values(self):
        with self.assertRaises(DataError):
            BinaryMask(VoxelGrid(np.full((2, 2, 2), 2, dtype=np.uint8), (1, 1, 1)))


class BinarizeTest(SimpleTestCase):
    """binarize 테스트"""

    def test_all_zero_grid(self):
        mask = binarize(VoxelGrid(np.zeros((3, 3, 3), dtype=np.float32), (1, 1, 1)), 0.5)
        self.assertEqual(mask.voxel_count, 0)

    def test_threshold_is_strict(self):
        data = np.array([0.4, 0.6, 0.5, 0.0], dtype=np.float32).reshape((4, 1, 1))
        mask = binarize(VoxelGrid(data, (0.5, 0.5, 0.5)), 0.5)
        np.testing.assert_array_equal(mask.grid.data.ravel(), [0, 1, 0, 0])
        self.assertEqual(mask.spacing, (0.5, 0.5, 0.5))

    def test_idempotent(self):
        rng = np.random.default_rng(7)
        grid = VoxelGrid(rng.random((6, 6, 6)).astype(np.float32), (0.3, 0.3, 0.6))
        once = binarize(grid, 0.5)
        twice = binarize(once.grid, 0.5)
        self.assertEqual(once, twice)

    def test_output_is_binary(self):
        rng = np.random.default_rng(8)
        grid = VoxelGrid(rng.integers(-300, 300, size=(5, 5, 5)).astype(np.int16), (1, 1, 1))
        mask = binarize(grid, 0)
        self.assertTrue(set(np.unique(mask.grid.data)).issubset({0, 1}))

    def test_non_finite_threshold_rejected(self):
        from core.exceptions import ConfigurationError
        grid = VoxelGrid(np.zeros((2, 2, 2), dtype=np.uint8), (1, 1, 1))
        with self.assertRaises(ConfigurationError):
            binarize(grid, float('nan'))
