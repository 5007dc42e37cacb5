"""
병변 분해 테스트
"""

import itertools
import math
from collections import deque

import numpy as np
from django.test import SimpleTestCase
from scipy.spatial.distance import pdist

from core.exceptions import ConfigurationError
from lesions.components import (
    bounding_box_diagonal_mm, connected_components, extract_surface,
    lesion_max_diameter, lesion_volume,
)
from volumes.grid import BinaryMask


def mask_of(array, spacing=(1.0, 1.0, 1.0)):
    return BinaryMask.from_array(array, spacing)


def flood_fill_components(array, connectivity):
    """BFS 기반 연결 성분 (오라클)"""
    offsets = [
        d for d in itertools.product((-1, 0, 1), repeat=3)
        if d != (0, 0, 0) and sum(map(abs, d)) <= {6: 1, 18: 2, 26: 3}[connectivity]
    ]
    remaining = {tuple(int(v) for v in p) for p in np.argwhere(array)}
    components = []
    while remaining:
        seed = remaining.pop()
        component = {seed}
        queue = deque([seed])
        while queue:
            x, y, z = queue.popleft()
            for dx, dy, dz in offsets:
                neighbour = (x + dx, y + dy, z + dz)
                if neighbour in remaining:
                    remaining.remove(neighbour)
                    component.add(neighbour)
                    queue.append(neighbour)
        components.append(frozenset(component))
    return set(components)


def ball(n, radius_mm, spacing):
    """격자 중앙 복셀 중심에 놓인 구"""
    idx = np.indices((n, n, n)).astype(float)
    c = n // 2
    dist2 = sum(((idx[a] - c) * spacing[a]) ** 2 for a in range(3))
    return dist2 <= radius_mm ** 2


class ConnectedComponentsTest(SimpleTestCase):
    """connected_components 테스트"""

    def test_empty_mask(self):
        lesions = connected_components(mask_of(np.zeros((5, 5, 5))))
        self.assertEqual(len(lesions), 0)
        self.assertEqual(lesions.labels.max(), 0)

    def test_two_separated_cubes(self):
        array = np.zeros((8, 4, 4), dtype=bool)
        array[0:2, 0:2, 0:2] = True
        array[4:6, 0:2, 0:2] = True
        lesions = connected_components(mask_of(array))
        self.assertEqual(len(lesions), 2)
        self.assertEqual([lesion.voxel_count for lesion in lesions], [8, 8])

    def test_corner_contact_depends_on_connectivity(self):
        array = np.zeros((3, 3, 3), dtype=bool)
        array[0, 0, 0] = array[1, 1, 1] = True
        self.assertEqual(len(connected_components(mask_of(array), 26)), 1)
        self.assertEqual(len(connected_components(mask_of(array), 18)), 2)
        self.assertEqual(len(connected_components(mask_of(array), 6)), 2)

    def test_edge_contact_joins_under_18(self):
        array = np.zeros((3, 3, 3), dtype=bool)
        array[0, 0, 0] = array[1, 1, 0] = True
        self.assertEqual(len(connected_components(mask_of(array), 18)), 1)
        self.assertEqual(len(connected_components(mask_of(array), 6)), 2)

    def test_labels_follow_scan_order(self):
        array = np.zeros((6, 6, 6), dtype=bool)
        array[4, 0, 0] = True
        array[0, 5, 5] = True
        array[2, 2, 2] = True
        lesions = connected_components(mask_of(array))
        firsts = [tuple(lesion.voxels[0]) for lesion in lesions]
        self.assertEqual(firsts, [(0, 5, 5), (2, 2, 2), (4, 0, 0)])
        self.assertEqual(lesions.labels[0, 5, 5], 1)
        self.assertEqual(lesions.labels[4, 0, 0], 3)

    def test_invalid_connectivity(self):
        with self.assertRaises(ConfigurationError):
            connected_components(mask_of(np.zeros((2, 2, 2))), 8)

    def test_membership_invariant_under_axis_flip(self):
        rng = np.random.default_rng(3)
        array = rng.random((10, 10, 10)) < 0.2
        direct = connected_components(mask_of(array))
        flipped = connected_components(mask_of(array[::-1, :, ::-1]))

        def partition(lesion_set, transform):
            return {frozenset(transform(tuple(int(v) for v in p)) for p in lesion.voxels)
                    for lesion in lesion_set}

        self.assertEqual(
            partition(direct, lambda p: p),
            partition(flipped, lambda p: (9 - p[0], p[1], 9 - p[2])),
        )

    def test_random_masks_match_flood_fill(self):
        """16³ 이하 무작위 마스크 200개: 성분, 부피, 지름이 오라클과 일치"""
        rng = np.random.default_rng(2024)
        for trial in range(200):
            dims = tuple(int(d) for d in rng.integers(2, 17, size=3))
            density = rng.uniform(0.02, 0.25)
            array = rng.random(dims) < density
            spacing = tuple(float(s) for s in rng.choice([0.3, 0.5, 0.6, 0.7], size=3))
            connectivity = (6, 18, 26)[trial % 3]

            lesions = connected_components(mask_of(array, spacing), connectivity)
            expected = flood_fill_components(array, connectivity)
            got = {frozenset(tuple(int(v) for v in p) for p in lesion.voxels) for lesion in lesions}

            with self.subTest(trial=trial):
                self.assertEqual(got, expected)
                voxel_volume = spacing[0] * spacing[1] * spacing[2]
                self.assertAlmostEqual(
                    sum(lesion.volume_mm3 for lesion in lesions),
                    int(array.sum()) * voxel_volume, places=9,
                )
                diagonal = bounding_box_diagonal_mm(dims, spacing)
                for lesion in lesions:
                    points = lesion.voxels * np.asarray(spacing)
                    brute = float(pdist(points).max()) if len(points) > 1 else 0.0
                    self.assertAlmostEqual(lesion.max_diameter_mm, brute, delta=1e-12)
                    self.assertLessEqual(lesion.max_diameter_mm, diagonal + 1e-12)
                    self.assertEqual(lesion.max_diameter_mm == 0, lesion.voxel_count == 1)


class LesionSizeTest(SimpleTestCase):
    """부피/지름 테스트"""

    def test_single_voxel_volume(self):
        array = np.zeros((3, 3, 3), dtype=bool)
        array[1, 1, 1] = True
        lesion = connected_components(mask_of(array, (0.5, 0.5, 0.5))).get(1)
        self.assertAlmostEqual(lesion_volume(lesion, (0.5, 0.5, 0.5)), 0.125)
        self.assertEqual(lesion_max_diameter(lesion, (0.5, 0.5, 0.5)), 0.0)

    def test_cube_volume(self):
        array = np.zeros((6, 6, 6), dtype=bool)
        array[1:5, 1:5, 1:5] = True
        lesion = connected_components(mask_of(array, (0.3, 0.3, 0.3))).get(1)
        self.assertAlmostEqual(lesion.volume_mm3, 1.728, places=9)

    def test_adjacent_voxels_diameter(self):
        array = np.zeros((3, 3, 3), dtype=bool)
        array[0, 0, 0] = array[1, 0, 0] = True
        lesion = connected_components(mask_of(array, (0.5, 0.5, 0.5))).get(1)
        self.assertAlmostEqual(lesion.max_diameter_mm, 0.5)

    def test_sphere_volume_and_diameter(self):
        spacing = (0.5, 0.5, 0.5)
        lesion = connected_components(mask_of(ball(15, 2.5, spacing), spacing)).get(1)
        analytic = 4 / 3 * math.pi * 2.5 ** 3
        self.assertAlmostEqual(analytic, 65.4498, places=3)
        self.assertLess(abs(lesion.volume_mm3 - analytic) / analytic, 0.05)
        self.assertLessEqual(abs(lesion.max_diameter_mm - 5.0), 0.5)

    def test_surface_restricted_diameter_equals_all_pairs(self):
        spacing = (0.3, 0.3, 0.6)
        lesion = connected_components(mask_of(ball(21, 2.0, spacing), spacing)).get(1)
        brute = float(pdist(lesion.voxels * np.asarray(spacing)).max())
        self.assertAlmostEqual(lesion.max_diameter_mm, brute, delta=1e-12)

    def test_flat_lesion_diameter(self):
        """볼록 껍질이 퇴화하는 평면 병변"""
        array = np.zeros((12, 12, 3), dtype=bool)
        array[1:11, 1:11, 1] = True
        lesion = connected_components(mask_of(array, (0.5, 0.5, 0.5))).get(1)
        self.assertAlmostEqual(lesion.max_diameter_mm, math.hypot(4.5, 4.5), places=12)


class SurfaceTest(SimpleTestCase):
    """extract_surface 테스트"""

    def lesion(self, array):
        return connected_components(mask_of(array)).get(1)

    def test_single_voxel(self):
        array = np.zeros((3, 3, 3), dtype=bool)
        array[1, 1, 1] = True
        surface = extract_surface(self.lesion(array))
        self.assertEqual([tuple(p) for p in surface], [(1, 1, 1)])

    def test_three_cube(self):
        array = np.zeros((5, 5, 5), dtype=bool)
        array[1:4, 1:4, 1:4] = True
        surface = extract_surface(self.lesion(array))
        self.assertEqual(len(surface), 26)
        self.assertNotIn((2, 2, 2), {tuple(p) for p in surface})

    def test_ten_cube(self):
        array = np.zeros((12, 12, 12), dtype=bool)
        array[1:11, 1:11, 1:11] = True
        self.assertEqual(len(extract_surface(self.lesion(array))), 1000 - 8 ** 3)

    def test_grid_boundary_counts_as_outside(self):
        array = np.ones((3, 3, 3), dtype=bool)
        self.assertEqual(len(extract_surface(self.lesion(array))), 26)

    def test_surface_is_subset_with_outside_neighbour(self):
        rng = np.random.default_rng(11)
        array = rng.random((9, 9, 9)) < 0.5
        for lesion in connected_components(mask_of(array)):
            members = {tuple(p) for p in lesion.voxels}
            surface = {tuple(p) for p in extract_surface(lesion)}
            self.assertTrue(surface <= members)
            for voxel in members:
                exposed = any(
                    (voxel[0] + d[0], voxel[1] + d[1], voxel[2] + d[2]) not in members
                    for d in [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
                )
                self.assertEqual(voxel in surface, exposed)
