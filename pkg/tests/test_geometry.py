import numpy as np
import pytest

from lymphodetect.raster import (
    connected_components,
    disk_dilate,
    read_image,
    read_mask,
    region_moments,
    write_image,
    write_mask,
)

from oracles import dilate_oracle, flood_fill_components, moments_oracle


def random_mask(rng, max_side=32, density=0.3):
    h = int(rng.integers(1, max_side + 1))
    w = int(rng.integers(1, max_side + 1))
    return rng.random((h, w)) < density


class TestDiskDilate:
    def test_zero_radius_is_identity(self):
        mask = disk_dilate([(100, 100)], 0, 200, 200)
        assert mask[100, 100]
        assert mask.sum() == 1

    def test_inclusive_distance(self):
        mask = disk_dilate([(100, 100)], 11, 200, 200)
        assert mask[100, 108]  # distance 8 <= 11
        assert not mask[100, 112]  # distance 12 > 11
        assert mask[100, 111]  # distance exactly 11, inclusive

    def test_boundary_clipping_matches_oracle(self):
        mask = disk_dilate([(0, 0)], 5, 100, 100)
        expected = dilate_oracle([(0, 0)], 5, 100, 100)
        assert np.array_equal(mask, expected)
        assert mask.sum() == expected.sum()

    def test_out_of_bounds_point_rejected(self):
        with pytest.raises(ValueError):
            disk_dilate([(200, 100)], 3, 200, 200)
        with pytest.raises(ValueError):
            disk_dilate([(-1, 0)], 3, 10, 10)

    def test_negative_radius_rejected(self):
        with pytest.raises(ValueError):
            disk_dilate([(0, 0)], -1, 10, 10)

    def test_empty_points(self):
        assert disk_dilate([], 5, 10, 10).sum() == 0

    def test_monotone_in_radius(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            points = [
                (int(rng.integers(0, 40)), int(rng.integers(0, 40))) for _ in range(4)
            ]
            r1, r2 = sorted(rng.uniform(0, 12, size=2))
            small = disk_dilate(points, r1, 40, 40)
            big = disk_dilate(points, r2, 40, 40)
            assert not (small & ~big).any()

    def test_matches_per_pixel_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            points = [
                (int(rng.integers(0, 30)), int(rng.integers(0, 30))) for _ in range(3)
            ]
            radius = float(rng.uniform(0, 9))
            got = disk_dilate(points, radius, 30, 30)
            assert np.array_equal(got, dilate_oracle(points, radius, 30, 30))


class TestConnectedComponents:
    def test_empty_mask(self):
        assert connected_components(np.zeros((5, 5), dtype=bool)) == []

    def test_adjacent_pixels_merge(self):
        mask = np.zeros((3, 3), dtype=bool)
        mask[0, 0] = mask[0, 1] = True
        regions = connected_components(mask)
        assert len(regions) == 1
        assert regions[0].area == 2
        assert regions[0].centroid == (0.0, 0.5)

    def test_diagonal_pixels_merge(self):
        mask = np.zeros((3, 3), dtype=bool)
        mask[0, 0] = mask[1, 1] = True
        assert len(connected_components(mask)) == 1

    def test_distant_pixels_split(self):
        mask = np.zeros((6, 6), dtype=bool)
        mask[0, 0] = mask[5, 5] = True
        regions = connected_components(mask)
        assert len(regions) == 2
        assert all(r.area == 1 for r in regions)

    def test_partition_property(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            mask = random_mask(rng)
            regions = connected_components(mask)
            seen = np.zeros_like(mask, dtype=int)
            for region in regions:
                seen[region.pixels[:, 0], region.pixels[:, 1]] += 1
            assert (seen <= 1).all()  # pairwise disjoint
            assert np.array_equal(seen > 0, mask)  # union covers the mask

    def test_matches_flood_fill_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            mask = random_mask(rng)
            got = {
                frozenset(map(tuple, region.pixels))
                for region in connected_components(mask)
            }
            expected = {frozenset(comp) for comp in flood_fill_components(mask)}
            assert got == expected


class TestRegionMoments:
    def test_single_pixel(self):
        centroid, ecc = region_moments(np.array([[4, 7]]))
        assert centroid == (4.0, 7.0)
        assert ecc == 0.0

    def test_filled_disk_is_round(self):
        mask = disk_dilate([(30, 30)], 10, 61, 61)
        _, ecc = region_moments(np.argwhere(mask))
        assert ecc < 0.1

    def test_line_is_elongated(self):
        pixels = np.array([[0, c] for c in range(9)])
        _, ecc = region_moments(pixels)
        assert ecc > 0.8

    def test_empty_region_rejected(self):
        with pytest.raises(ValueError):
            region_moments(np.empty((0, 2)))

    def test_translation_and_rotation_invariance(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            pixels = np.unique(rng.integers(0, 15, size=(12, 2)), axis=0)
            _, ecc = region_moments(pixels)
            _, ecc_shift = region_moments(pixels + [100, 37])
            # 90-degree rotation: (r, c) -> (c, -r); shift back to positive
            rotated = np.stack([pixels[:, 1], 20 - pixels[:, 0]], axis=1)
            _, ecc_rot = region_moments(rotated)
            assert ecc_shift == pytest.approx(ecc, abs=1e-12)
            assert ecc_rot == pytest.approx(ecc, abs=1e-9)

    def test_eccentricity_range(self):
        rng = np.random.default_rng(17)
        for _ in range(30):
            pixels = np.unique(rng.integers(0, 20, size=(8, 2)), axis=0)
            _, ecc = region_moments(pixels)
            assert 0.0 <= ecc < 1.0

    def test_matches_direct_covariance_oracle(self):
        rng = np.random.default_rng(19)
        for _ in range(30):
            mask = random_mask(rng)
            for region in connected_components(mask):
                (mr, mc), ecc = moments_oracle([tuple(p) for p in region.pixels])
                assert region.centroid[0] == pytest.approx(mr, abs=1e-9)
                assert region.centroid[1] == pytest.approx(mc, abs=1e-9)
                assert region.eccentricity == pytest.approx(ecc, abs=1e-9)


class TestPngIO:
    def test_mask_roundtrip(self, tmp_path):
        rng = np.random.default_rng(23)
        mask = rng.random((16, 20)) < 0.4
        path = tmp_path / "mask.png"
        write_mask(path, mask)
        assert np.array_equal(read_mask(path), mask)

    def test_image_roundtrip(self, tmp_path):
        rng = np.random.default_rng(29)
        image = rng.integers(0, 256, size=(10, 12, 3), dtype=np.uint8)
        path = tmp_path / "img.png"
        write_image(path, image)
        assert np.array_equal(read_image(path), image)
