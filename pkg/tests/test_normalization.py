"""Rubber-sheet geometry, mask propagation and mask zeroing."""

import math

import numpy as np
import pytest

from mbsif.imaging import BitMask, Circle, GrayImage, bilinear_sample
from mbsif.normalization import IrisAnnotation, NormalizedIris, apply_mask_zero, rubber_sheet


def radial_image(size: int, center: float, profile) -> GrayImage:
    yy, xx = np.mgrid[0:size, 0:size]
    dist = np.sqrt((xx - center) ** 2 + (yy - center) ** 2)
    return GrayImage(np.clip(np.rint(profile(dist)), 0, 255).astype(np.uint8))


def concentric_annotation(size: int, center: float, r_pupil: float, r_iris: float,
                          occlusion=None) -> IrisAnnotation:
    occ = occlusion if occlusion is not None else np.zeros((size, size), bool)
    return IrisAnnotation(pupil=Circle(center, center, r_pupil),
                          iris=Circle(center, center, r_iris),
                          occlusion=BitMask(occ))


class TestAnnotationInvariants:
    def test_pupil_must_be_smaller(self):
        with pytest.raises(ValueError, match="smaller"):
            concentric_annotation(64, 32.0, 20, 10)

    def test_pupil_center_inside_iris(self):
        occ = BitMask(np.zeros((64, 64), bool))
        with pytest.raises(ValueError, match="inside"):
            IrisAnnotation(pupil=Circle(5.0, 5.0, 2.0), iris=Circle(40.0, 40.0, 10.0),
                           occlusion=occ)


class TestRubberSheetGeometry:
    def test_output_dims_fixed(self):
        img = radial_image(301, 150.0, lambda d: d)
        ann = concentric_annotation(301, 150.0, 30, 120)
        for nr, na in [(20, 240), (8, 32), (1, 5), (20, 240)]:
            n = rubber_sheet(img, ann, nr, na)
            assert (n.strip.height, n.strip.width) == (nr, na)
            assert (n.mask.height, n.mask.width) == (nr, na)

    def test_radial_gradient_columns(self):
        """Distance-from-center image: every column is the radii sequence.

        Expected values come straight from the geometry: row i samples
        radius r_p + i/(R-1) * (r_iris - r_p); quantization plus bilinear
        interpolation stay within 0.5 of that.
        """
        img = radial_image(301, 150.0, lambda d: d)
        ann = concentric_annotation(301, 150.0, 30, 120)
        n = rubber_sheet(img, ann, 20, 240)
        expected = 30 + np.arange(20) / 19 * (120 - 30)
        assert np.abs(n.strip.pixels - expected[:, None]).max() <= 0.5
        assert (np.diff(n.strip.pixels, axis=0) > 0).all()

    def test_radially_symmetric_columns_identical(self):
        img = radial_image(301, 150.0, lambda d: 128 + 60 * np.cos(d / 12.0))
        ann = concentric_annotation(301, 150.0, 30, 120)
        s = rubber_sheet(img, ann, 20, 240).strip.pixels
        ref = s.mean(axis=1)
        assert np.abs(s - ref[:, None]).max() <= 0.5

    def test_angular_periodicity(self):
        """Column 0 equals an independent sampling of the same rays at
        theta = 2*pi (angle difference ~1e-16, well under 1e-9)."""
        rng = np.random.default_rng(5)
        img = GrayImage(rng.integers(0, 256, (301, 301)).astype(np.uint8))
        ann = concentric_annotation(301, 150.0, 30, 120)
        n = rubber_sheet(img, ann, 20, 240)
        theta = 2.0 * math.pi
        dx, dy = math.cos(theta), math.sin(theta)
        for i in range(20):
            t = 30 + i / 19 * (120 - 30)
            v = bilinear_sample(img, 150.0 + t * dx, 150.0 + t * dy)
            assert n.strip.pixels[i, 0] == pytest.approx(v, abs=1e-5)

    def test_noncentric_circles_sample_between_boundaries(self):
        """With offset circles, row 0 hits the pupil boundary and the last
        row the iris boundary along every ray."""
        img = radial_image(301, 150.0, lambda d: d)  # distance from (150,150)
        occ = np.zeros((301, 301), bool)
        ann = IrisAnnotation(pupil=Circle(150.0, 150.0, 25.0),
                             iris=Circle(160.0, 145.0, 110.0),
                             occlusion=BitMask(occ))
        n = rubber_sheet(img, ann, 12, 90)
        # row 0: distance from the pupil center is the pupil radius
        assert np.abs(n.strip.pixels[0] - 25.0).max() <= 0.5
        # last row: points lie on the iris circle -> distance from its center
        for j in range(0, 90, 7):
            theta = 2.0 * math.pi * j / 90
            # reproduce the documented ray-exit construction independently
            ex, ey = 150.0 - 160.0, 150.0 - 145.0
            b = ex * math.cos(theta) + ey * math.sin(theta)
            c = ex * ex + ey * ey - 110.0 ** 2
            t = -b + math.sqrt(b * b - c)
            x = 150.0 + t * math.cos(theta)
            y = 150.0 + t * math.sin(theta)
            assert math.hypot(x - 160.0, y - 145.0) == pytest.approx(110.0, abs=1e-9)
            assert n.strip.pixels[-1, j] == pytest.approx(
                bilinear_sample(img, min(max(x, 0), 300), min(max(y, 0), 300)), abs=1e-9)


class TestMaskPropagation:
    def test_half_plane_occlusion(self):
        """Occlusion covering the top half (y < cy) lands exactly on the
        strip cells whose nearest source row is above the center."""
        size, c = 301, 150.0
        occ = np.zeros((size, size), bool)
        occ[:150, :] = True  # rows 0..149, i.e. y < 150
        img = radial_image(size, c, lambda d: d)
        ann = concentric_annotation(size, c, 30, 120, occlusion=occ)
        n = rubber_sheet(img, ann, 20, 240)
        expected = np.zeros((20, 240), bool)
        for j in range(240):
            theta = 2.0 * math.pi * j / 240
            for i in range(20):
                t = 30 + i / 19 * (120 - 30)
                y = c + t * math.sin(theta)
                expected[i, j] = round(y) < 150
        assert np.array_equal(n.mask.bits, expected)

    def test_out_of_bounds_marked_occluded(self):
        """Iris circle sticking out of the image flags those samples."""
        img = GrayImage(np.full((120, 120), 100, dtype=np.uint8))
        occ = np.zeros((120, 120), bool)
        ann = IrisAnnotation(pupil=Circle(90.0, 60.0, 10.0),
                             iris=Circle(90.0, 60.0, 50.0),
                             occlusion=BitMask(occ))
        n = rubber_sheet(img, ann, 10, 60)
        # theta = 0 points right: outer radii exceed x = 119
        assert n.mask.bits[-1, 0]
        # theta = pi points left: x = 90 - 50 = 40, inside
        assert not n.mask.bits[-1, 30]
        # strip values remain in range (clamped sampling)
        assert n.strip.pixels.min() >= 0 and n.strip.pixels.max() <= 255


class TestApplyMaskZero:
    def _norm(self, strip, mask):
        from mbsif.imaging import FloatImage
        return NormalizedIris(strip=FloatImage(strip), mask=BitMask(mask))

    def test_all_true_mask_zeroes_everything(self):
        n = self._norm(np.full((4, 6), 9.0), np.ones((4, 6), bool))
        assert (apply_mask_zero(n).strip.pixels == 0).all()

    def test_all_false_mask_is_identity(self):
        strip = np.arange(24, dtype=float).reshape(4, 6)
        n = self._norm(strip, np.zeros((4, 6), bool))
        assert np.array_equal(apply_mask_zero(n).strip.pixels, strip)

    def test_single_pixel(self):
        strip = np.full((4, 6), 7.0)
        mask = np.zeros((4, 6), bool)
        mask[2, 3] = True
        out = apply_mask_zero(self._norm(strip, mask))
        assert out.strip.pixels[2, 3] == 0
        assert (out.strip.pixels.sum()) == 7.0 * 23

    def test_idempotent_and_mask_unchanged(self):
        rng = np.random.default_rng(2)
        strip = rng.uniform(0, 255, (5, 9))
        mask = rng.random((5, 9)) < 0.3
        n = self._norm(strip, mask)
        once = apply_mask_zero(n)
        twice = apply_mask_zero(once)
        assert np.array_equal(once.strip.pixels, twice.strip.pixels)
        assert np.array_equal(once.mask.bits, mask)

    def test_dims_mismatch_rejected(self):
        from mbsif.imaging import FloatImage
        with pytest.raises(ValueError):
            NormalizedIris(strip=FloatImage(np.zeros((4, 6))),
                           mask=BitMask(np.zeros((4, 5), bool)))

    def test_strip_range_enforced(self):
        from mbsif.imaging import FloatImage
        with pytest.raises(ValueError):
            NormalizedIris(strip=FloatImage(np.full((2, 2), 300.0)),
                           mask=BitMask(np.zeros((2, 2), bool)))
