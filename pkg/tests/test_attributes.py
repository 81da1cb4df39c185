import math

import numpy as np
import pytest
import torch

from gridtouch.attributes import (
    AS_PRINTED_CONSTANTS,
    BRIGHTNESS_COEFFS,
    HERNANDEZ_CONSTANTS,
    ScoreDomainError,
    ScoreOptions,
    brightness,
    brightness_t,
    cct,
    cct_t,
    colorfulness,
    colorfulness_t,
    contrast,
    contrast_t,
    score_gradient,
    score_vector,
    scores_t,
)
from gridtouch.imagecore import Image, channel_mean, channel_std

LINEAR_OPTS = ScoreOptions(linearize="none")


def rand_image(seed, h=16, w=16, lo=0.05, hi=0.95):
    rng = np.random.default_rng(seed)
    return Image.from_array(lo + (hi - lo) * rng.random((h, w, 3)))


class TestColorfulness:
    def test_gray_is_zero(self):
        img = Image.from_array(np.full((5, 7, 3), 0.42))
        assert colorfulness(img) == 0.0

    def test_red_green_halves(self):
        a = np.zeros((2, 2, 3))
        a[0, :, 0] = 1.0  # pure red row
        a[1, :, 1] = 1.0  # pure green row
        img = Image.from_array(a)
        assert colorfulness(img) == pytest.approx(1.15, abs=1e-12)

    def test_matches_per_pixel_oracle(self):
        img = rand_image(5)
        r, g, b = img.arr[:, :, 0], img.arr[:, :, 1], img.arr[:, :, 2]
        hh = r - g
        uu = 0.5 * (r + g) - b
        expect = math.sqrt(channel_std(hh) ** 2 + channel_std(uu) ** 2) + 0.3 * math.sqrt(
            channel_mean(hh) ** 2 + channel_mean(uu) ** 2
        )
        assert colorfulness(img) == pytest.approx(expect, abs=1e-9)

    def test_permutation_invariant(self):
        img = rand_image(6, 8, 8)
        rng = np.random.default_rng(0)
        flat = img.arr.reshape(-1, 3)
        perm = Image.from_array(flat[rng.permutation(64)].reshape(8, 8, 3))
        assert colorfulness(perm) == pytest.approx(colorfulness(img), abs=1e-12)


class TestContrast:
    def test_constant_zero(self):
        assert contrast(Image.from_array(np.full((4, 4, 3), 0.6))) == 0.0

    def test_two_pixel_strip(self):
        img = Image.from_array(np.array([[1.0, 0.0]])[:, :, None])
        assert contrast(img) == pytest.approx(2.0, abs=1e-12)

    def test_checkerboard_2x2(self):
        img = Image.from_array(np.array([[0.0, 1.0], [1.0, 0.0]])[:, :, None])
        assert contrast(img) == pytest.approx(4.0, abs=1e-12)

    def test_matches_neighbor_enumeration(self):
        img = rand_image(7, 6, 5)
        a = img.arr
        h, w = a.shape[:2]
        total = 0.0
        for y in range(h):
            for x in range(w):
                nbrs = [
                    (y + dy, x + dx)
                    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1))
                    if 0 <= y + dy < h and 0 <= x + dx < w
                ]
                s = sum(float(np.sum((a[ny, nx] - a[y, x]) ** 2)) for ny, nx in nbrs)
                total += s / len(nbrs)
        assert contrast(img) == pytest.approx(total, rel=1e-12)

    def test_zero_iff_constant_per_channel(self):
        a = np.full((3, 3, 3), 0.2)
        a[:, :, 1] = 0.9  # constant per channel but not gray
        assert contrast(Image.from_array(a)) == 0.0
        a[0, 0, 0] += 0.1
        assert contrast(Image.from_array(a)) > 0.0

    def test_luma_mode(self):
        img = rand_image(8, 5, 5)
        luma = img.arr @ np.array([0.299, 0.587, 0.114])
        expect = contrast(Image.from_array(luma[:, :, None]))
        got = contrast(img, ScoreOptions(contrast_channel="luma"))
        assert got == pytest.approx(expect, rel=1e-12)


class TestCct:
    def test_d65_white_with_corrected_constants(self):
        img = Image.from_array(np.ones((2, 2, 3)))
        assert cct(img) == pytest.approx(6504.0, abs=50.0)

    def test_as_printed_blows_up(self):
        img = Image.from_array(np.ones((2, 2, 3)))
        val = cct(img, ScoreOptions(cct=AS_PRINTED_CONSTANTS))
        assert val >= 70000.0

    def test_epicenter_collapses_exponentials(self):
        # chromaticity x == x_e makes n == 0, so CCT == a0+a1+a2+a3
        k = HERNANDEZ_CONSTANTS
        # find rgb (linearize none) whose mean chromaticity x == 0.3366:
        # use a scaled white plus red tweak solved numerically
        from gridtouch.imagecore import SRGB_TO_XYZ_MATRIX, mean_chromaticity, srgb_to_xyz

        target_x = k.x_e

        def chroma_x(r):
            rgb = np.array([[[r, 0.5, 0.35]]])
            xyz = srgb_to_xyz(Image.from_array(rgb), linearize="none")
            return mean_chromaticity(xyz)[0]

        lo, hi = 0.0, 1.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if chroma_x(mid) < target_x:
                lo = mid
            else:
                hi = mid
        img = Image.from_array(np.array([[[0.5 * (lo + hi), 0.5, 0.35]]]))
        got = cct(img, LINEAR_OPTS)
        assert got == pytest.approx(k.a0 + k.a1 + k.a2 + k.a3, abs=0.5)
        assert k.a0 + k.a1 + k.a2 + k.a3 == pytest.approx(5332.65, abs=0.01)

    def test_all_black_is_domain_error(self):
        with pytest.raises(ScoreDomainError):
            cct(Image.from_array(np.zeros((2, 2, 3))))


class TestBrightness:
    def test_black(self):
        assert brightness(Image.from_array(np.zeros((3, 3, 3)))) == 0.0

    def test_coefficients_sum_to_one(self):
        assert sum(BRIGHTNESS_COEFFS) == pytest.approx(1.0, abs=1e-15)

    def test_uniform_gray_identity(self):
        for v in (0.1, 0.5, 0.93):
            img = Image.from_array(np.full((2, 2, 3), v))
            assert brightness(img) == pytest.approx(v, abs=1e-12)

    def test_pure_red(self):
        a = np.zeros((2, 2, 3))
        a[:, :, 0] = 1.0
        assert brightness(Image.from_array(a)) == pytest.approx(math.sqrt(0.241), abs=1e-12)


class TestScoreVector:
    def test_gray_composition(self):
        img = Image.from_array(np.full((4, 4, 3), 0.3))
        s = score_vector(img)
        assert s.s1_colorfulness == 0.0
        assert s.s2_contrast == 0.0
        assert s.s3_cct == pytest.approx(cct(img), abs=0.0)
        assert s.s4_brightness == pytest.approx(0.3, abs=1e-12)

    def test_matches_individual_ops(self):
        img = rand_image(9)
        s = score_vector(img)
        assert s.s1_colorfulness == colorfulness(img)
        assert s.s2_contrast == contrast(img)
        assert s.s3_cct == cct(img)
        assert s.s4_brightness == brightness(img)


class TestScaleEquivariance:
    def test_linear_domain_scaling(self):
        img = rand_image(10, 8, 8, lo=0.1, hi=0.5)
        k = 1.7
        scaled = Image.from_array(k * img.arr)
        assert colorfulness(scaled) == pytest.approx(k * colorfulness(img), rel=1e-9)
        assert brightness(scaled) == pytest.approx(k * brightness(img), rel=1e-9)
        assert contrast(scaled) == pytest.approx(k * k * contrast(img), rel=1e-9)
        assert cct(scaled, LINEAR_OPTS) == pytest.approx(cct(img, LINEAR_OPTS), rel=1e-9)


class TestTorchForms:
    def test_match_plain_forms(self):
        img = rand_image(12)
        t = torch.tensor(img.arr, dtype=torch.float64)
        assert float(colorfulness_t(t)) == pytest.approx(colorfulness(img), abs=1e-12)
        assert float(contrast_t(t)) == pytest.approx(contrast(img), abs=1e-12)
        assert float(cct_t(t)) == pytest.approx(cct(img), abs=1e-9)
        assert float(brightness_t(t)) == pytest.approx(brightness(img), abs=1e-12)
        s = scores_t(t)
        assert s.shape == (4,)


class TestScoreGradient:
    def test_brightness_gradient_uniform_gray(self):
        v = 0.4
        img = Image.from_array(np.full((3, 3, 3), v))
        g = score_gradient(img, 4)
        n = 9
        s4 = brightness(img)
        for ch, coef in enumerate(BRIGHTNESS_COEFFS):
            expect = coef * v / (n * s4)
            assert g[:, :, ch] == pytest.approx(expect, rel=1e-12)

    def test_contrast_gradient_constant_zero(self):
        img = Image.from_array(np.full((4, 4, 3), 0.5))
        assert np.array_equal(score_gradient(img, 2), np.zeros((4, 4, 3)))

    @pytest.mark.parametrize("attribute", [1, 2, 3, 4])
    def test_matches_finite_differences(self, attribute):
        img = rand_image(20 + attribute, 6, 6)
        fns = {1: colorfulness, 2: contrast, 3: cct, 4: brightness}
        fn = fns[attribute]
        analytic = score_gradient(img, attribute)
        h = 1e-5
        rng = np.random.default_rng(1)
        # probe a sample of positions plus extremes of the analytic gradient
        idx = list(zip(*np.unravel_index(rng.choice(6 * 6 * 3, 18, replace=False), (6, 6, 3))))
        idx.append(np.unravel_index(np.argmax(np.abs(analytic)), analytic.shape))
        for y, x, ch in idx:
            a = img.arr.copy()
            a[y, x, ch] += h
            up = fn(Image(np.clip(a, 0, 1)))  # values stay interior; clip no-op
            a[y, x, ch] -= 2 * h
            dn = fn(Image(np.clip(a, 0, 1)))
            fd = (up - dn) / (2 * h)
            got = analytic[y, x, ch]
            assert abs(got - fd) <= 1e-4 * max(abs(got), abs(fd), 1e-8)
