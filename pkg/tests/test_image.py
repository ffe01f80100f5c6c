import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from amdreg.image import (AlphaLevels, FuzzyImage, add_gaussian_noise, alpha_cut, build_pyramid,
                          complement, gaussian_kernel, hann_window_weights, normalize_percentile,
                          percentile_nearest_rank, quantize_membership)

unit_floats = st.floats(0.0, 1.0, allow_nan=False)
images_2d = hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, min_side=2, max_side=9),
                       elements=unit_floats)


def test_fuzzy_image_rejects_bad_spacing():
    with pytest.raises(ValueError):
        FuzzyImage(np.zeros((3, 3)), (1.0, 0.0))
    with pytest.raises(ValueError):
        FuzzyImage(np.zeros(4))


def test_alpha_levels_equally_spaced():
    assert AlphaLevels.equally_spaced(4).values == (0.25, 0.5, 0.75, 1.0)
    with pytest.raises(ValueError):
        AlphaLevels((0.5, 0.5))


def test_constant_image_normalizes_to_zeros_with_flag():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = normalize_percentile(FuzzyImage(np.full((4, 4), 0.7)), 0.05)
    assert out.degenerate
    assert not out.image.values.any()


def test_ramp_identity_at_rho_zero():
    v = np.linspace(0.0, 1.0, 16).reshape(4, 4)
    out = normalize_percentile(FuzzyImage(v), 0.0)
    assert np.array_equal(out.image.values, v)


def test_ramp_percentile_matches_sorting_oracle():
    v = np.arange(100) / 100.0
    out = normalize_percentile(FuzzyImage(v.reshape(10, 10)), 0.05)
    s = np.sort(v)
    p_lo, p_hi = s[int(np.ceil(0.05 * 100)) - 1], s[int(np.ceil(0.95 * 100)) - 1]
    assert out.image.values.ravel()[50] == pytest.approx((0.5 - p_lo) / (p_hi - p_lo), abs=1e-15)


def test_percentile_nearest_rank():
    assert percentile_nearest_rank(np.array([3.0, 1.0, 2.0, 4.0]), 0.5) == 2.0
    assert percentile_nearest_rank(np.array([3.0, 1.0, 2.0, 4.0]), 0.0) == 1.0


@given(images_2d, st.floats(0.0, 0.45))
def test_normalized_values_in_unit_interval(values, rho):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = normalize_percentile(FuzzyImage(values), rho).image.values
    assert out.min() >= 0.0 and out.max() <= 1.0


@pytest.mark.parametrize("mu, expected", [(0.5, 4), (0.0, 0), (1.0, 7)])
def test_quantize_examples(mu, expected):
    assert quantize_membership(mu, 7) == expected


@given(unit_floats, st.integers(1, 50))
def test_quantize_in_range(mu, levels):
    q = quantize_membership(mu, levels)
    assert 0 <= q <= levels
    assert abs(q - levels * mu) <= 0.5


def test_alpha_cut_examples():
    assert alpha_cut(np.ones((3, 3)), 1.0).all()
    assert not alpha_cut(np.zeros((3, 3)), 0.1).any()
    v = np.linspace(0.0, 1.0, 10).reshape(2, 5)
    assert np.array_equal(alpha_cut(v, 0.5), v >= 0.5)


@given(images_2d)
def test_complement_involution(values):
    img = FuzzyImage(values)
    assert np.array_equal(complement(complement(img)).values, 1.0 - (1.0 - values))
    assert np.array_equal(complement(FuzzyImage(np.zeros((2, 2)))).values, np.ones((2, 2)))


def test_hann_window_examples():
    w = hann_window_weights((21, 21), (10.0, 10.0), 10.0)
    assert w[10, 10] == 1.0
    assert w[10, 20] == 0.0
    assert w[10, 15] == pytest.approx(0.5, abs=1e-15)


def test_pyramid_shapes_and_identity():
    img = FuzzyImage(np.random.default_rng(0).random((8, 8)))
    levels = build_pyramid(img, np.ones((8, 8), bool), np.ones((8, 8)), (2, 1), (0.0, 0.0))
    assert levels[0].image.dims == (4, 4)
    assert levels[0].image.spacing == (2.0, 2.0)
    assert np.array_equal(levels[1].image.values, img.values)


def test_pyramid_factor_too_large():
    img = FuzzyImage(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        build_pyramid(img, np.ones((4, 4), bool), np.ones((4, 4)), (8,), (0.0,))


def test_smoothing_impulse_matches_kernel():
    v = np.zeros((9, 9))
    v[4, 4] = 1.0
    img = FuzzyImage(v)
    out = build_pyramid(img, np.ones((9, 9), bool), np.ones((9, 9)), (1,), (1.0,))[0].image.values
    k = gaussian_kernel(1.0)
    r = k.size // 2
    assert out[4, 4] == pytest.approx(k[r] * k[r], abs=1e-15)
    assert out[4, 5] == pytest.approx(k[r] * k[r + 1], abs=1e-15)
    assert k.size == 7 and k.sum() == pytest.approx(1.0)


def test_noise_zero_sigma_and_determinism():
    img = FuzzyImage(np.full((6, 6), 0.5))
    assert np.array_equal(add_gaussian_noise(img, 0.0, 1).values, img.values)
    a = add_gaussian_noise(img, 0.1, 42).values
    b = add_gaussian_noise(img, 0.1, 42).values
    assert np.array_equal(a, b)


def test_noise_mean_unbiased_before_clamp():
    img = FuzzyImage(np.zeros((1000, 1000)))
    shift = add_gaussian_noise(img, 0.1, 7, clamp=False).values.mean()
    assert abs(shift) < 1e-3
