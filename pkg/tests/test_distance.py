import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from amdreg.distance import (Operand, SampleSet, asymmetric_amd, flag_unstable_points,
                             full_samples, interpolate_stack, point_to_set_distance, random_samples, subsampled_amd, symmetric_amd)
from amdreg.dt import euclidean_dt
from amdreg.image import FuzzyImage, quantize_membership
from amdreg.registration import characteristic_radius
from amdreg.transforms import AffineTransform, RigidTransform


def smooth_pair(seed, dims=(12, 12)):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(2):
        v = ndimage.gaussian_filter(rng.random(dims), 1.5)
        out.append(FuzzyImage((v - v.min()) / np.ptp(v)))
    return out


def test_interpolation_examples():
    v = np.zeros((4, 4))
    v[0, 0] = 1.0
    op = Operand.build(FuzzyImage(v), levels=1, bidirectional=False, dmax=100.0)
    st_ = op.stack
    for mode in ("nearest", "linear"):
        d, _ = interpolate_stack(st_, 1, [2.0, 0.0], mode)
        assert d == st_.D[1][2, 0]
    d, _ = interpolate_stack(st_, 1, [0.0, 1.0], "linear")
    assert d == pytest.approx(0.5 * (st_.D[1][0, 0] + st_.D[1][0, 2]))
    with pytest.raises(ValueError):
        interpolate_stack(st_, 1, [5.0, 0.0])


def test_interpolation_linear_in_levels():
    A, _ = smooth_pair(0)
    st_ = Operand.build(A).stack
    y = np.array([3.3, 7.6])
    d3, g3 = interpolate_stack(st_, 3, y)
    d2, g2 = interpolate_stack(st_, 2, y)
    lo = np.floor(y).astype(int)
    f = y - lo
    layer = st_.D[3] - st_.D[2]
    expect = ((1 - f[0]) * (1 - f[1]) * layer[lo[0], lo[1]] + f[0] * (1 - f[1]) * layer[lo[0] + 1, lo[1]]
              + (1 - f[0]) * f[1] * layer[lo[0], lo[1] + 1] + f[0] * f[1] * layer[lo[0] + 1, lo[1] + 1])
    assert d3 - d2 == pytest.approx(expect, abs=1e-12)


def test_point_outside_target():
    A, B = smooth_pair(1)
    b = Operand.build(B)
    T = AffineTransform(np.eye(2), [100.0, 0.0], [0.0, 0.0])
    r = point_to_set_distance(0.5, 1.0, [1.0, 1.0], T, b)
    assert r.d == 0.0 and r.w == 0.0 and not r.grad.any()


def test_zero_membership_unidirectional():
    _, B = smooth_pair(2)
    b = Operand.build(B, bidirectional=False)
    r = point_to_set_distance(0.0, 1.0, [3.0, 3.0], RigidTransform.identity(2), b)
    assert r.d == 0.0


def test_perfect_overlap_fixed_point():
    v = np.zeros((10, 10))
    v[2:8, 2:8] = 1.0
    a = Operand.build(FuzzyImage(v))
    r = point_to_set_distance(1.0, 1.0, [4.0, 4.0], RigidTransform.identity(2), a)
    assert r.d == 0.0 and not r.grad.any()


def test_subset_has_zero_distance():
    v = np.zeros((10, 10))
    v[3:6, 3:6] = 1.0
    w = np.zeros((10, 10))
    w[2:8, 2:8] = 1.0
    a = Operand.build(FuzzyImage(v), bidirectional=False)
    b = Operand.build(FuzzyImage(w), bidirectional=False)
    assert asymmetric_amd(a, b, RigidTransform.identity(2)).d == 0.0


def test_duplicated_samples_same_value():
    A, B = smooth_pair(3)
    a, b = Operand.build(A), Operand.build(B)
    T = RigidTransform([0.1], [0.5, -0.3], A.center)
    once = asymmetric_amd(a, b, T, SampleSet(a.candidates))
    twice = asymmetric_amd(a, b, T, SampleSet(np.repeat(a.candidates, 2)))
    assert twice.d == pytest.approx(once.d, rel=1e-14)


def test_asymmetric_matches_term_by_term_oracle():
    A, B = smooth_pair(4, (6, 6))
    ell = 7
    a = Operand.build(A, levels=ell, bidirectional=False, dmax=50.0)
    b = Operand.build(B, levels=ell, bidirectional=False, dmax=50.0)
    T = RigidTransform.identity(2)
    # per point: sum over alpha levels up to the quantized membership of the
    # saturated distance to that alpha-cut of B, weighted by the level step
    total = 0.0
    for x in np.ndindex(6, 6):
        h = quantize_membership(A.values[x], ell)
        for j in range(1, h + 1):
            cut = B.values >= j / ell
            dt = euclidean_dt(cut, (1.0, 1.0), 50.0)
            total += dt[x] / ell
    assert asymmetric_amd(a, b, T).d == pytest.approx(total / 36, rel=1e-12)


def test_identity_self_distance_zero_for_binary():
    v = np.zeros((10, 10))
    v[2:7, 3:8] = 1.0
    a = Operand.build(FuzzyImage(v))
    assert symmetric_amd(a, a, RigidTransform.identity(2, [4.5, 4.5])).d == 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(-0.2, 0.2), st.floats(-2, 2), st.floats(-2, 2))
def test_symmetry_property(seed, angle, tx, ty):
    A, B = smooth_pair(seed)
    a, b = Operand.build(A), Operand.build(B)
    T = RigidTransform([angle], [tx, ty], A.center)
    d1 = symmetric_amd(a, b, T).d
    d2 = symmetric_amd(b, a, T.invert()).d
    assert d1 == pytest.approx(d2, rel=1e-12)


def test_non_overlap_reports_saturation():
    A, B = smooth_pair(5)
    a, b = Operand.build(A), Operand.build(B)
    far = AffineTransform(np.eye(2), [500.0, 0.0], A.center)
    r = symmetric_amd(a, b, far)
    assert not r.overlap and not r.grad.any()


def test_full_fraction_matches_full_samples():
    A, B = smooth_pair(6)
    a, b = Operand.build(A), Operand.build(B)
    T = RigidTransform([0.05], [0.2, 0.1], A.center)
    assert subsampled_amd(a, b, T, 1.0, 0).d == symmetric_amd(a, b, T).d


def test_subsampled_reproducible_and_unbiased():
    A, B = smooth_pair(7, (24, 24))
    a, b = Operand.build(A), Operand.build(B)
    T = RigidTransform([0.05], [0.7, -0.4], A.center)
    assert subsampled_amd(a, b, T, 0.1, 3).d == subsampled_amd(a, b, T, 0.1, 3).d
    rng = np.random.default_rng(0)
    mean = np.mean([subsampled_amd(a, b, T, 0.1, rng).d for _ in range(200)])
    assert mean == pytest.approx(symmetric_amd(a, b, T).d, rel=0.05)


def test_random_samples_size():
    A, _ = smooth_pair(8)
    a = Operand.build(A)
    s = random_samples(a, 0.1, np.random.default_rng(0))
    assert len(s) == 14 and len(set(s.indices)) == 14
    assert len(full_samples(a)) == 144
    with pytest.raises(ValueError):
        random_samples(a, 0.0, np.random.default_rng(0))


def test_gradient_matches_finite_differences_on_stable_points():
    # large radii keep the distance maps' curvature below the bend threshold
    pts = np.indices((96, 96)).reshape(2, -1).T
    A = FuzzyImage((np.sum(((pts - [48.0, 46.0]) / [34.0, 28.0]) ** 2, 1) <= 1).reshape(96, 96) * 1.0)
    B = FuzzyImage((np.sum(((pts - [47.0, 49.0]) / [30.0, 36.0]) ** 2, 1) <= 1).reshape(96, 96) * 1.0)
    a, b = Operand.build(A), Operand.build(B)
    T = RigidTransform([0.05], [2.7, -3.1], A.center)
    sa = SampleSet(a.candidates[~flag_unstable_points(a, b, T)])
    sb = SampleSet(b.candidates[~flag_unstable_points(b, a, T.invert())])
    r = symmetric_amd(a, b, T, sa, sb)
    p = T.params
    fd = np.zeros(p.size)
    for i in range(p.size):
        e = np.zeros(p.size)
        e[i] = 1e-4
        fd[i] = (symmetric_amd(a, b, T.with_params(p + e), sa, sb).d
                 - symmetric_amd(a, b, T.with_params(p - e), sa, sb).d) / 2e-4
    # compare in displacement units: the angle derivative divided by the grid's RMS radius
    scale = np.array([1.0 / characteristic_radius(A, T.center), 1.0, 1.0])
    g, f = r.grad * scale, fd * scale
    assert np.linalg.norm(f) > 0
    assert np.linalg.norm(g - f) <= 2e-3 * np.linalg.norm(f)


def test_flags_cover_points_outside_target():
    A, B = smooth_pair(10)
    a, b = Operand.build(A), Operand.build(B)
    far = AffineTransform(np.eye(2), [50.0, 0.0], A.center)
    assert flag_unstable_points(a, b, far).all()
