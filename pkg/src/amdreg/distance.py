"""Average minimal distances between fuzzy images and their parameter gradients.

Every source voxel is treated as a fuzzy point: it is mapped through the
transform, tested against the target mask, and its quantized membership picks
the level of the target's pre-computed distance/gradient stack that is then
interpolated at the mapped position. Sums over points are reduced to a
distance total, a weight total and the two moments ``sum w g (x-c)^T`` and
``sum w g`` from which any transform's parameter gradient follows.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numba
import numpy as np
from scipy import ndimage

from .dt import (DistanceGradientStack, build_alpha_dt, build_alpha_dt_bidirectional,
                 default_dmax, nearest_feature)
from .image import AlphaLevels, FuzzyImage, check_weights, quantize_membership
from .transforms import AffineTransform, Transform, inverse_param_jacobian

NEAREST = 0
LINEAR = 1
_MODES = {"nearest": NEAREST, "linear": LINEAR}


def _mode(mode) -> int:
    if isinstance(mode, str):
        try:
            return _MODES[mode]
        except KeyError:
            raise ValueError(f"unknown interpolation mode {mode!r}") from None
    return int(mode)


@numba.njit(cache=True)
def _inside(y, dims, spacing, mask_flat, strides):
    """Bounding-box test plus the mask bit of the nearest voxel."""
    flat = 0
    for k in range(y.shape[0]):
        hi = (dims[k] - 1) * spacing[k]
        if not (y[k] >= 0.0 and y[k] <= hi):
            return False
        i = int(np.floor(y[k] / spacing[k] + 0.5))
        if i > dims[k] - 1:
            i = dims[k] - 1
        flat += i * strides[k]
    return mask_flat[flat]


@numba.njit(cache=True)
def _lookup(table, h, y, dims, strides, spacing, mode, out):
    """Interpolate row ``h`` of a flat (levels+1, N, 1+n) table at ``y`` into ``out``."""
    n = y.shape[0]
    ncomp = table.shape[2]
    for c in range(ncomp):
        out[c] = 0.0
    if mode == 0:
        flat = 0
        for k in range(n):
            i = int(np.floor(y[k] / spacing[k] + 0.5))
            if i > dims[k] - 1:
                i = dims[k] - 1
            if i < 0:
                i = 0
            flat += i * strides[k]
        for c in range(ncomp):
            out[c] = table[h, flat, c]
        return
    base = np.empty(n, dtype=np.int64)
    frac = np.empty(n)
    for k in range(n):
        u = y[k] / spacing[k]
        i0 = int(np.floor(u))
        top = dims[k] - 2
        if top < 0:
            top = 0
        if i0 > top:
            i0 = top
        if i0 < 0:
            i0 = 0
        f = u - i0
        if dims[k] == 1:
            f = 0.0
        base[k] = i0
        frac[k] = f
    for corner in range(1 << n):
        wgt = 1.0
        flat = 0
        for k in range(n):
            if (corner >> k) & 1:
                wgt *= frac[k]
                flat += (base[k] + 1) * strides[k]
            else:
                wgt *= 1.0 - frac[k]
                flat += base[k] * strides[k]
        if wgt == 0.0:
            continue
        for c in range(ncomp):
            out[c] += wgt * table[h, flat, c]


@numba.njit(cache=True)
def _directional_sums(indices, points, levels, weights, matrix, offset, center,
                      table, mask_flat, dims, strides, spacing, mode, moment, gsum):
    """Accumulate one direction of the distance; returns (distance sum, weight sum).

    ``moment`` (n x n) and ``gsum`` (n) are zeroed and filled in place.
    """
    n = points.shape[1]
    y = np.empty(n)
    val = np.empty(1 + n)
    for a in range(n):
        gsum[a] = 0.0
        for b in range(n):
            moment[a, b] = 0.0
    dsum = 0.0
    wsum = 0.0
    for s in range(indices.shape[0]):
        p = indices[s]
        for a in range(n):
            acc = offset[a]
            for b in range(n):
                acc += matrix[a, b] * points[p, b]
            y[a] = acc
        if not _inside(y, dims, spacing, mask_flat, strides):
            continue
        w = weights[p]
        _lookup(table, levels[p], y, dims, strides, spacing, mode, val)
        dsum += w * val[0]
        wsum += w
        for a in range(n):
            wg = w * val[1 + a]
            gsum[a] += wg
            for b in range(n):
                moment[a, b] += wg * (points[p, b] - center[b])
    return dsum, wsum


# -- operands ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Operand:
    """One image prepared for distance evaluation in either role.

    As a source it supplies points, quantized levels and weights; as a target
    it supplies its stack and mask.
    """

    image: FuzzyImage
    mask: np.ndarray
    weights: np.ndarray
    stack: DistanceGradientStack
    points: np.ndarray = field(repr=False)
    quantized: np.ndarray = field(repr=False)
    candidates: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, image: FuzzyImage, mask=None, weights=None, levels: int | AlphaLevels = 7,
              dmax: float | None = None, bidirectional: bool = True) -> "Operand":
        if isinstance(levels, int):
            levels = AlphaLevels.equally_spaced(levels)
        mask = np.ones(image.dims, bool) if mask is None else np.asarray(mask, dtype=bool)
        weights = (np.ones(image.dims) if weights is None
                   else np.asarray(weights, dtype=np.float64))
        if mask.shape != image.dims or weights.shape != image.dims:
            raise ValueError("mask and weights must match the image dims")
        check_weights(weights, mask)
        dmax = default_dmax(image) if dmax is None else float(dmax)
        builder = build_alpha_dt_bidirectional if bidirectional else build_alpha_dt
        stack = builder(image, mask, levels, dmax)
        return cls.from_stack(image, mask, weights, stack)

    @classmethod
    def from_stack(cls, image, mask, weights, stack: DistanceGradientStack) -> "Operand":
        quantized = quantize_membership(image.values.ravel(), stack.levels)
        return cls(image, np.asarray(mask, bool), np.asarray(weights, np.float64), stack,
                   image.grid_points(), np.clip(quantized, 0, stack.levels),
                   np.flatnonzero(np.asarray(mask, bool).ravel()))

    @property
    def ndim(self) -> int:
        return self.image.ndim

    @property
    def mass(self) -> float:
        """Integrated alpha mass of the stack (2 when bidirectional)."""
        return 2.0 if self.stack.bidirectional else 1.0

    @property
    def alphas(self) -> tuple[float, ...]:
        st = self.stack
        return st.alphas or AlphaLevels.equally_spaced(st.levels).values

    @property
    def saturated_distance(self) -> float:
        return self.stack.dmax * self.mass

    def target_arrays(self):
        st = self.stack
        dims = np.asarray(st.dims, dtype=np.int64)
        strides = np.ones(len(dims), dtype=np.int64)
        for k in range(len(dims) - 2, -1, -1):
            strides[k] = strides[k + 1] * dims[k + 1]
        table = st.table.reshape(st.levels + 1, -1, 1 + st.ndim)
        return table, self.mask.ravel(), dims, strides, np.asarray(st.spacing)


# -- sampling ----------------------------------------------------------------

@dataclass(frozen=True)
class SampleSet:
    indices: np.ndarray
    mode: str = "full"
    fraction: float = 1.0

    def __len__(self):
        return self.indices.size


def full_samples(operand: Operand) -> SampleSet:
    return SampleSet(operand.candidates, "full", 1.0)


def random_samples(operand: Operand, fraction: float, rng: np.random.Generator) -> SampleSet:
    """Uniform draw without replacement of max(1, floor(f*N)) in-mask voxels."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("sampling fraction must lie in (0, 1]")
    cand = operand.candidates
    if fraction == 1.0:
        return SampleSet(cand, "full", 1.0)
    k = max(1, int(np.floor(fraction * cand.size)))
    picked = rng.choice(cand.size, size=k, replace=False)
    return SampleSet(np.sort(cand[picked]), "random", fraction)


# -- point and set distances -------------------------------------------------

class PointDistanceResult(NamedTuple):
    d: float
    grad: np.ndarray
    w: float


def interpolate_stack(stack: DistanceGradientStack, level: int, point,
                      mode="linear") -> tuple[float, np.ndarray]:
    """Distance and gradient sums of one stack level at a physical point."""
    y = np.asarray(point, dtype=np.float64)
    if not 0 <= level <= stack.levels:
        raise ValueError("level out of range")
    hi = (np.asarray(stack.dims) - 1) * np.asarray(stack.spacing)
    if y.shape != (stack.ndim,) or np.any(y < 0) or np.any(y > hi):
        raise ValueError("point lies outside the stack bounds")
    op_table = stack.table.reshape(stack.levels + 1, -1, 1 + stack.ndim)
    dims = np.asarray(stack.dims, dtype=np.int64)
    strides = np.array([int(np.prod(dims[k + 1:])) for k in range(len(dims))], dtype=np.int64)
    out = np.empty(1 + stack.ndim)
    _lookup(op_table, int(level), y, dims, strides, np.asarray(stack.spacing), _mode(mode), out)
    return float(out[0]), out[1:].copy()


def point_to_set_distance(mu: float, weight: float, point, transform: Transform,
                          target: Operand, mode="linear") -> PointDistanceResult:
    """Weighted distance of one fuzzy point to the target set and its parameter gradient."""
    y = transform.apply(np.asarray(point, dtype=np.float64))
    table, mask_flat, dims, strides, spacing = target.target_arrays()
    if not _inside(y, dims, spacing, mask_flat, strides):
        return PointDistanceResult(0.0, np.zeros(transform.param_count), 0.0)
    h = quantize_membership(mu, target.stack.levels)
    d, g = interpolate_stack(target.stack, h, y, mode)
    grad = transform.param_jacobian(point) @ g
    return PointDistanceResult(weight * d, weight * grad, float(weight))


class DirectionSums(NamedTuple):
    dsum: float
    wsum: float
    moment: np.ndarray
    gsum: np.ndarray


def direction_sums(source: Operand, target: Operand, transform: Transform,
                   samples: SampleSet | None = None, mode="linear") -> DirectionSums:
    """Raw sums of point distances from ``source`` mapped by ``transform`` into ``target``."""
    if source.ndim != target.ndim or transform.ndim != source.ndim:
        raise ValueError("dimension mismatch between operands and transform")
    if source.stack.levels != target.stack.levels:
        raise ValueError("operands must share the number of alpha levels")
    idx = source.candidates if samples is None else samples.indices
    table, mask_flat, dims, strides, spacing = target.target_arrays()
    n = source.ndim
    moment = np.zeros((n, n))
    gsum = np.zeros(n)
    dsum, wsum = _directional_sums(
        np.ascontiguousarray(idx, dtype=np.int64), source.points, source.quantized,
        source.weights.ravel(), transform.matrix, transform.offset, transform.center,
        table, mask_flat, dims, strides, spacing, _mode(mode), moment, gsum)
    return DirectionSums(dsum, wsum, moment, gsum)


class AsymmetricResult(NamedTuple):
    d: float
    grad: np.ndarray
    w: float
    overlap: bool


def asymmetric_amd(source: Operand, target: Operand, transform: Transform,
                   samples: SampleSet | None = None, mode="linear") -> AsymmetricResult:
    """Weight-normalized distance from the source points to the target set.

    When no point lands inside the target mask the distance is reported as
    the saturated value with a zero gradient and ``overlap=False``.
    """
    s = direction_sums(source, target, transform, samples, mode)
    if s.wsum <= 0.0:
        return AsymmetricResult(target.saturated_distance, np.zeros(transform.param_count),
                                0.0, False)
    grad = transform.gradient_from_moments(s.moment, s.gsum) / s.wsum
    return AsymmetricResult(s.dsum / s.wsum, grad, s.wsum, True)


class SymmetricDistanceResult(NamedTuple):
    d: float
    grad: np.ndarray
    d_fwd: float
    d_rev: float
    w_fwd: float
    w_rev: float
    overlap: bool


def symmetric_amd(a: Operand, b: Operand, transform: Transform,
                  samples_a: SampleSet | None = None, samples_b: SampleSet | None = None,
                  mode="linear") -> SymmetricDistanceResult:
    """Mean of the A->B distance under T and the B->A distance under T^-1.

    The reverse gradient is taken w.r.t. the affine parameters of T^-1 and
    mapped back through the inverse-parameter Jacobian.
    """
    inverse = transform.invert()
    fwd = direction_sums(a, b, transform, samples_a, mode)
    rev = direction_sums(b, a, inverse, samples_b, mode)
    overlap = fwd.wsum > 0.0 and rev.wsum > 0.0
    if not overlap:
        sat = 0.5 * (a.saturated_distance + b.saturated_distance)
        return SymmetricDistanceResult(sat, np.zeros(transform.param_count), fwd.dsum, rev.dsum,
                                       fwd.wsum, rev.wsum, False)
    g_fwd = transform.gradient_from_moments(fwd.moment, fwd.gsum) / fwd.wsum
    g_rev = inverse.gradient_from_moments(rev.moment, rev.gsum) / rev.wsum
    grad = 0.5 * (g_fwd + inverse_param_jacobian(transform) @ g_rev)
    d = 0.5 * (fwd.dsum / fwd.wsum + rev.dsum / rev.wsum)
    return SymmetricDistanceResult(d, grad, fwd.dsum, rev.dsum, fwd.wsum, rev.wsum, True)


def subsampled_amd(a: Operand, b: Operand, transform: Transform, fraction: float,
                   rng: np.random.Generator | int, mode="linear") -> SymmetricDistanceResult:
    """Symmetric distance over fresh random subsets of both images."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    sa = random_samples(a, fraction, rng)
    sb = random_samples(b, fraction, rng)
    return symmetric_amd(a, b, transform, sa, sb, mode)


# -- diagnostics -------------------------------------------------------------

def _bend_map(stack: DistanceGradientStack, tol: float) -> np.ndarray:
    d = stack.D
    flags = np.zeros(d.shape, dtype=bool)
    for k, s in enumerate(stack.spacing):
        ax = k + 1
        n = d.shape[ax]
        if n < 3:
            flags[:] = True
            continue
        lo = np.take(d, range(0, n - 2), axis=ax)
        mid = np.take(d, range(1, n - 1), axis=ax)
        hi = np.take(d, range(2, n), axis=ax)
        idx = [slice(None)] * d.ndim
        idx[ax] = slice(1, n - 1)
        flags[tuple(idx)] |= np.abs(hi - 2.0 * mid + lo) > tol * s
    return flags


def _cut_kinks(cut: np.ndarray, spacing, dmax: float, ridge: float) -> np.ndarray:
    """Voxels next to a non-smooth point of one cut's saturated distance map.

    Three kinds are caught: the edge of the zero plateau, the edge of the
    saturated plateau, and medial ridges where axis neighbours snap to nearest
    features more than ``ridge`` voxel diagonals apart.
    """
    flags = np.zeros(cut.shape, dtype=bool)
    if not cut.any():
        return flags
    feat = nearest_feature(cut, spacing)
    coords = np.stack(np.unravel_index(feat, cut.shape), axis=-1) * np.asarray(spacing)
    own = np.stack(np.indices(cut.shape), axis=-1) * np.asarray(spacing)
    dt = np.minimum(np.linalg.norm(own - coords, axis=-1), dmax)
    sat = dt >= dmax
    limit = ridge * float(np.linalg.norm(spacing))
    for k in range(cut.ndim):
        n = cut.shape[k]
        if n < 2:
            continue
        a = [slice(None)] * cut.ndim
        b = [slice(None)] * cut.ndim
        a[k] = slice(0, n - 1)
        b[k] = slice(1, n)
        a, b = tuple(a), tuple(b)
        jump = np.linalg.norm(coords[a] - coords[b], axis=-1) > limit
        edge = (cut[a] != cut[b]) | (sat[a] != sat[b]) | (jump & ~sat[a] & ~sat[b])
        flags[a] |= edge
        flags[b] |= edge
    return flags


def kink_map(operand: "Operand", tol: float = 0.05, ridge: float = 2.0) -> np.ndarray:
    """Per stack level, voxels where the interpolated gradient is not a faithful slope.

    Flags voxels next to a kink of any contributing distance map, voxels where
    the level's distance sum bends by more than ``tol * spacing`` between
    axis neighbours (strong curvature), and grid-border voxels where the
    gradient is one-sided. Shape (levels+1, *dims).
    """
    st = operand.stack
    ell = st.levels
    alphas = operand.alphas
    values = operand.image.values
    flags = _bend_map(st, tol)
    cache = {}

    def kinks(cut):
        key = cut.tobytes()
        if key not in cache:
            cache[key] = _cut_kinks(cut, st.spacing, st.dmax, ridge)
        return cache[key]

    for j, a in enumerate(alphas, start=1):
        flags[j:] |= kinks((values >= a) & operand.mask)
    if st.bidirectional:
        comp = 1.0 - values
        for m, a in enumerate(reversed(alphas), start=1):
            flags[: ell - m + 1] |= kinks((comp >= 1.0 - a) & operand.mask)
    for k in range(st.ndim):
        idx = [slice(None)] * (st.ndim + 1)
        idx[k + 1] = 0
        flags[tuple(idx)] = True
        idx[k + 1] = -1
        flags[tuple(idx)] = True
    return flags


def flag_unstable_points(source: Operand, target: Operand, transform: Transform,
                         samples: SampleSet | None = None, tol: float = 0.05,
                         ridge: float = 2.0) -> np.ndarray:
    """Boolean per sample: True where the interpolated gradient is not a faithful slope.

    A mapped point is flagged when it falls outside the target mask, when any
    voxel of its interpolation cell (grown by one voxel) is kinked per
    :func:`kink_map` or lies outside the target mask.
    """
    idx = source.candidates if samples is None else samples.indices
    st = target.stack
    bad = kink_map(target, tol, ridge) | ~target.mask[None]
    # a cell based at voxel i touches voxels i-1 .. i+2 along each axis
    bad = ndimage.maximum_filter(bad, size=(1,) + (4,) * st.ndim,
                                 origin=(0,) + (-1,) * st.ndim, mode="constant", cval=False)
    dims = np.asarray(st.dims)
    u = transform.apply(source.points[idx]) / np.asarray(st.spacing)
    outside = np.any((u < 1.0) | (u > dims - 2.0), axis=1)
    base = np.clip(np.floor(u).astype(np.int64), 0, dims - 1)
    sel = (source.quantized[idx],) + tuple(base[:, k] for k in range(st.ndim))
    return outside | bad[sel]
