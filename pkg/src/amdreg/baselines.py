"""Intensity-based reference measures: SSD, PCC and MI.

Points are taken from the grid of B (under its mask), mapped into A with the
inverse transform, and A is sampled there by multilinear interpolation. Only
points that land inside A's grid (and A's mask, when given) take part. Values
are means over that overlap.
"""
from __future__ import annotations

from typing import NamedTuple

import numba
import numpy as np

from .image import FuzzyImage
from .transforms import Transform, inverse_param_jacobian


class MeasureResult(NamedTuple):
    value: float
    cost: float
    grad: np.ndarray
    overlap: bool
    count: int

    @property
    def d(self) -> float:
        return self.cost


@numba.njit(cache=True)
def _multilinear_kernel(flat, dims, strides, spacing, points, vals, grads):
    n = points.shape[1]
    base = np.empty(n, dtype=np.int64)
    frac = np.empty(n)
    for p in range(points.shape[0]):
        for k in range(n):
            u = points[p, k] / spacing[k]
            top = max(dims[k] - 2, 0)
            i0 = min(max(int(np.floor(u)), 0), top)
            base[k] = i0
            frac[k] = u - i0 if dims[k] > 1 else 0.0
        v = 0.0
        for k in range(n):
            grads[p, k] = 0.0
        for corner in range(1 << n):
            idx = 0
            w = 1.0
            for k in range(n):
                if (corner >> k) & 1:
                    idx += min(base[k] + 1, dims[k] - 1) * strides[k]
                    w *= frac[k]
                else:
                    idx += base[k] * strides[k]
                    w *= 1.0 - frac[k]
            c = flat[idx]
            v += w * c
            for k in range(n):
                # derivative of the corner weight along axis k
                dw = 1.0 / spacing[k] if (corner >> k) & 1 else -1.0 / spacing[k]
                for m in range(n):
                    if m != k:
                        dw *= frac[m] if (corner >> m) & 1 else 1.0 - frac[m]
                grads[p, k] += dw * c
        vals[p] = v


def multilinear(values: np.ndarray, spacing, points: np.ndarray):
    """Multilinear samples and their exact spatial gradients at physical points.

    Points must lie inside the grid's bounding box. Returns (vals (N,), grads (N, n)).
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    dims = np.asarray(values.shape, dtype=np.int64)
    strides = np.ones(dims.size, dtype=np.int64)
    for k in range(dims.size - 2, -1, -1):
        strides[k] = strides[k + 1] * dims[k + 1]
    pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, dims.size)
    vals = np.empty(pts.shape[0])
    grads = np.empty(pts.shape)
    _multilinear_kernel(values.ravel(), dims, strides, np.asarray(spacing, dtype=np.float64),
                        pts, vals, grads)
    return vals, grads


class _Overlap(NamedTuple):
    a: np.ndarray
    b: np.ndarray
    grad_a: np.ndarray
    rel: np.ndarray  # B grid point minus the transform center


def _overlap(A: FuzzyImage, B: FuzzyImage, transform: Transform, mask_b=None, mask_a=None,
             need_grad=False) -> _Overlap:
    pts = B.grid_points()
    bvals = B.values.ravel()
    if mask_b is not None:
        keep = np.asarray(mask_b, dtype=bool).ravel()
        pts, bvals = pts[keep], bvals[keep]
    inverse = transform.invert()
    y = inverse.apply(pts)
    hi = (np.asarray(A.dims) - 1) * np.asarray(A.spacing)
    inside = np.all((y >= 0.0) & (y <= hi), axis=1)
    if mask_a is not None:
        near = np.clip(np.floor(y / np.asarray(A.spacing) + 0.5).astype(np.int64), 0,
                       np.asarray(A.dims) - 1)
        inside &= np.asarray(mask_a, dtype=bool)[tuple(near.T)]
    y, bvals, pts = y[inside], bvals[inside], pts[inside]
    avals, grads = multilinear(A.values, A.spacing, y)
    return _Overlap(avals, bvals, grads if need_grad else None, pts - inverse.center)


def _failure(transform, count=0) -> MeasureResult:
    return MeasureResult(np.nan, np.inf, np.zeros(transform.param_count), False, count)


def ssd(A: FuzzyImage, B: FuzzyImage, transform: Transform, mask_b=None, mask_a=None) -> MeasureResult:
    """Mean squared difference with its analytic parameter gradient."""
    ov = _overlap(A, B, transform, mask_b, mask_a, need_grad=True)
    m = ov.a.size
    if m == 0:
        return _failure(transform)
    diff = ov.a - ov.b
    value = float(np.mean(diff * diff))
    # d/dp' of A(T^-1 x): gradient of A times the inverse's parameter jacobian
    g = (2.0 / m) * diff[:, None] * ov.grad_a
    moment = g.T @ ov.rel
    g_inv = np.concatenate([moment.ravel(), g.sum(axis=0)])
    grad = inverse_param_jacobian(transform) @ g_inv
    return MeasureResult(value, value, grad, True, m)


def pcc_value(a: np.ndarray, b: np.ndarray) -> float:
    da = a - a.mean()
    db = b - b.mean()
    den = np.sqrt(np.sum(da * da) * np.sum(db * db))
    if not den > 0:
        return np.nan
    return float(np.sum(da * db) / den)


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def _bin_weights(v: np.ndarray, bins: int, binning: str):
    """Bin indices and weights: two neighbours (linear) or one (hard)."""
    if binning == "hard":
        k = np.minimum(np.floor(v * bins).astype(np.int64), bins - 1)
        k = np.maximum(k, 0)
        return [(k, np.ones(v.size))]
    if binning != "linear":
        raise ValueError(f"unknown binning {binning!r}")
    z = np.clip(v * bins - 0.5, 0.0, bins - 1.0)
    k = np.minimum(np.floor(z).astype(np.int64), bins - 2 if bins > 1 else 0)
    f = z - k
    return [(k, 1.0 - f), (np.minimum(k + 1, bins - 1), f)]


def mi_value(a: np.ndarray, b: np.ndarray, bins: int = 32, binning: str = "linear") -> float:
    """Plug-in mutual information (nats) from a bins x bins joint histogram.

    Linear binning splits each sample between the two nearest bin centers
    (k + 0.5) / bins, which keeps the estimate continuous in the intensities.
    """
    if a.size == 0:
        return np.nan
    joint = np.zeros(bins * bins)
    for ka, wa in _bin_weights(a, bins, binning):
        for kb, wb in _bin_weights(b, bins, binning):
            joint += np.bincount(ka * bins + kb, weights=wa * wb, minlength=bins * bins)
    joint = joint.reshape(bins, bins) / a.size
    return _entropy(joint.sum(axis=1)) + _entropy(joint.sum(axis=0)) - _entropy(joint.ravel())


def _fd_gradient(cost_at, transform, step) -> np.ndarray:
    p = transform.params
    h = np.broadcast_to(np.asarray(step, dtype=np.float64), p.shape)
    grad = np.zeros(p.size)
    for i in range(p.size):
        e = np.zeros(p.size)
        e[i] = h[i]
        hi = cost_at(transform.with_params(p + e))
        lo = cost_at(transform.with_params(p - e))
        if not (np.isfinite(hi) and np.isfinite(lo)):
            return np.zeros(p.size)
        grad[i] = (hi - lo) / (2.0 * h[i])
    return grad


def pcc(A: FuzzyImage, B: FuzzyImage, transform: Transform, mask_b=None, mask_a=None,
        fd_step=1e-3, gradient: bool = True) -> MeasureResult:
    """Pearson correlation; the cost is -PCC with a central-difference gradient."""
    def value_at(t):
        ov = _overlap(A, B, t, mask_b, mask_a)
        return (pcc_value(ov.a, ov.b) if ov.a.size else np.nan), ov.a.size

    value, m = value_at(transform)
    if not np.isfinite(value):
        return _failure(transform, m)
    grad = (_fd_gradient(lambda t: -value_at(t)[0], transform, fd_step) if gradient
            else np.zeros(transform.param_count))
    return MeasureResult(value, -value, grad, True, m)


def mi(A: FuzzyImage, B: FuzzyImage, transform: Transform, mask_b=None, mask_a=None,
       bins: int = 32, binning: str = "linear", fd_step=1e-3, gradient: bool = True) -> MeasureResult:
    """Mutual information; the cost is -MI with a central-difference gradient."""
    def value_at(t):
        ov = _overlap(A, B, t, mask_b, mask_a)
        return mi_value(ov.a, ov.b, bins, binning), ov.a.size

    value, m = value_at(transform)
    if not np.isfinite(value):
        return _failure(transform, m)
    grad = (_fd_gradient(lambda t: -value_at(t)[0], transform, fd_step) if gradient
            else np.zeros(transform.param_count))
    return MeasureResult(value, -value, grad, True, m)
