"""Grid images interpreted as fuzzy sets, plus the preprocessing around them.

Images are numpy arrays of memberships in [0, 1] paired with a per-axis
spacing. Voxel ``i`` along axis ``k`` sits at physical coordinate
``i * spacing[k]``; all geometry in the package uses that convention and
the array axis order.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class FuzzyImage:
    values: np.ndarray
    spacing: tuple[float, ...] = field(default=None)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim not in (2, 3):
            raise ValueError(f"only 2D and 3D images are supported, got ndim={values.ndim}")
        spacing = self.spacing
        if spacing is None:
            spacing = (1.0,) * values.ndim
        spacing = tuple(float(s) for s in spacing)
        if len(spacing) != values.ndim:
            raise ValueError("spacing and dims must have the same length")
        if any(not s > 0 for s in spacing):
            raise ValueError("spacing must be strictly positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing", spacing)

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def dims(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def physical_size(self) -> np.ndarray:
        """Extent of the image per axis (voxel count times spacing)."""
        return np.asarray(self.dims, dtype=float) * np.asarray(self.spacing)

    @property
    def center(self) -> np.ndarray:
        """Physical center of the voxel grid."""
        return (np.asarray(self.dims, dtype=float) - 1.0) * np.asarray(self.spacing) / 2.0

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.physical_size))

    def height(self) -> float:
        return float(self.values.max())

    def with_values(self, values: np.ndarray) -> "FuzzyImage":
        return FuzzyImage(values, self.spacing)

    def grid_points(self) -> np.ndarray:
        """Physical coordinates of every voxel, shape (N, n), C order."""
        return grid_points(self.dims, self.spacing)

    def corners(self) -> np.ndarray:
        """Physical coordinates of the 2**n extreme voxels."""
        hi = (np.asarray(self.dims, dtype=float) - 1.0) * np.asarray(self.spacing)
        out = []
        for bits in np.ndindex(*(2,) * self.ndim):
            out.append([hi[k] if b else 0.0 for k, b in enumerate(bits)])
        return np.asarray(out)


def grid_points(dims: Sequence[int], spacing: Sequence[float]) -> np.ndarray:
    idx = np.indices(dims).reshape(len(dims), -1).T.astype(np.float64)
    return idx * np.asarray(spacing, dtype=np.float64)


@dataclass(frozen=True)
class AlphaLevels:
    """Strictly increasing alpha levels in (0, 1]."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("at least one alpha level is required")
        if any(not 0.0 < v <= 1.0 for v in vals):
            raise ValueError("alpha levels must lie in (0, 1]")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("alpha levels must be strictly increasing")
        object.__setattr__(self, "values", vals)

    @classmethod
    def equally_spaced(cls, count: int) -> "AlphaLevels":
        if count < 1:
            raise ValueError("level count must be positive")
        return cls(tuple(i / count for i in range(1, count + 1)))

    @property
    def count(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values)


# -- fuzzy set operations ----------------------------------------------------

def percentile_nearest_rank(values: np.ndarray, q: float) -> float:
    """Nearest-rank percentile: element ``ceil(q*N)`` (1-based) of the sorted values."""
    flat = np.sort(np.asarray(values, dtype=np.float64).ravel())
    n = flat.size
    if n == 0:
        raise ValueError("percentile of an empty array")
    # guard against q*n landing a hair above an integer
    rank = math.ceil(q * n - 1e-9)
    rank = min(max(rank, 1), n)
    return float(flat[rank - 1])


class Normalized(NamedTuple):
    image: FuzzyImage
    degenerate: bool


def normalize_percentile(img: FuzzyImage, rho: float) -> Normalized:
    """Robust min/max normalization between the rho and 1-rho percentiles.

    A constant image (equal percentiles) maps to all zeros and is flagged
    as degenerate instead of raising, so batch runs keep going.
    """
    if img.size == 0:
        raise ValueError("cannot normalize an empty image")
    if not 0.0 <= rho < 0.5:
        raise ValueError("rho must lie in [0, 0.5)")
    lo = percentile_nearest_rank(img.values, rho)
    hi = percentile_nearest_rank(img.values, 1.0 - rho)
    if hi <= lo:
        warnings.warn("constant image: normalization yields zeros", RuntimeWarning, stacklevel=2)
        return Normalized(img.with_values(np.zeros(img.dims)), True)
    out = np.clip((img.values - lo) / (hi - lo), 0.0, 1.0)
    return Normalized(img.with_values(out), False)


def quantize_membership(mu, levels: int):
    """Index of the alpha level a membership rounds to: floor(levels*mu + 0.5)."""
    q = np.floor(levels * np.asarray(mu, dtype=np.float64) + 0.5).astype(np.int64)
    if q.ndim == 0:
        return int(q)
    return q


def alpha_cut(img: FuzzyImage | np.ndarray, alpha: float) -> np.ndarray:
    values = img.values if isinstance(img, FuzzyImage) else np.asarray(img)
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    return values >= alpha


def complement(img: FuzzyImage) -> FuzzyImage:
    return img.with_values(1.0 - img.values)


# -- masks and weights -------------------------------------------------------

def full_mask(dims: Sequence[int]) -> np.ndarray:
    return np.ones(tuple(dims), dtype=bool)


def unit_weights(dims: Sequence[int]) -> np.ndarray:
    return np.ones(tuple(dims), dtype=np.float64)


def check_weights(weights: np.ndarray, mask: np.ndarray | None = None) -> None:
    if np.any(weights < 0):
        raise ValueError("weights must be non-negative")
    inside = weights if mask is None else weights[mask]
    if not np.any(inside > 0):
        raise ValueError("at least one positive weight inside the mask is required")


def circular_mask(dims: Sequence[int], center, radius: float, spacing=None) -> np.ndarray:
    spacing = (1.0,) * len(dims) if spacing is None else spacing
    pts = grid_points(dims, spacing)
    r = np.linalg.norm(pts - np.asarray(center, dtype=float), axis=1)
    return (r <= radius).reshape(tuple(dims))


def hann_window_weights(dims: Sequence[int], center, radius: float, squared: bool = False,
                        spacing=None) -> np.ndarray:
    """Radial Hann half-window: cos^2(pi*u/2) with u = min(1, r/radius)."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    spacing = (1.0,) * len(dims) if spacing is None else spacing
    pts = grid_points(dims, spacing)
    u = np.minimum(1.0, np.linalg.norm(pts - np.asarray(center, dtype=float), axis=1) / radius)
    w = np.cos(0.5 * np.pi * u) ** 2
    w[u >= 1.0] = 0.0
    if squared:
        w = w * w
    return w.reshape(tuple(dims))


# -- smoothing and pyramids --------------------------------------------------

def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled Gaussian truncated at +-ceil(3 sigma) taps, normalized to sum 1."""
    if sigma <= 0:
        return np.ones(1)
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(values: np.ndarray, sigma: float) -> np.ndarray:
    """Separable smoothing with edge replication (sigma in voxels)."""
    out = np.asarray(values, dtype=np.float64)
    if sigma <= 0:
        return out.copy()
    k = gaussian_kernel(sigma)
    for axis in range(out.ndim):
        out = ndimage.correlate1d(out, k, axis=axis, mode="nearest")
    return out


def _block_reduce(values: np.ndarray, factor: int) -> np.ndarray:
    """Mean over the fine voxels each coarse voxel covers.

    Coarse voxel ``j`` sits at fine index ``j*factor`` and covers the fine
    voxels closest to it, clipped at the borders.
    """
    out = values.astype(np.float64)
    lo_off = factor // 2
    hi_off = factor - 1 - lo_off
    for axis in range(out.ndim):
        n = out.shape[axis]
        m = -(-n // factor)
        csum = np.cumsum(out, axis=axis)
        zero = np.zeros_like(np.take(csum, [0], axis=axis))
        csum = np.concatenate([zero, csum], axis=axis)
        centers = np.arange(m) * factor
        lo = np.clip(centers - lo_off, 0, n)
        hi = np.clip(centers + hi_off + 1, 0, n)
        total = np.take(csum, hi, axis=axis) - np.take(csum, lo, axis=axis)
        shape = [1] * out.ndim
        shape[axis] = m
        out = total / (hi - lo).reshape(shape)
    return out


class PyramidLevel(NamedTuple):
    image: FuzzyImage
    mask: np.ndarray
    weights: np.ndarray
    factor: int


def build_pyramid(img: FuzzyImage, mask: np.ndarray, weights: np.ndarray,
                  factors: Sequence[int], sigmas: Sequence[float]) -> list[PyramidLevel]:
    """Coarse-to-fine levels, each smoothed and subsampled from the original."""
    if len(factors) != len(sigmas):
        raise ValueError("factors and sigmas must have the same length")
    mask = np.asarray(mask, dtype=bool)
    weights = np.asarray(weights, dtype=np.float64)
    if mask.shape != img.dims or weights.shape != img.dims:
        raise ValueError("mask and weights must match the image dims")
    levels = []
    for factor, sigma in zip(factors, sigmas):
        factor = int(factor)
        if factor < 1:
            raise ValueError("pyramid factors must be >= 1")
        if factor > max(img.dims):
            raise ValueError(f"factor {factor} exceeds every image dimension {img.dims}")
        smooth = gaussian_smooth(img.values, sigma)
        if factor == 1:
            levels.append(PyramidLevel(img.with_values(smooth), mask.copy(), weights.copy(), 1))
            continue
        sub = smooth[tuple(slice(None, None, factor) for _ in range(img.ndim))]
        spacing = tuple(s * factor for s in img.spacing)
        coarse_mask = _block_reduce(mask.astype(np.float64), factor) > 0.5
        coarse_w = _block_reduce(weights, factor)
        levels.append(PyramidLevel(FuzzyImage(sub, spacing), coarse_mask, coarse_w, factor))
    return levels


# -- synthetic noise ---------------------------------------------------------

def add_gaussian_noise(img: FuzzyImage, sigma: float, seed: int, clamp: bool = True) -> FuzzyImage:
    """Additive N(0, sigma^2) noise from a seeded PCG64 stream, clamped to [0, 1]."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return img.with_values(img.values.copy())
    rng = np.random.Generator(np.random.PCG64(seed))
    noisy = img.values + rng.normal(0.0, sigma, size=img.dims)
    if clamp:
        noisy = np.clip(noisy, 0.0, 1.0)
    return img.with_values(noisy)
