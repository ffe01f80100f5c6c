"""Rigid and affine transforms about an explicit center.

Both kinds map ``y = A (x - c) + c + t``. Affine parameters are the entries
of ``A`` in row-major order followed by ``t``; rigid parameters are the
rotation angle(s) in radians followed by ``t``. 3D rotations use intrinsic
Z-Y-X Euler angles stored as (ax, ay, az) with ``R = Rz(az) @ Ry(ay) @ Rx(ax)``,
where x, y, z name array axes 0, 1, 2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

SINGULAR_TOL = 1e-12


class SingularTransformError(ValueError):
    pass


def _vec(v, n=None) -> np.ndarray:
    a = np.array(v, dtype=np.float64).reshape(-1)
    if n is not None and a.size != n:
        raise ValueError(f"expected a vector of length {n}, got {a.size}")
    return a


class _Linear:
    """Shared behaviour of transforms of the form A (x - c) + c + t."""

    matrix: np.ndarray
    translation: np.ndarray
    center: np.ndarray

    @property
    def ndim(self) -> int:
        return self.translation.size

    @property
    def offset(self) -> np.ndarray:
        """``b`` in ``y = A x + b``."""
        return self.center + self.translation - self.matrix @ self.center

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (x - self.center) @ self.matrix.T + self.center + self.translation

    __call__ = apply

    def to_affine(self) -> "AffineTransform":
        return AffineTransform(self.matrix.copy(), self.translation.copy(), self.center.copy())

    def invert(self) -> "AffineTransform":
        """Inverse about the same center: A' = A^-1, t' = -A^-1 t."""
        inv = _checked_inverse(self.matrix)
        return AffineTransform(inv, -inv @ self.translation, self.center.copy())

    def compose(self, inner: "_Linear") -> "AffineTransform":
        """``self(inner(x))`` expressed about the center of ``inner``."""
        m = self.matrix @ inner.matrix
        b = self.matrix @ inner.offset + self.offset
        return AffineTransform.from_matrix_offset(m, b, inner.center)

    def param_jacobian(self, x) -> np.ndarray:
        """Rows are dy/dp_i at point x, shape (param_count, n)."""
        raise NotImplementedError

    def gradient_from_moments(self, moment: np.ndarray, gsum: np.ndarray) -> np.ndarray:
        """Parameter gradient from ``moment = sum g (x-c)^T`` and ``gsum = sum g``."""
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class AffineTransform(_Linear):
    matrix: np.ndarray
    translation: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        a = np.array(self.matrix, dtype=np.float64)
        n = a.shape[0]
        if a.shape != (n, n) or n not in (2, 3):
            raise ValueError("matrix must be 2x2 or 3x3")
        object.__setattr__(self, "matrix", a)
        object.__setattr__(self, "translation", _vec(self.translation, n))
        object.__setattr__(self, "center", _vec(self.center, n))

    @classmethod
    def identity(cls, ndim: int, center=None) -> "AffineTransform":
        c = np.zeros(ndim) if center is None else center
        return cls(np.eye(ndim), np.zeros(ndim), c)

    @classmethod
    def from_params(cls, params, center) -> "AffineTransform":
        c = _vec(center)
        n = c.size
        p = _vec(params, n * n + n)
        return cls(p[: n * n].reshape(n, n), p[n * n:], c)

    @classmethod
    def from_matrix_offset(cls, matrix, offset, center=None) -> "AffineTransform":
        m = np.asarray(matrix, dtype=np.float64)
        c = np.zeros(m.shape[0]) if center is None else _vec(center)
        t = _vec(offset) + m @ c - c
        return cls(m, t, c)

    @property
    def param_count(self) -> int:
        n = self.ndim
        return n * n + n

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.matrix.ravel(), self.translation])

    def with_params(self, params) -> "AffineTransform":
        return AffineTransform.from_params(params, self.center)

    def param_jacobian(self, x) -> np.ndarray:
        n = self.ndim
        r = _vec(x, n) - self.center
        jac = np.zeros((n * n + n, n))
        for j in range(n):
            for k in range(n):
                jac[j * n + k, j] = r[k]
            jac[n * n + j, j] = 1.0
        return jac

    def gradient_from_moments(self, moment, gsum) -> np.ndarray:
        return np.concatenate([np.asarray(moment).ravel(), np.asarray(gsum)])


def rotation_matrix(angles) -> np.ndarray:
    angles = _vec(angles)
    if angles.size == 1:
        c, s = math.cos(angles[0]), math.sin(angles[0])
        return np.array([[c, -s], [s, c]])
    if angles.size == 3:
        return _rz(angles[2]) @ _ry(angles[1]) @ _rx(angles[0])
    raise ValueError("rigid transforms take 1 (2D) or 3 (3D) angles")


def rotation_matrix_derivatives(angles) -> list[np.ndarray]:
    """dR/d(angle_m) for each angle."""
    angles = _vec(angles)
    if angles.size == 1:
        c, s = math.cos(angles[0]), math.sin(angles[0])
        return [np.array([[-s, -c], [c, -s]])]
    ax, ay, az = angles
    rx, ry, rz = _rx(ax), _ry(ay), _rz(az)
    return [rz @ ry @ _drx(ax), rz @ _dry(ay) @ rx, _drz(az) @ ry @ rx]


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _drx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])


def _dry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


def _drz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


@dataclass(frozen=True, eq=False)
class RigidTransform(_Linear):
    angles: np.ndarray
    translation: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        angles = _vec(self.angles)
        n = {1: 2, 3: 3}.get(angles.size)
        if n is None:
            raise ValueError("rigid transforms take 1 (2D) or 3 (3D) angles")
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "translation", _vec(self.translation, n))
        object.__setattr__(self, "center", _vec(self.center, n))

    @classmethod
    def identity(cls, ndim: int, center=None) -> "RigidTransform":
        c = np.zeros(ndim) if center is None else center
        return cls(np.zeros(1 if ndim == 2 else 3), np.zeros(ndim), c)

    @classmethod
    def from_params(cls, params, center) -> "RigidTransform":
        c = _vec(center)
        n = c.size
        na = 1 if n == 2 else 3
        p = _vec(params, na + n)
        return cls(p[:na], p[na:], c)

    @property
    def matrix(self) -> np.ndarray:
        return rotation_matrix(self.angles)

    @property
    def param_count(self) -> int:
        return self.angles.size + self.ndim

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.angles, self.translation])

    def with_params(self, params) -> "RigidTransform":
        return RigidTransform.from_params(params, self.center)

    def param_jacobian(self, x) -> np.ndarray:
        n = self.ndim
        r = _vec(x, n) - self.center
        rows = [d @ r for d in rotation_matrix_derivatives(self.angles)]
        rows.extend(np.eye(n))
        return np.asarray(rows)

    def gradient_from_moments(self, moment, gsum) -> np.ndarray:
        moment = np.asarray(moment)
        g_angles = [float(np.sum(d * moment)) for d in rotation_matrix_derivatives(self.angles)]
        return np.concatenate([g_angles, np.asarray(gsum)])


Transform = AffineTransform | RigidTransform


def _checked_inverse(matrix: np.ndarray) -> np.ndarray:
    if abs(np.linalg.det(matrix)) < SINGULAR_TOL:
        raise SingularTransformError("transform matrix is singular")
    return np.linalg.inv(matrix)


def invert(transform: Transform) -> AffineTransform:
    return transform.invert()


def inverse_param_jacobian(transform: Transform) -> np.ndarray:
    """Derivatives of the inverse's affine parameters w.r.t. the forward parameters.

    Entry [i, k] is d p'_k / d p_i where p' = (vec(A^-1), -A^-1 t) are the
    affine parameters of the inverse about the same center. Shape is
    (param_count, n*n + n); square for affine transforms.
    """
    n = transform.ndim
    inv = _checked_inverse(transform.matrix)
    if isinstance(transform, AffineTransform):
        dmats = []
        for i in range(n):
            for j in range(n):
                e = np.zeros((n, n))
                e[i, j] = 1.0
                dmats.append(e)
    else:
        dmats = rotation_matrix_derivatives(transform.angles)
    rows = []
    for dm in dmats:
        # d(A^-1) = -A^-1 dA A^-1 ; d(-A^-1 t) = A^-1 dA A^-1 t
        d_inv = -inv @ dm @ inv
        rows.append(np.concatenate([d_inv.ravel(), -d_inv @ transform.translation]))
    for j in range(n):
        rows.append(np.concatenate([np.zeros(n * n), -inv[:, j]]))
    return np.asarray(rows)


# -- random synthetic transforms ---------------------------------------------

class TransformClass(str, Enum):
    ZERO = "zero"
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


# (lower, upper) bound of the largest normalized parameter, in percent of
# image size for translations and degrees for rotations
CLASS_BANDS = {
    2: {TransformClass.SMALL: (0.0, 10.0), TransformClass.MEDIUM: (10.0, 20.0),
        TransformClass.LARGE: (20.0, 30.0)},
    3: {TransformClass.SMALL: (0.0, 10.0), TransformClass.MEDIUM: (10.0, 15.0),
        TransformClass.LARGE: (15.0, 20.0)},
}


def normalized_magnitude(transform: RigidTransform, physical_size) -> float:
    """Largest of |angle| in degrees and |t_i| in percent of the image size."""
    size = _vec(physical_size)
    deg = np.degrees(np.abs(transform.angles))
    pct = 100.0 * np.abs(transform.translation) / size
    return float(max(deg.max(), pct.max()))


def sample_random_transform(cls: TransformClass | str, physical_size, seed: int | np.random.Generator,
                            center=None) -> RigidTransform:
    """Uniform rigid draw from a magnitude class.

    Every parameter is drawn within the class's upper bound; Medium and Large
    redraw until some parameter exceeds the lower bound.
    """
    cls = TransformClass(cls)
    size = _vec(physical_size)
    n = size.size
    if n not in (2, 3):
        raise ValueError("only 2D and 3D transforms are supported")
    center = size / 2.0 if center is None else _vec(center, n)
    if cls is TransformClass.ZERO:
        return RigidTransform.identity(n, center)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lo, hi = CLASS_BANDS[n][cls]
    na = 1 if n == 2 else 3
    while True:
        deg = rng.uniform(-hi, hi, size=na)
        frac = rng.uniform(-hi, hi, size=n) / 100.0
        t = RigidTransform(np.radians(deg), frac * size, center)
        if normalized_magnitude(t, size) > lo:
            return t


def parameter_scales(transform: Transform, radius: float) -> np.ndarray:
    """Per-parameter scales that turn each parameter into a displacement.

    Matrix entries and angles move points by roughly ``radius`` per unit, so
    they are scaled by it; translations keep unit scale.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    n = transform.ndim
    k = transform.param_count - n
    return np.concatenate([np.full(k, float(radius)), np.ones(n)])


# -- text format --------------------------------------------------------------

def _fmt(values) -> str:
    return " ".join(format(float(v), ".17g") for v in np.ravel(values))


def format_transform(transform: Transform) -> str:
    """``key = value`` lines; floats carry 17 significant digits for exact round-trips."""
    lines = [f"dim = {transform.ndim}"]
    if isinstance(transform, RigidTransform):
        lines.append("type = rigid")
        lines.append(f"angles = {_fmt(transform.angles)}")
    else:
        lines.append("type = affine")
    lines += [f"matrix = {_fmt(transform.matrix)}",
              f"translation = {_fmt(transform.translation)}",
              f"center = {_fmt(transform.center)}"]
    return "\n".join(lines) + "\n"


def parse_transform(text: str) -> Transform:
    fields = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in ("dim", "type", "angles", "matrix", "translation", "center"):
            raise ValueError(f"line {lineno}: cannot parse {raw!r}")
        fields[key] = value.strip()
    try:
        n = int(fields["dim"])
        t = np.array(fields["translation"].split(), dtype=np.float64)
        c = np.array(fields["center"].split(), dtype=np.float64)
        kind = fields.get("type", "affine")
        if kind == "rigid":
            return RigidTransform(np.array(fields["angles"].split(), dtype=np.float64), t, c)
        m = np.array(fields["matrix"].split(), dtype=np.float64).reshape(n, n)
    except KeyError as exc:
        raise ValueError(f"transform file is missing key {exc.args[0]!r}") from None
    if kind != "affine":
        raise ValueError(f"unknown transform type {kind!r}")
    return AffineTransform(m, t, c)


def write_transform(path, transform: Transform) -> None:
    with open(path, "w") as fh:
        fh.write(format_transform(transform))


def read_transform(path) -> Transform:
    with open(path) as fh:
        return parse_transform(fh.read())
