"""End-to-end symmetric registration over a resolution pyramid."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import baselines
from .distance import Operand, full_samples, random_samples, symmetric_amd
from .image import FuzzyImage, build_pyramid, normalize_percentile
from .optimizer import IterationTrace, OptimizationError, OptimizerConfig, minimize
from .transforms import AffineTransform, RigidTransform, Transform, parameter_scales

MEASURES = ("alpha-amd", "ssd", "pcc", "mi")
MODELS = ("rigid", "affine")


class RegistrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class RegistrationConfig:
    levels: int = 7
    dmax: float | None = None
    rho: float = 0.05
    normalize: bool = True
    factors: tuple[int, ...] = (4, 2, 1)
    sigmas: tuple[float, ...] = (5.0, 3.0, 0.0)
    step: float = 0.5
    relaxation: float = 0.99
    max_iter: int = 3000
    gmt: float = 1e-4
    msl: float = 1e-4
    fraction: float = 1.0
    interpolation: str = "linear"
    seed: int = 0
    model: str = "rigid"
    measure: str = "alpha-amd"
    mi_bins: int = 32
    # per pyramid level overrides; the finest level always uses step/max_iter
    level_steps: tuple[float, ...] | None = None
    level_iters: tuple[int, ...] | None = None
    scale_parameters: bool = True

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be positive")
        if len(self.factors) != len(self.sigmas) or not self.factors:
            raise ValueError("factors and sigmas must be non-empty and of equal length")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.measure not in MEASURES:
            raise ValueError(f"measure must be one of {MEASURES}")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("fraction must lie in (0, 1]")
        if self.interpolation not in ("linear", "nearest"):
            raise ValueError("interpolation must be 'linear' or 'nearest'")
        for name in ("level_steps", "level_iters"):
            v = getattr(self, name)
            if v is not None and len(v) != len(self.factors):
                raise ValueError(f"{name} needs one entry per pyramid level")

    def optimizer(self, level: int) -> OptimizerConfig:
        last = level == len(self.factors) - 1
        step = self.step if last or self.level_steps is None else self.level_steps[level]
        iters = self.max_iter if last or self.level_iters is None else self.level_iters[level]
        return OptimizerConfig(step, self.relaxation, iters, self.gmt, self.msl)

    def without_pyramid(self) -> "RegistrationConfig":
        return replace(self, factors=(1,), sigmas=(0.0,), level_steps=None, level_iters=None)


@dataclass
class RegistrationResult:
    transform: Transform
    distance: float
    traces: list[IterationTrace] = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return sum(len(t) for t in self.traces)


def characteristic_radius(img: FuzzyImage, center) -> float:
    """Root-mean-square distance of the grid points from ``center``."""
    d = img.grid_points() - np.asarray(center, dtype=np.float64)
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def _initial(T0, A: FuzzyImage, model: str) -> Transform:
    if T0 is None:
        T0 = RigidTransform.identity(A.ndim, A.center)
    if model == "affine" and isinstance(T0, RigidTransform):
        return T0.to_affine()
    if model == "rigid" and not isinstance(T0, RigidTransform):
        raise ValueError("a rigid registration needs a rigid initial transform")
    return T0


class _LevelCost:
    """Cost callable for one pyramid level."""

    def __init__(self, A, B, ma, mb, wa, wb, cfg: RegistrationConfig, rng):
        self.cfg = cfg
        self.rng = rng
        self.A, self.B, self.ma, self.mb = A, B, ma, mb
        self.h = 1e-3  # finite-difference step for PCC/MI, set per level
        if cfg.measure == "alpha-amd":
            self.a = Operand.build(A, ma, wa, cfg.levels, cfg.dmax)
            self.b = Operand.build(B, mb, wb, cfg.levels, cfg.dmax)

    def __call__(self, T):
        cfg = self.cfg
        if cfg.measure == "alpha-amd":
            if cfg.fraction < 1.0:
                sa = random_samples(self.a, cfg.fraction, self.rng)
                sb = random_samples(self.b, cfg.fraction, self.rng)
            else:
                sa, sb = full_samples(self.a), full_samples(self.b)
            return symmetric_amd(self.a, self.b, T, sa, sb, cfg.interpolation)
        if cfg.measure == "ssd":
            return baselines.ssd(self.A, self.B, T, self.mb, self.ma)
        if cfg.measure == "pcc":
            return baselines.pcc(self.A, self.B, T, self.mb, self.ma, fd_step=self.h)
        return baselines.mi(self.A, self.B, T, self.mb, self.ma, bins=cfg.mi_bins, fd_step=self.h)

    def final(self, T) -> float:
        """Full-sampling cost at T, used to compare registrations."""
        if self.cfg.measure == "alpha-amd":
            r = symmetric_amd(self.a, self.b, T, mode=self.cfg.interpolation)
            return r.d if r.overlap else np.inf
        return self(T).cost if self.cfg.measure == "ssd" else self._value(T)

    def _value(self, T):
        fn = baselines.pcc if self.cfg.measure == "pcc" else baselines.mi
        kw = {} if self.cfg.measure == "pcc" else {"bins": self.cfg.mi_bins}
        return fn(self.A, self.B, T, self.mb, self.ma, gradient=False, **kw).cost


def register(A: FuzzyImage, B: FuzzyImage, mask_a=None, mask_b=None, weights_a=None,
             weights_b=None, T0: Transform | None = None,
             cfg: RegistrationConfig = RegistrationConfig()) -> RegistrationResult:
    """Register A to B: the result maps A's physical space onto B's.

    Each pyramid level is optimized coarse to fine and hands its estimate to
    the next. A level that loses overlap mid-run stops early with the best
    transform seen so far.
    """
    if A.ndim != B.ndim:
        raise ValueError("images must have the same dimensionality")
    t_start = time.perf_counter()
    ma = np.ones(A.dims, bool) if mask_a is None else np.asarray(mask_a, bool)
    mb = np.ones(B.dims, bool) if mask_b is None else np.asarray(mask_b, bool)
    wa = np.ones(A.dims) if weights_a is None else np.asarray(weights_a, np.float64)
    wb = np.ones(B.dims) if weights_b is None else np.asarray(weights_b, np.float64)
    if cfg.normalize:
        A = normalize_percentile(A, cfg.rho).image
        B = normalize_percentile(B, cfg.rho).image
    T = _initial(T0, A, cfg.model)
    pyr_a = build_pyramid(A, ma, wa, cfg.factors, cfg.sigmas)
    pyr_b = build_pyramid(B, mb, wb, cfg.factors, cfg.sigmas)
    rng = np.random.default_rng(cfg.seed)
    traces, prep, optim = [], 0.0, 0.0
    cost = None
    for k, (la, lb) in enumerate(zip(pyr_a, pyr_b)):
        t0 = time.perf_counter()
        cost = _LevelCost(la.image, lb.image, la.mask, lb.mask, la.weights, lb.weights, cfg, rng)
        t1 = time.perf_counter()
        prep += t1 - t0
        scales = None
        if cfg.scale_parameters:
            scales = parameter_scales(T, characteristic_radius(la.image, T.center))
        cost.h = 0.01 / (scales if scales is not None else np.ones(T.param_count))
        try:
            res = minimize(cost, T, cfg.optimizer(k), scales)
        except OptimizationError as exc:
            raise RegistrationError(
                f"no usable overlap at pyramid level {k} (factor {la.factor}); "
                "try a coarser level or a different initial transform") from exc
        optim += time.perf_counter() - t1
        traces.append(res.trace)
        T = res.transform
    n_iter = sum(len(t) for t in traces)
    timings = {"preprocessing": prep, "optimization": optim,
               "per_iteration": optim / max(n_iter, 1), "total": time.perf_counter() - t_start}
    return RegistrationResult(T, float(cost.final(T)), traces, timings)


def register_symmetric_pair(A: FuzzyImage, B: FuzzyImage, mask_a=None, mask_b=None,
                            weights_a=None, weights_b=None,
                            cfg: RegistrationConfig = RegistrationConfig()):
    """Run A->B and B->A with identical settings; only the roles swap."""
    ab = register(A, B, mask_a, mask_b, weights_a, weights_b, None, cfg)
    ba = register(B, A, mask_b, mask_a, weights_b, weights_a, None, cfg)
    return ab, ba


def rotation_starts(count: int, center, ndim: int = 2) -> list[RigidTransform]:
    """``count`` rigid starts with equally spaced in-plane angles about ``center``."""
    if count < 1:
        raise ValueError("at least one start is required")
    out = []
    for i in range(count):
        a = 2.0 * np.pi * i / count
        angles = [a] if ndim == 2 else [0.0, 0.0, a]
        out.append(RigidTransform(angles, np.zeros(ndim), center))
    return out


def multi_start_rigid_then_affine(A: FuzzyImage, B: FuzzyImage, mask_a=None, mask_b=None,
                                  weights_a=None, weights_b=None,
                                  starts: Sequence[Transform] = (),
                                  cfg_rigid: RegistrationConfig | None = None,
                                  cfg_affine: RegistrationConfig | None = None) -> RegistrationResult:
    """Rigid runs from every start, then one affine run from the lowest final distance.

    No pyramid is used in either stage.
    """
    if not starts:
        raise ValueError("at least one start is required")
    cfg_rigid = (cfg_rigid or RegistrationConfig(model="rigid", step=0.1)).without_pyramid()
    cfg_affine = (cfg_affine or RegistrationConfig(model="affine", step=0.5)).without_pyramid()
    cfg_rigid = replace(cfg_rigid, model="rigid")
    cfg_affine = replace(cfg_affine, model="affine")
    best = None
    for T0 in starts:
        try:
            r = register(A, B, mask_a, mask_b, weights_a, weights_b, T0, cfg_rigid)
        except RegistrationError:
            continue
        if best is None or r.distance < best.distance:
            best = r
    if best is None:
        raise RegistrationError("no start overlapped the reference image")
    out = register(A, B, mask_a, mask_b, weights_a, weights_b, best.transform, cfg_affine)
    out.traces = best.traces + out.traces
    return out

