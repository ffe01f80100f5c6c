"""Regular-step gradient descent with step-length relaxation.

Each iteration moves the parameters a distance ``step`` along the negative
unit gradient. Whenever two consecutive gradients point in opposing
directions the step is multiplied by the relaxation factor. The loop stops on
a small gradient (GMT), a step that would fall below the minimum step length
(MSL), or the iteration cap.

Parameters can be rescaled before stepping: with ``scales`` s the optimizer
works on q = p * s, so a rotation angle scaled by a radius moves about as far
per step as a translation does.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

MAX_ITER = "max_iter"
GMT = "gmt"
MSL = "msl"
NON_OVERLAP = "non_overlap"
NON_FINITE = "non_finite"


class OptimizationError(RuntimeError):
    """The cost was unusable at the starting point; carries the (short) trace."""

    def __init__(self, message: str, trace: "IterationTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class OptimizerConfig:
    step: float = 0.5
    relaxation: float = 0.99
    max_iter: int = 3000
    gmt: float = 1e-4
    msl: float = 1e-4
    schedule: tuple[float, ...] | None = None

    def __post_init__(self):
        if not (self.step > 0 and self.gmt > 0 and self.msl > 0):
            raise ValueError("step, gmt and msl must be positive")
        if not 0.0 < self.relaxation < 1.0:
            raise ValueError("relaxation must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.schedule is not None:
            sched = tuple(float(v) for v in self.schedule)
            if not sched or any(v <= 0 for v in sched):
                raise ValueError("schedule entries must be positive")
            if any(b > a for a, b in zip(sched, sched[1:])):
                raise ValueError("schedule must be non-increasing")
            object.__setattr__(self, "schedule", sched)

    def base_step(self, k: int) -> float:
        if self.schedule is None:
            return self.step
        return self.schedule[min(k, len(self.schedule) - 1)]


@dataclass
class IterationTrace:
    distance: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    step: list[float] = field(default_factory=list)
    params: list[np.ndarray] = field(default_factory=list)
    reason: str | None = None

    def __len__(self):
        return len(self.distance)

    def record(self, distance, grad_norm, step, params):
        self.distance.append(float(distance))
        self.grad_norm.append(float(grad_norm))
        self.step.append(float(step))
        self.params.append(np.array(params, dtype=np.float64))

    def to_csv(self, target=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "distance", "grad_norm", "step"])
        for i, row in enumerate(zip(self.distance, self.grad_norm, self.step)):
            w.writerow([i] + [repr(v) for v in row])
        text = buf.getvalue()
        if target is not None:
            with open(target, "w", newline="") as fh:
                fh.write(text)
        return text


@dataclass
class OptimizeResult:
    transform: object
    value: float
    trace: IterationTrace

    @property
    def reason(self) -> str:
        return self.trace.reason


def _unpack(out):
    if isinstance(out, tuple) and len(out) == 2:
        return out[0], out[1], True
    if isinstance(out, tuple) and len(out) == 3:
        return out
    # result objects such as SymmetricDistanceResult
    return out.d, out.grad, getattr(out, "overlap", True)


def minimize(cost: Callable, x0, cfg: OptimizerConfig = OptimizerConfig(),
             scales: Sequence[float] | None = None) -> OptimizeResult:
    """Minimize ``cost`` from ``x0``.

    ``x0`` is a transform (anything with ``params`` and ``with_params``) or a
    plain parameter vector. ``cost(x)`` returns ``(value, grad)``,
    ``(value, grad, overlap)`` or an object with ``d``, ``grad`` and
    ``overlap`` attributes. On non-overlap or non-finite output the loop
    stops and the lowest-cost iterate seen so far is returned.
    """
    is_transform = hasattr(x0, "with_params")
    p = np.array(x0.params if is_transform else x0, dtype=np.float64)
    s = np.ones(p.size) if scales is None else np.asarray(scales, dtype=np.float64)
    if s.shape != p.shape or np.any(s <= 0):
        raise ValueError("scales must be positive, one per parameter")

    def wrap(params):
        return x0.with_params(params) if is_transform else params.copy()

    trace = IterationTrace()
    best_p, best_v = p.copy(), np.inf
    relax = 1.0
    prev = None
    for k in range(cfg.max_iter):
        value, grad, overlap = _unpack(cost(wrap(p)))
        if not overlap:
            trace.reason = NON_OVERLAP
            break
        grad = np.asarray(grad, dtype=np.float64)
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            trace.reason = NON_FINITE
            break
        if value < best_v:
            best_p, best_v = p.copy(), float(value)
        gq = grad / s
        gnorm = float(np.linalg.norm(gq))
        if prev is not None and float(np.dot(gq, prev)) < 0.0:
            relax *= cfg.relaxation
        lam = cfg.base_step(k) * relax
        trace.record(value, gnorm, lam, p)
        if gnorm < cfg.gmt:
            trace.reason = GMT
            best_p, best_v = p.copy(), float(value)
            break
        if lam * cfg.relaxation < cfg.msl:
            trace.reason = MSL
            break
        p = p - lam * (gq / gnorm) / s
        prev = gq
    else:
        trace.reason = MAX_ITER
    if trace.reason in (MAX_ITER, MSL):
        # the last evaluated iterate is the answer unless nothing was evaluated
        best_p, best_v = np.asarray(trace.params[-1]), trace.distance[-1]
    if not np.isfinite(best_v):
        raise OptimizationError(f"cost unusable at the starting point ({trace.reason})", trace)
    return OptimizeResult(wrap(best_p), best_v, trace)
