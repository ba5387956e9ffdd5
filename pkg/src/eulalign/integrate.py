"""Runge-Kutta stepping on flat state vectors, with a blow-up sensor.

States are packed into one float vector by a :class:`Layout` so that the
same RK4 and step-doubling code advances single flocks and multi-flock
clusters.  Being linear combinations of stage slopes, both schemes keep
every linear invariant of the right-hand side (total mass and momentum
here) up to round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DET_FLOOR = 1e-12
MAGNITUDE_CAP = 1e9


class BlowUpSignal(ArithmeticError):
    """A state crossed the classical-solution sensor thresholds."""

    def __init__(self, message: str, index: int | None = None, reason: str = ""):
        super().__init__(message)
        self.index = index
        self.reason = reason


class BlowUpDetected(BlowUpSignal):
    """Raised by the steppers; carries the time and the offending particle."""

    def __init__(self, time: float, index: int | None, reason: str, block: str | None = None):
        super().__init__(f"blow-up detected at t={time:.6g} (particle {index}, {reason})", index, reason)
        self.time = time
        self.block = block


@dataclass(frozen=True)
class StepControl:
    """Step-size policy.

    ``method`` is ``"rk4"`` (fixed step) or ``"adaptive"`` (RK4 with
    step doubling).  Adaptive steps start from ``dt``, halve until the
    local error is within ``tol`` and give up below ``dt_min``.
    """

    dt: float = 1e-2
    method: str = "rk4"
    dt_min: float = 1e-10
    tol: float = 1e-8
    t_end: float = 1.0

    def __post_init__(self):
        if self.method not in ("rk4", "adaptive"):
            raise ValueError(f"unknown step method {self.method!r}")
        if not (self.dt > self.dt_min > 0):
            raise ValueError("need dt > dt_min > 0")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not self.t_end >= 0:
            raise ValueError("t_end must be nonnegative")


class Layout:
    """Named blocks inside a flat state vector.

    Each block is ``(name, shape)``; a block whose leading axis indexes
    particles maps flat component indices back to particle indices.
    """

    def __init__(self, blocks: Sequence[tuple[str, tuple[int, ...]]]):
        self.blocks = []
        offset = 0
        for name, shape in blocks:
            size = int(np.prod(shape)) if len(shape) else 1
            self.blocks.append((name, tuple(shape), offset, size))
            offset += size
        self.size = offset

    def pack(self, arrays: dict) -> np.ndarray:
        y = np.concatenate([np.ravel(arrays[name]) for name, _, _, _ in self.blocks]).astype(float, copy=False)
        if y.size != self.size:
            raise ValueError(f"packed size {y.size} does not match layout size {self.size}")
        return y

    def unpack(self, y: np.ndarray) -> dict:
        return {name: y[off:off + size].reshape(shape) for name, shape, off, size in self.blocks}

    def locate(self, k: int) -> tuple[str, int | None]:
        """Block name and particle index of flat component ``k``."""
        for name, shape, off, size in self.blocks:
            if off <= k < off + size:
                if not shape:
                    return name, None
                per = size // shape[0]
                return name, (k - off) // per
        raise IndexError(k)


Rhs = Callable[[float, np.ndarray], np.ndarray]
Sensor = Callable[[np.ndarray], "tuple[int | None, str, str | None] | None"]


def rk4(f: Rhs, t: float, y: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(t, y)
    k2 = f(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _local_error(y_full: np.ndarray, y_half: np.ndarray) -> tuple[float, int]:
    with np.errstate(invalid="ignore", over="ignore"):
        scaled = np.abs(y_half - y_full) / np.maximum(1.0, np.abs(y_half))
    bad = ~np.isfinite(scaled)
    if bad.any():
        return math.inf, int(np.flatnonzero(bad)[0])
    k = int(np.argmax(scaled))
    return float(scaled[k]), k


def adaptive_rk4(f: Rhs, t: float, y: np.ndarray, dt: float, ctl: StepControl,
                 layout: Layout | None = None):
    """One accepted step-doubling step.

    Returns ``(y_new, dt_taken, dt_next)``.  The two-half-step solution is
    kept.  Raises :class:`BlowUpDetected` when the step would fall below
    ``ctl.dt_min``.
    """
    worst = None
    while True:
        if dt < ctl.dt_min:
            block, idx = layout.locate(worst) if (layout is not None and worst is not None) else (None, None)
            raise BlowUpDetected(t, idx, "step size below dt_min", block)
        with np.errstate(all="ignore"):
            y_full = rk4(f, t, y, dt)
            y_mid = rk4(f, t, y, 0.5 * dt)
            y_half = rk4(f, t + 0.5 * dt, y_mid, 0.5 * dt)
        err, worst = _local_error(y_full, y_half)
        if err <= ctl.tol:
            grow = err <= ctl.tol / 32.0
            dt_next = min(2.0 * dt, ctl.dt) if grow else dt
            return y_half, dt, dt_next
        dt *= 0.5


def check_finite(y: np.ndarray, layout: Layout | None, t: float) -> None:
    if not np.all(np.isfinite(y)):
        k = int(np.flatnonzero(~np.isfinite(y))[0])
        block, idx = layout.locate(k) if layout is not None else (None, None)
        raise BlowUpDetected(t, idx, "non-finite state", block)


def advance_vector(f: Rhs, y: np.ndarray, t: float, t_target: float, ctl: StepControl,
                   layout: Layout | None = None, sensor: Sensor | None = None,
                   dt_hint: float | None = None):
    """Integrate ``y' = f(t, y)`` from ``t`` to exactly ``t_target``.

    Fixed-step mode splits the interval into equal steps no longer than
    ``ctl.dt``; adaptive mode clips its last step to land on the target.
    ``sensor(y)`` runs after every accepted step and returns
    ``(index, reason, block)`` when a threshold is crossed.

    Returns ``(y, t_target, dt_hint)``.
    """
    span = t_target - t
    if span <= 1e-12 * max(1.0, abs(t_target)):
        return y, t, dt_hint

    def _check(y_new, t_new):
        check_finite(y_new, layout, t_new)
        if sensor is not None:
            hit = sensor(y_new)
            if hit is not None:
                idx, reason, block = hit
                raise BlowUpDetected(t_new, idx, reason, block)

    if ctl.method == "rk4":
        steps = max(1, math.ceil(span / ctl.dt - 1e-9))
        h = span / steps
        for k in range(steps):
            t_k = t + k * h
            y = rk4(f, t_k, y, h)
            _check(y, t_target if k == steps - 1 else t + (k + 1) * h)
        return y, t_target, dt_hint

    dt = dt_hint if dt_hint else ctl.dt
    while True:
        remaining = t_target - t
        if remaining <= 1e-12 * max(1.0, abs(t_target)):
            return y, t_target, dt
        clipped = remaining < dt
        h = remaining if clipped else dt
        y, taken, dt_next = adaptive_rk4(f, t, y, h, ctl, layout)
        t = t_target if (clipped and taken == h) else t + taken
        _check(y, t)
        if not (clipped and taken == h):
            dt = dt_next
