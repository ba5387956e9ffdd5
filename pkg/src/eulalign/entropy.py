"""Entropy along characteristics and the critical-threshold classification.

The entropy is ``e = d . grad(u) d + conv`` in unidirectional mode and
``e = div u + conv`` in divergence mode, where ``conv = phi * rho``.  It is
advanced by its own ODE

    de/dt = residual + (damping + e) (conv - e)

(``damping`` is zero except for moving-frame flocks) and can be compared
with the reconstruction from the deformation tensors at any time.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import backend
from .integrate import MAGNITUDE_CAP, BlowUpDetected, Layout, StepControl, adaptive_rk4, advance_vector, rk4
from .particles import FlockState, velocity_gradients

MODES = ("unidirectional", "divergence")


@dataclass
class EntropyField:
    values: np.ndarray
    direction: np.ndarray | None = None
    mode: str = "unidirectional"
    time: float = 0.0
    direction_perp: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown entropy mode {self.mode!r}")
        self.values = np.asarray(self.values, dtype=float)
        if self.direction is not None:
            self.direction = np.asarray(self.direction, dtype=float)

    def replace(self, **changes) -> "EntropyField":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ThresholdVerdict:
    kind: str
    witness: int
    min_e0: float
    blow_up_upper_bound: float | None = None
    witness_label: tuple | None = None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "witness": self.witness, "witness_label": self.witness_label,
                "min_e0": self.min_e0, "blow_up_upper_bound": self.blow_up_upper_bound}


def _unit(direction, n: int) -> np.ndarray:
    d = np.asarray(direction, dtype=float).reshape(-1)
    if d.shape != (n,):
        raise ValueError(f"direction must have {n} components")
    if abs(np.linalg.norm(d) - 1.0) > 1e-12:
        raise ValueError("direction must be a unit vector")
    return d


def conv_at_particles(flock: FlockState) -> np.ndarray:
    """``strength * (phi * rho)`` at every particle, self term included."""
    conv, _, _ = backend.pair_sums(flock.pos, flock.vel, flock.mass, flock.kernel,
                                   flock.domain, grad=False)
    return flock.strength * conv


def directional(grads: np.ndarray, d: np.ndarray) -> np.ndarray:
    """``d^T M d`` for a stack of gradients ``M``."""
    return np.einsum("k,ikl,l->i", d, grads, d)


def reconstruct(flock: FlockState, direction=None, mode: str = "unidirectional") -> np.ndarray:
    """Entropy rebuilt from the deformation tensors and the current convolution."""
    grads = velocity_gradients(flock)
    conv = conv_at_particles(flock)
    if mode == "divergence":
        return np.trace(grads, axis1=1, axis2=2) + conv
    return directional(grads, _unit(direction, flock.dim)) + conv


def entropy_init(flock: FlockState, direction=None, mode: str = "unidirectional") -> EntropyField:
    """Initial entropy from ``defV = grad u0`` (``defX`` is the identity at t=0)."""
    if mode not in MODES:
        raise ValueError(f"unknown entropy mode {mode!r}")
    d = None if direction is None else _unit(direction, flock.dim)
    if mode == "unidirectional" and d is None:
        raise ValueError("unidirectional entropy needs a direction")
    return EntropyField(reconstruct(flock, d, mode), d, mode, flock.time)


def entropy_rhs(e, conv, residual=0.0):
    """``residual + e (conv - e)``."""
    return residual + e * (conv - e)


def residual(gradU) -> np.ndarray | float:
    """``Tr(M)^2 - Tr(M M)``; accepts a single matrix or a stack."""
    M = np.asarray(gradU, dtype=float)
    tr = np.trace(M, axis1=-2, axis2=-1)
    out = tr * tr - np.einsum("...ij,...ji->...", M, M)
    return float(out) if M.ndim == 2 else out


def entropy_rates(mode: str, e: np.ndarray, conv: np.ndarray, grads=None, damping: float = 0.0):
    """Right-hand side used inside the coupled particle system."""
    res = residual(grads) if mode == "divergence" else 0.0
    return res + (damping + e) * (conv - e)


def classify(e0: EntropyField, labels=None) -> ThresholdVerdict:
    """Subcritical iff ``min e0 >= 0``; otherwise report ``-1/min e0``."""
    vals = np.asarray(e0.values)
    k = int(np.argmin(vals))
    m = float(vals[k])
    lab = None if labels is None else tuple(float(c) for c in np.asarray(labels)[k])
    if m < 0:
        return ThresholdVerdict("Supercritical", k, m, -1.0 / m, lab)
    return ThresholdVerdict("Subcritical", k, m, None, lab)


def lower_bound(kernel, diameter: float, mass: float, strength: float = 1.0) -> float:
    """Long-time floor ``1/2 * phi(D) * M`` for the entropy on the support."""
    return 0.5 * strength * float(kernel.radial(np.array([diameter]), order=0)[0][0]) * mass


def advance_entropy(field: EntropyField, flock: FlockState, ctl: StepControl,
                    conv=None, t_target: float | None = None, damping: float = 0.0) -> EntropyField:
    """Advance the entropy ODE with the particle state held fixed.

    ``conv`` defaults to the convolution at the current particle positions;
    pass a scalar or array to freeze it.  With ``t_target`` the field is
    advanced to that time, otherwise by one accepted step.  In divergence
    mode the residual comes from the flock's velocity gradients.
    ``damping`` is the moving-frame coefficient of multi-flock runs.
    """
    c = conv_at_particles(flock) if conv is None else np.broadcast_to(np.asarray(conv, float), field.values.shape)
    res = residual(velocity_gradients(flock)) if field.mode == "divergence" else 0.0
    lay = Layout([("e", field.values.shape)])

    def f(t, y):
        return res + (damping + y) * (c - y)

    def sensor(y):
        big = np.abs(y) > MAGNITUDE_CAP
        return (int(np.argmax(np.abs(y))), "entropy above cap", "e") if big.any() else None

    y = field.values.astype(float).copy()
    if t_target is not None:
        y, t, _ = advance_vector(f, y, field.time, t_target, ctl, lay, sensor)
        return field.replace(values=y, time=t)
    if ctl.method == "rk4":
        y, t = rk4(f, field.time, y, ctl.dt), field.time + ctl.dt
    else:
        y, taken, _ = adaptive_rk4(f, field.time, y, ctl.dt, ctl, lay)
        t = field.time + taken
    hit = None if np.all(np.isfinite(y)) else (int(np.flatnonzero(~np.isfinite(y))[0]), "non-finite state", "e")
    hit = hit or sensor(y)
    if hit is not None:
        raise BlowUpDetected(t, *hit)
    return field.replace(values=y, time=t)
