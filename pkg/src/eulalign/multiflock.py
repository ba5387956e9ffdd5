"""Clusters of flocks coupled only through their group parameters.

Each flock is stored in its own moving frame: positions relative to the
centre of mass ``X_a`` and velocities relative to the group velocity
``V_a``.  The group parameters follow the mass-weighted agent system with
kernel ``Psi`` and coupling ``eps``; inside each frame the alignment of
strength ``lambda_a`` is supplemented by the damping ``-eps R_a v`` with

    R_a = sum_{b != a} M_b Psi(|X_a - X_b|).

Macro and micro variables share one state vector and one RK clock.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import particles as pc
from .entropy import advance_entropy, classify
from .integrate import Layout, StepControl, adaptive_rk4, advance_vector, check_finite, rk4, BlowUpDetected
from .kernels import Kernel, pair_value
from .particles import FlockState
from .scenarios import HypothesisViolation, UnidirectionalSpec, build_unidirectional


@dataclass
class MultiFlockState:
    """Moving-frame flocks plus macro positions ``X``, velocities ``V`` and masses ``M``."""

    flocks: list
    X: np.ndarray
    V: np.ndarray
    psi: Kernel
    eps: float
    time: float = 0.0
    dt_hint: float | None = None

    def __post_init__(self):
        self.X = np.array(self.X, dtype=float, ndmin=2)
        self.V = np.array(self.V, dtype=float, ndmin=2)
        A = len(self.flocks)
        if self.X.shape != self.V.shape or self.X.shape[0] != A:
            raise ValueError("need one macro position and velocity per flock")
        if self.eps < 0:
            raise ValueError("inter-flock coupling must be nonnegative")

    @property
    def M(self) -> np.ndarray:
        return np.array([f.total_mass for f in self.flocks])

    @property
    def count(self) -> int:
        return len(self.flocks)

    def replace(self, **changes) -> "MultiFlockState":
        return dataclasses.replace(self, **changes)


def build_mikado(specs: Sequence[UnidirectionalSpec], X0, V0, psi: Kernel, eps: float) -> MultiFlockState:
    """Assemble unidirectional flocks in their moving frames.

    Each flock is recentred on its centre of mass and its mean velocity is
    removed; ``X0`` and ``V0`` set the group parameters.  Raises
    :class:`HypothesisViolation` naming every flock whose initial entropy
    is negative somewhere.
    """
    flocks, bad = [], []
    for a, spec in enumerate(specs):
        b = build_unidirectional(spec)
        f = b.flock
        M = f.total_mass
        centre = f.mass @ f.pos / M
        mean_v = f.mass @ f.vel / M
        f = f.replace(pos=f.pos - centre, labels=f.labels - centre, vel=f.vel - mean_v)
        if b.verdict.kind != "Subcritical":
            bad.append(f"flock {a}: e_alpha(0) >= 0 violated (min {b.verdict.min_e0:.6g})")
        flocks.append(f)
    if bad:
        raise HypothesisViolation(bad)
    return MultiFlockState(flocks, X0, V0, psi, float(eps))


def _psi_matrix(psi: Kernel, X: np.ndarray) -> np.ndarray:
    from .kernels import Domain

    W = pair_value(psi, Domain.free(), X[:, None, :] - X[None, :, :])
    np.fill_diagonal(W, 0.0)
    return W


def damping_coefficients(state: MultiFlockState, X=None) -> np.ndarray:
    X = state.X if X is None else X
    return _psi_matrix(state.psi, X) @ state.M


def damping_coefficient(state: MultiFlockState, alpha: int) -> float:
    """``R_alpha = sum_{beta != alpha} M_beta Psi(X_alpha - X_beta)``."""
    if not 0 <= alpha < state.count:
        raise IndexError(alpha)
    return float(damping_coefficients(state)[alpha])


def macro_rates(state: MultiFlockState, X: np.ndarray, V: np.ndarray):
    W = _psi_matrix(state.psi, X) * state.M[None, :]
    dV = state.eps * (W @ V - W.sum(axis=1)[:, None] * V)
    return V, dV


def global_momentum(state: MultiFlockState) -> np.ndarray:
    """Mass-weighted mean of the group velocities."""
    M = state.M
    return M @ state.V / M.sum()


def lab_velocities(state: MultiFlockState) -> list[np.ndarray]:
    return [f.vel + state.V[a] for a, f in enumerate(state.flocks)]


def frame_drift(state: MultiFlockState) -> np.ndarray:
    """Mass-weighted mean frame velocity of each flock (zero by construction)."""
    return np.array([f.mass @ f.vel / f.total_mass for f in state.flocks])


# -- packed co-integration --------------------------------------------------


def _layout(state: MultiFlockState):
    A, n = state.X.shape
    blocks = [("X", (A, n)), ("V", (A, n))]
    inner = []
    for a, f in enumerate(state.flocks):
        lay = pc.layout(f)
        inner.append(lay)
        blocks += [(f"{a}:{name}", shape) for name, shape, _, _ in lay.blocks]
    return Layout(blocks), inner


def _pack(state, lay, inner):
    arrays = {"X": state.X, "V": state.V}
    for a, (f, il) in enumerate(zip(state.flocks, inner)):
        for name, arr in il.unpack(pc.pack(f, il)).items():
            arrays[f"{a}:{name}"] = arr
    return lay.pack(arrays)


def _split(a: dict, count: int):
    per = [dict() for _ in range(count)]
    for key, val in a.items():
        if ":" in key:
            idx, name = key.split(":", 1)
            per[int(idx)][name] = val
    return per


def _rhs(state: MultiFlockState, lay: Layout, active=None, frozen_R=None):
    A = state.count

    def f(t, y):
        a = lay.unpack(y)
        out = {}
        if frozen_R is None:
            out["X"], out["V"] = macro_rates(state, a["X"], a["V"])
            R = damping_coefficients(state, a["X"])
        else:
            out["X"], out["V"] = np.zeros_like(a["X"]), np.zeros_like(a["V"])
            R = frozen_R
        for k, blocks in enumerate(_split(a, A)):
            if active is not None and k not in active:
                for name, val in blocks.items():
                    out[f"{k}:{name}"] = np.zeros_like(val)
                continue
            for name, val in pc.rates(state.flocks[k], blocks, state.eps * R[k]).items():
                out[f"{k}:{name}"] = val
        return lay.pack(out)
    return f


def _sensor(state, lay, inner):
    sensors = [pc.sensor_for(f, il) for f, il in zip(state.flocks, inner)]

    def sensor(y):
        a = lay.unpack(y)
        for k, blocks in enumerate(_split(a, state.count)):
            hit = sensors[k](inner[k].pack(blocks))
            if hit is not None:
                return hit[0], f"flock {k}: {hit[1]}", f"{k}:{hit[2]}"
        return None
    return sensor


def _unpack(state, lay, inner, y, t):
    a = lay.unpack(y)
    flocks = []
    for k, blocks in enumerate(_split(a, state.count)):
        flocks.append(pc.unpack(state.flocks[k], inner[k], inner[k].pack(blocks), t))
    return state.replace(flocks=flocks, X=a["X"].copy(), V=a["V"].copy(), time=t)


def _one_step(state, ctl, f, lay, inner):
    y = _pack(state, lay, inner)
    if ctl.method == "rk4":
        y, t, hint = rk4(f, state.time, y, ctl.dt), state.time + ctl.dt, state.dt_hint
    else:
        y, taken, hint = adaptive_rk4(f, state.time, y, state.dt_hint or ctl.dt, ctl, lay)
        t = state.time + taken
    check_finite(y, lay, t)
    hit = _sensor(state, lay, inner)(y)
    if hit is not None:
        raise BlowUpDetected(t, *hit)
    out = _unpack(state, lay, inner, y, t)
    out.dt_hint = hint
    return out


def step(state: MultiFlockState, ctl: StepControl) -> MultiFlockState:
    """One co-integrated step of the macro system and every flock."""
    lay, inner = _layout(state)
    return _one_step(state, ctl, _rhs(state, lay), lay, inner)


def advance(state: MultiFlockState, ctl: StepControl, t_target: float, monitor=None) -> MultiFlockState:
    """Co-integrate to exactly ``t_target``; ``monitor`` sees the blocks after each step."""
    lay, inner = _layout(state)
    sensor = pc.with_monitor(_sensor(state, lay, inner), lay, monitor)
    y, t, hint = advance_vector(_rhs(state, lay), _pack(state, lay, inner), state.time, t_target,
                                ctl, lay, sensor, state.dt_hint)
    out = _unpack(state, lay, inner, y, t)
    out.dt_hint = hint
    return out


def macro_step(state: MultiFlockState, ctl: StepControl) -> MultiFlockState:
    """Advance ``(X, V)`` alone by one step; flocks are left untouched."""
    A, n = state.X.shape
    lay = Layout([("X", (A, n)), ("V", (A, n))])

    def f(t, y):
        a = lay.unpack(y)
        dX, dV = macro_rates(state, a["X"], a["V"])
        return lay.pack({"X": dX, "V": dV})

    y = lay.pack({"X": state.X, "V": state.V})
    if ctl.method == "rk4":
        y, t = rk4(f, state.time, y, ctl.dt), state.time + ctl.dt
    else:
        y, taken, _ = adaptive_rk4(f, state.time, y, ctl.dt, ctl, lay)
        t = state.time + taken
    a = lay.unpack(y)
    return state.replace(X=a["X"].copy(), V=a["V"].copy(), time=t)


def flock_step(state: MultiFlockState, alpha: int, ctl: StepControl) -> MultiFlockState:
    """Advance flock ``alpha`` by one step with the group parameters held fixed."""
    if not 0 <= alpha < state.count:
        raise IndexError(alpha)
    lay, inner = _layout(state)
    f = _rhs(state, lay, active={alpha}, frozen_R=damping_coefficients(state))
    out = _one_step(state, ctl, f, lay, inner)
    return out.replace(X=state.X, V=state.V)


def advance_flock_entropy(state: MultiFlockState, alpha: int, ctl: StepControl, conv=None) -> MultiFlockState:
    """One step of ``de/dt = (eps R + e)(lambda conv - e)`` for flock ``alpha``, positions fixed."""
    fl = state.flocks[alpha]
    R = damping_coefficient(state, alpha)
    ent = advance_entropy(fl.entropy, fl, ctl, conv=conv, damping=state.eps * R)
    flocks = list(state.flocks)
    flocks[alpha] = fl.replace(entropy=ent)
    return state.replace(flocks=flocks)


def entropy_verdicts(state: MultiFlockState):
    return [classify(f.entropy, f.labels) for f in state.flocks]
