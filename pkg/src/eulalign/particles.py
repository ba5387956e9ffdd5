"""Lagrangian particle state and the characteristic system.

A flock is stored as arrays (structure of arrays); :class:`Particle` is a
read-only view used by the per-particle operations.  Matrix conventions:

* ``defX[i]`` is the Jacobian of the flow map, ``defX[i][m, k] = dX^m / d alpha_k``;
* ``defV[i]`` is the label gradient of the velocity, ``defV[i][k, l] = d v^l / d alpha_k``;
* the Eulerian gradient is ``grad u[k, l] = d_k u^l = (defX^T)^{-1} defV``.

With these conventions the deformation system reads

    d defX / dt = defV^T
    d defV / dt = defX^T G - conv * defV

where ``G[a, b] = sum_j m_j d_a phi(x_i - x_j) (v_j^b - v_i^b)`` and
``conv = sum_j m_j phi(x_i - x_j)``.
"""

from __future__ import annotations

import dataclasses
import functools
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .integrate import (DET_FLOOR, MAGNITUDE_CAP, BlowUpDetected, BlowUpSignal, Layout,
                        StepControl, adaptive_rk4, advance_vector, check_finite, rk4)
from .kernels import Domain, Kernel, pair_grad, pair_value


@dataclass(frozen=True)
class Particle:
    label: np.ndarray
    pos: np.ndarray
    vel: np.ndarray
    mass: float
    rho0: float
    defX: np.ndarray
    defV: np.ndarray
    entropy: float | None = None


@dataclass
class FlockState:
    """Particle population with kernel, domain and clock.

    Parameters
    ----------
    pos, vel : (N, n) arrays
    mass, rho0 : (N,) arrays
        Quadrature weights and initial density at the labels.
    labels : (N, n) array
        Initial positions.
    defX, defV : (N, n, n) arrays or None
        Deformation tensors; ``None`` disables tracking (agent runs).
    strength : float
        Alignment coupling multiplying the pair sums.
    entropy : EntropyField or None
        Entropy carried along characteristics.
    spacing : float or None
        Initial inter-particle spacing (used by local fits and profiles).
    grid : scenarios.Grid or None
        Sampling grid of the labels, when built from a density.
    """

    pos: np.ndarray
    vel: np.ndarray
    mass: np.ndarray
    kernel: Kernel
    domain: Domain = field(default_factory=Domain.free)
    rho0: np.ndarray | None = None
    labels: np.ndarray | None = None
    defX: np.ndarray | None = None
    defV: np.ndarray | None = None
    time: float = 0.0
    strength: float = 1.0
    entropy: object = None
    spacing: float | None = None
    grid: object = None
    dt_hint: float | None = None

    def __post_init__(self):
        self.pos = np.array(self.pos, dtype=float, ndmin=2)
        self.vel = np.array(self.vel, dtype=float, ndmin=2)
        self.mass = np.array(self.mass, dtype=float, ndmin=1)
        N, n = self.pos.shape
        if self.vel.shape != (N, n) or self.mass.shape != (N,):
            raise ValueError("pos, vel and mass shapes disagree")
        if np.any(self.mass < 0):
            raise ValueError("masses must be nonnegative")
        if self.labels is None:
            self.labels = self.pos.copy()
        if self.rho0 is None:
            self.rho0 = np.zeros(N)
        if (self.defX is None) != (self.defV is None):
            raise ValueError("defX and defV must be given together")

    # -- aggregates -----------------------------------------------------

    @property
    def size(self) -> int:
        return self.pos.shape[0]

    @property
    def dim(self) -> int:
        return self.pos.shape[1]

    @property
    def tracking(self) -> bool:
        return self.defX is not None

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.mass))

    @property
    def momentum(self) -> np.ndarray:
        return self.mass @ self.vel

    @property
    def particles(self) -> list[Particle]:
        return [self.particle(i) for i in range(self.size)]

    def particle(self, i: int) -> Particle:
        n = self.dim
        e = None if self.entropy is None else float(self.entropy.values[i])
        return Particle(self.labels[i], self.pos[i], self.vel[i], float(self.mass[i]),
                        float(self.rho0[i]),
                        self.defX[i] if self.tracking else np.eye(n),
                        self.defV[i] if self.tracking else np.zeros((n, n)), e)

    def replace(self, **changes) -> "FlockState":
        return dataclasses.replace(self, **changes)

    def copy(self) -> "FlockState":
        ent = None if self.entropy is None else self.entropy.replace(values=self.entropy.values.copy())
        return self.replace(pos=self.pos.copy(), vel=self.vel.copy(),
                            defX=None if self.defX is None else self.defX.copy(),
                            defV=None if self.defV is None else self.defV.copy(),
                            entropy=ent)


def agents(pos, vel, kernel: Kernel, domain: Domain | None = None, mass=None) -> FlockState:
    """Discrete agent system: equal weights ``1/N`` and no deformation tracking."""
    pos = np.array(pos, dtype=float, ndmin=2)
    N = pos.shape[0]
    if N == 0:
        raise ValueError("need at least one agent")
    m = np.full(N, 1.0 / N) if mass is None else mass
    return FlockState(pos, vel, m, kernel, domain or Domain.free())


# -- right-hand sides ---------------------------------------------------


def alignment_force(i: int, flock: FlockState) -> np.ndarray:
    """``strength * sum_j m_j phi(|x_i - x_j|) (v_j - v_i)`` for one particle."""
    w = pair_value(flock.kernel, flock.domain, flock.pos[i] - flock.pos) * flock.mass
    return flock.strength * (w @ (flock.vel - flock.vel[i]))


def deformation_rhs(i: int, flock: FlockState) -> tuple[np.ndarray, np.ndarray]:
    """Time derivatives ``(d defX_i/dt, d defV_i/dt)`` for one particle."""
    if not flock.tracking:
        raise ValueError("flock does not track deformation tensors")
    d = flock.pos[i] - flock.pos
    m = flock.mass
    conv = pair_value(flock.kernel, flock.domain, d) @ m
    grad = pair_grad(flock.kernel, flock.domain, d) * m[:, None]
    G = grad.T @ (flock.vel - flock.vel[i])
    lam = flock.strength
    return flock.defV[i].T.copy(), lam * (flock.defX[i].T @ G - conv * flock.defV[i])


def _solve_gradients(defX: np.ndarray, defV: np.ndarray) -> np.ndarray:
    det = np.linalg.det(defX)
    bad = np.flatnonzero(~(det > DET_FLOOR))
    if bad.size:
        raise BlowUpSignal(f"det(defX) <= {DET_FLOOR:g} at particle {bad[0]}", int(bad[0]), "deformation collapse")
    return np.linalg.solve(np.swapaxes(defX, -1, -2), defV)


def velocity_gradient(p: Particle) -> np.ndarray:
    """Eulerian gradient ``(defX^T)^{-1} defV`` of one particle."""
    return _solve_gradients(np.asarray(p.defX)[None], np.asarray(p.defV)[None])[0]


def velocity_gradients(flock: FlockState) -> np.ndarray:
    """Stack of Eulerian velocity gradients, shape ``(N, n, n)``."""
    if not flock.tracking:
        raise ValueError("flock does not track deformation tensors")
    return _solve_gradients(flock.defX, flock.defV)


def density_at(p: Particle) -> float:
    """Density along the characteristic, ``rho0 / det(defX)``."""
    det = float(np.linalg.det(p.defX))
    if not det > DET_FLOOR:
        raise BlowUpSignal(f"det(defX) = {det:.3g} below floor", None, "deformation collapse")
    return p.rho0 / det


def densities(flock: FlockState) -> np.ndarray:
    det = np.linalg.det(flock.defX)
    if np.any(~(det > DET_FLOOR)):
        k = int(np.flatnonzero(~(det > DET_FLOOR))[0])
        raise BlowUpSignal("det(defX) below floor", k, "deformation collapse")
    return flock.rho0 / det


# -- packed dynamics ----------------------------------------------------


def layout(flock: FlockState) -> Layout:
    N, n = flock.pos.shape
    return _layout(N, n, flock.tracking, flock.entropy is not None)


@functools.lru_cache(maxsize=32)
def _layout(N: int, n: int, tracking: bool, entropy: bool) -> Layout:
    blocks = [("pos", (N, n)), ("vel", (N, n))]
    if tracking:
        blocks += [("defX", (N, n, n)), ("defV", (N, n, n))]
    if entropy:
        blocks.append(("e", (N,)))
    return Layout(blocks)


def pack(flock: FlockState, lay: Layout) -> np.ndarray:
    arrays = {"pos": flock.pos, "vel": flock.vel}
    if flock.tracking:
        arrays.update(defX=flock.defX, defV=flock.defV)
    if flock.entropy is not None:
        arrays["e"] = flock.entropy.values
    return lay.pack(arrays)


def unpack(flock: FlockState, lay: Layout, y: np.ndarray, time: float) -> FlockState:
    a = {k: v.copy() for k, v in lay.unpack(y).items()}
    ent = flock.entropy
    if ent is not None:
        ent = ent.replace(values=a["e"])
    return flock.replace(pos=a["pos"], vel=a["vel"], defX=a.get("defX"), defV=a.get("defV"),
                         entropy=ent, time=time)


def rates(flock: FlockState, a: dict, damping: float = 0.0) -> dict:
    """Time derivatives of the unpacked blocks ``a``.

    ``damping`` adds the linear term ``-damping * v`` to velocities and
    ``-damping * defV`` to the velocity deformation (moving-frame flocks).
    """
    from .entropy import entropy_rates

    pos, vel = a["pos"], a["vel"]
    conv, force, G = backend.pair_sums(pos, vel, flock.mass, flock.kernel, flock.domain,
                                       grad=flock.tracking)
    lam = flock.strength
    out = {"pos": vel, "vel": lam * force - damping * vel if damping else lam * force}
    if flock.tracking:
        defX, defV = a["defX"], a["defV"]
        out["defX"] = np.swapaxes(defV, 1, 2)
        dV = lam * (np.swapaxes(defX, 1, 2) @ G - defV * conv[:, None, None])
        if damping:
            dV = dV - damping * defV
        out["defV"] = dV
    if flock.entropy is not None:
        grads = None
        if flock.entropy.mode == "divergence":
            grads = np.linalg.solve(np.swapaxes(a["defX"], 1, 2), a["defV"])
        out["e"] = entropy_rates(flock.entropy.mode, a["e"], lam * conv, grads, damping)
    return out


def sensor_for(flock: FlockState, lay: Layout):
    """Blow-up sensor on packed states: determinant floor and magnitude caps."""
    def sensor(y):
        a = lay.unpack(y)
        if "defX" in a:
            det = np.linalg.det(a["defX"])
            bad = np.flatnonzero(~(det > DET_FLOOR))
            if bad.size:
                return int(bad[np.argmin(det[bad])]), "det(defX) below floor", "defX"
        vmag = np.max(np.abs(a["vel"]), axis=1)
        if np.any(vmag > MAGNITUDE_CAP):
            return int(np.argmax(vmag)), "velocity above cap", "vel"
        if "e" in a:
            emag = np.abs(a["e"])
            if np.any(emag > MAGNITUDE_CAP):
                return int(np.argmax(emag)), "entropy above cap", "e"
        return None
    return sensor


def _rhs(flock: FlockState, lay: Layout, damping: float = 0.0):
    def f(t, y):
        return lay.pack(rates(flock, lay.unpack(y), damping))
    return f


def step(flock: FlockState, ctl: StepControl) -> FlockState:
    """Advance by one accepted step (fixed RK4 or step doubling)."""
    lay = layout(flock)
    y = pack(flock, lay)
    f = _rhs(flock, lay)
    if ctl.method == "rk4":
        y = rk4(f, flock.time, y, ctl.dt)
        t, hint = flock.time + ctl.dt, flock.dt_hint
    else:
        y, taken, hint = adaptive_rk4(f, flock.time, y, flock.dt_hint or ctl.dt, ctl, lay)
        t = flock.time + taken
    check_finite(y, lay, t)
    hit = sensor_for(flock, lay)(y)
    if hit is not None:
        raise BlowUpDetected(t, hit[0], hit[1], hit[2])
    out = unpack(flock, lay, y, t)
    out.dt_hint = hint
    return out


def with_monitor(sensor, lay: Layout, monitor):
    """Chain ``monitor(blocks)`` after ``sensor`` on every accepted step."""
    if monitor is None:
        return sensor

    def wrapped(y):
        hit = sensor(y)
        if hit is None:
            monitor(lay.unpack(y))
        return hit
    return wrapped


def advance(flock: FlockState, ctl: StepControl, t_target: float, monitor=None) -> FlockState:
    """Advance to exactly ``t_target``, raising :class:`BlowUpDetected` on blow-up.

    ``monitor``, if given, receives the unpacked state blocks after every
    accepted step.
    """
    lay = layout(flock)
    y, t, hint = advance_vector(_rhs(flock, lay), pack(flock, lay), flock.time, t_target, ctl,
                                lay, with_monitor(sensor_for(flock, lay), lay, monitor), flock.dt_hint)
    out = unpack(flock, lay, y, t)
    out.dt_hint = hint
    return out


def discrete_cs_step(agents_state: FlockState, ctl: StepControl) -> FlockState:
    """One step of the agent system (deformation tracking disabled)."""
    return step(agents_state.replace(defX=None, defV=None), ctl)


def rotate_flock(flock: FlockState, Q: np.ndarray) -> FlockState:
    """Apply the orthogonal map ``x -> Q x`` to positions, velocities and tensors."""
    Q = np.asarray(Q, dtype=float)
    out = flock.copy()
    out.pos = flock.pos @ Q.T
    out.vel = flock.vel @ Q.T
    out.labels = flock.labels @ Q.T
    if flock.tracking:
        # defX -> Q defX Q^T, defV -> Q defV Q^T
        out.defX = Q @ flock.defX @ Q.T
        out.defV = Q @ flock.defV @ Q.T
    if flock.entropy is not None and flock.entropy.direction is not None:
        out.entropy = out.entropy.replace(direction=Q @ flock.entropy.direction)
    return out
