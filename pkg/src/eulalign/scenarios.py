"""Initial-data builders and hypothesis checks.

Densities are sampled at the cell centres of a uniform grid over a box;
each retained cell becomes a particle of mass ``rho0 * cell volume``.
Cells with ``rho0 < 1e-12`` are dropped, so every particle lies in the
support.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .entropy import EntropyField, ThresholdVerdict, classify, entropy_init
from .expr import Profile, parse
from .kernels import Domain, Kernel
from .particles import FlockState, agents

RHO_FLOOR = 1e-12


class HypothesisViolation(ValueError):
    """Initial data outside the admissible brackets; ``violations`` lists each one."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class Build(NamedTuple):
    flock: FlockState
    entropy: EntropyField
    verdict: ThresholdVerdict


def _profile(p, dim: int) -> Profile:
    return p if isinstance(p, Profile) else parse(p, dim)


def _unit(v, dim: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape != (dim,):
        raise ValueError(f"{name} must have {dim} components")
    if abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise ValueError(f"{name} must be a unit vector")
    return v


@dataclass
class Grid:
    """Uniform cell-centred sampling of the box ``[lower, upper]``."""

    lower: np.ndarray
    upper: np.ndarray
    shape: tuple[int, ...]

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.shape = tuple(int(s) for s in self.shape)
        if self.lower.shape != self.upper.shape or len(self.shape) != self.lower.size:
            raise ValueError("grid box and shape dimensions disagree")
        if np.any(self.upper <= self.lower) or min(self.shape) < 1:
            raise ValueError("grid box must be nondegenerate with at least one cell per axis")

    @property
    def spacing(self) -> np.ndarray:
        return (self.upper - self.lower) / np.asarray(self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def centres(self) -> np.ndarray:
        axes = [self.lower[k] + (np.arange(s) + 0.5) * self.spacing[k] for k, s in enumerate(self.shape)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)


def sample_density(density: Profile, grid: Grid):
    """Retained labels, their densities and masses."""
    x = grid.centres()
    rho = density(x)
    if np.any(rho < -RHO_FLOOR):
        raise HypothesisViolation(["density must be nonnegative"])
    keep = rho >= RHO_FLOOR
    x, rho = x[keep], rho[keep]
    mass = rho * grid.cell_volume
    if mass.size == 0 or not mass.sum() > 0:
        raise HypothesisViolation(["total mass must be positive"])
    return x, rho, mass


def _default_grid(domain: Domain, box, grid, dim: int) -> Grid:
    if box is None:
        if not domain.periodic:
            raise ValueError("free-space scenarios need an explicit box")
        box = (np.zeros(dim), domain.periods(dim))
    shape = (grid,) * dim if np.isscalar(grid) else tuple(grid)
    return Grid(box[0], box[1], shape)


@dataclass
class UnidirectionalSpec:
    """Flow ``u0(x) d`` with density ``rho0`` sampled on ``grid`` cells of ``box``."""

    direction: Sequence[float]
    profile: object
    density: object
    grid: object = 40
    box: tuple | None = None
    kernel: Kernel = field(default_factory=lambda: Kernel.algebraic(1.0))
    domain: Domain = field(default_factory=Domain.free)
    strength: float = 1.0

    @property
    def dim(self) -> int:
        return len(self.direction)


@dataclass
class PerturbedSpec:
    """Flow ``u0 d + v0 d*`` on the torus with smallness parameter ``eps``."""

    profile_u: object
    profile_v: object
    eps: float
    density: object = 1.0
    grid: object = 32
    box: tuple | None = None
    kernel: Kernel = field(default_factory=lambda: Kernel.constant(1.0))
    domain: Domain = field(default_factory=lambda: Domain.torus([2 * np.pi, 2 * np.pi]))
    direction: Sequence[float] = (1.0, 0.0)
    direction_perp: Sequence[float] = (0.0, 1.0)
    norm_samples: int = 10_000
    validate: bool = True

    @property
    def dim(self) -> int:
        return len(self.direction)


def _assemble(spec, d: np.ndarray, fields: list[tuple[Profile, np.ndarray]], mode: str,
              strength: float = 1.0) -> Build:
    n = d.size
    grid = _default_grid(spec.domain, spec.box, spec.grid, n)
    labels, rho0, mass = sample_density(_profile(spec.density, n), grid)
    N = labels.shape[0]
    vel = np.zeros((N, n))
    defV = np.zeros((N, n, n))
    for prof, axis in fields:
        if prof.is_zero:
            continue
        vel += prof(labels)[:, None] * axis[None, :]
        # defV[k, l] = d_k (profile) * axis_l
        defV += prof.grad(labels)[:, :, None] * axis[None, None, :]
    flock = FlockState(labels.copy(), vel, mass, spec.kernel, spec.domain, rho0=rho0,
                       labels=labels, defX=np.repeat(np.eye(n)[None], N, axis=0), defV=defV,
                       strength=strength, spacing=float(np.max(grid.spacing)), grid=grid)
    ent = entropy_init(flock, d, mode)
    flock.entropy = ent
    return Build(flock, ent, classify(ent, labels))


def build_unidirectional(spec: UnidirectionalSpec) -> Build:
    """Particles for ``u0(x) d`` with the entropy in unidirectional mode."""
    n = spec.dim
    d = _unit(spec.direction, n, "direction")
    return _assemble(spec, d, [(_profile(spec.profile, n), d)], "unidirectional", spec.strength)


def w1inf_norm(profile: Profile, domain: Domain, box, samples: int = 10_000) -> float:
    """``max(sup|f|, sup|grad f|)`` by dense tensor-grid sampling of the box."""
    n = profile.dim
    if box is None:
        box = (np.zeros(n), domain.periods(n))
    m = max(2, int(np.ceil(np.sqrt(samples))))
    axes = [np.linspace(box[0][k], box[1][k], m) for k in range(n)]
    pts = np.stack([a.reshape(-1) for a in np.meshgrid(*axes, indexing="ij")], axis=-1)
    vals = np.abs(profile(pts))
    grads = np.linalg.norm(profile.grad(pts), axis=-1)
    return float(max(vals.max(), grads.max()))


def check_perturbed(spec: PerturbedSpec, e0: np.ndarray | None = None) -> list[str]:
    """Every violated stability bracket, as readable inequalities."""
    n = spec.dim
    eps = spec.eps
    out = []
    if not eps > 0:
        return [f"eps > 0 (got {eps})"]
    nu = w1inf_norm(_profile(spec.profile_u, n), spec.domain, spec.box, spec.norm_samples)
    nv = w1inf_norm(_profile(spec.profile_v, n), spec.domain, spec.box, spec.norm_samples)
    if not 0.5 <= nu <= 2.0:
        out.append(f"1/2 <= ||u0||_W1inf <= 2 violated (||u0||_W1inf = {nu:.6g})")
    if not 0.5 * eps**2 <= nv <= 2.0 * eps**2:
        out.append(f"eps^2/2 <= ||v0||_W1inf <= 2 eps^2 violated (||v0||_W1inf = {nv:.6g}, eps^2 = {eps**2:.6g})")
    if e0 is not None and not np.min(e0) >= np.sqrt(eps):
        out.append(f"inf e0 >= sqrt(eps) violated (inf e0 = {np.min(e0):.6g}, sqrt(eps) = {np.sqrt(eps):.6g})")
    return out


def build_perturbed(spec: PerturbedSpec) -> Build:
    """Particles for ``u0 d + v0 d*`` with the entropy in divergence mode.

    Raises :class:`HypothesisViolation` naming every failed bracket unless
    ``spec.validate`` is false.
    """
    n = spec.dim
    if n < 2:
        raise ValueError("perturbed flows need at least two dimensions")
    d = _unit(spec.direction, n, "direction")
    dp = _unit(spec.direction_perp, n, "direction_perp")
    if abs(d @ dp) > 1e-12:
        raise ValueError("direction and direction_perp must be orthogonal")
    if not spec.domain.periodic:
        raise ValueError("perturbed flows live on the torus")
    u0, v0 = _profile(spec.profile_u, n), _profile(spec.profile_v, n)
    b = _assemble(spec, d, [(u0, d), (v0, dp)], "divergence")
    if spec.validate:
        bad = check_perturbed(spec, b.entropy.values)
        if bad:
            raise HypothesisViolation(bad)
    b.entropy.direction_perp = dp
    return b


def limiting_velocity(flock: FlockState) -> np.ndarray:
    """Mass-weighted mean velocity."""
    M = flock.total_mass
    if not M > 0:
        raise ValueError("limiting velocity needs positive total mass")
    return flock.momentum / M


def build_agents(positions=None, velocities=None, kernel: Kernel | None = None,
                 domain: Domain | None = None, count: int | None = None, dim: int = 2,
                 seed: int | None = None, spread: float = 1.0, speed: float = 1.0) -> FlockState:
    """Agent cloud from explicit arrays or, if absent, a seeded random draw."""
    kernel = kernel or Kernel.constant(1.0)
    if positions is None or velocities is None:
        if count is None:
            raise ValueError("need explicit agents or a count for random generation")
        rng = np.random.default_rng(seed)
        if positions is None:
            positions = rng.uniform(-spread, spread, (count, dim))
        if velocities is None:
            velocities = rng.normal(0.0, speed, (count, dim))
    return agents(positions, velocities, kernel, domain)


def rotation_to(direction) -> np.ndarray:
    """Orthogonal matrix ``Q`` with ``Q e1 = direction``."""
    d = np.asarray(direction, dtype=float)
    n = d.size
    A = np.eye(n)
    A[:, 0] = d
    Q, R = np.linalg.qr(A)
    Q = Q * np.sign(np.diag(R))[None, :]
    if np.linalg.det(Q) < 0 and n > 1:
        Q[:, -1] = -Q[:, -1]
    return Q
