"""Communication kernels and the domains they act on.

A kernel is a radial profile ``phi(r)`` together with analytic first and
second radial derivatives.  Four families are available:

``constant``
    ``phi(r) = c``.
``algebraic``
    ``phi(r) = a (1 + r**p) ** (-s/p)`` with ``p`` in ``{1, 2}``.  The tail
    is fat exactly when ``s <= 1``.
``bump``
    ``phi(r) = a exp(1 - 1/(1 - (r/R)**2))`` for ``r < R`` and zero
    beyond, a smooth compactly supported profile.
``tabulated``
    Shape-preserving cubic (PCHIP) interpolation of user samples, extended
    past the last node by its last value.

Convolutions against a particle population are mass quadratures
``sum_j m_j phi(|x - x_j|)`` taken with the domain's displacement rule.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

if TYPE_CHECKING:
    from .particles import FlockState

FAMILIES = ("constant", "algebraic", "bump", "tabulated")
FAMILY_CODES = {name: code for code, name in enumerate(FAMILIES)}


class KernelError(ValueError):
    """Invalid kernel parameters or a kernel that fails its sampled checks."""


class DomainError(ValueError):
    """Argument outside the domain of a kernel evaluator."""


@dataclass(frozen=True)
class Domain:
    """Free space or a flat torus.

    Parameters
    ----------
    kind : {"free", "torus"}
    period : sequence of float, optional
        Side lengths of the torus, one per axis.
    images : int, optional
        Number of image shells summed when periodizing a kernel.  ``None``
        lets :meth:`image_count` pick a default from the kernel family.
    """

    kind: str = "free"
    period: tuple[float, ...] | None = None
    images: int | None = None

    def __post_init__(self):
        if self.kind not in ("free", "torus"):
            raise DomainError(f"unknown domain kind {self.kind!r}")
        if self.kind == "torus":
            if not self.period:
                raise DomainError("torus domain needs a period per axis")
            per = tuple(float(p) for p in self.period)
            if any(not np.isfinite(p) or p <= 0 for p in per):
                raise DomainError(f"torus periods must be positive, got {per}")
            object.__setattr__(self, "period", per)
        elif self.period is not None:
            raise DomainError("free-space domain takes no period")
        if self.images is not None and self.images < 0:
            raise DomainError("image shell count must be nonnegative")

    @classmethod
    def free(cls) -> "Domain":
        return cls("free")

    @classmethod
    def torus(cls, period: Sequence[float], images: int | None = None) -> "Domain":
        return cls("torus", tuple(period), images)

    @property
    def periodic(self) -> bool:
        return self.kind == "torus"

    def periods(self, dim: int) -> np.ndarray:
        """Per-axis period array, zero on non-periodic axes."""
        if not self.periodic:
            return np.zeros(dim)
        if len(self.period) != dim:
            raise DomainError(f"torus has {len(self.period)} periods, state has dim {dim}")
        return np.asarray(self.period, dtype=float)

    def wrap(self, d: np.ndarray) -> np.ndarray:
        """Reduce raw displacements to their minimum image."""
        if not self.periodic:
            return d
        L = self.periods(d.shape[-1])
        # rint rounds half to even, which keeps the rule antisymmetric
        return d - L * np.rint(d / L)

    def displacement(self, x, y) -> np.ndarray:
        """``x - y`` under the domain's metric (minimum image on the torus)."""
        return self.wrap(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))

    def image_count(self, kernel: "Kernel") -> int:
        if not self.periodic:
            return 0
        if self.images is not None:
            return self.images
        if kernel.family == "constant":
            return 0
        if kernel.family == "bump" and kernel.params[1] <= 0.5 * min(self.period):
            return 0
        return 1

    def image_shifts(self, dim: int, kernel: "Kernel") -> np.ndarray:
        """Lattice translations summed by the periodized kernel, shape ``(S, dim)``."""
        k = self.image_count(kernel)
        if k == 0:
            return np.zeros((1, dim))
        L = self.periods(dim)
        rng = range(-k, k + 1)
        return np.array([np.multiply(idx, L) for idx in itertools.product(rng, repeat=dim)], dtype=float)


@dataclass(frozen=True)
class Kernel:
    """Radial communication kernel with analytic derivatives.

    Use the family constructors (:meth:`constant`, :meth:`algebraic`,
    :meth:`bump`, :meth:`tabulated`) rather than the raw initializer.
    """

    family: str
    params: tuple[float, ...]
    table_x: tuple[float, ...] = ()
    table_c: tuple[tuple[float, ...], ...] = ()
    _pp: object = field(default=None, repr=False, compare=False)

    @classmethod
    def constant(cls, value: float = 1.0) -> "Kernel":
        if not value > 0:
            raise KernelError("constant kernel must be positive")
        return cls("constant", (float(value),))

    @classmethod
    def algebraic(cls, exponent: float, power: int = 1, scale: float = 1.0) -> "Kernel":
        if power not in (1, 2):
            raise KernelError("algebraic kernel power must be 1 or 2")
        if not exponent > 0 or not scale > 0:
            raise KernelError("algebraic kernel needs positive exponent and scale")
        return cls("algebraic", (float(scale), float(exponent), float(power)))

    @classmethod
    def bump(cls, radius: float, scale: float = 1.0) -> "Kernel":
        if not radius > 0 or not scale > 0:
            raise KernelError("bump kernel needs positive radius and scale")
        return cls("bump", (float(scale), float(radius)))

    @classmethod
    def tabulated(cls, r: Sequence[float], values: Sequence[float]) -> "Kernel":
        r = np.asarray(r, dtype=float)
        v = np.asarray(values, dtype=float)
        if r.ndim != 1 or r.shape != v.shape or r.size < 2:
            raise KernelError("tabulated kernel needs matching 1-D node and value arrays")
        if r[0] != 0.0 or np.any(np.diff(r) <= 0):
            raise KernelError("tabulated nodes must start at 0 and increase strictly")
        if np.any(v <= 0):
            raise KernelError("tabulated kernel values must be positive")
        if np.any(np.diff(v) > 0):
            raise KernelError("tabulated kernel values must be nonincreasing")
        pp = PchipInterpolator(r, v, extrapolate=False)
        c = tuple(tuple(row) for row in pp.c)
        return cls("tabulated", (float(v[-1]),), tuple(r), c, pp)

    @classmethod
    def from_dict(cls, block: dict) -> "Kernel":
        """Build from a config block such as ``{"family": "algebraic", "exponent": 1}``."""
        block = dict(block)
        fam = block.pop("family", None)
        try:
            if fam == "constant":
                return cls.constant(**block)
            if fam == "algebraic":
                return cls.algebraic(**block)
            if fam == "bump":
                return cls.bump(**block)
            if fam == "tabulated":
                return cls.tabulated(block.pop("r"), block.pop("values"), **block)
        except TypeError as exc:
            raise KernelError(f"bad parameters for {fam!r} kernel: {exc}") from None
        raise KernelError(f"unknown kernel family {fam!r}; expected one of {FAMILIES}")

    # -- classification -------------------------------------------------

    @property
    def code(self) -> int:
        return FAMILY_CODES[self.family]

    @property
    def tail(self) -> str:
        """``"fat"`` when the radial integral of the kernel diverges."""
        if self.family == "constant":
            return "fat"
        if self.family == "algebraic":
            return "fat" if self.params[1] <= 1.0 else "thin"
        if self.family == "bump":
            return "thin"
        # constant extension past the last node
        return "fat"

    @property
    def support_radius(self) -> float:
        return self.params[1] if self.family == "bump" else np.inf

    @property
    def sup(self) -> float:
        """``sup phi``, attained at the origin for every family."""
        return float(self.radial(np.zeros(1))[0][0])

    # -- radial profile -------------------------------------------------

    def _table_pp(self):
        pp = self._pp
        if pp is None:
            from scipy.interpolate import PPoly

            pp = PPoly(np.asarray(self.table_c), np.asarray(self.table_x), extrapolate=False)
            object.__setattr__(self, "_pp", pp)
        return pp

    def radial(self, r, order: int = 1):
        """Evaluate ``phi`` and its radial derivatives up to ``order``.

        Returns a tuple ``(phi, dphi[, d2phi])`` of arrays shaped like ``r``.
        No sign check is made on ``r``; see :func:`eval` for the checked form.
        """
        r = np.asarray(r, dtype=float)
        fam, p = self.family, self.params
        if fam == "constant":
            out = [np.full(r.shape, p[0]), np.zeros(r.shape), np.zeros(r.shape)]
        elif fam == "algebraic":
            a, s, pw = p
            if pw == 1.0:
                q = 1.0 + r
                f = a * q ** (-s)
                df = -s * f / q
                d2f = s * (s + 1.0) * f / (q * q)
            else:
                q = 1.0 + r * r
                f = a * q ** (-0.5 * s)
                df = -s * r * f / q
                d2f = -s * f / q + s * (s + 2.0) * r * r * f / (q * q)
            out = [f, df, d2f]
        elif fam == "bump":
            a, R = p
            inside = r < R
            w = np.where(inside, r / R, 0.0)
            q = 1.0 - w * w
            f = np.where(inside, a * np.exp(1.0 - 1.0 / q), 0.0)
            g = -2.0 * w / (R * q * q)  # d/dr of (1 - 1/q)
            dg = np.where(inside, (-2.0 / (R * R)) * (1.0 + 3.0 * w * w) / q**3, 0.0)
            out = [f, f * g, f * (g * g + dg)]
        else:
            pp = self._table_pp()
            last = self.table_x[-1]
            inside = r < last
            rr = np.where(inside, r, 0.0)
            out = [
                np.where(inside, pp(rr), p[0]),
                np.where(inside, pp(rr, 1), 0.0),
                np.where(inside, pp(rr, 2), 0.0),
            ]
        return tuple(out[: order + 1])

    def sample_check(self, r_max: float = 50.0, samples: int = 2001) -> None:
        """Sampled positivity, monotonicity and boundedness checks.

        Raises :class:`KernelError` on the first violated property.
        """
        r = np.linspace(0.0, r_max, samples)
        f, df, d2f = self.radial(r, order=2)
        inside = r < self.support_radius
        if np.any(f[inside] <= 0):
            raise KernelError(f"{self.family} kernel is not positive on its support")
        if np.any(np.diff(f) > 1e-14 * max(1.0, abs(f[0]))):
            raise KernelError(f"{self.family} kernel is not nonincreasing")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(df)) and np.all(np.isfinite(d2f))):
            raise KernelError(f"{self.family} kernel derivatives are unbounded on the sample grid")


def eval(kernel: Kernel, r) -> np.ndarray | float:
    """``phi(r)`` for ``r >= 0``."""
    arr = np.asarray(r, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError("kernel evaluated at negative distance")
    f = kernel.radial(arr, order=0)[0]
    return float(f) if f.ndim == 0 else f


def eval_grad(kernel: Kernel, x) -> np.ndarray:
    """Gradient of ``x -> phi(|x|)``; zero at the origin.

    ``x`` may be a single vector or a stack ``(..., n)``.
    """
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    df = kernel.radial(r)[1]
    safe = np.where(r > 0, r, 1.0)
    coef = np.where(r > 0, df / safe, 0.0)
    return coef[..., None] * x


def eval_hess(kernel: Kernel, x) -> np.ndarray:
    """Hessian of ``x -> phi(|x|)``, shape ``(..., n, n)``.

    Uses ``phi'' xx^T/r^2 + (phi'/r)(I - xx^T/r^2)``; at the origin the
    limit ``phi''(0) I`` is returned.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    r = np.linalg.norm(x, axis=-1)
    _, df, d2f = kernel.radial(r, order=2)
    safe = np.where(r > 0, r, 1.0)
    xh = np.where((r > 0)[..., None], x / safe[..., None], 0.0)
    outer = xh[..., :, None] * xh[..., None, :]
    eye = np.eye(n)
    tang = np.where(r > 0, df / safe, d2f)
    return d2f[..., None, None] * outer + tang[..., None, None] * (eye - outer)


def pair_value(kernel: Kernel, domain: Domain, d: np.ndarray) -> np.ndarray:
    """Periodized kernel at raw displacements ``d`` of shape ``(..., n)``."""
    d = domain.wrap(np.asarray(d, dtype=float))
    total = np.zeros(d.shape[:-1])
    for s in domain.image_shifts(d.shape[-1], kernel):
        total += kernel.radial(np.linalg.norm(d + s, axis=-1), order=0)[0]
    return total


def pair_grad(kernel: Kernel, domain: Domain, d: np.ndarray) -> np.ndarray:
    """Gradient of the periodized kernel at raw displacements ``d``."""
    d = domain.wrap(np.asarray(d, dtype=float))
    total = np.zeros(d.shape)
    for s in domain.image_shifts(d.shape[-1], kernel):
        total += eval_grad(kernel, d + s)
    return total


def convolve(kernel: Kernel, flock: "FlockState", x) -> np.ndarray | float:
    """Mass quadrature ``(phi * rho)(x) = sum_j m_j phi(|x - x_j|)``.

    ``x`` is a point or a stack of points; the return shape follows.
    """
    if flock.size == 0:
        raise ValueError("convolution against an empty flock")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    d = pts[:, None, :] - flock.pos[None, :, :]
    out = pair_value(kernel, flock.domain, d) @ flock.mass
    return float(out[0]) if single else out
