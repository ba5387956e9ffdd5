"""Observables of a flock snapshot and fits over their time series.

All functions are pure in the state they receive.  Sup-norms of matrices
(gradients, Hessians) use the Frobenius norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, stats
from scipy.spatial import ConvexHull, QhullError, cKDTree
from scipy.spatial.distance import pdist

from . import backend
from .entropy import conv_at_particles, reconstruct, residual
from .particles import FlockState, velocity_gradients

_PAIR_BLOCK = 512


# -- extent -------------------------------------------------------------


def _pair_max_free(pts: np.ndarray) -> float:
    N, n = pts.shape
    if N < 2:
        return 0.0
    if n == 1:
        return float(np.ptp(pts[:, 0]))
    if N > n + 1:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except (QhullError, ValueError):
            pass
    if pts.shape[0] <= 4000:
        return float(pdist(pts).max())
    return _pair_max_blocked(pts, None)


def _pair_max_blocked(pts: np.ndarray, wrap) -> float:
    best = 0.0
    for s in range(0, pts.shape[0], _PAIR_BLOCK):
        d = pts[s:s + _PAIR_BLOCK, None, :] - pts[None, :, :]
        if wrap is not None:
            d = wrap(d)
        best = max(best, float(np.sqrt(np.max(np.sum(d * d, axis=-1)))))
    return best


def _support(flock: FlockState) -> np.ndarray:
    keep = flock.mass > 0
    if not keep.any():
        raise ValueError("flock has empty support")
    return keep


def amplitude(flock: FlockState) -> float:
    """``max |v_i - v_j|`` over particles in the support."""
    return _pair_max_free(flock.vel[_support(flock)])


def diameter(flock: FlockState) -> float:
    """``max |x_i - x_j|`` over the support, with minimum-image distances on the torus."""
    pts = flock.pos[_support(flock)]
    if flock.domain.periodic:
        return _pair_max_blocked(pts, flock.domain.wrap) if pts.shape[0] > 1 else 0.0
    return _pair_max_free(pts)


# -- gradient observables -----------------------------------------------


def grad_sup(flock: FlockState, grads=None) -> float:
    g = velocity_gradients(flock) if grads is None else grads
    return float(np.max(np.linalg.norm(g[_support(flock)], axis=(1, 2))))


def residual_sup(flock: FlockState, grads=None) -> float:
    """Sup over the support of ``|(div u)^2 - Tr[(grad u)^2]|``."""
    g = velocity_gradients(flock) if grads is None else grads
    return float(np.max(np.abs(residual(g[_support(flock)]))))


def spectral_gap(flock: FlockState, grads=None) -> float:
    """Max over particles of the eigenvalue gap of the symmetric part of ``grad u`` (n = 2)."""
    if flock.dim != 2:
        raise ValueError("spectral gap is defined for two-dimensional flocks")
    g = velocity_gradients(flock) if grads is None else grads
    S = 0.5 * (g + np.swapaxes(g, 1, 2))
    mu = np.linalg.eigvalsh(S)
    return float(np.max(mu[:, 1] - mu[:, 0]))


def _frame(flock: FlockState) -> np.ndarray:
    ent = flock.entropy
    if ent is None or ent.mode != "divergence" or ent.direction_perp is None:
        raise ValueError("block norms and brackets need a perturbed (divergence-mode) flock")
    n = flock.dim
    A = np.eye(n)
    A[:, 0], A[:, 1] = ent.direction, ent.direction_perp
    Q, R = np.linalg.qr(A)
    return Q * np.sign(np.diag(R))[None, :]


def block_norms(flock: FlockState, grads=None) -> dict:
    """Sup-norms of the partials of ``u = v.d`` and ``v = v.d*`` in the ``(d, d*, ...)`` frame.

    Keys ``d1u, d2u, d1v, d2v`` and ``dku, dkv`` (max over axes 3 and up,
    ``None`` in two dimensions).
    """
    Q = _frame(flock)
    g = velocity_gradients(flock) if grads is None else grads
    M = np.swapaxes(Q, 0, 1)[None] @ g[_support(flock)] @ Q[None]
    out = {"d1u": float(np.max(np.abs(M[:, 0, 0]))), "d2u": float(np.max(np.abs(M[:, 1, 0]))),
           "d1v": float(np.max(np.abs(M[:, 0, 1]))), "d2v": float(np.max(np.abs(M[:, 1, 1]))),
           "dku": None, "dkv": None}
    if flock.dim > 2:
        out["dku"] = float(np.max(np.abs(M[:, 2:, 0])))
        out["dkv"] = float(np.max(np.abs(M[:, 2:, 1])))
    return out


def grad_v_sup(flock: FlockState, grads=None) -> float:
    """Sup-norm of the gradient of the transverse component ``v``."""
    Q = _frame(flock)
    g = velocity_gradients(flock) if grads is None else grads
    return float(np.max(np.linalg.norm(g[_support(flock)] @ Q[:, 1], axis=1)))


def bracket_upsilon(flock: FlockState, grads=None) -> float:
    """Sup over the support of ``|2{u, C(rho, v)} + 2{v, C(rho, u)}|``.

    ``{f, C} = d1 f * C_{d2 phi} - d2 f * C_{d1 phi}``, with the commutators
    evaluated by mass quadrature in the ``(d, d*)`` frame.
    """
    Q = _frame(flock)
    g = velocity_gradients(flock) if grads is None else grads
    _, _, G = backend.pair_sums(flock.pos, flock.vel, flock.mass, flock.kernel, flock.domain, grad=True)
    Qt = Q.T[None]
    M = Qt @ g @ Q[None]
    C = flock.strength * (Qt @ G @ Q[None])
    ups = 2.0 * (M[:, 0, 0] * C[:, 1, 1] - M[:, 1, 0] * C[:, 0, 1]) \
        + 2.0 * (M[:, 0, 1] * C[:, 1, 0] - M[:, 1, 1] * C[:, 0, 0])
    return float(np.max(np.abs(ups[_support(flock)])))


def entropy_gap(flock: FlockState) -> float:
    """Sup of ``|e_ODE - e_reconstructed|`` over the support."""
    ent = flock.entropy
    rec = reconstruct(flock, ent.direction, ent.mode)
    return float(np.max(np.abs(ent.values - rec)[_support(flock)]))


# -- local quadratic fits -------------------------------------------------


def hessian_estimate(flock: FlockState, i: int | None = None, radius: float | None = None,
                     values: np.ndarray | None = None) -> np.ndarray:
    """Second-derivative matrices of each velocity component.

    Fits ``c + b.dx + dx^T A dx / 2`` to the neighbours within ``radius``
    (default three initial spacings) by weighted least squares with tricube
    weights.  Returns ``(n_comp, n, n)`` for one particle or a
    ``(N, n_comp, n, n)`` stack; particles with too few neighbours get NaN.
    """
    pos = flock.pos
    vals = flock.vel if values is None else np.asarray(values, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    N, n = pos.shape
    if radius is None:
        if flock.spacing is None:
            raise ValueError("hessian_estimate needs a radius when the flock has no spacing")
        radius = 3.0 * flock.spacing
    pairs = [(a, b) for a in range(n) for b in range(a, n)]
    need = (n + 1) * (n + 2) // 2
    if flock.domain.periodic:
        L = flock.domain.periods(n)
        tree = cKDTree(np.mod(pos, L), boxsize=L)
        nbrs = tree.query_ball_point(np.mod(pos if i is None else pos[i:i + 1], L), radius)
    else:
        tree = cKDTree(pos)
        nbrs = tree.query_ball_point(pos if i is None else pos[i:i + 1], radius)
    rows = range(N) if i is None else [i]
    out = np.full((len(rows), vals.shape[1], n, n), np.nan)
    for slot, (k, nb) in enumerate(zip(rows, nbrs)):
        if len(nb) < need:
            continue
        nb = np.asarray(nb)
        dx = pos[nb] - pos[k]
        if flock.domain.periodic:
            dx = flock.domain.wrap(dx)
        dx = dx / radius
        w = (1.0 - np.minimum(np.sqrt(np.sum(dx * dx, axis=1)), 1.0) ** 3) ** 3
        X = np.empty((nb.size, need))
        X[:, 0] = 1.0
        X[:, 1:n + 1] = dx
        for c, (a, b) in enumerate(pairs):
            X[:, n + 1 + c] = dx[:, a] * dx[:, b] * (0.5 if a == b else 1.0)
        sw = np.sqrt(w)[:, None]
        coef, _, rank, _ = np.linalg.lstsq(X * sw, (vals[nb] - vals[k]) * sw, rcond=None)
        if rank < need:
            continue
        H = np.empty((vals.shape[1], n, n))
        for c, (a, b) in enumerate(pairs):
            H[:, a, b] = H[:, b, a] = coef[n + 1 + c]
        out[slot] = H / radius**2
    return out[0] if i is not None else out


def hess_sup(flock: FlockState, radius: float | None = None) -> float:
    H = hessian_estimate(flock, radius=radius)
    norms = np.linalg.norm(H, axis=(2, 3))
    keep = _support(flock)[:, None] & np.isfinite(norms)
    return float(np.max(norms[keep])) if keep.any() else math.nan


# -- density profiles -----------------------------------------------------


@dataclass(frozen=True)
class ProfileGrid:
    """Cell-centred grid ``lower + (k + 1/2) * spacing`` with ``shape`` cells per axis."""

    lower: tuple
    spacing: tuple
    shape: tuple
    periodic: bool = False

    @classmethod
    def covering(cls, lower, upper, spacing: float, periodic: bool = False) -> "ProfileGrid":
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        shape = np.maximum(1, np.round((upper - lower) / spacing).astype(int))
        h = (upper - lower) / shape
        return cls(tuple(lower), tuple(h), tuple(int(s) for s in shape), periodic)

    def centres(self, axis: int) -> np.ndarray:
        return self.lower[axis] + (np.arange(self.shape[axis]) + 0.5) * self.spacing[axis]


def density_profile(flock: FlockState, grid: ProfileGrid, shift=None) -> np.ndarray:
    """Mass deposited with linear (cloud-in-cell) weights, divided by cell volume.

    ``shift`` is subtracted from the positions before deposition.
    """
    n = flock.dim
    if len(grid.shape) != n:
        raise ValueError("profile grid dimension differs from the flock's")
    h = np.asarray(grid.spacing)
    shape = np.asarray(grid.shape)
    pos = flock.pos if shift is None else flock.pos - np.asarray(shift)
    s = (pos - np.asarray(grid.lower)) / h - 0.5
    base = np.floor(s).astype(np.int64)
    frac = s - base
    out = np.zeros(int(np.prod(shape)))
    for corner in range(2**n):
        bits = [(corner >> a) & 1 for a in range(n)]
        idx = base + np.asarray(bits)
        w = flock.mass.copy()
        for a in range(n):
            w *= frac[:, a] if bits[a] else 1.0 - frac[:, a]
        if grid.periodic:
            idx = np.mod(idx, shape)
            ok = np.ones(len(w), dtype=bool)
        else:
            ok = np.all((idx >= 0) & (idx < shape), axis=1)
        flat = np.ravel_multi_index(tuple(idx[ok].T), tuple(shape))
        np.add.at(out, flat, w[ok])
    return out.reshape(tuple(shape)) / float(np.prod(h))


@dataclass
class TravelingWave:
    times: np.ndarray
    errors: np.ndarray
    rho_bar: np.ndarray | None


def shift_profile(profile: np.ndarray, grid: ProfileGrid, displacement) -> np.ndarray:
    """``profile(x + displacement)`` on the same grid, by linear interpolation."""
    steps = -np.asarray(displacement, dtype=float) / np.asarray(grid.spacing)
    mode = "grid-wrap" if grid.periodic else "constant"
    return ndimage.shift(profile, steps, order=1, mode=mode, cval=0.0)


def traveling_wave_error(snapshots, ubar, grid: ProfileGrid) -> TravelingWave:
    """Cauchy differences of co-moving density profiles.

    ``snapshots`` is a sequence of ``(t, profile)``.  Each profile is moved
    back by ``ubar * t``; the series holds ``sup |rho_i - rho_last|`` for all
    but the last snapshot, whose shifted profile is returned as ``rho_bar``.
    """
    snaps = list(snapshots)
    for _, p in snaps:
        if tuple(np.shape(p)) != tuple(grid.shape):
            raise ValueError("snapshot does not match the profile grid")
    if len(snaps) < 2:
        last = None if not snaps else shift_profile(np.asarray(snaps[0][1]), grid, np.asarray(ubar) * snaps[0][0])
        return TravelingWave(np.empty(0), np.empty(0), last)
    ubar = np.asarray(ubar, dtype=float)
    moved = [shift_profile(np.asarray(p, dtype=float), grid, ubar * t) for t, p in snaps]
    ref = moved[-1]
    errs = np.array([float(np.max(np.abs(m - ref))) for m in moved[:-1]])
    return TravelingWave(np.array([t for t, _ in snaps[:-1]]), errs, ref)


# -- fits ---------------------------------------------------------------------


@dataclass(frozen=True)
class DecayFit:
    rate: float
    intercept: float
    r_squared: float
    window: tuple

    def to_dict(self) -> dict:
        return {"rate": self.rate, "intercept": self.intercept, "r_squared": self.r_squared,
                "window": list(self.window)}


def fit_decay(times, values, window=None, min_samples: int = 10) -> DecayFit:
    """Least-squares line through ``(t, log value)`` on ``window`` (default ``[T/4, T]``)."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape:
        raise ValueError("times and values differ in length")
    if window is None:
        T = float(t.max())
        window = (0.25 * T, T)
    sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
    if sel.sum() < min_samples:
        raise ValueError(f"need at least {min_samples} samples in the fit window, have {int(sel.sum())}")
    tv, vv = t[sel], v[sel]
    if np.any(~(vv > 0)):
        raise ValueError("decay fits need strictly positive samples")
    lv = np.log(vv)
    if np.ptp(lv) == 0.0:
        return DecayFit(0.0, float(lv[0]), 1.0, tuple(window))
    res = stats.linregress(tv, lv)
    return DecayFit(max(0.0, -float(res.slope)), float(res.intercept), float(res.rvalue**2), tuple(window))


# -- sampling -----------------------------------------------------------------


def observe(flock: FlockState, hessian: bool = True) -> dict:
    """One record of every observable that applies to the flock."""
    rec = {"time": float(flock.time), "amplitude": amplitude(flock), "diameter": diameter(flock),
           "mass": flock.total_mass, "momentum": flock.momentum.tolist(),
           "vel_max": np.max(flock.vel, axis=0).tolist(), "vel_min": np.min(flock.vel, axis=0).tolist()}
    if flock.tracking:
        g = velocity_gradients(flock)
        rec["grad_sup"] = grad_sup(flock, g)
        rec["residual_sup"] = residual_sup(flock, g)
        rec["det_min"] = float(np.min(np.linalg.det(flock.defX)))
        if hessian and flock.spacing is not None:
            rec["hess_sup"] = hess_sup(flock)
        ent = flock.entropy
        if ent is not None:
            rec["entropy_min"] = float(np.min(ent.values))
            rec["entropy_max"] = float(np.max(ent.values))
            rec["entropy_gap"] = entropy_gap(flock)
            if ent.mode == "divergence" and ent.direction_perp is not None:
                rec["block_norms"] = block_norms(flock, g)
                rec["grad_v_sup"] = grad_v_sup(flock, g)
                rec["upsilon"] = bracket_upsilon(flock, g)
    elif flock.entropy is not None:
        rec["entropy_min"] = float(np.min(flock.entropy.values))
        rec["entropy_max"] = float(np.max(flock.entropy.values))
    return rec


@dataclass
class DiagnosticsSeries:
    """Time-indexed observables; ``records`` holds one dict per sample."""

    records: list = field(default_factory=list)
    profiles: list = field(default_factory=list)

    def append(self, record: dict) -> None:
        if self.records and not record["time"] > self.records[-1]["time"]:
            raise ValueError("sample times must increase")
        self.records.append(record)

    def column(self, key: str) -> np.ndarray:
        return np.array([r.get(key, np.nan) if r.get(key) is not None else np.nan for r in self.records], dtype=float)

    @property
    def times(self) -> np.ndarray:
        return self.column("time")
