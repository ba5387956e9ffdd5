"""Pure numpy implementation of the pairwise sums (fallback backend).

Mirrors ``_core.pair_sums``: rows are processed in blocks and each block
builds its dense displacement tensor.  Sums use numpy's pairwise
reduction rather than Neumaier compensation, so results agree with the
compiled core to a few ulps rather than bitwise.
"""

from __future__ import annotations

import numpy as np

from .kernels import Domain, Kernel

BLOCK = 256


def pair_sums(pos, vel, mass, kernel: Kernel, domain: Domain, grad: bool):
    N, n = pos.shape
    conv = np.empty(N)
    force = np.empty((N, n))
    G = np.empty((N, n, n)) if grad else None
    shifts = domain.image_shifts(n, kernel)
    for start in range(0, N, BLOCK):
        rows = slice(start, min(N, start + BLOCK))
        d = domain.wrap(pos[rows, None, :] - pos[None, :, :])
        phi = np.zeros(d.shape[:-1])
        gphi = np.zeros(d.shape) if grad else None
        for s in shifts:
            dd = d + s
            r = np.sqrt(np.sum(dd * dd, axis=-1))
            f, df = kernel.radial(r)
            phi += f
            if grad:
                coef = np.divide(df, r, out=np.zeros_like(r), where=r > 0)
                gphi += coef[..., None] * dd
        w = phi * mass[None, :]
        conv[rows] = w.sum(axis=1)
        dv = vel[None, :, :] - vel[rows, None, :]
        for b in range(n):
            force[rows, b] = (w * dv[:, :, b]).sum(axis=1)
        if grad:
            mg = gphi * mass[None, :, None]
            for a in range(n):
                for b in range(n):
                    G[rows, a, b] = (mg[:, :, a] * dv[:, :, b]).sum(axis=1)
    return conv, force, G
