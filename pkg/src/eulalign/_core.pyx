# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pairwise sums for the particle system.

For every particle ``i`` the row kernel accumulates, in fixed ``j`` order
and with Neumaier compensation,

    conv[i]     = sum_j m_j Phi(x_i - x_j)
    force[i, b] = sum_j m_j Phi(x_i - x_j) (v_j^b - v_i^b)
    G[i, a, b]  = sum_j m_j d_a Phi(x_i - x_j) (v_j^b - v_i^b)

where ``Phi`` is the kernel summed over the supplied image shifts.  Rows
are independent, so the result does not depend on the thread count.
"""

from cython.parallel cimport prange
from libc.math cimport sqrt, exp, pow, rint, fabs

cdef enum:
    MAXDIM = 4
    NACC = 1 + MAXDIM + MAXDIM * MAXDIM

cdef enum:
    CONSTANT = 0
    ALGEBRAIC = 1
    BUMP = 2
    TABULATED = 3


cdef inline void _nsum(double* s, double* c, double x) noexcept nogil:
    cdef double t = s[0] + x
    if fabs(s[0]) >= fabs(x):
        c[0] += (s[0] - t) + x
    else:
        c[0] += (x - t) + s[0]
    s[0] = t


cdef inline void _radial(int fam, const double* p, const double* tx, const double* tc,
                         Py_ssize_t m, double r, double* f, double* df) noexcept nogil:
    cdef double q, w, dx
    cdef Py_ssize_t lo, hi, mid
    if fam == CONSTANT:
        f[0] = p[0]
        df[0] = 0.0
    elif fam == ALGEBRAIC:
        if p[2] == 1.0:
            q = 1.0 + r
            if p[1] == 1.0:
                f[0] = p[0] / q
            else:
                f[0] = p[0] * pow(q, -p[1])
            df[0] = -p[1] * f[0] / q
        else:
            q = 1.0 + r * r
            if p[1] == 2.0:
                f[0] = p[0] / q
            else:
                f[0] = p[0] * pow(q, -0.5 * p[1])
            df[0] = -p[1] * r * f[0] / q
    elif fam == BUMP:
        if r >= p[1]:
            f[0] = 0.0
            df[0] = 0.0
        else:
            w = r / p[1]
            q = 1.0 - w * w
            f[0] = p[0] * exp(1.0 - 1.0 / q)
            df[0] = -2.0 * w / (p[1] * q * q) * f[0]
    else:
        if r >= tx[m]:
            f[0] = p[0]
            df[0] = 0.0
            return
        lo = 0
        hi = m
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if tx[mid] <= r:
                lo = mid
            else:
                hi = mid
        dx = r - tx[lo]
        f[0] = ((tc[lo] * dx + tc[m + lo]) * dx + tc[2 * m + lo]) * dx + tc[3 * m + lo]
        df[0] = (3.0 * tc[lo] * dx + 2.0 * tc[m + lo]) * dx + tc[2 * m + lo]


cdef inline void _row(Py_ssize_t i, Py_ssize_t N, int n,
               const double* pos, const double* vel, const double* mass,
               int fam, const double* p, const double* tx, const double* tc, Py_ssize_t m,
               const double* period, const double* shifts, Py_ssize_t S, bint grad,
               double* conv, double* force, double* G) noexcept nogil:
    cdef double acc[NACC]
    cdef double cmp[NACC]
    cdef double d[MAXDIM]
    cdef double dd[MAXDIM]
    cdef double gphi[MAXDIM]
    cdef double dv[MAXDIM]
    cdef double phi, f, df, r, r2, w, mj
    cdef Py_ssize_t j, s
    cdef int a, b, k
    cdef int nacc = 1 + n + n * n
    for k in range(nacc):
        acc[k] = 0.0
        cmp[k] = 0.0
    for j in range(N):
        for a in range(n):
            d[a] = pos[i * n + a] - pos[j * n + a]
            if period[a] > 0.0:
                d[a] = d[a] - period[a] * rint(d[a] / period[a])
        phi = 0.0
        for a in range(n):
            gphi[a] = 0.0
        for s in range(S):
            r2 = 0.0
            for a in range(n):
                dd[a] = d[a] + shifts[s * n + a]
                r2 = r2 + dd[a] * dd[a]
            r = sqrt(r2)
            _radial(fam, p, tx, tc, m, r, &f, &df)
            phi = phi + f
            if grad and r > 0.0:
                for a in range(n):
                    gphi[a] = gphi[a] + df * dd[a] / r
        mj = mass[j]
        w = mj * phi
        _nsum(&acc[0], &cmp[0], w)
        if j == i:
            continue
        for b in range(n):
            dv[b] = vel[j * n + b] - vel[i * n + b]
            _nsum(&acc[1 + b], &cmp[1 + b], w * dv[b])
        if grad:
            for a in range(n):
                for b in range(n):
                    _nsum(&acc[1 + n + a * n + b], &cmp[1 + n + a * n + b], mj * gphi[a] * dv[b])
    conv[i] = acc[0] + cmp[0]
    for b in range(n):
        force[i * n + b] = acc[1 + b] + cmp[1 + b]
    if grad:
        for k in range(n * n):
            G[i * n * n + k] = acc[1 + n + k] + cmp[1 + n + k]


MAX_DIM = MAXDIM


def pair_sums(const double[:, ::1] pos, const double[:, ::1] vel, const double[::1] mass,
              int family, const double[::1] params,
              const double[::1] table_x, const double[:, ::1] table_c,
              const double[::1] period, const double[:, ::1] shifts,
              bint grad, int num_threads,
              double[::1] conv, double[:, ::1] force, double[:, :, ::1] G):
    """Fill ``conv``, ``force`` and (if ``grad``) ``G`` in place."""
    cdef Py_ssize_t N = pos.shape[0]
    cdef int n = pos.shape[1]
    cdef Py_ssize_t S = shifts.shape[0]
    cdef Py_ssize_t m = table_x.shape[0] - 1
    cdef Py_ssize_t i
    if n > MAXDIM:
        raise ValueError("compiled core supports at most %d dimensions" % MAXDIM)
    if N == 0:
        return
    with nogil:
        # literal dimensions let the compiler unroll the inner loops
        for i in prange(N, num_threads=num_threads, schedule="static"):
            if n == 1:
                _row(i, N, 1, &pos[0, 0], &vel[0, 0], &mass[0],
                     family, &params[0], &table_x[0], &table_c[0, 0], m,
                     &period[0], &shifts[0, 0], S, grad,
                     &conv[0], &force[0, 0], &G[0, 0, 0])
            elif n == 2:
                _row(i, N, 2, &pos[0, 0], &vel[0, 0], &mass[0],
                     family, &params[0], &table_x[0], &table_c[0, 0], m,
                     &period[0], &shifts[0, 0], S, grad,
                     &conv[0], &force[0, 0], &G[0, 0, 0])
            elif n == 3:
                _row(i, N, 3, &pos[0, 0], &vel[0, 0], &mass[0],
                     family, &params[0], &table_x[0], &table_c[0, 0], m,
                     &period[0], &shifts[0, 0], S, grad,
                     &conv[0], &force[0, 0], &G[0, 0, 0])
            else:
                _row(i, N, 4, &pos[0, 0], &vel[0, 0], &mass[0],
                     family, &params[0], &table_x[0], &table_c[0, 0], m,
                     &period[0], &shifts[0, 0], S, grad,
                     &conv[0], &force[0, 0], &G[0, 0, 0])
