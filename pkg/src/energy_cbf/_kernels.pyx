# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, language_level=3
"""Compiled planar-chain kernels. Mirrors ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, sqrt

cnp.import_array()

BACKEND = "cython"

cdef enum:
    MAXN = 32


cdef inline void _angles(const double* q, double base, int n,
                         double* th, double* s, double* c) nogil:
    cdef int i
    cdef double acc = base
    for i in range(n):
        acc += q[i]
        th[i] = acc
        s[i] = sin(acc)
        c[i] = cos(acc)


cdef int _accel(const double[:, ::1] A, const double[::1] gm,
                const double[::1] lengths, int n,
                const double* s, const double* c, const double* qd,
                const double* tau, double fx, double fy,
                const double[::1] spring, double* out) nogil:
    cdef double w[MAXN]
    cdef double gen[MAXN]
    cdef double rhs[MAXN]
    cdef double Dt[MAXN * MAXN]
    cdef double L[MAXN * MAXN]
    cdef int a, b, k
    cdef double acc, sab, cab, x, y, dx, dy, dist, stretch, scale

    acc = 0.0
    for a in range(n):
        acc += qd[a]
        w[a] = acc

    x = 0.0
    y = 0.0
    for a in range(n):
        x += lengths[a] * c[a]
        y += lengths[a] * s[a]
    if spring[0] > 0.0:
        dx = x - spring[1]
        dy = y - spring[2]
        dist = sqrt(dx * dx + dy * dy)
        stretch = dist - spring[3]
        if stretch > 0.0 and dist > 0.0:
            scale = -spring[0] * stretch / dist
            fx += scale * dx
            fy += scale * dy

    for a in range(n):
        acc = 0.0
        for b in range(n):
            sab = s[a] * c[b] - c[a] * s[b]
            cab = c[a] * c[b] + s[a] * s[b]
            acc += A[a, b] * sab * w[b] * w[b]
            Dt[a * n + b] = A[a, b] * cab
        gen[a] = -acc - gm[a] * c[a] + lengths[a] * (c[a] * fy - s[a] * fx)

    # joint-space torque and inertia via suffix sums
    acc = 0.0
    for a in range(n - 1, -1, -1):
        acc += gen[a]
        rhs[a] = tau[a] + acc
    for a in range(n - 1, -1, -1):
        acc = 0.0
        for b in range(n - 1, -1, -1):
            acc += Dt[a * n + b]
            Dt[a * n + b] = acc
    for b in range(n):
        for a in range(n - 2, -1, -1):
            Dt[a * n + b] += Dt[(a + 1) * n + b]

    # Cholesky solve
    for a in range(n):
        for b in range(a + 1):
            acc = Dt[a * n + b]
            for k in range(b):
                acc -= L[a * n + k] * L[b * n + k]
            if a == b:
                if acc <= 0.0:
                    return -1
                L[a * n + a] = sqrt(acc)
            else:
                L[a * n + b] = acc / L[b * n + b]
    for a in range(n):
        acc = rhs[a]
        for k in range(a):
            acc -= L[a * n + k] * out[k]
        out[a] = acc / L[a * n + a]
    for a in range(n - 1, -1, -1):
        acc = out[a]
        for k in range(a + 1, n):
            acc -= L[k * n + a] * out[k]
        out[a] = acc / L[a * n + a]
    return 0


def terms(const double[:, ::1] A, const double[::1] gm, const double[::1] lengths, double base,
          const double[::1] q, const double[::1] qd):
    """Return ``(D, C, g, J, x_ee)`` in joint coordinates."""
    cdef int n = q.shape[0]
    if n > MAXN:
        raise ValueError("compiled kernel supports at most 32 links")
    cdef double th[MAXN]
    cdef double s[MAXN]
    cdef double c[MAXN]
    cdef double w[MAXN]
    cdef int a, b
    cdef double acc, sab, cab
    _angles(&q[0], base, n, th, s, c)
    acc = 0.0
    for a in range(n):
        acc += qd[a]
        w[a] = acc

    D_arr = np.empty((n, n))
    C_arr = np.empty((n, n))
    g_arr = np.empty(n)
    J_arr = np.empty((2, n))
    x_arr = np.zeros(2)
    cdef double[:, ::1] D = D_arr
    cdef double[:, ::1] C = C_arr
    cdef double[::1] g = g_arr
    cdef double[:, ::1] J = J_arr
    cdef double[::1] xe = x_arr

    for a in range(n):
        for b in range(n):
            sab = s[a] * c[b] - c[a] * s[b]
            cab = c[a] * c[b] + s[a] * s[b]
            D[a, b] = A[a, b] * cab
            C[a, b] = A[a, b] * sab * w[b]
    for a in range(n - 1, -1, -1):
        for b in range(n - 2, -1, -1):
            D[a, b] += D[a, b + 1]
            C[a, b] += C[a, b + 1]
    for a in range(n - 2, -1, -1):
        for b in range(n):
            D[a, b] += D[a + 1, b]
            C[a, b] += C[a + 1, b]

    acc = 0.0
    for a in range(n - 1, -1, -1):
        acc += gm[a] * c[a]
        g[a] = acc
    for a in range(n):
        xe[0] += lengths[a] * c[a]
        xe[1] += lengths[a] * s[a]
    J[0, n - 1] = -lengths[n - 1] * s[n - 1]
    J[1, n - 1] = lengths[n - 1] * c[n - 1]
    for a in range(n - 2, -1, -1):
        J[0, a] = J[0, a + 1] - lengths[a] * s[a]
        J[1, a] = J[1, a + 1] + lengths[a] * c[a]
    return D_arr, C_arr, g_arr, J_arr, x_arr


def mass_matrix(const double[:, ::1] A, double base, const double[::1] q):
    cdef int n = q.shape[0]
    D, _, _, _, _ = terms(A, np.zeros(n), np.zeros(n), base, q, np.zeros(n))
    return D


def accel(const double[:, ::1] A, const double[::1] gm, const double[::1] lengths, double base,
          const double[::1] q, const double[::1] qd, const double[::1] tau, const double[::1] f_ee,
          const double[::1] spring):
    """Joint accelerations for torque ``tau`` plus end-effector forces."""
    cdef int n = q.shape[0]
    if n > MAXN:
        raise ValueError("compiled kernel supports at most 32 links")
    cdef double th[MAXN]
    cdef double s[MAXN]
    cdef double c[MAXN]
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    _angles(&q[0], base, n, th, s, c)
    if _accel(A, gm, lengths, n, s, c, &qd[0], &tau[0], f_ee[0], f_ee[1],
              spring, &out[0]) != 0:
        raise np.linalg.LinAlgError("inertia matrix is not positive definite")
    return out_arr


def integrate(const double[:, ::1] A, const double[::1] gm, const double[::1] lengths, double base,
              const double[::1] q0, const double[::1] qd0, const double[::1] tau, const double[::1] f_ee,
              const double[::1] spring, double h, int nsub):
    """Advance ``nsub`` classical RK4 steps of size ``h`` with inputs held."""
    cdef int n = q0.shape[0]
    if n > MAXN:
        raise ValueError("compiled kernel supports at most 32 links")
    cdef double q[MAXN]
    cdef double qd[MAXN]
    cdef double qs[MAXN]
    cdef double v2[MAXN]
    cdef double v3[MAXN]
    cdef double v4[MAXN]
    cdef double a1[MAXN]
    cdef double a2[MAXN]
    cdef double a3[MAXN]
    cdef double a4[MAXN]
    cdef double th[MAXN]
    cdef double s[MAXN]
    cdef double c[MAXN]
    cdef double half = 0.5 * h
    cdef double sixth = h / 6.0
    cdef double fx = f_ee[0]
    cdef double fy = f_ee[1]
    cdef int i, step, err = 0

    for i in range(n):
        q[i] = q0[i]
        qd[i] = qd0[i]

    with nogil:
        for step in range(nsub):
            for i in range(n):
                qs[i] = q[i]
            _angles(qs, base, n, th, s, c)
            err |= _accel(A, gm, lengths, n, s, c, qd, &tau[0], fx, fy, spring, a1)
            for i in range(n):
                v2[i] = qd[i] + half * a1[i]
                qs[i] = q[i] + half * qd[i]
            _angles(qs, base, n, th, s, c)
            err |= _accel(A, gm, lengths, n, s, c, v2, &tau[0], fx, fy, spring, a2)
            for i in range(n):
                v3[i] = qd[i] + half * a2[i]
                qs[i] = q[i] + half * v2[i]
            _angles(qs, base, n, th, s, c)
            err |= _accel(A, gm, lengths, n, s, c, v3, &tau[0], fx, fy, spring, a3)
            for i in range(n):
                v4[i] = qd[i] + h * a3[i]
                qs[i] = q[i] + h * v3[i]
            _angles(qs, base, n, th, s, c)
            err |= _accel(A, gm, lengths, n, s, c, v4, &tau[0], fx, fy, spring, a4)
            for i in range(n):
                q[i] = q[i] + sixth * (qd[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i])
                qd[i] = qd[i] + sixth * (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i])
    if err != 0:
        raise np.linalg.LinAlgError("inertia matrix is not positive definite")

    q_out = np.empty(n)
    qd_out = np.empty(n)
    for i in range(n):
        q_out[i] = q[i]
        qd_out[i] = qd[i]
    return q_out, qd_out
