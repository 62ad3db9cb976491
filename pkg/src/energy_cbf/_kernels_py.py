"""Pure numpy implementation of the planar-chain kernels.

Both backends share one parameterisation. Absolute link angles are
``theta = base + cumsum(q)``; in those coordinates the inertia matrix is
``A * cos(theta_a - theta_b)`` with a constant coefficient matrix ``A`` (link
inertias folded into its diagonal). Joint-space quantities follow from the
constant map ``theta_dot = T q_dot`` with ``T`` lower-triangular ones, so
``T^T M T`` reduces to two-sided suffix sums.

Signatures must stay identical to ``_kernels.pyx``.
"""

import numpy as np

BACKEND = "python"


def _suffix(v):
    return np.cumsum(v[::-1])[::-1]


def _suffix2(m):
    return np.cumsum(np.cumsum(m[::-1, ::-1], axis=0), axis=1)[::-1, ::-1]


def _spring_force(x, y, spring):
    k, ax, ay, rest = spring[0], spring[1], spring[2], spring[3]
    if k <= 0.0:
        return 0.0, 0.0
    dx = x - ax
    dy = y - ay
    dist = np.hypot(dx, dy)
    stretch = dist - rest
    if stretch <= 0.0 or dist == 0.0:
        return 0.0, 0.0
    scale = -k * stretch / dist
    return scale * dx, scale * dy


def terms(A, gm, lengths, base, q, qd):
    """Return ``(D, C, g, J, x_ee)`` in joint coordinates."""
    th = base + np.cumsum(q)
    w = np.cumsum(qd)
    diff = th[:, None] - th[None, :]
    s, c = np.sin(th), np.cos(th)
    D = _suffix2(A * np.cos(diff))
    C = _suffix2(A * np.sin(diff) * w[None, :])
    g = _suffix(gm * c)
    jt = np.vstack([-lengths * s, lengths * c])
    J = np.cumsum(jt[:, ::-1], axis=1)[:, ::-1]
    x_ee = np.array([np.dot(lengths, c), np.dot(lengths, s)])
    return D, C, g, J, x_ee


def mass_matrix(A, base, q):
    th = base + np.cumsum(q)
    return _suffix2(A * np.cos(th[:, None] - th[None, :]))


def accel(A, gm, lengths, base, q, qd, tau, f_ee, spring):
    """Joint accelerations for torque ``tau`` plus end-effector forces."""
    th = base + np.cumsum(q)
    w = np.cumsum(qd)
    diff = th[:, None] - th[None, :]
    s, c = np.sin(th), np.cos(th)
    fx, fy = f_ee[0], f_ee[1]
    sx, sy = _spring_force(np.dot(lengths, c), np.dot(lengths, s), spring)
    fx += sx
    fy += sy
    gen = -(A * np.sin(diff)) @ (w * w) - gm * c + lengths * (c * fy - s * fx)
    D = _suffix2(A * np.cos(diff))
    return np.linalg.solve(D, tau + _suffix(gen))


def integrate(A, gm, lengths, base, q, qd, tau, f_ee, spring, h, nsub):
    """Advance ``nsub`` classical RK4 steps of size ``h`` with inputs held."""
    q = np.array(q, dtype=float)
    qd = np.array(qd, dtype=float)
    half = 0.5 * h
    for _ in range(int(nsub)):
        a1 = accel(A, gm, lengths, base, q, qd, tau, f_ee, spring)
        v2 = qd + half * a1
        a2 = accel(A, gm, lengths, base, q + half * qd, v2, tau, f_ee, spring)
        v3 = qd + half * a2
        a3 = accel(A, gm, lengths, base, q + half * v2, v3, tau, f_ee, spring)
        v4 = qd + h * a3
        a4 = accel(A, gm, lengths, base, q + h * v3, v4, tau, f_ee, spring)
        q = q + (h / 6.0) * (qd + 2.0 * v2 + 2.0 * v3 + v4)
        qd = qd + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    return q, qd
