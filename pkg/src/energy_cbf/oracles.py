"""Reference computations that share no code path with the library.

Everything here is derived from plain forward kinematics of the link centres
of mass, evaluated with explicit trigonometric sums, so it can catch mistakes
in the closed-form kernels and the exact QP solver.
"""

from __future__ import annotations

import numpy as np


def link_com_positions(model, q) -> np.ndarray:
    """(n, 2) array of centre-of-mass positions by direct summation."""
    n = model.n_links
    out = np.zeros((n, 2))
    joint = np.zeros(2)
    angle = model.base_angle
    for i in range(n):
        angle += q[i]
        direction = np.array([np.cos(angle), np.sin(angle)])
        out[i] = joint + model.com[i] * direction
        joint = joint + model.length[i] * direction
    return out


def link_energies(model, q, qdot, eps: float = 1e-6) -> np.ndarray:
    """Per-link kinetic energies from finite-difference link twists."""
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    v = (link_com_positions(model, q + eps * qdot) - link_com_positions(model, q - eps * qdot)) / (2 * eps)
    omega = np.cumsum(qdot)
    return 0.5 * model.mass * np.sum(v * v, axis=1) + 0.5 * model.inertia * omega**2


def lagrangian_mass_matrix(model, q, eps: float = 1e-6) -> np.ndarray:
    """Hessian of the kinetic energy in ``qdot`` via polarization."""
    n = model.n_links
    eye = np.eye(n)
    ke = np.array([link_energies(model, q, eye[i], eps).sum() for i in range(n)])
    D = np.empty((n, n))
    for i in range(n):
        D[i, i] = 2.0 * ke[i]
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = link_energies(model, q, eye[i] + eye[j], eps).sum() - ke[i] - ke[j]
    return D


def potential_energy(model, q) -> float:
    return float(model.gravity * model.mass @ link_com_positions(model, q)[:, 1])


def potential_gradient(model, q, eps: float = 1e-6) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    grad = np.empty(q.size)
    for i in range(q.size):
        dq = np.zeros(q.size)
        dq[i] = eps
        grad[i] = (potential_energy(model, q + dq) - potential_energy(model, q - dq)) / (2 * eps)
    return grad


def qp_projected_gradient(u_nom, a, b, lower, upper, max_iter: int = 200_000, tol: float = 1e-15):
    """Batched projected-gradient ascent on the scalar dual of the filter QP.

    Arrays are ``(batch, m)``; ``b`` is ``(batch,)``. Pad unused coordinates
    with ``a = 0`` and a zero-width box. Returns ``(u, lam, iterations)``.
    """
    u_nom, a, lower, upper = (np.asarray(x, dtype=float) for x in (u_nom, a, lower, upper))
    b = np.asarray(b, dtype=float)
    step = 1.0 / np.maximum(np.sum(a * a, axis=1), 1e-300)
    lam = np.zeros(b.shape)
    it = 0
    for it in range(1, max_iter + 1):
        u = np.clip(u_nom + lam[:, None] * a, lower, upper)
        new = np.maximum(0.0, lam + step * (b - np.sum(a * u, axis=1)))
        done = np.abs(new - lam) <= tol * (1.0 + lam)
        lam = new
        if np.all(done):
            break
    u = np.clip(u_nom + lam[:, None] * a, lower, upper)
    return u, lam, it
