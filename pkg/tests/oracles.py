"""Independent reference computations shared by the unit and acceptance tests.

Nothing here calls into the assembly code of the package: element geometry,
quadrature and energies are recomputed from node coordinates with loops.
"""

from __future__ import annotations

import numpy as np


def p1_gradients(xy: np.ndarray) -> tuple[float, np.ndarray]:
    """Area and hat-function gradients (3, 2) of one triangle by inverting the affine map."""
    J = np.array([xy[1] - xy[0], xy[2] - xy[0]]).T
    area = 0.5 * abs(np.linalg.det(J))
    ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return area, ref @ np.linalg.inv(J)


def tensor(e) -> np.ndarray:
    return np.array([[e[0], e[1]], [e[1], e[2]]])


def devt(z) -> np.ndarray:
    return np.array([[z[0], z[1]], [z[1], -z[0]]])


def linear_step_energy(nodes, tris, p, dt, u, z, u_prev, z_prev, theta, load):
    """Incremental energy of one step in the fully linear setting (rho = 0, c1 = 0).

    Vertex quadrature for z-pointwise terms, exact integrals elsewhere.
    """
    def Ecol(x):
        return 2 * p.mu * x + p.lam * np.trace(x) * np.eye(2)

    total = 0.0
    for tri in tris:
        area, G = p1_gradients(nodes[tri])
        Du = G.T @ u[tri]        # Du[a, c] = d u_c / d x_a
        Dp = G.T @ u_prev[tri]
        e = 0.5 * (Du + Du.T)
        ep = 0.5 * (Dp + Dp.T)
        for v in tri:
            d = e - devt(z[v])
            total += area / 3 * 0.5 * np.sum(Ecol(d) * d)
        total += area * 0.5 * p.eta_u / dt * np.sum((e - ep) ** 2)
        total += area * p.alpha * np.mean(theta[tri]) * np.trace(e)
        Dz = G.T @ z[tri]
        total += area * 0.5 * p.nu * np.sum(Dz**2)
        for a in range(3):
            for b in range(3):
                total -= area / 12 * (1 + (a == b)) * load[tri[a]] @ u[tri[b]]
        for v in tri:
            s2 = z[v] @ z[v]
            total += area / 3 * (p.c2 * s2 + 0.5 * p.eta_z / dt * np.sum((z[v] - z_prev[v]) ** 2))
    return total


def minimize_quadratic(energy, n):
    """Exact minimizer of a quadratic function of n variables by polarization."""
    e0 = energy(np.zeros(n))
    single = np.array([energy(np.eye(n)[i]) for i in range(n)])
    H = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            if i == j:
                # f(2 e_i) - 2 f(e_i) + f(0) = H_ii
                H[i, i] = energy(2 * np.eye(n)[i]) - 2 * single[i] + e0
            else:
                H[i, j] = H[j, i] = energy(np.eye(n)[i] + np.eye(n)[j]) - single[i] - single[j] + e0
    g = single - e0 - 0.5 * np.diag(H)
    return np.linalg.solve(H, -g)


def prox_brute_force(r, rho, k, grid=21, tol=1e-14):
    """Zooming grid search for argmin rho|d| + k/2 |d|^2 - r.d.

    Candidates are compared through the change of the objective relative to
    the current center, written so that no large terms cancel; this keeps
    the search meaningful down to increments far below sqrt(machine eps).
    """
    r = np.asarray(r, dtype=float)
    center = np.zeros(2)
    width = 2.0 * (np.linalg.norm(r) / k + 1.0)
    a, b = np.meshgrid(np.linspace(-0.5, 0.5, grid), np.linspace(-0.5, 0.5, grid))
    unit = np.column_stack([a.ravel(), b.ravel()])
    while width > tol:
        eps = width * unit
        cross = 2 * eps @ center + np.sum(eps * eps, axis=1)
        nc = np.linalg.norm(center)
        denom = np.linalg.norm(center + eps, axis=1) + nc
        dnorm = np.divide(cross, denom, out=np.zeros_like(cross), where=denom > 0)
        change = rho * dnorm + 0.5 * k * cross - eps @ r
        center = center + eps[np.argmin(change)]
        width *= 0.25
    return center
