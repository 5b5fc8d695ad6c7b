"""One backward-Euler step of momentum balance and flow rule at frozen temperature.

Every term that is pointwise in the internal variable is integrated with the
vertex rule, so the only inter-node coupling of ``z`` comes from the
gradient regularization. That keeps the dissipation prox separable per node.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .constitutive import (
    MaterialParams,
    dev_contract,
    dev_norm,
    dev_to_sym,
    elastic_apply,
    hardening_H1,
    hardening_H2,
    shrink,
)
from .errors import ConfigError, NonConvergenceError, SolverError
from .mesh import CONTRACTION, Mesh, assemble_mass, assemble_stiffness, solve_spd, strain_operator


@dataclass(frozen=True, eq=False)
class MechState:
    """Displacement ``u`` (n, 2) and internal-variable coordinates ``z`` (n, 2)."""

    u: np.ndarray
    z: np.ndarray

    @classmethod
    def zeros(cls, mesh: Mesh) -> MechState:
        return cls(np.zeros((mesh.n_nodes, 2)), np.zeros((mesh.n_nodes, 2)))


@dataclass(frozen=True)
class MechConfig:
    tol_outer: float = 1e-10
    tol_z: float = 1e-10
    tol_linear: float = 1e-12
    max_outer: int = 200
    max_prox_iters: int = 20000
    step_policy: str = "backtracking"
    tau: float | None = None  # step for the "fixed" policy; default dt / eta_z

    def violations(self) -> list[str]:
        out = []
        for name in ("tol_outer", "tol_z", "tol_linear"):
            v = getattr(self, name)
            if not 0 < v < 1:
                out.append(f"{name}: tolerance must lie in (0, 1)")
        for name in ("max_outer", "max_prox_iters"):
            if int(getattr(self, name)) < 1:
                out.append(f"{name}: iteration cap must be >= 1")
        if self.step_policy not in ("backtracking", "fixed"):
            out.append("step_policy: must be 'backtracking' or 'fixed'")
        if self.tau is not None and not self.tau > 0:
            out.append("tau: fixed proximal step must be positive")
        return out


@dataclass
class ZDiagnostics:
    iterations: int
    residual: float
    tau: float
    energies: list[float] = field(default_factory=list)


@dataclass
class MechDiagnostics:
    outer_iterations: int
    prox_iterations: int
    residual: float
    update: float


def prox_gradient(smooth, z_prev: np.ndarray, m: np.ndarray, rho: float, eta_z: float, dt: float,
                  cfg: MechConfig = MechConfig(), z_guess: np.ndarray | None = None,
                  tau: float | None = None, record: bool = False) -> tuple[np.ndarray, ZDiagnostics]:
    """Proximal gradient for ``smooth(z) + sum_i m_i [rho |d_i| + eta_z/(2 dt) |d_i|^2]``.

    ``d = z - z_prev`` and ``smooth(z, grad)`` returns the value and, when
    asked, the gradient. The metric is ``diag(m)``, so every step is one
    closed-form shrinkage per row. With backtracking the step is halved until
    the descent lemma holds and the accepted step carries over.
    """
    z_prev = np.asarray(z_prev, dtype=float)
    m = np.asarray(m, dtype=float)
    stiff = eta_z / dt
    z = z_prev.copy() if z_guess is None else np.array(z_guess, dtype=float)
    if tau is None:
        tau = cfg.tau if cfg.tau is not None else dt / eta_z
    fixed = cfg.step_policy == "fixed"

    def nonsmooth(delta):
        n = dev_norm(delta)
        return float(np.dot(m, rho * n + 0.5 * stiff * n * n))

    f, g = smooth(z)
    F = f + nonsmooth(z - z_prev)
    energies = [F] if record else []
    res = np.inf
    for it in range(cfg.max_prox_iters + 1):
        res = float(dev_norm(z - z_prev - shrink(-g / m[:, None], rho, stiff)).max())
        if res <= cfg.tol_z * max(1.0, float(np.abs(z).max())):
            return z, ZDiagnostics(it, res, tau, energies)
        if it == cfg.max_prox_iters:
            break
        slack = 1e-13 * (abs(f) + 1.0)
        while True:
            r = (z - z_prev) / tau - g / m[:, None]
            z_new = z_prev + shrink(r, rho, stiff + 1.0 / tau)
            step = z_new - z
            f_new, _ = smooth(z_new, False)
            model = f + np.sum(g * step) + np.dot(m, np.sum(step * step, axis=1)) / (2.0 * tau)
            if fixed or f_new <= model + slack:
                break
            tau *= 0.5
            if tau < 1e-300:
                raise SolverError("proximal step collapsed", residual=res, iterations=it)
        F_new = f_new + nonsmooth(z_new - z_prev)
        if F_new > F + slack:
            raise SolverError("incremental energy increased in the proximal iteration",
                              residual=res, iterations=it)
        z, F = z_new, F_new
        f, g = smooth(z)
        if record:
            energies.append(F)
    raise NonConvergenceError("internal-variable update hit max_prox_iters; reduce the time step",
                              residual=res, iterations=cfg.max_prox_iters)


def _block_weights(areas: np.ndarray, W: np.ndarray) -> sp.csr_matrix:
    return sp.kron(sp.diags(areas), sp.csr_matrix(W), format="csr")


class MechSolver:
    """Assembled operators for the mechanical subproblem on a fixed mesh."""

    def __init__(self, mesh: Mesh, params: MaterialParams):
        self.mesh, self.p = mesh, params
        mu, lam = params.mu, params.lam
        self.B = strain_operator(mesh)
        W_E = np.array([[2 * mu + lam, 0.0, lam], [0.0, 4 * mu, 0.0], [lam, 0.0, 2 * mu + lam]])
        W_L = np.diag(CONTRACTION)
        Bt = self.B.T.tocsr()
        self.K_E = (Bt @ _block_weights(mesh.areas, W_E) @ self.B).tocsr()
        self.K_L = (Bt @ _block_weights(mesh.areas, W_L) @ self.B).tocsr()
        self.Bt = Bt
        self.mass2 = sp.kron(assemble_mass(mesh), sp.identity(2), format="csr")
        self.m = np.asarray(mesh.lumped_mass)
        self.lap = assemble_stiffness(mesh, 1.0)
        self.free = np.flatnonzero(~np.repeat(mesh.boundary, 2))
        self._systems: dict[float, sp.csr_matrix] = {}

    # ---------------------------------------------------------------- helpers

    def strain(self, u: np.ndarray) -> np.ndarray:
        return (self.B @ np.asarray(u, dtype=float).ravel()).reshape(-1, 3)

    def _system(self, dt: float) -> sp.csr_matrix:
        if dt not in self._systems:
            A = self.K_E + (self.p.eta_u / dt) * self.K_L
            self._systems[dt] = A[self.free][:, self.free].tocsr()
        return self._systems[dt]

    def _driving(self, e: np.ndarray) -> np.ndarray:
        """Nodal lumped elastic drive ``sum_T |T|/3 dev(2 mu e_T)``."""
        per = (self.mesh.areas / 3.0)[:, None] * dev_contract(2.0 * self.p.mu * e)
        d = np.zeros((self.mesh.n_nodes, 2))
        np.add.at(d, self.mesh.triangles, np.repeat(per[:, None, :], 3, axis=1))
        return d

    def _smooth(self, z: np.ndarray, d: np.ndarray, theta: np.ndarray, grad: bool = True):
        p, m = self.p, self.m
        h1, g1 = hardening_H1(p, z)
        h2, g2 = hardening_H2(p, z)
        Kz = self.lap @ z
        value = (np.sum(-d * z) + 2.0 * p.mu * np.dot(m, np.sum(z * z, axis=1))
                 + np.dot(m, h1 + theta * h2) + 0.5 * p.nu * np.sum(z * Kz))
        if not grad:
            return value, None
        g = -d + m[:, None] * (4.0 * p.mu * z + g1 + theta[:, None] * g2) + p.nu * Kz
        return value, g

    def _nonsmooth(self, delta: np.ndarray, dt: float) -> float:
        n = dev_norm(delta)
        return float(np.dot(self.m, self.p.rho * n + 0.5 * self.p.eta_z / dt * n * n))

    def _residual(self, delta: np.ndarray, grad: np.ndarray, dt: float) -> np.ndarray:
        target = shrink(-grad / self.m[:, None], self.p.rho, self.p.eta_z / dt)
        return dev_norm(delta - target)

    # ---------------------------------------------------------------- public

    def elastic_energy(self, e: np.ndarray) -> float:
        return 0.5 * float(np.dot(self.mesh.areas, np.einsum(
            "ti,ti->t", elastic_apply(self.p, e), CONTRACTION * e)))

    def free_energy(self, u: np.ndarray, z: np.ndarray) -> float:
        """Discrete mechanical free energy ``int W1`` (vertex rule for z terms)."""
        e = self.strain(u)
        zero = np.zeros(self.mesh.n_nodes)
        return self.elastic_energy(e) + self._smooth(np.asarray(z, float), self._driving(e), zero, False)[0]

    def incremental_energy(self, u, z, z_prev, theta, dt: float) -> float:
        """Objective minimized by :meth:`z_update`, constants included."""
        e = self.strain(u)
        z = np.asarray(z, dtype=float)
        val, _ = self._smooth(z, self._driving(e), np.asarray(theta, float), grad=False)
        return self.elastic_energy(e) + val + self._nonsmooth(z - z_prev, dt)

    def u_solve(self, state_prev: MechState, z: np.ndarray, theta: np.ndarray, load: np.ndarray,
                dt: float, cfg: MechConfig = MechConfig(), u_guess: np.ndarray | None = None) -> np.ndarray:
        """Displacement for given internal variable and temperature."""
        if dt <= 0:
            raise ConfigError("time step must be positive")
        p, tri = self.p, self.mesh.triangles
        zbar = dev_to_sym(np.asarray(z, dtype=float)[tri].mean(axis=1))
        thbar = np.asarray(theta, dtype=float)[tri].mean(axis=1)
        stress = elastic_apply(p, zbar) + (p.eta_u / dt) * self.strain(state_prev.u)
        stress[:, 0] -= p.alpha * thbar
        stress[:, 2] -= p.alpha * thbar
        rhs = self.mass2 @ np.asarray(load, dtype=float).ravel()
        rhs += self.Bt @ (self.mesh.areas[:, None] * CONTRACTION * stress).ravel()
        guess = state_prev.u if u_guess is None else u_guess
        x = solve_spd(self._system(dt), rhs[self.free], tol=cfg.tol_linear,
                      x0=np.asarray(guess, dtype=float).ravel()[self.free])
        u = np.zeros(2 * self.mesh.n_nodes)
        u[self.free] = x
        return u.reshape(-1, 2)

    def z_update(self, u: np.ndarray, z_prev: np.ndarray, theta: np.ndarray, dt: float,
                 cfg: MechConfig = MechConfig(), z_guess: np.ndarray | None = None,
                 tau: float | None = None, record: bool = False) -> tuple[np.ndarray, ZDiagnostics]:
        """Minimize the incremental functional in ``z`` for a fixed displacement."""
        theta = np.asarray(theta, dtype=float)
        d = self._driving(self.strain(u))
        return prox_gradient(lambda z, grad=True: self._smooth(z, d, theta, grad), z_prev, self.m,
                             self.p.rho, self.p.eta_z, dt, cfg, z_guess, tau, record)

    def flow_residual(self, u, z, z_prev, theta, dt: float) -> np.ndarray:
        """Per-node distance from the prox fixed point of the discrete flow rule."""
        z = np.asarray(z, dtype=float)
        _, g = self._smooth(z, self._driving(self.strain(u)), np.asarray(theta, float))
        return self._residual(z - np.asarray(z_prev, float), g, dt)

    def mech_step(self, state_prev: MechState, theta: np.ndarray, load: np.ndarray, dt: float,
                  cfg: MechConfig = MechConfig()) -> tuple[MechState, MechDiagnostics]:
        """Block Gauss-Seidel sweeps, displacement first, until the update stalls."""
        u, z = state_prev.u, state_prev.z
        tau, prox = None, 0
        for k in range(1, cfg.max_outer + 1):
            u_new = self.u_solve(state_prev, z, theta, load, dt, cfg, u_guess=u)
            z_new, zd = self.z_update(u_new, state_prev.z, theta, dt, cfg, z_guess=z, tau=tau)
            tau, prox = zd.tau, prox + zd.iterations
            change = max(float(np.abs(u_new - u).max()), float(np.abs(z_new - z).max()))
            size = max(float(np.abs(u_new).max()), float(np.abs(z_new).max()), 1e-14)
            u, z = u_new, z_new
            if change <= cfg.tol_outer * size:
                return MechState(u, z), MechDiagnostics(k, prox, zd.residual, change / size)
        raise NonConvergenceError("displacement/internal-variable sweeps did not settle; reduce the time step",
                                  residual=change / size, iterations=cfg.max_outer)
