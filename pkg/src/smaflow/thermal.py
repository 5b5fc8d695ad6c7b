"""Backward-Euler enthalpy step and the mechanical heat source."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .constitutive import MaterialParams, dev_norm, hardening_H2, sym_contract, sym_trace
from .errors import ConfigError
from .mesh import Mesh, assemble_mass, assemble_stiffness, solve_spd


@dataclass(frozen=True)
class ThermalConfig:
    tol: float = 1e-12
    max_iter: int | None = None
    lumped: bool = False

    def violations(self) -> list[str]:
        out = []
        if not 0 < self.tol < 1:
            out.append("tol_thermal: tolerance must lie in (0, 1)")
        if self.max_iter is not None and self.max_iter < 1:
            out.append("max_iter_thermal: iteration cap must be >= 1")
        return out


def _lump_elements(mesh: Mesh, per_element: np.ndarray) -> np.ndarray:
    """Nodal average ``(1/m_i) sum_{T ni i} |T|/3 q_T`` of an element quantity."""
    acc = np.zeros(mesh.n_nodes)
    np.add.at(acc, mesh.triangles, np.repeat((mesh.areas / 3.0 * per_element)[:, None], 3, axis=1))
    return acc / mesh.lumped_mass


def dissipation_rate(p: MaterialParams, mesh: Mesh, edot: np.ndarray, zdot: np.ndarray) -> np.ndarray:
    """Nodal ``eta_u |e'|^2 + rho |z'| + eta_z |z'|^2``; nonnegative term by term."""
    visc = _lump_elements(mesh, p.eta_u * sym_contract(edot, edot))
    n = dev_norm(zdot)
    return visc + p.rho * n + p.eta_z * n * n


def heat_source(p: MaterialParams, mesh: Mesh, edot: np.ndarray, theta: np.ndarray,
                z_new: np.ndarray, zdot: np.ndarray) -> np.ndarray:
    """Nodal mechanical heat source from difference quotients.

    ``edot`` is the per-element strain rate, ``zdot`` the nodal rate of the
    internal variable and ``theta`` the nodal temperature used in the step.
    """
    theta = np.asarray(theta, dtype=float)
    expansion = _lump_elements(mesh, p.alpha * sym_trace(edot))
    _, g2 = hardening_H2(p, z_new)
    coupling = theta * (expansion + np.sum(g2 * zdot, axis=1))
    return dissipation_rate(p, mesh, edot, zdot) + coupling


class ThermalSolver:
    """Caches mass and stiffness for repeated steps with the same conductivity."""

    def __init__(self, mesh: Mesh, cfg: ThermalConfig = ThermalConfig()):
        self.mesh, self.cfg = mesh, cfg
        self.M = assemble_mass(mesh, lumped=cfg.lumped)
        self.m = np.asarray(mesh.lumped_mass)
        self._kappa: np.ndarray | None = None
        self.K: sp.csr_matrix | None = None
        self._systems: dict[float, sp.csr_matrix] = {}

    def stiffness(self, kappa: np.ndarray) -> sp.csr_matrix:
        kappa = np.asarray(kappa, dtype=float)
        if self._kappa is None or kappa.shape != self._kappa.shape or not np.array_equal(kappa, self._kappa):
            self.K = assemble_stiffness(self.mesh, kappa)
            self._kappa = kappa.copy()
            self._systems.clear()
        return self.K

    def step(self, vt_prev: np.ndarray, kappa: np.ndarray, f: np.ndarray, dt: float) -> np.ndarray:
        """Solve ``(M/dt + K) v = M (v_prev/dt + f)`` with insulated boundary.

        The solution is shifted by a constant so that the total enthalpy
        balance ``int v = int v_prev + dt int f`` holds to round-off rather
        than to the linear-solver tolerance. Constants lie in the kernel of
        ``K``, so the shift changes the residual only by ``M c / dt``.
        """
        if dt <= 0:
            raise ConfigError("time step must be positive")
        K = self.stiffness(kappa)
        if dt not in self._systems:
            self._systems[dt] = (self.M / dt + K).tocsr()
        vt_prev = np.asarray(vt_prev, dtype=float)
        f = np.asarray(f, dtype=float)
        rhs = self.M @ (vt_prev / dt + f)
        vt = solve_spd(self._systems[dt], rhs, tol=self.cfg.tol, x0=vt_prev, maxiter=self.cfg.max_iter)
        target = float(self.m @ vt_prev) + dt * float(self.m @ f)
        return vt + (target - float(self.m @ vt)) / self.mesh.area


def thermal_step(mesh: Mesh, vt_prev: np.ndarray, kappa: np.ndarray, f: np.ndarray, dt: float,
                 cfg: ThermalConfig = ThermalConfig()) -> np.ndarray:
    """One-off convenience wrapper around :class:`ThermalSolver`."""
    return ThermalSolver(mesh, cfg).step(vt_prev, kappa, f, dt)


@dataclass
class EstimateReport:
    lhs: np.ndarray
    rhs: np.ndarray
    flagged: list[int]

    @property
    def ok(self) -> bool:
        return not self.flagged


def energy_estimate_check(mesh: Mesh, varthetas, sources, dt: float, k0: float,
                          lumped: bool = False, slack: float = 1e-10) -> EstimateReport:
    """Compare the discrete trajectory against the a priori L2 estimate.

    ``varthetas`` holds ``n+1`` states and ``sources`` the ``n`` source
    fields used to produce them. The continuous growth factor ``exp(t)`` is
    replaced by its backward-Euler counterpart ``(1 - dt)^(-n)``, which is
    the margin the discrete argument actually yields (requires dt < 1).
    """
    M = assemble_mass(mesh, lumped=lumped)
    K = assemble_stiffness(mesh, 1.0)
    vts = [np.asarray(v, dtype=float) for v in varthetas]
    fs = [np.asarray(f, dtype=float) for f in sources]
    if len(fs) != len(vts) - 1:
        raise ValueError("need exactly one source field per step")
    if not 0 < dt < 1:
        raise ValueError("the discrete estimate needs 0 < dt < 1")
    base = float(vts[0] @ M @ vts[0])
    grad_acc = src_acc = 0.0
    lhs, rhs, flagged = [base], [base], []
    for n, (v, f) in enumerate(zip(vts[1:], fs), start=1):
        grad_acc += dt * k0 * float(v @ K @ v)
        src_acc += dt * float(f @ M @ f)
        left = float(v @ M @ v) + 2.0 * grad_acc
        right = (1.0 - dt) ** (-n) * (base + src_acc)
        lhs.append(left)
        rhs.append(right)
        if left > right * (1.0 + slack):
            flagged.append(n)
    return EstimateReport(np.array(lhs), np.array(rhs), flagged)
