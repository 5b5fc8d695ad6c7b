"""Thermodynamic bookkeeping on discrete trajectories.

Hard identities (nonnegative production and dissipation, enthalpy
conservation, positivity) raise :class:`AuditError`; consistency indicators
(energy residual, entropy mismatch, the enthalpy floor, the global monitor)
are reported and flagged but never asserted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .constitutive import (
    MaterialParams,
    dev_norm,
    entropy_coefficient,
    g_of_theta,
    hardening_H2,
    sym_trace,
    zeta_of_enthalpy,
)
from .errors import AuditError
from .mesh import Mesh, assemble_mass, assemble_stiffness

COLUMNS = ("t", "E_mech", "E_th", "W_ext", "D_cum", "entropy", "entropy_prod", "min_theta",
           "max_theta", "coupler_iters", "energy_residual", "phi_floor")


@dataclass
class AuditLedger:
    """Per-step rows in the fixed column order of :data:`COLUMNS`."""

    rows: list[tuple] = field(default_factory=list)

    def append(self, **values) -> None:
        missing = set(COLUMNS) - values.keys()
        if missing or len(values) != len(COLUMNS):
            raise ValueError(f"ledger row needs exactly the columns {COLUMNS}")
        row = tuple(int(values[c]) if c == "coupler_iters" else float(values[c]) for c in COLUMNS)
        if not all(math.isfinite(v) for v in row):
            raise AuditError("non-finite ledger entry", ["finite columns"])
        if self.rows and not row[0] > self.rows[-1][0]:
            raise AuditError("ledger times must increase strictly", ["t strictly increasing"])
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        k = COLUMNS.index(name)
        return np.array([r[k] for r in self.rows], dtype=float)

    def __len__(self) -> int:
        return len(self.rows)


def enthalpy_floor(times, zinf, p: MaterialParams, vartheta_floor: float | None = None) -> np.ndarray:
    """Positivity floor for the enthalpy along a recorded trajectory.

    ``zinf[k]`` is the max-norm of the internal variable at ``times[k]``.
    The time integral uses the right-endpoint rule and the hardening growth
    constant uses the running supremum of ``zinf``.
    """
    t = np.asarray(times, dtype=float)
    zi = np.asarray(zinf, dtype=float)
    vbar = p.vartheta_floor if vartheta_floor is None else vartheta_floor
    cz = p.h1 + 2.0 * p.h2 * (1.0 + np.maximum.accumulate(zi))
    rate = (3.0 * p.alpha) ** 2 / (2.0 * p.eta_u) + cz**2 / p.eta_z + cz**2 / p.eta_z * zi**2
    integral = np.concatenate([[0.0], np.cumsum(np.diff(t) * rate[1:])])
    return vbar * np.exp(-(p.beta1 / p.cc) * integral)


@dataclass
class MonitorReport:
    M: np.ndarray
    theta_norm: np.ndarray
    zeta_bound_ok: bool
    flagged: list[int]

    @property
    def ok(self) -> bool:
        return self.zeta_bound_ok and not self.flagged


class Auditor:
    """Evaluates ledger quantities with the same quadrature as the solvers."""

    def __init__(self, mesh: Mesh, params: MaterialParams, free_energy, strain):
        self.mesh, self.p = mesh, params
        self._free_energy, self._strain = free_energy, strain
        self.m = np.asarray(mesh.lumped_mass)
        self.M = assemble_mass(mesh)
        self.lap = assemble_stiffness(mesh, 1.0)
        K = sp.triu(assemble_stiffness(mesh, params.k0 * np.eye(2)), k=1).tocoo()
        self._edges = (K.row, K.col, K.data)

    # ------------------------------------------------------------ energies

    def internal_energy(self, u, z, vartheta) -> tuple[float, float]:
        """Mechanical free energy and thermal part ``int vartheta``."""
        return float(self._free_energy(u, z)), float(self.m @ np.asarray(vartheta, dtype=float))

    def entropy(self, u, z, vartheta) -> float:
        theta = zeta_of_enthalpy(self.p, vartheta)
        e = self._strain(u)
        s = float(self.m @ entropy_coefficient(self.p, theta))
        w2 = self.p.alpha * float(self.mesh.areas @ sym_trace(e)) + float(self.m @ hardening_H2(self.p, z)[0])
        return s - w2

    def entropy_production(self, vartheta, xi) -> float:
        """Production rate: diffusive edge sum plus lumped ``xi/theta``.

        With an M-matrix conductivity stiffness, ``-(1/theta)^T K vartheta``
        equals ``sum_{i<j} |K_ij| (1/theta_j - 1/theta_i)(vartheta_i - vartheta_j)``.
        Monotonicity of theta in vartheta makes the two factors share a sign,
        so each summand is written as a product of absolute values.
        """
        vt = np.asarray(vartheta, dtype=float)
        theta = zeta_of_enthalpy(self.p, vt)
        if np.any(theta <= 0):
            raise AuditError("entropy production needs positive temperature", ["min_theta > 0"])
        xi = np.asarray(xi, dtype=float)
        if np.any(xi < 0):
            raise AuditError("negative dissipation rate", ["dissipation >= 0"])
        i, j, k = self._edges
        inv = 1.0 / theta
        diff_terms = np.where(k <= 0, -k * np.abs(inv[j] - inv[i]) * np.abs(vt[i] - vt[j]),
                              -k * (inv[j] - inv[i]) * (vt[i] - vt[j]))
        P = float(np.sum(diff_terms)) + float(self.m @ (xi * inv))
        if P < 0:
            raise AuditError("negative entropy production", ["entropy_prod >= 0"])
        return P

    # ------------------------------------------------------------ monitors

    def monitor_value(self, u, z, vartheta) -> float:
        u, z = np.asarray(u, float), np.asarray(z, float)
        H = self.M + self.lap
        h1 = sum(float(u[:, c] @ H @ u[:, c]) + float(z[:, c] @ H @ z[:, c]) for c in range(2))
        return h1 + float(self.m @ np.abs(vartheta))

    def theta_norm(self, vartheta) -> tuple[float, bool]:
        """``||theta||_{L^beta1}`` and the nodewise bound ``theta^beta1 <= beta1 vartheta^+ / cc``."""
        vt = np.asarray(vartheta, dtype=float)
        theta = zeta_of_enthalpy(self.p, vt)
        pw = theta**self.p.beta1
        bound = self.p.beta1 * np.maximum(vt, 0.0) / self.p.cc
        ok = bool(np.all(pw <= bound * (1.0 + 1e-12) + 1e-300))
        return float(self.m @ pw) ** (1.0 / self.p.beta1), ok


def global_monitor(auditor: Auditor, states, factor: float = 50.0) -> MonitorReport:
    """Boundedness of ``||u||_H1^2 + ||z||_H1^2 + ||vartheta||_L1`` and the temperature norm."""
    Ms, norms, ok = [], [], True
    for st in states:
        Ms.append(auditor.monitor_value(st.u, st.z, st.vartheta))
        n, good = auditor.theta_norm(st.vartheta)
        norms.append(n)
        ok = ok and good
    Ms = np.array(Ms)
    cap = factor * max(Ms[0], 1.0) if len(Ms) else 0.0
    flagged = [k for k, v in enumerate(Ms) if v > cap]
    return MonitorReport(Ms, np.array(norms), ok, flagged)


def check_ledger(ledger: AuditLedger, p: MaterialParams | None = None, slack: float = 0.5) -> list[str]:
    """Recompute ledger-level checks; returns the names of failed ones."""
    failed = []
    if not ledger.rows:
        return failed
    arr = np.array(ledger.rows, dtype=float)
    if not np.all(np.isfinite(arr)):
        failed.append("finite columns")
    t = arr[:, 0]
    if np.any(np.diff(t) <= 0):
        failed.append("t strictly increasing")
    col = {c: arr[:, k] for k, c in enumerate(COLUMNS)}
    if np.any(col["entropy_prod"] < 0):
        failed.append("entropy_prod >= 0")
    if np.any(col["min_theta"] <= 0):
        failed.append("min_theta > 0")
    if np.any(col["max_theta"] < col["min_theta"]):
        failed.append("max_theta >= min_theta")
    if np.any(np.diff(col["D_cum"]) < 0) or (len(t) and col["D_cum"][0] != 0.0):
        failed.append("D_cum nondecreasing")
    if np.any(col["phi_floor"] <= 0):
        failed.append("phi_floor > 0")
    if p is not None and np.all(col["min_theta"] >= 0):
        min_vt = g_of_theta(p, col["min_theta"])
        if np.any(min_vt < (1.0 - slack) * col["phi_floor"] * (1.0 - 1e-12)):
            failed.append("enthalpy above slackened floor")
    return failed
