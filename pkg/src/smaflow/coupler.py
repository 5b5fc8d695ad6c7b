"""Staggered fixed-point coupling per time step, the trajectory runner and
a zero-dimensional material-point driver."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .audit import AuditLedger, Auditor, enthalpy_floor
from .config import SimConfig
from .constitutive import (
    MaterialParams,
    dev_contract,
    dev_norm,
    dev_to_sym,
    elastic_apply,
    g_of_theta,
    hardening_H1,
    hardening_H2,
    kappa_c,
    sym_contract,
    sym_trace,
    zeta_of_enthalpy,
)
from .errors import ConfigError, NonConvergenceError, PositivityError
from .mechanics import MechConfig, MechDiagnostics, MechSolver, MechState, prox_gradient
from .mesh import Mesh, build_rect_mesh
from .thermal import ThermalConfig, ThermalSolver, dissipation_rate, heat_source


@dataclass(frozen=True, eq=False)
class CoupledState:
    u: np.ndarray
    z: np.ndarray
    vartheta: np.ndarray
    t: float = 0.0

    @property
    def mech(self) -> MechState:
        return MechState(self.u, self.z)


@dataclass(frozen=True)
class CouplerConfig:
    dt: float
    t_end: float
    tol_couple: float = 1e-10
    max_fp_iters: int = 50
    omega: float = 1.0

    def __post_init__(self) -> None:
        bad = []
        if not self.dt > 0:
            bad.append("dt > 0 required")
        if not self.t_end >= 0:
            bad.append("t_end >= 0 required")
        if not 0 < self.tol_couple < 1:
            bad.append("tol_couple: tolerance must lie in (0, 1)")
        if self.max_fp_iters < 1:
            bad.append("max_fp_iters: iteration cap must be >= 1")
        if not 0 < self.omega <= 1:
            bad.append("omega: relaxation must lie in (0, 1]")
        if bad:
            raise ConfigError("invalid coupler configuration: " + "; ".join(bad), bad)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class StepResult:
    state: CoupledState
    iterations: int
    residuals: list[float]
    theta: np.ndarray
    source: np.ndarray
    dissipation: np.ndarray
    work: float
    mech: MechDiagnostics


class CoupledProblem:
    """Mesh, material and cached subproblem solvers for one simulation."""

    def __init__(self, mesh: Mesh, params: MaterialParams, mech_cfg: MechConfig = MechConfig(),
                 thermal_cfg: ThermalConfig = ThermalConfig()):
        self.mesh, self.p = mesh, params
        self.mech_cfg = mech_cfg
        self.mech = MechSolver(mesh, params)
        self.thermal = ThermalSolver(mesh, thermal_cfg)

    def _l2(self, v: np.ndarray) -> float:
        return math.sqrt(max(float(v @ (self.thermal.M @ v)), 0.0))

    def coupled_step(self, state: CoupledState, load: np.ndarray, cfg: CouplerConfig) -> StepResult:
        """Picard iteration on the enthalpy guess.

        Each sweep maps a guess to temperature, solves the mechanics from
        the previous state, assembles the heat source and solves the
        enthalpy equation. The last computed triple is accepted once the
        relative L2 change falls below ``tol_couple``.
        """
        p, dt = self.p, cfg.dt
        guess = np.array(state.vartheta, dtype=float)
        residuals: list[float] = []
        tri = self.mesh.triangles
        for k in range(1, cfg.max_fp_iters + 1):
            theta = zeta_of_enthalpy(p, guess)
            mech, diag = self.mech.mech_step(state.mech, theta, load, dt, self.mech_cfg)
            edot = self.mech.strain(mech.u - state.u) / dt
            zdot = (mech.z - state.z) / dt
            f = heat_source(p, self.mesh, edot, theta, mech.z, zdot)
            kappa = kappa_c(p, None, None, guess[tri].mean(axis=1))
            vt = self.thermal.step(state.vartheta, kappa, f, dt)
            r = self._l2(vt - guess) / max(self._l2(vt), 1.0)
            residuals.append(r)
            if r <= cfg.tol_couple:
                break
            guess = (1.0 - cfg.omega) * guess + cfg.omega * vt
        else:
            raise NonConvergenceError("thermo-mechanical fixed point did not converge; reduce the time step",
                                      residual=residuals[-1], iterations=cfg.max_fp_iters)
        if not float(vt.min()) > 0:
            raise PositivityError(f"enthalpy lost positivity at t={state.t + dt:.6g}: min={vt.min():.6g}")
        work = float((mech.u - state.u).ravel() @ (self.mech.mass2 @ np.asarray(load, float).ravel()))
        new = CoupledState(mech.u, mech.z, vt, state.t + dt)
        xi = dissipation_rate(p, self.mesh, edot, zdot)
        return StepResult(new, k, residuals, theta, f, xi, work, diag)


@dataclass
class MonitorRow:
    t: float
    M: float
    theta_norm: float
    zeta_bound_ok: bool
    min_vartheta: float
    z_inf: float


@dataclass
class Trajectory:
    ledger: AuditLedger
    final: CoupledState
    snapshots: list[tuple[int, CoupledState]] = field(default_factory=list)
    monitor: list[MonitorRow] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    mesh: Mesh | None = None

    def entropy_mismatch(self) -> float:
        """``Sigma(t_end) - Sigma(0) - sum P dt``."""
        S = self.ledger.column("entropy")
        P = self.ledger.column("entropy_prod")
        t = self.ledger.column("t")
        return float(S[-1] - S[0] - np.sum(P[1:] * np.diff(t)))


def initial_state(cfg: SimConfig, mesh: Mesh) -> CoupledState:
    u, z, vt = cfg.initial_fields(mesh.nodes)
    u[mesh.boundary] = 0.0  # validation admits round-off there, e.g. sin(pi x) at x = 1
    return CoupledState(u, z, vt, 0.0)


def run(cfg: SimConfig, observer: Callable[[int, StepResult], None] | None = None,
        snapshot_stride: int | None = None, monitor_factor: float = 50.0,
        floor_slack: float = 0.5) -> Trajectory:
    """March the configured scenario to ``t_end`` with audits after every step."""
    mesh = build_rect_mesh(cfg.mesh.nx, cfg.mesh.ny, cfg.mesh.Lx, cfg.mesh.Ly)
    p = cfg.material
    problem = CoupledProblem(mesh, p, cfg.solver.mech(), cfg.solver.thermal())
    s = cfg.solver
    ccfg = CouplerConfig(cfg.time.dt, cfg.time.t_end, s.tol_couple, s.max_fp_iters, s.omega)
    auditor = Auditor(mesh, p, problem.mech.free_energy, problem.mech.strain)
    stride = cfg.output.snapshot_stride if snapshot_stride is None else snapshot_stride

    state = initial_state(cfg, mesh)
    ledger = AuditLedger()
    traj = Trajectory(ledger, state, mesh=mesh)
    times, zinf = [0.0], [float(dev_norm(state.z).max())]

    def observe(st: CoupledState) -> None:
        n, ok = auditor.theta_norm(st.vartheta)
        traj.monitor.append(MonitorRow(st.t, auditor.monitor_value(st.u, st.z, st.vartheta), n, ok,
                                       float(st.vartheta.min()), zinf[-1]))

    E_mech, E_th = auditor.internal_energy(state.u, state.z, state.vartheta)
    theta = zeta_of_enthalpy(p, state.vartheta)
    ledger.append(t=0.0, E_mech=E_mech, E_th=E_th, W_ext=0.0, D_cum=0.0,
                  entropy=auditor.entropy(state.u, state.z, state.vartheta), entropy_prod=0.0,
                  min_theta=theta.min(), max_theta=theta.max(), coupler_iters=0, energy_residual=0.0,
                  phi_floor=p.vartheta_floor)
    observe(state)
    traj.snapshots.append((0, state))
    W_ext = D_cum = 0.0
    for n in range(1, ccfg.n_steps + 1):
        t = n * ccfg.dt
        load = cfg.load.field(mesh.nodes, t, cfg.mesh.Lx, cfg.mesh.Ly)
        res = problem.coupled_step(state, load, ccfg)
        new = CoupledState(res.state.u, res.state.z, res.state.vartheta, t)
        E1_mech, E1_th = auditor.internal_energy(new.u, new.z, new.vartheta)
        R = (E1_mech + E1_th) - (E_mech + E_th) - res.work
        W_ext += res.work
        D_cum += ccfg.dt * float(mesh.lumped_mass @ res.dissipation)
        times.append(t)
        zinf.append(float(dev_norm(new.z).max()))
        phi = float(enthalpy_floor(times, zinf, p)[-1])
        theta = zeta_of_enthalpy(p, new.vartheta)
        ledger.append(t=t, E_mech=E1_mech, E_th=E1_th, W_ext=W_ext, D_cum=D_cum,
                      entropy=auditor.entropy(new.u, new.z, new.vartheta),
                      entropy_prod=auditor.entropy_production(new.vartheta, res.dissipation),
                      min_theta=theta.min(), max_theta=theta.max(), coupler_iters=res.iterations,
                      energy_residual=R, phi_floor=phi)
        traj.iterations.append(res.iterations)
        observe(new)
        if new.vartheta.min() < floor_slack * phi:
            traj.flags.append(f"t={t:.6g}: min enthalpy below {floor_slack} x floor")
        if traj.monitor[-1].M > monitor_factor * max(traj.monitor[0].M, 1.0):
            traj.flags.append(f"t={t:.6g}: global monitor above {monitor_factor} x initial")
        if not traj.monitor[-1].zeta_bound_ok:
            traj.flags.append(f"t={t:.6g}: nodewise temperature bound violated")
        if observer is not None:
            observer(n, res)
        if n % stride == 0 or n == ccfg.n_steps:
            traj.snapshots.append((n, new))
        state, E_mech, E_th = new, E1_mech, E1_th
    traj.final = state
    return traj


# ---------------------------------------------------------------- material point


@dataclass
class MaterialPointPath:
    t: np.ndarray
    strain: np.ndarray
    z: np.ndarray
    stress: np.ndarray
    theta: np.ndarray
    dissipation: np.ndarray  # per-step increments

    def loop_area(self, start: int = 0, stop: int | None = None) -> float:
        """Trapezoidal ``sum sigma:de`` between two sample indices."""
        s = self.stress[start:stop]
        e = self.strain[start:stop]
        mid = 0.5 * (s[1:] + s[:-1])
        return float(np.sum(sym_contract(mid, np.diff(e, axis=0))))

    def dissipated(self, start: int = 0, stop: int | None = None) -> float:
        stop = len(self.t) if stop is None else stop
        return float(np.sum(self.dissipation[start + 1:stop]))


def strain_path(knot_times, knot_strains) -> Callable[[float], np.ndarray]:
    """Piecewise-linear symmetric strain through the given knots."""
    kt = np.asarray(knot_times, dtype=float)
    ks = np.asarray(knot_strains, dtype=float)
    if kt.ndim != 1 or ks.shape != (len(kt), 3) or np.any(np.diff(kt) <= 0):
        raise ConfigError("strain knots need increasing times and one (xx, xy, yy) value per time")
    return lambda t: np.array([np.interp(t, kt, ks[:, k]) for k in range(3)])


def cycle_knots(amplitude: float, shape, period: float, cycles: int):
    """Knots of ``amplitude * shape`` following 0 -> 1 -> -1 -> 0 per period."""
    base = np.array([0.0, 0.25, 0.75])
    times = np.concatenate([c * period + base * period for c in range(cycles)] + [[cycles * period]])
    levels = np.concatenate([[0.0, 1.0, -1.0]] * cycles + [[0.0]])
    return times, amplitude * levels[:, None] * np.asarray(shape, dtype=float)[None, :]


def material_point_run(strain: Callable[[float], np.ndarray], mode: str, p: MaterialParams, dt: float,
                       t_end: float, theta0: float = 0.0, cfg: MechConfig = MechConfig(),
                       max_fp_iters: int = 100) -> MaterialPointPath:
    """Zero-dimensional response to a prescribed strain history.

    ``mode`` is ``"isothermal"`` (temperature fixed at ``theta0``) or
    ``"adiabatic"`` (enthalpy gains the local heat source each step, with a
    fixed point on temperature inside the step). There is no displacement
    viscosity in 0-D, so the stress is ``E(e - z) + alpha theta I``.
    """
    if mode not in ("isothermal", "adiabatic"):
        raise ConfigError("mode must be 'isothermal' or 'adiabatic'")
    if not dt > 0 or not t_end >= 0:
        raise ConfigError("need dt > 0 and t_end >= 0")
    n = int(round(t_end / dt))
    one = np.ones(1)
    e = np.empty((n + 1, 3))
    z = np.zeros((n + 1, 2))
    theta = np.empty(n + 1)
    diss = np.zeros(n + 1)
    vt = float(g_of_theta(p, theta0))
    theta[0] = theta0
    e[0] = strain(0.0)
    tau = None

    def solve_z(e1, th, z0):
        drive = dev_contract(2.0 * p.mu * e1)[None, :]
        thv = np.array([th])

        def smooth(zz, grad=True):
            h1, g1 = hardening_H1(p, zz)
            h2, g2 = hardening_H2(p, zz)
            val = float(np.sum(-drive * zz) + 2.0 * p.mu * np.sum(zz * zz) + h1[0] + th * h2[0])
            if not grad:
                return val, None
            return val, -drive + 4.0 * p.mu * zz + g1 + thv[:, None] * g2

        return prox_gradient(smooth, z0[None, :], one, p.rho, p.eta_z, dt, cfg, tau=tau)

    for k in range(n):
        e1 = strain((k + 1) * dt)
        th = theta[k]
        for _ in range(max_fp_iters):
            zk, zd = solve_z(e1, th, z[k])
            dz = zk[0] - z[k]
            rate = dz / dt
            dn = float(np.hypot(*dz))
            edot = (e1 - e[k]) / dt
            xi = p.rho * dn / dt + p.eta_z * (dn / dt) ** 2
            if mode == "isothermal":
                vt_new, th_new = vt, th
                break
            _, g2 = hardening_H2(p, zk)
            f = xi + th * (p.alpha * float(sym_trace(edot)) + float(np.dot(g2[0], rate)))
            vt_new = vt + dt * f
            th_new = float(zeta_of_enthalpy(p, vt_new))
            if abs(th_new - th) <= 1e-13 * max(1.0, abs(th_new)):
                break
            th = th_new
        else:
            raise NonConvergenceError("material-point temperature fixed point did not converge",
                                      residual=abs(th_new - th), iterations=max_fp_iters)
        tau = zd.tau
        e[k + 1], z[k + 1], theta[k + 1] = e1, zk[0], th_new
        diss[k + 1] = dt * xi
        vt = vt_new
    stress = elastic_apply(p, e - dev_to_sym(z))
    stress[:, 0] += p.alpha * theta
    stress[:, 2] += p.alpha * theta
    return MaterialPointPath(np.arange(n + 1) * dt, e, z, stress, theta, diss)
