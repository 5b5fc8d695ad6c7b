"""Pointwise material laws.

Array conventions: a symmetric tensor lives on the last axis as
``(xx, xy, yy)``; a trace-free tensor ``[[a, b], [b, -a]]`` is stored as
its coordinates ``(a, b)``. Norms and inner products of internal variables
are taken on those coordinates, so ``|(a, b)| = sqrt(a**2 + b**2)``. Pairings
with strains and stresses use the genuine tensor contraction, hence the
factor 2 in :func:`dev_contract`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
from scipy import integrate

from .errors import ConfigError

# ---------------------------------------------------------------- tensor algebra


def sym_trace(xi: np.ndarray) -> np.ndarray:
    return xi[..., 0] + xi[..., 2]


def sym_contract(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a:b`` for symmetric tensors in (xx, xy, yy) storage."""
    return a[..., 0] * b[..., 0] + 2.0 * a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def dev_to_sym(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return np.stack([z[..., 0], z[..., 1], -z[..., 0]], axis=-1)


def dev_contract(sigma: np.ndarray) -> np.ndarray:
    """Coordinates ``g`` with ``sigma:z = g . z`` for every trace-free ``z``."""
    return np.stack([sigma[..., 0] - sigma[..., 2], 2.0 * sigma[..., 1]], axis=-1)


def dev_norm(z: np.ndarray) -> np.ndarray:
    return np.hypot(z[..., 0], z[..., 1])


# ---------------------------------------------------------------- parameters


@dataclass(frozen=True)
class MaterialParams:
    """Material constants.

    ``h1``, ``h2`` are the coefficients of the thermal hardening term and
    ``heat_table`` optionally replaces the power-law heat capacity by a
    piecewise-linear table of ``(theta, c)`` knots starting at theta = 0.
    """

    mu: float = 1.0
    lam: float = 1.0
    eta_u: float = 1.0
    eta_z: float = 1.0
    nu: float = 0.1
    alpha: float = 0.1
    rho: float = 0.5
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 1.0
    delta: float = 0.01
    h1: float = 0.0
    h2: float = 0.0
    cc: float = 1.0
    beta1: float = 4.0
    k0: float = 0.5
    vartheta_floor: float = 1.0
    heat_table: tuple[tuple[float, float], ...] | None = None

    def violations(self) -> list[str]:
        """Named constraints that fail; empty when the set is admissible."""
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name != "heat_table" and not (isinstance(v, (int, float)) and math.isfinite(v)):
                out.append(f"{f.name}: must be a finite number")
        if out:
            return out

        def need(ok: bool, msg: str) -> None:
            if not ok:
                out.append(msg)

        need(self.mu > 0, "mu > 0 required for a positive definite elasticity tensor")
        need(self.lam >= 0, "lambda >= 0 required for a positive definite elasticity tensor")
        need(self.eta_u > 0, "eta_u > 0 required for a positive definite viscosity tensor")
        need(self.eta_z > 0, "eta_z > 0 required for a positive definite internal viscosity")
        need(self.nu >= 0, "nu >= 0 required (gradient regularization)")
        need(self.alpha >= 0, "alpha >= 0 required (thermal expansion)")
        need(self.rho > 0, "rho > 0 required (dissipation threshold)")
        need(self.c1 > 0, "c1 > 0 required (hardening coefficient)")
        need(self.c2 > 0, "c2 > 0 required (hardening coefficient)")
        need(self.c3 > 0, "c3 > 0 required (transformation strain bound)")
        need(self.delta > 0, "delta > 0 required (hardening regularization)")
        need(self.h1 >= 0, "h1 >= 0 required (thermal hardening coefficient)")
        need(self.h2 >= 0, "h2 >= 0 required (thermal hardening coefficient)")
        need(self.cc > 0, "cc > 0 required (heat capacity scale)")
        need(self.beta1 >= 4, "beta1 >= 4 required for global existence")
        need(self.k0 > 0, "k0 > 0 required (uniformly positive conductivity)")
        need(self.vartheta_floor > 0, "initial enthalpy strictly positive (vartheta_floor > 0)")
        if self.heat_table is not None:
            out.extend(_table_violations(self.heat_table))
        return out

    def validate(self) -> MaterialParams:
        bad = self.violations()
        if bad:
            raise ConfigError("invalid material parameters: " + "; ".join(bad), bad)
        return self


def _table_violations(table) -> list[str]:
    try:
        arr = np.asarray(table, dtype=float)
    except (TypeError, ValueError):
        return ["heat_table: must be a list of [theta, c] pairs"]
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
        return ["heat_table: must be a list of at least two [theta, c] pairs"]
    out = []
    if arr[0, 0] != 0.0:
        out.append("heat_table: first knot must sit at theta = 0")
    if np.any(np.diff(arr[:, 0]) <= 0):
        out.append("heat_table: knots must be strictly increasing")
    if np.any(arr[:, 1] <= 0):
        out.append("heat_table: heat capacity must be positive")
    return out


# ---------------------------------------------------------------- energies


def elastic_apply(p: MaterialParams, xi: np.ndarray) -> np.ndarray:
    """Isotropic elasticity ``2 mu xi + lambda tr(xi) I``."""
    xi = np.asarray(xi, dtype=float)
    tr = p.lam * sym_trace(xi)
    out = 2.0 * p.mu * xi
    out[..., 0] += tr
    out[..., 2] += tr
    return out


def hardening_H1(p: MaterialParams, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Regularized hardening ``c1 sqrt(delta^2+s^2) + c2 s^2 + (s-c3)_+^4 / (delta (1+s^2))``.

    Returns the value and the gradient with respect to the coordinates of ``z``.
    """
    z = np.asarray(z, dtype=float)
    s = dev_norm(z)
    root = np.sqrt(p.delta**2 + s**2)
    pos = np.maximum(s - p.c3, 0.0)
    den = 1.0 + s**2
    value = p.c1 * root + p.c2 * s**2 + pos**4 / (p.delta * den)
    # radial derivative of the penalty, divided by s (zero where pos = 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        dpen = (4.0 * pos**3 * den - 2.0 * s * pos**4) / (p.delta * den**2)
        pen_over_s = np.where(pos > 0, dpen / np.where(s > 0, s, 1.0), 0.0)
    factor = p.c1 / root + 2.0 * p.c2 + pen_over_s
    return value, factor[..., None] * z


def hardening_H2(p: MaterialParams, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Thermal hardening ``h1 sqrt(delta^2+s^2) + h2 s^2``, value and gradient."""
    z = np.asarray(z, dtype=float)
    s = dev_norm(z)
    root = np.sqrt(p.delta**2 + s**2)
    value = p.h1 * root + p.h2 * s**2
    return value, (p.h1 / root + 2.0 * p.h2)[..., None] * z


def W1_density(p: MaterialParams, e: np.ndarray, z: np.ndarray, gz: np.ndarray) -> np.ndarray:
    """Mechanical free energy density.

    ``gz`` holds the spatial gradient of the coordinates of ``z`` with shape
    ``(..., 2, 2)``.
    """
    d = np.asarray(e, dtype=float) - dev_to_sym(z)
    elastic = 0.5 * sym_contract(elastic_apply(p, d), d)
    grad = 0.5 * p.nu * np.sum(np.asarray(gz, dtype=float) ** 2, axis=(-2, -1))
    return elastic + grad + hardening_H1(p, z)[0]


def psi(p: MaterialParams, v: np.ndarray) -> np.ndarray:
    """Dissipation potential ``rho |v|``."""
    return p.rho * dev_norm(np.asarray(v, dtype=float))


def shrink(r: np.ndarray, threshold: float, stiffness) -> np.ndarray:
    """Minimizer of ``threshold |d| + stiffness/2 |d|^2 - r . d`` (row-wise)."""
    r = np.asarray(r, dtype=float)
    n = dev_norm(r)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(n > threshold, 1.0 - threshold / np.where(n > 0, n, 1.0), 0.0)
    return (scale / stiffness)[..., None] * r


def prox_flow(p: MaterialParams, r: np.ndarray, dt: float, m_w: float = 1.0) -> np.ndarray:
    """Increment of the internal variable for a net driving force ``r``.

    The lumped weight ``m_w`` multiplies every term of the nodal functional
    and therefore does not move its minimizer; it is accepted for symmetry
    with the assembled problem.
    """
    if dt <= 0 or np.any(np.asarray(m_w) <= 0):
        raise ValueError("time step and lumped weight must be positive")
    return shrink(r, p.rho, p.eta_z / dt)


# ---------------------------------------------------------------- heat capacity


class _PowerLaw:
    def __init__(self, cc: float, beta1: float):
        self.cc, self.beta1 = cc, beta1

    def c(self, theta):
        return self.cc * (1.0 + theta) ** (self.beta1 - 1.0)

    # expm1/log1p keep full relative accuracy for tiny arguments
    def g(self, theta):
        return self.cc / self.beta1 * np.expm1(self.beta1 * np.log1p(theta))

    def zeta(self, vt):
        vt = np.maximum(vt, 0.0)
        return np.expm1(np.log1p(self.beta1 * vt / self.cc) / self.beta1)

    def entropy(self, theta):
        b = self.beta1 - 1.0
        if float(b).is_integer():
            # (1+s)^b / s = 1/s + sum_k C(b,k) s^(k-1)
            out = np.log(theta)
            for k in range(1, int(b) + 1):
                out = out + math.comb(int(b), k) * (theta**k - 1.0) / k
            return self.cc * out
        return _quad_entropy(self.c, theta)


def _quad_entropy(c, theta):
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    vals = np.array([integrate.quad(lambda s: c(s) / s, 1.0, t, epsabs=0.0, epsrel=1e-13, limit=200)[0]
                     for t in th.ravel()])
    return vals.reshape(th.shape) if np.ndim(theta) else float(vals[0])


class _TableLaw:
    """Piecewise-linear heat capacity with a power-law tail past the last knot."""

    def __init__(self, table, beta1: float):
        arr = np.asarray(table, dtype=float)
        self.t, self.cv, self.beta1 = arr[:, 0], arr[:, 1], beta1
        seg = 0.5 * (self.cv[1:] + self.cv[:-1]) * np.diff(self.t)
        self.G = np.concatenate([[0.0], np.cumsum(seg)])
        self.tail = _PowerLaw(self.cv[-1] / (1.0 + self.t[-1]) ** (beta1 - 1.0), beta1)

    def c(self, theta):
        theta = np.asarray(theta, dtype=float)
        inside = np.interp(theta, self.t, self.cv)
        return np.where(theta <= self.t[-1], inside, self.tail.c(theta))

    def g(self, theta):
        theta = np.asarray(theta, dtype=float)
        k = np.clip(np.searchsorted(self.t, theta, side="right") - 1, 0, len(self.t) - 2)
        x = np.minimum(theta, self.t[-1]) - self.t[k]
        slope = (self.cv[k + 1] - self.cv[k]) / (self.t[k + 1] - self.t[k])
        inside = self.G[k] + self.cv[k] * x + 0.5 * slope * x**2
        tail = self.tail.g(theta) - self.tail.g(self.t[-1])
        return np.where(theta <= self.t[-1], inside, self.G[-1] + tail)

    def zeta(self, vt):
        vt = np.maximum(np.asarray(vt, dtype=float), 0.0)
        lo = np.zeros_like(vt)
        hi = np.ones_like(vt)
        while np.any(self.g(hi) < vt):
            hi = np.where(self.g(hi) < vt, 2.0 * hi, hi)
        # bisection to an absolute bracket of 1e-12 (relative for large theta)
        for _ in range(200):
            if np.all(hi - lo <= 1e-12 * np.maximum(1.0, hi)):
                break
            mid = 0.5 * (lo + hi)
            below = self.g(mid) < vt
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def entropy(self, theta):
        return _quad_entropy(self.c, theta)


def _law(p: MaterialParams):
    if p.heat_table is not None:
        return _TableLaw(p.heat_table, p.beta1)
    return _PowerLaw(p.cc, p.beta1)


def heat_capacity(p: MaterialParams, theta):
    return _law(p).c(np.asarray(theta, dtype=float))


def g_of_theta(p: MaterialParams, theta):
    """Enthalpy ``g(theta) = int_0^theta c(s) ds``."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < 0):
        raise ValueError("enthalpy transform is defined for nonnegative temperatures only")
    return _law(p).g(theta)


def zeta_of_enthalpy(p: MaterialParams, vt):
    """Inverse enthalpy transform, extended by 0 to negative enthalpies."""
    return _law(p).zeta(np.asarray(vt, dtype=float))


def kappa_c(p: MaterialParams, e=None, z=None, vt=None) -> np.ndarray:
    """Transformed conductivity, the constant ``k0 I`` for every state."""
    shape = () if vt is None else np.shape(vt)
    return np.broadcast_to(p.k0 * np.eye(2), shape + (2, 2)).copy()


def entropy_coefficient(p: MaterialParams, theta):
    """``S(theta) = int_1^theta c(s)/s ds``."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0):
        raise ValueError("entropy coefficient requires positive temperature")
    return _law(p).entropy(theta)
