"""Structured P1 triangulations, finite-element assembly and the SPD solver.

Conventions used throughout the package:

* nodal vector fields have shape ``(n_nodes, 2)``;
* symmetric tensors are stored on the last axis as ``(xx, xy, yy)``;
* strain-like vectors are paired with stress-like ones through the tensor
  contraction ``a:b = a_xx b_xx + 2 a_xy b_xy + a_yy b_yy``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, SolverError

#: weights turning (xx, xy, yy) component products into a tensor contraction
CONTRACTION = np.array([1.0, 2.0, 1.0])


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points and weights on the reference triangle."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] != w.shape[0]:
            raise ConfigError("quadrature points must be barycentric triples, one per weight")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-14:
            raise ConfigError("quadrature weights must be positive and sum to 1")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def midpoint(cls) -> QuadratureRule:
        return cls(np.full((1, 3), 1.0 / 3.0), np.ones(1))

    @classmethod
    def vertex(cls) -> QuadratureRule:
        """Trapezoidal rule; the quadrature behind the lumped mass matrix."""
        return cls(np.eye(3), np.full(3, 1.0 / 3.0))

    @classmethod
    def edge_midpoint(cls) -> QuadratureRule:
        """Exact for quadratics."""
        pts = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
        return cls(pts, np.full(3, 1.0 / 3.0))


@dataclass(frozen=True, eq=False)
class Mesh:
    """P1 triangulation of the rectangle ``[0, Lx] x [0, Ly]``.

    ``grads[t, k]`` is the constant gradient of the hat function attached to
    local vertex ``k`` of triangle ``t``.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    areas: np.ndarray
    grads: np.ndarray = field(repr=False)
    lumped_mass: np.ndarray = field(repr=False)
    nx: int = 0
    ny: int = 0
    Lx: float = 1.0
    Ly: float = 1.0

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    def interpolate(self, fn) -> np.ndarray:
        """Nodal interpolant of ``fn(x, y)``."""
        x, y = self.nodes[:, 0], self.nodes[:, 1]
        return np.broadcast_to(np.asarray(fn(x, y), dtype=float), x.shape).copy()


def build_rect_mesh(nx: int, ny: int, Lx: float = 1.0, Ly: float = 1.0) -> Mesh:
    """Right-diagonal split of an ``nx`` by ``ny`` grid of cells."""
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ConfigError(f"mesh counts must be integers >= 1, got nx={nx}, ny={ny}")
    if not (np.isfinite(Lx) and np.isfinite(Ly) and Lx > 0 and Ly > 0):
        raise ConfigError(f"mesh lengths must be positive, got Lx={Lx}, Ly={Ly}")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(0.0, Lx, nx + 1)
    ys = np.linspace(0.0, Ly, ny + 1)
    X, Y = np.meshgrid(xs, ys)  # row j holds y = ys[j]
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n00 = (i + j * (nx + 1)).ravel()
    n10, n01 = n00 + 1, n00 + nx + 1
    n11 = n01 + 1
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)

    ix = np.tile(np.arange(nx + 1), ny + 1)
    iy = np.repeat(np.arange(ny + 1), nx + 1)
    boundary = (ix == 0) | (ix == nx) | (iy == 0) | (iy == ny)

    p = nodes[triangles]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    twice = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    areas = 0.5 * twice
    if np.any(areas <= 0):
        raise ConfigError("degenerate or clockwise triangle produced")
    # gradient of the hat function of vertex k: rotated opposite edge / 2A
    grads = np.empty((len(triangles), 3, 2))
    for k in range(3):
        a, b = p[:, (k + 1) % 3], p[:, (k + 2) % 3]
        grads[:, k, 0] = (a[:, 1] - b[:, 1]) / twice
        grads[:, k, 1] = (b[:, 0] - a[:, 0]) / twice

    lumped = np.zeros(len(nodes))
    np.add.at(lumped, triangles, np.repeat(areas[:, None] / 3.0, 3, axis=1))

    return Mesh(
        nodes=_frozen(nodes),
        triangles=_frozen(triangles.astype(np.int64)),
        boundary=_frozen(boundary),
        areas=_frozen(areas),
        grads=_frozen(grads),
        lumped_mass=_frozen(lumped),
        nx=nx,
        ny=ny,
        Lx=float(Lx),
        Ly=float(Ly),
    )


def _assemble(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    """Scatter per-element 3x3 blocks into a CSR matrix."""
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_nodes
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def assemble_mass(mesh: Mesh, lumped: bool = False) -> sp.csr_matrix:
    """Consistent P1 mass matrix, or its row-sum lumped diagonal."""
    if lumped:
        return sp.diags(np.asarray(mesh.lumped_mass), format="csr")
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return _assemble(mesh, mesh.areas[:, None, None] * ref)


def check_spd_2x2(coeff: np.ndarray) -> None:
    c = np.asarray(coeff, dtype=float)
    scale = np.maximum(np.abs(c).max(axis=(-2, -1)), 1e-300)
    asym = np.abs(c[..., 0, 1] - c[..., 1, 0]) > 1e-12 * scale
    det = c[..., 0, 0] * c[..., 1, 1] - c[..., 0, 1] * c[..., 1, 0]
    if np.any(asym) or np.any(c[..., 0, 0] <= 0) or np.any(det <= 0) or not np.all(np.isfinite(c)):
        raise ConfigError("stiffness coefficient must be a symmetric positive definite 2x2 tensor")


def assemble_stiffness(mesh: Mesh, coeff) -> sp.csr_matrix:
    """Stiffness matrix of ``-div(C grad .)`` with natural boundary conditions.

    ``coeff`` is one 2x2 SPD tensor per element, a single shared tensor, or
    a positive scalar meaning ``coeff * I``.
    """
    c = np.asarray(coeff, dtype=float)
    if c.ndim == 0:
        c = c * np.eye(2)
    c = np.broadcast_to(c, (mesh.n_triangles, 2, 2))
    check_spd_2x2(c)
    G = mesh.grads
    local = mesh.areas[:, None, None] * np.einsum("tia,tab,tjb->tij", G, c, G)
    return _assemble(mesh, local)


def strain_operator(mesh: Mesh) -> sp.csr_matrix:
    """Sparse map from interleaved displacement dofs to element strains.

    Row ``3t + k`` gives component ``k`` of ``(xx, xy, yy)`` on triangle
    ``t``; column ``2i + c`` is component ``c`` of the displacement at node
    ``i``.
    """
    tri, G = mesh.triangles, mesh.grads
    m = mesh.n_triangles
    t = np.arange(m)
    rows, cols, vals = [], [], []
    for k in range(3):
        ux, uy = 2 * tri[:, k], 2 * tri[:, k] + 1
        gx, gy = G[:, k, 0], G[:, k, 1]
        rows += [3 * t, 3 * t + 1, 3 * t + 1, 3 * t + 2]
        cols += [ux, ux, uy, uy]
        vals += [gx, 0.5 * gy, 0.5 * gx, gy]
    B = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(3 * m, 2 * mesh.n_nodes),
    ).tocsr()
    B.sum_duplicates()
    B.sort_indices()
    return B


def element_strain(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    """Piecewise-constant symmetric gradient of a P1 displacement."""
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_nodes, 2):
        raise ValueError(f"displacement must have shape {(mesh.n_nodes, 2)}, got {u.shape}")
    du = np.einsum("tka,tkc->tca", mesh.grads, u[mesh.triangles])  # du[t, c, a] = d u_c / d x_a
    return np.column_stack([du[:, 0, 0], 0.5 * (du[:, 0, 1] + du[:, 1, 0]), du[:, 1, 1]])


def solve_spd(A, b: np.ndarray, tol: float = 1e-10, x0: np.ndarray | None = None,
              maxiter: int | None = None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients.

    Returns ``x`` with ``||Ax - b|| <= tol ||b||``. ``x0`` is returned
    untouched when it already satisfies the bound, which keeps repeated
    solves from a converged guess bit-stable.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"operator shape {A.shape} does not match right-hand side of length {n}")
    maxiter = 10 * n if maxiter is None else maxiter
    bnorm = float(np.linalg.norm(b))
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return np.zeros(n)
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("operator has a non-positive diagonal entry")
    precond = sp.diags(1.0 / diag)
    iters = 0

    def count(_):
        nonlocal iters
        iters += 1

    # The CG recursion may drift slightly from the true residual; a restart
    # from the current iterate re-anchors it.
    for _ in range(4):
        res = float(np.linalg.norm(b - A @ x))
        if res <= tol * bnorm:
            return x
        if iters >= maxiter:
            break
        x, info = spla.cg(A, b, x0=x, rtol=tol, atol=0.0, maxiter=maxiter - iters, M=precond,
                          callback=count)
        if info < 0:
            break
    res = float(np.linalg.norm(b - A @ x))
    if res <= tol * bnorm:
        return x
    raise SolverError("conjugate gradients did not converge", residual=res / bnorm, iterations=iters)


def format_mesh(mesh: Mesh) -> str:
    """Plain-text mesh export (0-based triangle indices)."""
    lines = [f"# nodes {mesh.n_nodes} triangles {mesh.n_triangles}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.nodes]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles]
    return "\n".join(lines) + "\n"


def parse_mesh(lines: list[str]) -> tuple[np.ndarray, np.ndarray, int]:
    """Inverse of :func:`format_mesh`; returns nodes, triangles, lines consumed."""
    head = lines[0].split()
    if len(head) != 5 or head[0] != "#" or head[1] != "nodes" or head[3] != "triangles":
        raise ValueError(f"bad mesh header: {lines[0]!r}")
    n, m = int(head[2]), int(head[4])
    nodes = np.array([[float(v) for v in ln.split()] for ln in lines[1:1 + n]]).reshape(n, 2)
    tris = np.array([[int(v) for v in ln.split()] for ln in lines[1 + n:1 + n + m]],
                    dtype=np.int64).reshape(m, 3)
    return nodes, tris, 1 + n + m
