"""Deterministic text outputs: ledger CSV and per-node snapshots."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audit import COLUMNS, AuditLedger
from .mesh import Mesh, format_mesh, parse_mesh


def _fmt(v: float) -> str:
    return "%.17g" % v


def write_timeseries(ledger: AuditLedger, path) -> None:
    lines = [",".join(COLUMNS)]
    for row in ledger.rows:
        lines.append(",".join(str(v) if c == "coupler_iters" else _fmt(v) for c, v in zip(COLUMNS, row)))
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii"))


def read_timeseries(path) -> AuditLedger:
    """Read a ledger back without re-validating it, so tampered files can be audited."""
    text = Path(path).read_text(encoding="ascii")
    lines = [ln for ln in text.split("\n") if ln]
    if not lines or tuple(lines[0].split(",")) != COLUMNS:
        raise ValueError(f"{path}: unexpected ledger header")
    ledger = AuditLedger()
    for k, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != len(COLUMNS):
            raise ValueError(f"{path}:{k}: expected {len(COLUMNS)} fields")
        ledger.rows.append(tuple(int(v) if c == "coupler_iters" else float(v)
                                 for c, v in zip(COLUMNS, parts)))
    return ledger


def write_snapshot(mesh: Mesh, state, path) -> None:
    """Mesh block, a time line, then ``u_x u_y z_a z_b vartheta`` per node."""
    vals = np.column_stack([state.u, state.z, state.vartheta])
    body = [f"# t {_fmt(state.t)}"] + [" ".join(_fmt(v) for v in row) for row in vals]
    Path(path).write_bytes((format_mesh(mesh) + "\n".join(body) + "\n").encode("ascii"))


def read_snapshot(path):
    """Returns ``(nodes, triangles, t, values)`` with values of shape (n, 5)."""
    lines = Path(path).read_text(encoding="ascii").split("\n")
    nodes, tris, used = parse_mesh(lines)
    head = lines[used].split()
    if len(head) != 3 or head[:2] != ["#", "t"]:
        raise ValueError(f"{path}: missing time line")
    n = nodes.shape[0]
    vals = np.array([[float(v) for v in ln.split()] for ln in lines[used + 1:used + 1 + n]]).reshape(n, 5)
    return nodes, tris, float(head[2]), vals
