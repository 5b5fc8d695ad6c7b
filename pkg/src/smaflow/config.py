"""TOML run configuration, validation and the named load laws."""

from __future__ import annotations

import ast
import math
import sys
from dataclasses import dataclass, field, fields, replace
from importlib import resources

import numpy as np

from .constitutive import MaterialParams
from .errors import ConfigError
from .mechanics import MechConfig
from .thermal import ThermalConfig

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


# ---------------------------------------------------------------- expressions

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt, "tanh": np.tanh}
_CONSTS = {"pi": math.pi}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide,
           ast.Pow: np.power}


def compile_expression(text: str | float | int):
    """Turn ``text`` into ``fn(x, y)`` using a whitelist of names and operators."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        value = float(text)
        return lambda x, y: np.full(np.shape(x), value)
    if not isinstance(text, str):
        raise ConfigError(f"expression must be a number or string, got {text!r}")
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc.msg}") from None

    def check(node):
        if isinstance(node, ast.Expression):
            return check(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return
        if isinstance(node, ast.Name) and node.id in ("x", "y", *_CONSTS):
            return
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            check(node.left)
            check(node.right)
            return
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            return check(node.operand)
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS
                and len(node.args) == 1 and not node.keywords):
            return check(node.args[0])
        raise ConfigError(f"unsupported element in expression {text!r}")

    check(tree)

    def ev(node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](ev(node.left, env), ev(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = ev(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        return _FUNCS[node.func.id](ev(node.args[0], env))

    def fn(x, y):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(ev(tree.body, {"x": x, "y": np.asarray(y, float), **_CONSTS}),
                               np.broadcast_shapes(np.shape(x), np.shape(y))).astype(float)

    return fn


# ---------------------------------------------------------------- blocks


@dataclass(frozen=True)
class MeshBlock:
    nx: int = 32
    ny: int = 32
    Lx: float = 1.0
    Ly: float = 1.0


@dataclass(frozen=True)
class TimeBlock:
    dt: float = 0.005
    t_end: float = 1.0

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass(frozen=True)
class SolverBlock:
    tol_outer: float = 1e-10
    tol_z: float = 1e-10
    tol_linear: float = 1e-12
    max_outer: int = 200
    max_prox_iters: int = 20000
    step_policy: str = "backtracking"
    tol_thermal: float = 1e-12
    lumped_thermal_mass: bool = False
    tol_couple: float = 1e-10
    max_fp_iters: int = 50
    omega: float = 1.0

    def mech(self) -> MechConfig:
        return MechConfig(self.tol_outer, self.tol_z, self.tol_linear, self.max_outer,
                          self.max_prox_iters, self.step_policy)

    def thermal(self) -> ThermalConfig:
        return ThermalConfig(self.tol_thermal, None, self.lumped_thermal_mass)


LOAD_LAWS = ("sine", "constant")
BUMPS = ("sine", "uniform")


@dataclass(frozen=True)
class LoadBlock:
    """Body force ``amplitude * s(t) * bump(x, y) * direction``.

    ``s(t) = sin(2 pi t / period)`` for the ``sine`` law and 1 for
    ``constant``; the ``sine`` bump is ``sin(pi x/Lx) sin(pi y/Ly)``.
    """

    law: str = "sine"
    amplitude: float = 1.0
    period: float = 1.0
    direction: tuple[float, float] = (1.0, 0.0)
    bump: str = "sine"

    def field(self, nodes: np.ndarray, t: float, Lx: float, Ly: float) -> np.ndarray:
        x, y = nodes[:, 0], nodes[:, 1]
        shape = np.sin(np.pi * x / Lx) * np.sin(np.pi * y / Ly) if self.bump == "sine" else np.ones_like(x)
        s = math.sin(2.0 * math.pi * t / self.period) if self.law == "sine" else 1.0
        return (self.amplitude * s) * shape[:, None] * np.asarray(self.direction, dtype=float)[None, :]


@dataclass(frozen=True)
class InitialBlock:
    u: tuple = (0.0, 0.0)
    z: tuple = (0.0, 0.0)
    vartheta: object = 1.0


@dataclass(frozen=True)
class OutputBlock:
    directory: str = "out"
    snapshot_stride: int = 20


@dataclass(frozen=True)
class MaterialPointBlock:
    """Closed strain cycles ``e(t) = amplitude * tri(t/period) * shape``.

    ``shape`` is a symmetric tensor (xx, xy, yy); ``tri`` is a piecewise
    linear wave 0 -> 1 -> -1 -> 0 over each period.
    """

    amplitude: float = 0.5
    shape: tuple[float, float, float] = (1.0, 0.0, -1.0)
    period: float = 1.0
    cycles: int = 2
    steps_per_cycle: int = 2000
    mode: str = "isothermal"
    theta0: float = 0.0


@dataclass(frozen=True)
class SimConfig:
    mesh: MeshBlock = field(default_factory=MeshBlock)
    material: MaterialParams = field(default_factory=MaterialParams)
    time: TimeBlock = field(default_factory=TimeBlock)
    solver: SolverBlock = field(default_factory=SolverBlock)
    load: LoadBlock = field(default_factory=LoadBlock)
    initial: InitialBlock = field(default_factory=InitialBlock)
    output: OutputBlock = field(default_factory=OutputBlock)
    material_point: MaterialPointBlock = field(default_factory=MaterialPointBlock)
    source_text: str = ""

    def with_time(self, dt: float | None = None, steps: int | None = None) -> SimConfig:
        dt = self.time.dt if dt is None else dt
        t_end = self.time.t_end if steps is None else steps * dt
        cfg = replace(self, time=TimeBlock(dt, t_end))
        bad = _time_violations(cfg.time)
        if bad:
            raise ConfigError("invalid time override: " + "; ".join(bad), bad)
        return cfg

    def initial_fields(self, nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x, y = nodes[:, 0], nodes[:, 1]
        u = np.column_stack([compile_expression(e)(x, y) for e in self.initial.u])
        z = np.column_stack([compile_expression(e)(x, y) for e in self.initial.z])
        vt = compile_expression(self.initial.vartheta)(x, y)
        return u, z, vt


# ---------------------------------------------------------------- parsing

_MATERIAL_KEYS = {"lambda": "lam"}


def _block(cls, raw: dict, section: str, errors: list[str], rename: dict | None = None):
    rename = rename or {}
    names = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        name = rename.get(key, key)
        if name not in names or name == "source_text":
            errors.append(f"[{section}] unknown key '{key}'")
            continue
        kind = names[name].type
        if isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        if kind == "bool" and not isinstance(value, bool):
            errors.append(f"[{section}] {key}: expected true/false")
            continue
        if kind in ("int", "float"):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                errors.append(f"[{section}] {key}: expected a number")
                continue
            if kind == "int" and int(value) != value:
                errors.append(f"[{section}] {key}: expected an integer")
                continue
            value = int(value) if kind == "int" else float(value)
        if kind == "str" and not isinstance(value, str):
            errors.append(f"[{section}] {key}: expected a string")
            continue
        kwargs[name] = value
    return cls(**kwargs)


def _time_violations(tb: TimeBlock) -> list[str]:
    out = []
    if not (math.isfinite(tb.dt) and tb.dt > 0):
        out.append("dt > 0 required")
    if not (math.isfinite(tb.t_end) and tb.t_end >= 0):
        out.append("t_end >= 0 required")
    if not out and abs(tb.n_steps * tb.dt - tb.t_end) > 1e-9 * max(1.0, tb.t_end):
        out.append("t_end must be an integer multiple of dt")
    return out


def validate(cfg: SimConfig) -> list[str]:
    """Every named constraint violated by ``cfg``."""
    out = []
    m = cfg.mesh
    if m.nx < 1 or m.ny < 1:
        out.append("mesh: nx, ny >= 1 required")
    if not (m.Lx > 0 and m.Ly > 0):
        out.append("mesh: Lx, Ly > 0 required")
    out += cfg.material.violations()
    out += _time_violations(cfg.time)
    s = cfg.solver
    out += s.mech().violations() + s.thermal().violations()
    if not 0 < s.tol_couple < 1:
        out.append("tol_couple: tolerance must lie in (0, 1)")
    if s.max_fp_iters < 1:
        out.append("max_fp_iters: iteration cap must be >= 1")
    if not 0 < s.omega <= 1:
        out.append("omega: relaxation must lie in (0, 1]")
    ld = cfg.load
    if ld.law not in LOAD_LAWS:
        out.append(f"load.law: must be one of {LOAD_LAWS}")
    if ld.bump not in BUMPS:
        out.append(f"load.bump: must be one of {BUMPS}")
    if not (math.isfinite(ld.amplitude)):
        out.append("load.amplitude: must be finite")
    if not ld.period > 0:
        out.append("load.period > 0 required")
    if len(ld.direction) != 2:
        out.append("load.direction: must have two components")
    o = cfg.output
    if o.snapshot_stride < 1:
        out.append("output.snapshot_stride >= 1 required")
    mp = cfg.material_point
    if mp.mode not in ("isothermal", "adiabatic"):
        out.append("material_point.mode: must be 'isothermal' or 'adiabatic'")
    if mp.cycles < 1 or mp.steps_per_cycle < 4 or mp.steps_per_cycle % 4:
        out.append("material_point: cycles >= 1 and steps_per_cycle a positive multiple of 4 required")
    if not mp.period > 0 or len(mp.shape) != 3 or mp.theta0 < 0:
        out.append("material_point: period > 0, a 3-component shape and theta0 >= 0 required")
    if not out:
        out += _initial_violations(cfg)
    return out


def _initial_violations(cfg: SimConfig) -> list[str]:
    from .mesh import build_rect_mesh

    ini = cfg.initial
    if len(ini.u) != 2 or len(ini.z) != 2:
        return ["initial: u and z need two components each"]
    mesh = build_rect_mesh(cfg.mesh.nx, cfg.mesh.ny, cfg.mesh.Lx, cfg.mesh.Ly)
    try:
        u, z, vt = cfg.initial_fields(mesh.nodes)
    except ConfigError as exc:
        return [f"initial: {exc}"]
    out = []
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(z)) and np.all(np.isfinite(vt))):
        out.append("initial: fields must be finite at every node")
    elif np.any(np.abs(u[mesh.boundary]) > 1e-12 * max(1.0, float(np.abs(u).max()))):
        out.append("initial: u must vanish on the clamped boundary")
    if np.any(vt <= 0):
        out.append("initial enthalpy strictly positive (vartheta0 > 0 at every node)")
    elif np.any(vt < cfg.material.vartheta_floor):
        out.append("initial enthalpy must not drop below vartheta_floor")
    return out


def parse_config(text: str) -> SimConfig:
    """Parse and validate; raises :class:`ConfigError` listing every problem."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from None
    errors: list[str] = []
    sections = {"mesh", "material", "time", "solver", "load", "initial", "output", "material_point"}
    for key in raw:
        if key not in sections:
            errors.append(f"unknown section [{key}]")
    mat_raw = dict(raw.get("material", {}))
    floor_given = "vartheta_floor" in mat_raw
    parts = dict(
        mesh=_block(MeshBlock, raw.get("mesh", {}), "mesh", errors),
        material=_block(MaterialParams, mat_raw, "material", errors, _MATERIAL_KEYS),
        time=_block(TimeBlock, raw.get("time", {}), "time", errors),
        solver=_block(SolverBlock, raw.get("solver", {}), "solver", errors),
        load=_block(LoadBlock, raw.get("load", {}), "load", errors),
        initial=_block(InitialBlock, raw.get("initial", {}), "initial", errors),
        output=_block(OutputBlock, raw.get("output", {}), "output", errors),
        material_point=_block(MaterialPointBlock, raw.get("material_point", {}), "material_point", errors),
    )
    if errors:
        raise ConfigError("invalid configuration: " + "; ".join(errors), errors)
    cfg = SimConfig(**parts, source_text=text)
    if not floor_given:
        # the floor defaults to the smallest initial enthalpy
        low = _min_initial_enthalpy(cfg)
        if low is not None and math.isfinite(low) and low > 0:
            cfg = replace(cfg, material=replace(cfg.material, vartheta_floor=low))
    bad = validate(cfg)
    if bad:
        raise ConfigError("invalid configuration: " + "; ".join(bad), bad)
    return cfg


def _min_initial_enthalpy(cfg: SimConfig) -> float | None:
    from .mesh import build_rect_mesh

    try:
        mesh = build_rect_mesh(cfg.mesh.nx, cfg.mesh.ny, cfg.mesh.Lx, cfg.mesh.Ly)
        return float(np.min(cfg.initial_fields(mesh.nodes)[2]))
    except ConfigError:
        return None


def load_config(path) -> SimConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def scenario_text(name: str = "standard") -> str:
    return resources.files("smaflow.scenarios").joinpath(f"{name}.toml").read_text(encoding="utf-8")


def standard_config() -> SimConfig:
    return parse_config(scenario_text("standard"))


__all__ = ["SimConfig", "parse_config", "load_config", "validate", "standard_config", "scenario_text",
           "compile_expression"]
