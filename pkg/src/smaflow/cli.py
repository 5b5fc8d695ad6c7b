"""Command-line entry point: ``smaflow {run,material-point,validate,audit}``."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .audit import check_ledger
from .config import SimConfig, load_config, parse_config
from .coupler import cycle_knots, material_point_run, run, strain_path
from .errors import AuditError, ConfigError, SmaflowError
from .output import read_timeseries, write_snapshot, write_timeseries

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the validation code instead of argparse's 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _threads() -> int:
    raw = os.environ.get("SMAFLOW_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"SMAFLOW_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"SMAFLOW_THREADS must be a positive integer, got {raw!r}")
    # every section is currently serial; the value only caps future parallelism
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="smaflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("config_path", nargs="?", help="TOML configuration file")
            p.add_argument("--config", dest="config_opt", help="TOML configuration file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--dt", type=float, help="override the time step")
        p.add_argument("--steps", type=int, help="override the number of steps (t_end = steps * dt)")
        p.add_argument("--seed", type=int, help="reserved; has no effect")

    common(sub.add_parser("run", help="run a coupled simulation"))
    common(sub.add_parser("material-point", help="run the zero-dimensional strain-cycle driver"))
    common(sub.add_parser("validate", help="check a configuration file"))
    p_audit = sub.add_parser("audit", help="recheck a saved ledger")
    p_audit.add_argument("directory", nargs="?", help="run output directory")
    common(p_audit)
    return parser


def _config(args) -> SimConfig:
    path = args.config_opt or args.config_path
    if path is None:
        raise ConfigError("a configuration file is required (positional or --config)")
    try:
        cfg = load_config(path)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    if args.dt is not None or args.steps is not None:
        cfg = cfg.with_time(args.dt, args.steps)
    return cfg


def _cmd_run(args) -> int:
    cfg = _config(args)
    out = Path(args.out or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    traj = run(cfg)
    write_timeseries(traj.ledger, out / "ledger.csv")
    for n, st in traj.snapshots:
        write_snapshot(traj.mesh, st, out / f"snapshot_{n:06d}.txt")
    (out / "config.toml").write_bytes(_effective_config(cfg).encode("utf-8"))
    failed = check_ledger(traj.ledger, cfg.material)
    for flag in traj.flags:
        print(f"flag: {flag}")
    last = traj.ledger.rows[-1]
    print(f"steps={len(traj.ledger) - 1} t={last[0]:.6g} min_theta={last[7]:.6g} "
          f"sum|R|={np.abs(traj.ledger.column('energy_residual')).sum():.3e} out={out}")
    if failed:
        print("failed checks: " + ", ".join(failed), file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def _effective_config(cfg: SimConfig) -> str:
    """The source text with the time block pinned to the values actually used."""
    lines = [ln for ln in cfg.source_text.splitlines()]
    return "\n".join(lines) + f"\n\n# effective time block\n# dt = {cfg.time.dt!r}\n# t_end = {cfg.time.t_end!r}\n"


def _cmd_material_point(args) -> int:
    cfg = _config(args)
    mp = cfg.material_point
    times, strains = cycle_knots(mp.amplitude, mp.shape, mp.period, mp.cycles)
    dt = mp.period / mp.steps_per_cycle if args.dt is None else args.dt
    t_end = mp.cycles * mp.period if args.steps is None else args.steps * dt
    path = material_point_run(strain_path(times, strains), mp.mode, cfg.material, dt, t_end, mp.theta0,
                              cfg.solver.mech())
    n_cycle = int(round(mp.period / dt))
    start = max(len(path.t) - 1 - n_cycle, 0)
    area, diss = path.loop_area(start), path.dissipated(start)
    out = Path(args.out or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    header = "t,e_xx,e_xy,e_yy,z_a,z_b,s_xx,s_xy,s_yy,theta,dissipation"
    rows = np.column_stack([path.t, path.strain, path.z, path.stress, path.theta, path.dissipation])
    text = header + "\n" + "\n".join(",".join("%.17g" % v for v in r) for r in rows) + "\n"
    (out / "material_point.csv").write_bytes(text.encode("ascii"))
    print(f"last-cycle loop area={area:.10g} dissipated={diss:.10g} out={out}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = _config(args)
    print(f"ok: {cfg.mesh.nx}x{cfg.mesh.ny} cells, {cfg.time.n_steps} steps of dt={cfg.time.dt:g}")
    return EXIT_OK


def _cmd_audit(args) -> int:
    directory = Path(args.directory or args.out or ".")
    ledger_path = directory / "ledger.csv"
    try:
        ledger = read_timeseries(ledger_path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read ledger: {exc}") from None
    params = None
    cfg_path = args.config_opt or args.config_path or (directory / "config.toml")
    if Path(cfg_path).exists():
        params = parse_config(Path(cfg_path).read_text(encoding="utf-8")).material
    failed = check_ledger(ledger, params)
    if failed:
        for name in failed:
            print(f"FAILED: {name}", file=sys.stderr)
        return EXIT_FAILED
    print(f"audit ok: {len(ledger)} rows")
    return EXIT_OK


_COMMANDS = {"run": _cmd_run, "material-point": _cmd_material_point, "validate": _cmd_validate,
             "audit": _cmd_audit}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _threads()
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"invalid: {v}", file=sys.stderr)
        return EXIT_INVALID
    except (AuditError, SmaflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
