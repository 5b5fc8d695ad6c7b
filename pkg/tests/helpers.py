"""Small scenario builders for tests."""

from __future__ import annotations

from dataclasses import replace

from smaflow.config import InitialBlock, LoadBlock, MeshBlock, SimConfig, TimeBlock, standard_config


def small_config(n: int = 6, dt: float = 0.01, steps: int = 5, load: dict | None = None,
                 initial: dict | None = None, **material) -> SimConfig:
    cfg = standard_config()
    return replace(cfg, mesh=MeshBlock(n, n), time=TimeBlock(dt, dt * steps),
                   material=replace(cfg.material, **material),
                   load=replace(cfg.load, **(load or {})) if load else cfg.load,
                   initial=replace(cfg.initial, **(initial or {})) if initial else cfg.initial)


DECOUPLED = dict(alpha=0.0, h1=0.0, h2=0.0)
