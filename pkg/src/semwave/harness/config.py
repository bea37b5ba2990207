"""Experiment configuration: nested dataclasses parsed from TOML or JSON.

Unknown keys are rejected at every level so that typos fail loudly.
"""
from __future__ import annotations

import dataclasses
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class MeshConfig:
    Nx: int = 20
    Nz: int = 2
    P: int = 8
    Pz: int | None = None
    extent: list | None = None          # [x0, x1]; derived from the wave when omitted
    wavelengths: int = 1                # periodic wave domains: number of wavelengths
    periodic: bool = True
    sigma_ratio: float = 1.0


@dataclass
class BathymetryConfig:
    kind: str = "flat"                  # flat | ramps | beji_battjes
    depth: float = 1.0
    breakpoints: list = field(default_factory=list)
    depths: list = field(default_factory=list)
    width: float = 0.05


@dataclass
class WaveConfig:
    kind: str = "none"                  # none | streamfunction | airy
    H: float | None = None
    L: float | None = None
    T: float | None = None
    kh: float | None = None
    steepness_frac: float | None = None
    N_sf: int = 32
    initialize: bool = True             # start from the wave solution instead of rest


@dataclass
class PhysicsConfig:
    rho: float = 999.70
    nu: float = 0.0
    g: float = 9.81


@dataclass
class FilterConfig:
    enabled: bool = False
    retain: float = 0.98
    cutoff: int | None = None
    alpha: float | None = None
    beta: float = 2.0


@dataclass
class ZoneConfig:
    x_start: float = 0.0
    x_end: float = 1.0
    kind: str = "absorption"            # generation | absorption | terminal
    inner: str = "right"
    target: str = "still"               # wave | still


@dataclass
class RelaxationConfig:
    zones: list = field(default_factory=list)
    pairing: str = "literal"            # literal | complementary
    ramp_time: float = 0.0


@dataclass
class SolverConfig:
    method: str = "gmres"               # direct | pdc | gmres
    tol: float = 1e-6
    maxit: int = 200
    overlap: int = 2
    nu1: int = 1
    nu2: int = 1
    coarsest: int = 2
    gmres_norm: str = "true"            # true | preconditioned


@dataclass
class TimeConfig:
    dt: float | None = None
    courant: float = 0.5
    t_end: float | None = None
    nsteps: int | None = None
    periods: float | None = None        # end time in wave periods


@dataclass
class OutputConfig:
    dir: str = "out"
    gauges: list = field(default_factory=list)
    gauge_every: int = 1
    write: bool = True


@dataclass
class SimulationConfig:
    name: str = "simulation"
    mesh: MeshConfig = field(default_factory=MeshConfig)
    bathymetry: BathymetryConfig = field(default_factory=BathymetryConfig)
    wave: WaveConfig = field(default_factory=WaveConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    relaxation: RelaxationConfig = field(default_factory=RelaxationConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0

    def validate(self) -> "SimulationConfig":
        m = self.mesh
        if m.Nx < 1 or m.Nz < 1 or m.P < 1 or (m.Pz is not None and m.Pz < 1):
            raise ConfigError("mesh sizes and orders must be positive")
        if self.bathymetry.kind not in ("flat", "ramps", "beji_battjes"):
            raise ConfigError(f"unknown bathymetry preset {self.bathymetry.kind!r}")
        if self.bathymetry.kind == "ramps" and len(self.bathymetry.breakpoints) != len(self.bathymetry.depths):
            raise ConfigError("ramps need one depth per breakpoint")
        if self.wave.kind not in ("none", "streamfunction", "airy"):
            raise ConfigError(f"unknown wave kind {self.wave.kind!r}")
        if self.solver.method not in ("direct", "pdc", "gmres"):
            raise ConfigError(f"unknown solver {self.solver.method!r}")
        if self.solver.gmres_norm not in ("true", "preconditioned"):
            raise ConfigError(f"unknown residual norm {self.solver.gmres_norm!r}")
        if self.relaxation.pairing not in ("literal", "complementary"):
            raise ConfigError(f"unknown zone pairing {self.relaxation.pairing!r}")
        for z in self.relaxation.zones:
            if z.kind not in ("generation", "absorption", "terminal") or z.target not in ("wave", "still") \
                    or z.inner not in ("left", "right"):
                raise ConfigError(f"invalid zone {z}")
        t = self.time
        if sum(v is not None for v in (t.t_end, t.nsteps, t.periods)) != 1:
            raise ConfigError("give exactly one of time.t_end, time.nsteps, time.periods")
        if t.dt is not None and t.dt <= 0:
            raise ConfigError("time.dt must be positive")
        if m.extent is None and self.wave.kind == "none":
            raise ConfigError("mesh.extent is required without a wave")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_NESTED = {
    "mesh": MeshConfig, "bathymetry": BathymetryConfig, "wave": WaveConfig,
    "physics": PhysicsConfig, "filter": FilterConfig, "relaxation": RelaxationConfig,
    "solver": SolverConfig, "time": TimeConfig, "output": OutputConfig,
}


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a table")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {', '.join(sorted(unknown))}")
    kw = {}
    for k, v in data.items():
        sub = f"{path}.{k}" if path else k
        if cls is SimulationConfig and k in _NESTED:
            kw[k] = _build(_NESTED[k], v, sub)
        elif cls is RelaxationConfig and k == "zones":
            kw[k] = [_build(ZoneConfig, z, f"{sub}[{i}]") for i, z in enumerate(v)]
        else:
            kw[k] = v
    return cls(**kw)


def config_from_dict(data: dict) -> SimulationConfig:
    return _build(SimulationConfig, data, "").validate()


def parse_config(text: str, fmt: str = "toml") -> SimulationConfig:
    if fmt == "json":
        data = json.loads(text)
    elif fmt == "toml":
        data = tomllib.loads(text)
    else:
        raise ConfigError(f"unknown config format {fmt!r}")
    return config_from_dict(data)


def load_config(path) -> SimulationConfig:
    p = Path(path)
    fmt = "json" if p.suffix.lower() == ".json" else "toml"
    return parse_config(p.read_text(), fmt)


def _strip_none(d):
    if isinstance(d, dict):
        return {k: _strip_none(v) for k, v in d.items() if v is not None}
    if isinstance(d, list):
        return [_strip_none(v) for v in d]
    return d


def dump_config(cfg: SimulationConfig) -> str:
    """Canonical JSON text of a configuration (None entries omitted)."""
    return json.dumps(_strip_none(cfg.to_dict()), indent=2, sort_keys=True)


# ----------------------------------------------------------------- presets
# Submerged-bar geometry and gauge stations of the Beji & Battjes (1993)
# flume experiment, with x = 0 at the end of the wavemaker zone.
BEJI_BATTJES = {
    "depth": 0.4,
    "breakpoints": [6.0, 12.0, 14.0, 17.0],
    "depths": [0.4, 0.1, 0.1, 0.4],
    "gauges": [10.5, 12.5, 13.5, 14.5, 15.7, 17.3],
}


def bar_preset(t_end: float = 40.0) -> SimulationConfig:
    """Harmonic generation over a submerged bar (H = 0.02 m, L = 3.74 m, P = 8, Nx = 100)."""
    L = 3.74
    return SimulationConfig(
        name="bar",
        mesh=MeshConfig(Nx=100, Nz=2, P=8, extent=[-L, 35.0], periodic=False),
        bathymetry=BathymetryConfig(kind="beji_battjes", depth=BEJI_BATTJES["depth"]),
        wave=WaveConfig(kind="streamfunction", H=0.02, L=L, initialize=False),
        filter=FilterConfig(enabled=True),
        relaxation=RelaxationConfig(zones=[
            ZoneConfig(-L, 0.0, "generation", inner="right", target="wave"),
            ZoneConfig(25.0, 35.0, "absorption", inner="left", target="still"),
        ], ramp_time=2.0),
        time=TimeConfig(t_end=t_end, courant=0.5),
        output=OutputConfig(dir="out_bar", gauges=list(BEJI_BATTJES["gauges"]), gauge_every=1),
    ).validate()


def table1_preset(tol: float = 1e-6, method: str = "gmres", nsteps: int = 3) -> SimulationConfig:
    """17 wavelengths, kh = 1, H/L = 0.0301, P = 8, Nx = 102, Nz = 2."""
    L = 2.0 * math.pi
    return SimulationConfig(
        name="table1",
        mesh=MeshConfig(Nx=102, Nz=2, P=8, wavelengths=17, periodic=True),
        wave=WaveConfig(kind="streamfunction", H=0.0301 * L, L=L),
        solver=SolverConfig(method=method, tol=tol),
        time=TimeConfig(nsteps=nsteps, courant=0.5),
        output=OutputConfig(write=False),
    ).validate()
