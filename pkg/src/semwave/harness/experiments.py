"""Experiment drivers: general simulation, convergence study, bar benchmark and solver scaling."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dynamics import (FieldState, PhysicalParams, RelaxationZones, SystemContext, Zone,
                        ZoneKind)
from ..mesh import Bathymetry, Mesh, build_mesh
from ..pressure_poisson import PressureSolver
from ..reference_element import FilterSpec, build_reference_element
from ..sigma_transform import physical_z
from ..time_integration import StepperLog, lserk_step, stable_timestep
from ..wave_theory import (WaveSpec, airy_wave, battjes_max_steepness, streamfunction_solve)
from .config import BEJI_BATTJES, SimulationConfig


# ------------------------------------------------------------------ setup
def make_bathymetry(cfg: SimulationConfig) -> Bathymetry:
    b = cfg.bathymetry
    if b.kind == "flat":
        return Bathymetry.flat(b.depth)
    if b.kind == "beji_battjes":
        return Bathymetry.smoothed_ramps(BEJI_BATTJES["depth"], BEJI_BATTJES["breakpoints"],
                                         BEJI_BATTJES["depths"], b.width)
    return Bathymetry.smoothed_ramps(b.depth, b.breakpoints, b.depths, b.width)


class WaveModel:
    """Wave solution sampled on the mesh nodes (stream function or linear)."""

    def __init__(self, cfg: SimulationConfig, depth: float):
        w = cfg.wave
        g, rho = cfg.physics.g, cfg.physics.rho
        L = w.L
        if L is None and w.T is None and w.kh is not None:
            L = 2.0 * math.pi * depth / w.kh
        H = w.H
        if H is None and w.steepness_frac is not None and L is not None:
            H = w.steepness_frac * battjes_max_steepness(2.0 * math.pi * depth / L) * L
        if H is None:
            raise ValueError("wave height not determined by the configuration")
        self.spec = WaveSpec(H=H, h=depth, L=L, T=None if L is not None else w.T)
        self.kind = w.kind
        self.g, self.rho = g, rho
        if w.kind == "streamfunction":
            self.sol = streamfunction_solve(self.spec, N_sf=w.N_sf, g=g, rho=rho)
            self.L, self.T = self.sol.L, self.sol.T
        else:
            self.sol = None
            if L is None:
                raise ValueError("linear waves need the wavelength")
            k = 2.0 * math.pi / L
            self.L = L
            self.T = 2.0 * math.pi / math.sqrt(g * k * math.tanh(k * depth))

    def fields(self, mesh: Mesh, bathy: Bathymetry, t: float, columns=None):
        """(eta, u, w, p_D) at the nodes, evaluated on the wave's own surface.

        With a boolean ``columns`` mask over the trace, only those columns are
        evaluated and the rest are left at zero.
        """
        x = mesh.x_nodes
        cols = np.ones(x.size, dtype=bool) if columns is None else np.asarray(columns, dtype=bool)
        nodes = np.repeat(cols, mesh.nzn)
        eta = np.zeros(x.size)
        if self.sol is not None:
            eta[cols] = self.sol.surface(x[cols], t)
        else:
            eta[cols] = airy_wave(self.spec, x[cols], np.zeros(cols.sum()), t, self.g, self.rho).eta
        z = physical_z(mesh, eta, bathy)
        X, _ = mesh.node_coords
        out = [np.zeros(mesh.K) for _ in range(3)]
        if self.sol is not None:
            f = self.sol.evaluate(X[nodes], z[nodes], t, check_inside=False)
        else:
            f = airy_wave(self.spec, X[nodes], z[nodes], t, self.g, self.rho)
        for a, b in zip(out, (f.u, f.w, f.p_D)):
            a[nodes] = b
        return eta, *out


@dataclass
class Simulation:
    cfg: SimulationConfig
    mesh: Mesh
    bathy: Bathymetry
    ctx: SystemContext
    solver: PressureSolver
    state: FieldState
    dt: float
    nsteps: int
    wave: WaveModel | None = None


def _ramp(t: float, T: float) -> float:
    if T <= 0 or t >= T:
        return 1.0
    return 0.5 * (1.0 - math.cos(math.pi * t / T))


def build_simulation(cfg: SimulationConfig) -> Simulation:
    cfg.validate()
    m = cfg.mesh
    bathy = make_bathymetry(cfg)
    depth = float(bathy.h(np.array([0.0 if m.extent is None else m.extent[0]]))[0])
    wave = WaveModel(cfg, cfg.bathymetry.depth if cfg.bathymetry.kind == "flat" else depth) \
        if cfg.wave.kind != "none" else None
    extent = m.extent if m.extent is not None else [0.0, m.wavelengths * wave.L]
    el = build_reference_element(m.P, m.Pz)
    mesh = build_mesh(m.Nx, m.Nz, extent, el, periodic=m.periodic, sigma_ratio=m.sigma_ratio)
    params = PhysicalParams(cfg.physics.rho, cfg.physics.nu, cfg.physics.g)

    fspec = None
    if cfg.filter.enabled:
        f = cfg.filter
        if f.cutoff is None or f.alpha is None:
            fspec = FilterSpec.default(m.P, f.retain)
        else:
            fspec = FilterSpec(f.cutoff, f.alpha, f.beta)

    zones, target = None, None
    if cfg.relaxation.zones:
        zones = RelaxationZones([Zone(z.x_start, z.x_end, ZoneKind(z.kind), z.inner, z.target)
                                 for z in cfg.relaxation.zones], cfg.relaxation.pairing)
        if wave is not None:
            ramp_T = cfg.relaxation.ramp_time
            # the target only matters inside zones that relax toward the wave
            cols = np.zeros(mesh.nxn, dtype=bool)
            for z in zones.zones:
                if z.target == "wave":
                    cols |= z.contains(mesh.x_nodes)

            def target(t, _mesh=mesh):
                eta, u, w, _ = wave.fields(_mesh, bathy, t, cols)
                a = _ramp(t, ramp_T)
                return a * eta, a * u, a * w

    ctx = SystemContext(mesh, bathy, params, fspec, zones, target)
    s = cfg.solver
    solver = PressureSolver(ctx, s.method, s.tol, s.maxit, coarsest=s.coarsest, overlap=s.overlap,
                            nu1=s.nu1, nu2=s.nu2, gmres_norm=s.gmres_norm)

    if wave is not None and cfg.wave.initialize:
        eta, u, w, p = wave.fields(mesh, bathy, 0.0)
        state = FieldState(u, w, eta, p, 0.0)
        ctx.enforce_impermeability(state.u, state.w)
    else:
        state = FieldState.still(mesh)

    t = cfg.time
    if t.dt is not None:
        dt = t.dt
    else:
        probe = state
        if wave is not None and not cfg.wave.initialize:
            eta, u, w, p = wave.fields(mesh, bathy, 0.0)
            probe = FieldState(u, w, eta, p)
        dt = stable_timestep(probe, mesh, params, t.courant, bathy)
    if t.nsteps is not None:
        nsteps = t.nsteps
    else:
        t_end = t.t_end if t.t_end is not None else t.periods * wave.T
        nsteps = max(1, math.ceil(t_end / dt - 1e-9))
        dt = t_end / nsteps
    return Simulation(cfg, mesh, bathy, ctx, solver, state, dt, nsteps, wave)


# ------------------------------------------------------------- diagnostics
def gauge_matrix(mesh: Mesh, xs) -> np.ndarray:
    """Rows interpolate trace values (length nxn) to the positions ``xs``."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    x0, x1 = mesh.extent
    bx = mesh.el.bx
    P = bx.P
    G = np.zeros((xs.size, mesh.nxn))
    for i, x in enumerate(xs):
        if not x0 <= x <= x1:
            raise ValueError(f"gauge at {x} lies outside the tank [{x0}, {x1}]")
        e = min(int(np.searchsorted(mesh.x_edges, x, side="right")) - 1, mesh.Nx - 1)
        a, b = mesh.x_edges[e], mesh.x_edges[e + 1]
        phi, _ = bx.lagrange_at(np.array([2.0 * (x - a) / (b - a) - 1.0]))
        cols = (e * P + np.arange(P + 1)) % mesh.nxn
        np.add.at(G[i], cols, phi[0])
    return G


def energy(state: FieldState, ctx: SystemContext) -> float:
    """Kinetic plus potential energy per unit width."""
    sp_ = ctx.space
    d = ctx.column(state.eta + ctx.h_trace)
    q = sp_.to_quad(state.u) ** 2 + sp_.to_quad(state.w) ** 2
    wts = sp_.detJ[:, None, None] * sp_.W[None]
    ke = 0.5 * ctx.params.rho * float(np.sum(wts * q * sp_.to_quad(d)))
    pe = 0.5 * ctx.params.rho * ctx.params.g * float(state.eta @ (ctx.trace.mass @ state.eta))
    return ke + pe


def harmonic_fractions(signal, dt: float, f0: float, nharm: int = 5):
    """FFT magnitudes at the first ``nharm`` harmonics of f0 and the energy fraction above the first.

    The signal is trimmed to a whole number of periods and detrended.
    """
    s = np.asarray(signal, dtype=float)
    nper = int(len(s) * dt * f0)
    if nper < 1:
        raise ValueError("signal shorter than one period")
    n = int(round(nper / (f0 * dt)))
    s = s[-n:] - np.mean(s[-n:])
    spec = np.abs(np.fft.rfft(s)) / n
    freqs = np.fft.rfftfreq(n, dt)
    amps = []
    for j in range(1, nharm + 1):
        idx = int(np.argmin(np.abs(freqs - j * f0)))
        lo, hi = max(idx - 1, 0), min(idx + 2, spec.size)
        amps.append(float(np.sqrt(np.sum(spec[lo:hi] ** 2))))
    e = np.square(amps)
    total = e.sum()
    return np.array(amps), float(e[1:].sum() / total) if total > 0 else 0.0


# -------------------------------------------------------------------- runs
@dataclass
class SimulationResult:
    state: FieldState
    log: StepperLog
    gauge_times: np.ndarray
    gauges: np.ndarray                  # (n_times, n_gauges)
    energy0: float
    energy1: float
    dt: float
    nsteps: int
    wall_time: float
    sim: Simulation | None = None
    files: dict = field(default_factory=dict)

    @property
    def energy_drift(self) -> float:
        return (self.energy1 - self.energy0) / self.energy0 if self.energy0 > 0 else self.energy1

    @property
    def max_divergence_ratio(self) -> float:
        return self.log.max_divergence_ratio

    def summary(self) -> str:
        its = [r.iterations for r in self.log.records]
        return (f"steps={self.nsteps} dt={self.dt:.6g} t_end={self.state.t:.6g} "
                f"mean_iterations={np.mean(its) if its else 0:.2f} "
                f"max_divergence_ratio={self.max_divergence_ratio:.3e} "
                f"energy_drift={self.energy_drift:.3e} wall_time={self.wall_time:.2f}s")


def run_simulation(cfg: SimulationConfig, outdir=None, sim: Simulation | None = None,
                   progress=None) -> SimulationResult:
    """Step the configured problem to its end time and write the CSV outputs."""
    sim = sim or build_simulation(cfg)
    ctx, state = sim.ctx, sim.state.copy()
    gx = cfg.output.gauges
    G = gauge_matrix(sim.mesh, gx) if gx else np.zeros((0, sim.mesh.nxn))
    times, values = [state.t], [G @ state.eta]
    log = StepperLog()
    e0 = energy(state, ctx)
    t0 = time.perf_counter()
    for n in range(sim.nsteps):
        try:
            state = lserk_step(state, sim.dt, ctx, sim.solver, log=log, step_index=n)
        except Exception as exc:
            raise RuntimeError(f"step {n} (t={state.t:.6g}): {exc}") from exc
        if (n + 1) % cfg.output.gauge_every == 0 or n == sim.nsteps - 1:
            times.append(state.t)
            values.append(G @ state.eta)
        if progress is not None:
            progress(n, state)
    wall = time.perf_counter() - t0
    res = SimulationResult(state, log, np.array(times), np.array(values), e0, energy(state, ctx),
                           sim.dt, sim.nsteps, wall, sim)
    if cfg.output.write:
        res.files = write_outputs(res, Path(outdir or cfg.output.dir), gx)
    return res


def write_outputs(res: SimulationResult, outdir: Path, gauge_x) -> dict:
    outdir.mkdir(parents=True, exist_ok=True)
    files = {}
    p = outdir / "gauges.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"eta_x{x:g}" for x in gauge_x])
        for t, row in zip(res.gauge_times, res.gauges):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
    files["gauges"] = p
    p = outdir / "solver_stats.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "stage", "iterations", "residual", "divergence", "divergence_scale",
                    "nodal_divergence"])
        for r in res.log.records:
            w.writerow([r.step, r.stage, r.iterations, repr(r.residual), repr(r.divergence),
                        repr(r.divergence_scale), repr(r.nodal_divergence)])
    files["solver_stats"] = p
    p = outdir / "state_final.csv"
    mesh = res.sim.mesh
    x, s = mesh.node_coords
    st = res.state
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_star", "sigma", "u", "w", "p_D"])
        for row in zip(x, s, st.u, st.w, st.p):
            w.writerow([repr(float(v)) for v in row])
    files["state_final"] = p
    return files


# ------------------------------------------------------ convergence study
CONVERGENCE_KH = (0.5, 2.0, 2.0 * math.pi)
CONVERGENCE_FRACS = (0.1, 0.5, 0.9)


@dataclass
class ConvergenceRow:
    kh: float
    steepness_frac: float
    P: int
    error: float


def one_step_error(kh: float, frac: float, P: int, Nx: int = 20, Nz: int = 2,
                   dt_per_period: int = 32000, N_sf: int = 32, sol=None) -> float:
    """max |u - u_e| after one step from the exact stream-function state (direct solver, no filter)."""
    from .config import MeshConfig, SolverConfig, TimeConfig, WaveConfig, OutputConfig
    cfg = SimulationConfig(
        name="converge",
        mesh=MeshConfig(Nx=Nx, Nz=Nz, P=P, wavelengths=1, periodic=True),
        wave=WaveConfig(kind="streamfunction", kh=kh, steepness_frac=frac, N_sf=N_sf),
        solver=SolverConfig(method="direct"),
        time=TimeConfig(nsteps=1),
        output=OutputConfig(write=False),
    )
    sim = build_simulation(cfg)
    sim.dt = sim.wave.T / dt_per_period
    st = lserk_step(sim.state, sim.dt, sim.ctx, sim.solver)
    _, u_e, _, _ = sim.wave.fields(sim.mesh, sim.bathy, st.t)
    return float(np.max(np.abs(st.u - u_e)))


def convergence_study(orders=range(2, 17, 2), kh_values=CONVERGENCE_KH, fracs=CONVERGENCE_FRACS,
                      Nx: int = 20, Nz: int = 2, dt_per_period: int = 32000, N_sf: int = 32) -> list:
    rows = []
    for kh in kh_values:
        for frac in fracs:
            for P in orders:
                err = one_step_error(kh, frac, P, Nx, Nz, dt_per_period, N_sf)
                rows.append(ConvergenceRow(kh, frac, P, err))
    return rows


def spectral_verdict(orders, errors, plateau: float = 1e-9, ratio: float = 0.3) -> dict:
    """Check error(P+2)/error(P) <= ratio before the plateau and the plateau level.

    The pre-plateau regime ends at the first order whose error is below
    ``plateau``; the plateau must stay below ``plateau`` thereafter.
    """
    orders, errors = list(orders), np.asarray(errors, dtype=float)
    ratios = []
    ok = True
    for i in range(len(orders) - 1):
        if errors[i] <= plateau:
            break
        r = errors[i + 1] / errors[i]
        ratios.append(r)
        ok &= r <= ratio
    reached = np.flatnonzero(errors <= plateau)
    plateau_ok = reached.size > 0 and bool(np.all(errors[reached[0]:] <= plateau))
    return {"decay_ok": bool(ok), "ratios": ratios, "plateau_ok": plateau_ok,
            "floor": float(errors.min())}


def write_convergence(rows, path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kh", "steepness_frac", "P", "error"])
        for r in rows:
            w.writerow([repr(r.kh), repr(r.steepness_frac), r.P, repr(r.error)])
    return p


# ----------------------------------------------------------- bar benchmark
def bar_benchmark(cfg: SimulationConfig, outdir=None, progress=None) -> tuple:
    """Run the bar preset; return the result and per-gauge harmonic diagnostics."""
    res = run_simulation(cfg, outdir, progress=progress)
    f0 = 1.0 / res.sim.wave.T
    t = res.gauge_times
    dtg = float(np.mean(np.diff(t)))
    window = t >= t[-1] - 0.5 * (t[-1] - t[0])
    diag = []
    for j, x in enumerate(cfg.output.gauges):
        amps, frac = harmonic_fractions(res.gauges[window, j], dtg, f0)
        diag.append({"x": x, "amplitudes": amps, "higher_fraction": frac})
    return res, diag


def table1_iterations(tol: float, method: str, nsteps: int = 3, gmres_norm: str = "true") -> tuple:
    """Mean solver iterations per stage on the table-1 wave; the cold first stage is excluded."""
    from .config import table1_preset
    cfg = table1_preset(tol, method, nsteps)
    cfg.solver.gmres_norm = gmres_norm
    res = run_simulation(cfg)
    its = [r.iterations for r in res.log.records if not (r.step == 0 and r.stage == 1)]
    return float(np.mean(its)), res


# ------------------------------------------------------- solver benchmark
@dataclass
class BenchRow:
    sweep: str
    Nx: int
    Px: int
    dof: int
    method: str
    iterations: float
    time: float


def solver_benchmark(Nx: int, Px: int, Pz: int = 8, method: str = "gmres", tol: float = 1e-6,
                     nsteps: int = 1, overlap: int = 2, gmres_norm: str = "true",
                     wavelengths: int | None = None):
    """Mean iterations and mean solve time per stage for the kh = 1, 30 %-steepness wave."""
    from .config import MeshConfig, SolverConfig, TimeConfig, WaveConfig, OutputConfig
    L = 2.0 * math.pi
    if wavelengths is None:
        # keep about 48 points per wavelength in x at order Px
        wavelengths = max(1, round(Nx * Px / 48))
    cfg = SimulationConfig(
        name="mg-bench",
        mesh=MeshConfig(Nx=Nx, Nz=2, P=Px, Pz=Pz, wavelengths=wavelengths, periodic=True),
        wave=WaveConfig(kind="streamfunction", kh=1.0, steepness_frac=0.3),
        solver=SolverConfig(method=method, tol=tol, overlap=overlap, gmres_norm=gmres_norm),
        time=TimeConfig(nsteps=nsteps),
        output=OutputConfig(write=False),
    )
    sim = build_simulation(cfg)
    log = StepperLog()
    st = sim.state
    for n in range(nsteps):
        st = lserk_step(st, sim.dt, sim.ctx, sim.solver, log=log, step_index=n)
    recs = [r for r in log.records if not (r.step == 0 and r.stage == 1)] or log.records
    return (float(np.mean([r.iterations for r in recs])), float(np.mean([r.solve_time for r in recs])),
            sim.mesh.K, log)


def mg_benchmark(Nx_values=(25, 50, 100, 200, 400), Px_values=(4, 6, 8, 12, 16), method: str = "gmres",
                 tol: float = 1e-6, nsteps: int = 1, overlap: int = 2) -> list:
    rows = []
    for Nx in Nx_values:
        it, t, K, _ = solver_benchmark(Nx, 8, 8, method, tol, nsteps, overlap)
        rows.append(BenchRow("Nx", Nx, 8, K, method, it, t))
    for Px in Px_values:
        it, t, K, _ = solver_benchmark(200, Px, 8, method, tol, nsteps, overlap)
        rows.append(BenchRow("Px", 200, Px, K, method, it, t))
    return rows


def scaling_exponent(dof, times) -> float:
    """Least-squares slope alpha of log t = log c + alpha log n."""
    return float(np.polyfit(np.log(dof), np.log(times), 1)[0])


def write_bench(rows, path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sweep", "Nx", "Px", "dof", "method", "iterations", "time"])
        for r in rows:
            w.writerow([r.sweep, r.Nx, r.Px, r.dof, r.method, repr(r.iterations), repr(r.time)])
    return p


# ------------------------------------------------------------- rest state
def still_water_run(bathy: Bathymetry, extent, Nx: int = 10, Nz: int = 2, P: int = 4,
                    nsteps: int = 1000, dt: float = 0.01, method: str = "direct", filt: bool = True):
    """Step still water and return (max |eta|, max |u|, max |w|) over the run."""
    el = build_reference_element(P)
    mesh = build_mesh(Nx, Nz, extent, el, periodic=False)
    ctx = SystemContext(mesh, bathy, PhysicalParams(), FilterSpec.default(P) if filt else None)
    solver = PressureSolver(ctx, method)
    st = FieldState.still(mesh)
    worst = np.zeros(3)
    for n in range(nsteps):
        st = lserk_step(st, dt, ctx, solver, step_index=n)
        worst = np.maximum(worst, [np.abs(st.eta).max(), np.abs(st.u).max(), np.abs(st.w).max()])
    return tuple(worst)
