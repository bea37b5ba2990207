"""Semi-discrete right-hand sides, spectral filtering and relaxation zones."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .mesh import Bathymetry, Mesh
from .operators import sem_space, sigma_laplacian, trace_space
from .reference_element import FilterSpec, filter_matrix, filter_matrix_1d
from .sigma_transform import SigmaMetrics, w_sigma

RHO_WATER = 999.70
GRAVITY = 9.81


@dataclass(frozen=True)
class PhysicalParams:
    rho: float = RHO_WATER
    nu: float = 0.0
    g: float = GRAVITY

    def __post_init__(self):
        if self.rho <= 0 or self.nu < 0 or self.g <= 0:
            raise ValueError(f"invalid physical parameters {self}")


@dataclass
class FieldState:
    u: np.ndarray
    w: np.ndarray
    eta: np.ndarray
    p: np.ndarray
    t: float = 0.0

    def copy(self) -> "FieldState":
        return FieldState(self.u.copy(), self.w.copy(), self.eta.copy(), self.p.copy(), self.t)

    @classmethod
    def still(cls, mesh: Mesh, t: float = 0.0) -> "FieldState":
        z = np.zeros(mesh.K)
        return cls(z.copy(), z.copy(), np.zeros(mesh.nxn), z.copy(), t)


class ZoneKind(enum.Enum):
    GENERATION = "generation"
    ABSORPTION = "absorption"
    TERMINAL = "terminal"


def f_g(y):
    """Generation blending: -2y^3 + 3y^2."""
    y = np.asarray(y, dtype=float)
    return -2.0 * y**3 + 3.0 * y**2


def f_a(y):
    """Absorption blending: 1 - (1 - y)^5."""
    y = np.asarray(y, dtype=float)
    return 1.0 - (1.0 - y) ** 5


@dataclass(frozen=True)
class Zone:
    """Relaxation zone on [x_start, x_end]; ``inner`` names the edge facing the working section."""

    x_start: float
    x_end: float
    kind: ZoneKind
    inner: str = "right"
    target: str = "still"          # 'wave' or 'still'

    def y(self, x):
        """Coordinate in [0, 1] measured from the inner edge."""
        L = self.x_end - self.x_start
        y = (x - self.x_start) / L if self.inner == "left" else (self.x_end - x) / L
        return np.clip(y, 0.0, 1.0)

    def contains(self, x):
        return (x >= self.x_start) & (x <= self.x_end)


@dataclass
class RelaxationZones:
    zones: list
    pairing: str = "literal"       # or 'complementary'

    def __post_init__(self):
        iv = sorted((z.x_start, z.x_end) for z in self.zones)
        for (a0, a1), (b0, b1) in zip(iv, iv[1:]):
            if b0 < a1:
                raise ValueError("relaxation zones overlap")
        for z in self.zones:
            if not z.x_end > z.x_start:
                raise ValueError("empty relaxation zone")


def relaxation_profiles(x, zones: RelaxationZones):
    """Blending weights (Gamma_g, Gamma_a) at positions x.

    Generation: Gamma_g = f_g(y), Gamma_a = f_g(1 - y); absorption:
    Gamma_a = f_a(1 - y), Gamma_g = 0; terminal: Gamma_a = 0, Gamma_g = f_g(y);
    y runs from 0 at the inner edge to 1 at the outer edge. Outside every zone
    Gamma_a = 1 and Gamma_g = 0.
    """
    x = np.asarray(x, dtype=float)
    gg = np.zeros_like(x)
    ga = np.ones_like(x)
    for z in zones.zones:
        m = z.contains(x)
        y = z.y(x[m])
        if z.kind == ZoneKind.GENERATION:
            gg[m], ga[m] = f_g(y), f_g(1.0 - y)
        elif z.kind == ZoneKind.ABSORPTION:
            gg[m], ga[m] = 0.0, f_a(1.0 - y)
        else:
            gg[m], ga[m] = f_g(y), 0.0
    if zones.pairing == "complementary":
        ga = 1.0 - gg
    return gg, ga


@dataclass(eq=False)
class SystemContext:
    """Mesh, physics and per-mesh operators shared by the right-hand sides."""

    mesh: Mesh
    bathy: Bathymetry
    params: PhysicalParams = field(default_factory=PhysicalParams)
    filter_spec: FilterSpec | None = None
    zones: RelaxationZones | None = None
    target: Callable | None = None     # t -> (eta_e, u_e, w_e) on the mesh nodes

    def __post_init__(self):
        m = self.mesh
        self.space = sem_space(m)
        self.trace = trace_space(m)
        self.trace_ids = m.trace_ids()
        self.x_trace = m.x_nodes
        self.h_trace = self.bathy.h(self.x_trace)
        if np.any(self.h_trace <= 0):
            raise ValueError("bathymetry must be positive on the tank")
        hx = self.bathy.hx(self.x_trace)
        nrm = np.hypot(hx, 1.0)
        self.bottom_ids = m.bottom_ids()
        self.bottom_normal = np.column_stack([-hx / nrm, -1.0 / nrm])
        self.wall_ids = m.wall_ids()
        self._filters = None
        self._visc = None

    # ------------------------------------------------------------ boundaries
    def enforce_impermeability(self, u, w):
        """Remove the normal velocity component at bottom and wall nodes (in place)."""
        b = self.bottom_ids
        n = self.bottom_normal
        un = u[b] * n[:, 0] + w[b] * n[:, 1]
        u[b] -= un * n[:, 0]
        w[b] -= un * n[:, 1]
        if self.wall_ids.size:
            u[self.wall_ids] = 0.0
            corners = np.intersect1d(self.wall_ids, b)
            w[corners] = 0.0
        return u, w

    # ---------------------------------------------------------------- filter
    def filter_ops(self):
        if self._filters is None and self.filter_spec is not None:
            el = self.mesh.el
            F2 = filter_matrix(el, self.filter_spec)
            spec1 = self.filter_spec
            F1 = filter_matrix_1d(el.bx, spec1)
            self._filters = (el.M_local @ F2, el.bx.M @ F1)
        return self._filters

    def column(self, a):
        return np.repeat(a, self.mesh.nzn)


def free_surface_rhs(state: FieldState, ctx: SystemContext) -> np.ndarray:
    """Weak kinematic condition: M eta_t = M w~ - A^{u~} eta."""
    ut = state.u[ctx.trace_ids]
    wt = state.w[ctx.trace_ids]
    return wt - ctx.trace.mass_solve(ctx.trace.advection(ut, state.eta))


def momentum_forcing(state: FieldState, metrics: SigmaMetrics, ctx: SystemContext) -> dict:
    """Momentum tendencies other than the dynamic-pressure gradient.

    Returns projected nodal fields per term group: 'advection', 'hydrostatic'
    (hydrostatic pressure gradient plus gravity, which reduce to (-g eta_x, 0))
    and 'viscous'.
    """
    sp_ = ctx.space
    u, w = state.u, state.w
    ws = w_sigma(u, w, metrics)
    uq, wsq = sp_.to_quad(u), sp_.to_quad(ws)
    adv_u = -(uq * sp_.to_quad(u, "x") + wsq * sp_.to_quad(u, "s"))
    adv_w = -(uq * sp_.to_quad(w, "x") + wsq * sp_.to_quad(w, "s"))
    out = {
        "advection": (sp_.project([("0", adv_u)]), sp_.project([("0", adv_w)])),
        "hydrostatic": (-ctx.params.g * ctx.column(metrics.eta_x), np.zeros(ctx.mesh.K)),
    }
    if ctx.params.nu > 0:
        lap = sigma_laplacian(metrics, ctx.mesh, coef=ctx.params.nu)
        # stress-free closure: the natural boundary terms are dropped
        out["viscous"] = (sp_.mass_solve(lap.volume @ u), sp_.mass_solve(lap.volume @ w))
    else:
        z = np.zeros(ctx.mesh.K)
        out["viscous"] = (z, z.copy())
    return out


def pressure_gradient(p, metrics: SigmaMetrics, ctx: SystemContext):
    """L2-projected transformed gradient of a nodal pressure field."""
    sp_ = ctx.space
    px, ps = sp_.to_quad(p, "x"), sp_.to_quad(p, "s")
    gx = sp_.project([("0", px + sp_.to_quad(metrics.sig_x) * ps)])
    gz = sp_.project([("0", sp_.to_quad(metrics.sig_z) * ps)])
    return gx, gz


def momentum_rhs(state: FieldState, metrics: SigmaMetrics, ctx: SystemContext):
    """Full momentum tendency (du/dt, dw/dt) including the dynamic pressure of ``state.p``."""
    parts = momentum_forcing(state, metrics, ctx)
    fu = sum(p[0] for p in parts.values())
    fw = sum(p[1] for p in parts.values())
    gx, gz = pressure_gradient(state.p, metrics, ctx)
    rho = ctx.params.rho
    return fu - gx / rho, fw - gz / rho


def apply_filter(state: FieldState, ctx: SystemContext) -> FieldState:
    """Filter u, w and eta elementwise and project back onto the continuous space."""
    ops = ctx.filter_ops()
    if ops is None:
        return state.copy()
    MF2, MF1 = ops
    sp_, tr = ctx.space, ctx.trace
    gids = ctx.mesh.global_ids

    def filt2(f):
        loc = (f[gids] @ MF2.T) * sp_.detJ[:, None]
        return sp_.mass_solve(np.bincount(gids.ravel(), weights=loc.ravel(), minlength=ctx.mesh.K))

    loc1 = (state.eta[tr.gids] @ MF1.T) * tr.jac[:, None]
    eta = tr.mass_solve(np.bincount(tr.gids.ravel(), weights=loc1.ravel(), minlength=tr.n))
    u, w = filt2(state.u), filt2(state.w)
    ctx.enforce_impermeability(u, w)
    return FieldState(u, w, eta, state.p.copy(), state.t)


def apply_relaxation(state: FieldState, target, profiles) -> FieldState:
    """Blend toward the target: f* = Gamma_a f + Gamma_g f_e on trace and volume nodes.

    ``target`` is (eta_e, u_e, w_e); ``profiles`` is (Gamma_g, Gamma_a) per
    trace node (columns are broadcast to the volume).
    """
    gg, ga = profiles
    eta_e, u_e, w_e = target
    nz = state.u.size // gg.size
    GG, GA = np.repeat(gg, nz), np.repeat(ga, nz)
    return FieldState(GA * state.u + GG * u_e, GA * state.w + GG * w_e,
                      ga * state.eta + gg * eta_e, state.p.copy(), state.t)


def relax_state(state: FieldState, ctx: SystemContext) -> FieldState:
    """Apply the context's relaxation zones at the state's time."""
    if ctx.zones is None:
        return state
    prof = relaxation_profiles(ctx.x_trace, ctx.zones)
    if ctx.target is None:
        tgt = (np.zeros_like(state.eta), np.zeros_like(state.u), np.zeros_like(state.w))
    else:
        eta_e, u_e, w_e = (np.array(a, dtype=float) for a in ctx.target(state.t))
        nz = ctx.mesh.nzn
        for z in ctx.zones.zones:
            if z.target == "still":
                m = z.contains(ctx.x_trace)
                eta_e[m] = 0.0
                M = np.repeat(m, nz)
                u_e[M] = 0.0
                w_e[M] = 0.0
        tgt = (eta_e, u_e, w_e)
    out = apply_relaxation(state, tgt, prof)
    ctx.enforce_impermeability(out.u, out.w)
    return out
